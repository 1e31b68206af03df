"""Evolution solvers for the forced fractional heat problem.

Two independent routes compute the same trajectory: the spectral Duhamel
representation (exact semigroup in the discrete model, source integral by
per-interval Gauss quadrature) and dense implicit Euler stepping.  Their
first-order-in-dt agreement is the solver cross-check used throughout the
acceptance suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import GridField
from .fracop import OperatorMatrix, apply_operator, normalization_constant
from .kernel import SpectralDecomposition

__all__ = [
    "SourceSpec",
    "Trajectory",
    "geometric_ladder",
    "uniform_ladder",
    "solve_duhamel",
    "solve_implicit_euler",
    "weighted_trace",
    "fractional_gradient_field",
    "exterior_decay_bound",
]

# 3-point Gauss-Legendre on [-1, 1]
_GAUSS_X = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
_GAUSS_W = np.array([5.0, 8.0, 5.0]) / 9.0


def uniform_ladder(t_max: float, steps: int) -> np.ndarray:
    return np.linspace(0.0, t_max, steps + 1)


def geometric_ladder(t_min: float, t_max: float, count: int) -> np.ndarray:
    """Ladder 0 < t_min < ... < t_max with geometric interior spacing."""
    if not 0 < t_min < t_max:
        raise ValueError("need 0 < t_min < t_max")
    return np.concatenate([[0.0], np.geomspace(t_min, t_max, count)])


@dataclass
class SourceSpec:
    """Data pair (h, w0) driving the linear problem.

    ``source`` is either None, a callable t -> interior-values array (or
    GridField), or a list of GridFields tabulated on the ladder (linear
    interpolation in time between slices).  ``m`` and ``sigma`` are the
    integrability labels carried into reports.
    """

    w0: GridField | None = None
    source: object = None
    m: float = 1.0
    sigma: float = 1.0
    ladder: np.ndarray | None = None

    def initial_interior(self, grid) -> np.ndarray:
        if self.w0 is None:
            return np.zeros(grid.interior_idx.size)
        if self.w0.grid is not grid:
            raise ValueError("initial datum lives on a different grid")
        return self.w0.interior_values()

    def source_interior(self, grid, t: float) -> np.ndarray:
        if self.source is None:
            return np.zeros(grid.interior_idx.size)
        if callable(self.source):
            out = self.source(t)
            vals = out.interior_values() if isinstance(out, GridField) else np.asarray(out)
        else:
            if self.ladder is None:
                raise ValueError("tabulated source requires its ladder")
            times = np.asarray(self.ladder)
            if len(self.source) != times.size:
                raise ValueError("tabulated source does not match the ladder")
            vals = _interp_slices(times, self.source, t)
        if vals.shape != (grid.interior_idx.size,):
            raise ValueError("source values do not match the interior node count")
        return vals


def _interp_slices(times: np.ndarray, slices, t: float) -> np.ndarray:
    j = int(np.searchsorted(times, t, side="right")) - 1
    j = min(max(j, 0), times.size - 2)
    t0, t1 = times[j], times[j + 1]
    w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
    w = min(max(w, 0.0), 1.0)
    a = slices[j].interior_values() if isinstance(slices[j], GridField) else np.asarray(slices[j])
    b = (
        slices[j + 1].interior_values()
        if isinstance(slices[j + 1], GridField)
        else np.asarray(slices[j + 1])
    )
    return (1 - w) * a + w * b


@dataclass
class Trajectory:
    """Time ladder plus one full-grid field per time."""

    times: np.ndarray
    fields: list[GridField]
    provenance: str
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size != len(self.fields):
            raise ValueError("one field per ladder time required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("ladder times must be strictly increasing")

    @property
    def grid(self):
        return self.fields[0].grid

    def interior_matrix(self) -> np.ndarray:
        """Stacked interior values, one row per ladder time."""
        return np.stack([f.interior_values() for f in self.fields])

    def spacetime_lp(self, p: float) -> float:
        """L^p norm over the space-time cells of the ladder.

        Each interval (t_{m-1}, t_m] is weighted by its length and carries
        the slice at its right endpoint, so the t=0 slice never enters.
        """
        w = self.interior_matrix()
        dt = np.diff(self.times)
        blocks = (np.abs(w[1:]) ** p).sum(axis=1) * self.grid.cell_measure
        return float((blocks * dt).sum() ** (1.0 / p))

    def save(self, directory) -> None:
        """One CSV per time slice plus a JSON manifest of the run."""
        import json
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for k, f in enumerate(self.fields):
            f.save_csv(directory / f"slice_{k:04d}.csv")
        manifest = {
            "ladder": [float(t) for t in self.times],
            "provenance": self.provenance,
            "labels": self.labels,
            "slices": [f"slice_{k:04d}.csv" for k in range(len(self.fields))],
        }
        (directory / "trajectory.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        )


def _full_field(grid, interior_values: np.ndarray, t: float) -> GridField:
    vals = np.zeros(grid.node_count)
    vals[grid.interior] = interior_values
    return GridField(grid, vals, t)


def solve_duhamel(dec: SpectralDecomposition, src: SourceSpec, ladder) -> Trajectory:
    """Spectral evolution with per-interval 3-point Gauss source quadrature."""
    times = np.asarray(ladder, dtype=float)
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("ladder must increase strictly from 0")
    grid = dec.grid
    lam = dec.eigenvalues
    c = dec.project(src.initial_interior(grid))
    fields = [_full_field(grid, dec.synthesize(c), 0.0)]
    coeffs = c.copy()
    for t0, t1 in zip(times[:-1], times[1:]):
        dt = t1 - t0
        coeffs = coeffs * np.exp(-lam * dt)
        if src.source is not None:
            mid = 0.5 * (t0 + t1)
            taus = mid + 0.5 * dt * _GAUSS_X
            for tau, gw in zip(taus, _GAUSS_W):
                hc = dec.project(src.source_interior(grid, tau))
                coeffs = coeffs + 0.5 * dt * gw * np.exp(-lam * (t1 - tau)) * hc
        fields.append(_full_field(grid, dec.synthesize(coeffs), t1))
    return Trajectory(times, fields, "duhamel", {"m": src.m, "sigma": src.sigma})


def solve_implicit_euler(op: OperatorMatrix, src: SourceSpec, ladder) -> Trajectory:
    """Backward Euler with dense LU solves, factorisations reused per step size."""
    times = np.asarray(ladder, dtype=float)
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("ladder must increase strictly from 0")
    grid = op.grid
    full = op.full()
    eye = np.eye(full.shape[0])
    w = src.initial_interior(grid)
    fields = [_full_field(grid, w, 0.0)]
    factor_cache: dict[float, tuple] = {}
    for t0, t1 in zip(times[:-1], times[1:]):
        dt = t1 - t0
        key = round(dt, 15)
        if key not in factor_cache:
            factor_cache[key] = scipy.linalg.lu_factor(eye + dt * full)
        rhs = w + dt * src.source_interior(grid, t1)
        w = scipy.linalg.lu_solve(factor_cache[key], rhs)
        fields.append(_full_field(grid, w, t1))
    return Trajectory(times, fields, "implicit-euler", {"m": src.m, "sigma": src.sigma})


def weighted_trace(traj: Trajectory, s: float) -> Trajectory:
    """Pointwise w / delta^s on interior nodes (zero outside)."""
    grid = traj.grid
    delta_s = np.where(grid.interior, grid.delta ** s, 1.0)
    fields = [
        GridField(grid, np.where(grid.interior, f.values / delta_s, 0.0), f.t)
        for f in traj.fields
    ]
    return Trajectory(traj.times, fields, traj.provenance + "/delta^s", dict(traj.labels))


def fractional_gradient_field(traj: Trajectory, rho: float, scheme=None) -> Trajectory:
    """Order-rho operator applied per time slice, interior and padding nodes."""
    fields = [apply_operator(f, rho, scheme) for f in traj.fields]
    return Trajectory(traj.times, fields, traj.provenance + f"/frac-grad({rho:g})", dict(traj.labels))


def exterior_decay_bound(w_field: GridField, rho: float) -> callable:
    """Analytic far-field envelope for the fractional gradient outside the box.

    For x far outside the domain, |x - y| >= (|x|+1)/2 over y in the domain,
    so |(-Delta)^{rho/2} w(x)| <= a 2^{N+rho} ||w||_L1 (1+|x|)^{-(N+rho)}.
    """
    grid = w_field.grid
    a = normalization_constant(grid.dim, rho / 2)
    mass = np.abs(w_field.interior_values()).sum() * grid.cell_measure
    coef = a * 2 ** (grid.dim + rho) * mass

    def bound(x) -> float:
        r = float(np.linalg.norm(np.atleast_1d(x)))
        return coef * (1 + r) ** (-(grid.dim + rho))

    return bound
