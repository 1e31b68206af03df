"""Regularity theorems turned into measurable slope and finiteness checks.

Each check returns a plain dict ready for JSON emission with the keys
``theorem_tag, params, predicted, measured, tolerance, window, r2, pass``.
Slope fits flag the window as unreliable when R^2 drops below 0.98 rather
than silently reporting a bad fit.

Data surrogates.  Rough initial data of unit L^sigma norm is realised as a
one-cell spike for sigma = 1 (shared with the solver).  Sharp decay rates
for sigma > 1 are operator norms over the whole data class, so those
checks measure the data-to-solution operator norm directly (max over
kernel columns for the L^1 classes, largest singular value for L^2); a
fixed datum cannot track the extremal concentration scale across times.
"""

from __future__ import annotations

import math

import numpy as np

from .core import (
    Grid,
    GridField,
    gagliardo_seminorm,
    loglog_slope,
    lp_norm,
    marcinkiewicz_quasinorm,
)
from .fracop import apply_half_gradient, assemble
from .kernel import SpectralDecomposition, heat_kernel
from .solver import SourceSpec, geometric_ladder, solve_duhamel

__all__ = [
    "smoothing_exponent",
    "weighted_smoothing_exponent",
    "gradient_smoothing_exponent",
    "smoothing_slope",
    "weighted_smoothing_slope",
    "gradient_regularity_slope",
    "source_spacetime_norm",
    "gut_check",
    "difference_quotient_levels",
    "functional_inequalities",
]

_R2_FLOOR = 0.98


def smoothing_exponent(N: int, s: float, sigma: float, r: float) -> float:
    """Data-to-solution decay rate of the L^r norm for L^sigma data."""
    return -(N / (2 * s)) * (1 / sigma - 1 / r)


def weighted_smoothing_exponent(N: int, s: float, sigma: float, rho_tilde: float) -> float:
    """Decay rate of the boundary-weighted norm ||w/delta^s||_{rho_tilde}."""
    return -(N / (2 * s)) * (1 / sigma - 1 / rho_tilde) - 0.5


def gradient_smoothing_exponent(N: int, s: float, sigma: float, rho: float, p: float) -> float:
    """Dominant small-t rate of ||(-Lap)^{rho/2} w(., t)||_p (eta -> 0 reading)."""
    sigma_hat = sigma if rho == s else min(sigma, 1.0 / (rho - s))
    return -(N / (2 * s)) * (1 / sigma_hat - 1 / p) - 0.5 - (rho - s) / (2 * s)


def _report(tag, params, predicted, measured, tolerance, window, r2):
    # near-flat responses carry no variance for R^2 to explain: gate on the
    # total log-variation of the fitted trend instead of the fit quality
    log_range = abs(math.log(window[-1] / window[0]))
    reliable = r2 >= _R2_FLOOR or abs(measured) * log_range <= 0.35
    return {
        "theorem_tag": tag,
        "params": params,
        "predicted": predicted,
        "measured": measured,
        "tolerance": tolerance,
        "window": [float(window[0]), float(window[-1])],
        "r2": r2,
        "window_reliable": reliable,
        "pass": bool(reliable and abs(measured - predicted) <= tolerance),
    }


def sigma_surrogate(grid: Grid, sigma: float) -> GridField:
    """Unit-L^sigma rough datum: one-cell spike scaled to unit norm."""
    vals = np.zeros(grid.node_count)
    spike = grid.spike(mass=1.0)
    j = int(np.argmax(spike.values))
    vals[j] = grid.cell_measure ** (-1.0 / sigma)
    return GridField(grid, vals)


def smoothing_slope(
    dec: SpectralDecomposition,
    sigma: float,
    r: float,
    times,
    w0: GridField | None = None,
    tolerance: float = 0.1,
) -> dict:
    """Measured against predicted decay of ||w(., t)||_r with h = 0.

    Default data: the unit-L^sigma spike when sigma < r (it saturates the
    rate); smooth data (constant one) when sigma = r, where the sharp rate
    is flat and concentration would overshoot it.
    """
    grid = dec.grid
    if w0 is None:
        if sigma == r:
            w0 = grid.field(np.where(grid.interior, 1.0, 0.0))
        else:
            w0 = sigma_surrogate(grid, sigma)
    times = np.asarray(times, dtype=float)
    traj = solve_duhamel(dec, SourceSpec(w0=w0, sigma=sigma), np.concatenate([[0.0], times]))
    norms = [lp_norm(f, r) for f in traj.fields[1:]]
    slope, _, r2 = loglog_slope(times, norms)
    s = dec.operator.order / 2
    predicted = smoothing_exponent(grid.dim, s, sigma, r)
    return _report(
        "smoothing",
        {"sigma": sigma, "r": r, "s": s, "N": grid.dim},
        predicted,
        slope,
        tolerance,
        times,
        r2,
    )


def weighted_smoothing_slope(
    dec: SpectralDecomposition, rho_tilde: float, times, tolerance: float = 0.15
) -> dict:
    """Decay of the L^1 -> weighted-L^{rho_tilde} operator norm.

    The extremal unit-mass datum concentrates at boundary distance
    t^{1/(2s)}, so the norm is taken as the max over kernel columns.
    """
    grid = dec.grid
    s = dec.operator.order / 2
    delta = grid.interior_delta
    times = np.asarray(times, dtype=float)
    norms = []
    for t in times:
        P = heat_kernel(dec, t)
        weighted = P.values / delta[:, None] ** s
        col = (np.abs(weighted) ** rho_tilde).sum(axis=0) * grid.cell_measure
        norms.append(col.max() ** (1.0 / rho_tilde))
    slope, _, r2 = loglog_slope(times, norms)
    predicted = weighted_smoothing_exponent(grid.dim, s, 1.0, rho_tilde)
    return _report(
        "weighted-smoothing",
        {"sigma": 1.0, "rho_tilde": rho_tilde, "s": s, "N": grid.dim},
        predicted,
        slope,
        tolerance,
        times,
        r2,
    )


def gradient_regularity_slope(
    dec: SpectralDecomposition,
    sigma: float,
    rho: float,
    p: float,
    times,
    mode: str = "data",
    w0: GridField | None = None,
    tolerance: float = 0.2,
) -> dict:
    """Decay of ||(-Lap)^{rho/2} w(., t)||_p for rough initial data.

    ``mode='data'`` evolves the unit-L^sigma spike; ``mode='opnorm'``
    (p = sigma = 2 only) measures the largest singular value of the
    gradient-of-semigroup map, the sharp object for the L^2 class.
    """
    grid = dec.grid
    s = dec.operator.order / 2
    b_rho = assemble(grid, rho, dec.operator.scheme).full()
    times = np.asarray(times, dtype=float)
    norms = []
    if mode == "opnorm":
        if not (p == 2 and sigma == 2):
            raise ValueError("operator-norm mode is defined for p = sigma = 2")
        for t in times:
            propagator = heat_kernel(dec, t).values * grid.cell_measure
            norms.append(np.linalg.norm(b_rho @ propagator, 2))
    elif mode == "data":
        if w0 is None:
            w0 = sigma_surrogate(grid, sigma)
        traj = solve_duhamel(dec, SourceSpec(w0=w0, sigma=sigma), np.concatenate([[0.0], times]))
        for f in traj.fields[1:]:
            g = b_rho @ f.interior_values()
            norms.append(float((np.abs(g) ** p).sum() ** (1 / p) * grid.cell_measure ** (1 / p)))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    slope, _, r2 = loglog_slope(times, norms)
    predicted = gradient_smoothing_exponent(grid.dim, s, sigma, rho, p)
    return _report(
        "gradient-smoothing",
        {"sigma": sigma, "rho": rho, "p": p, "s": s, "N": grid.dim, "mode": mode},
        predicted,
        slope,
        tolerance,
        times,
        r2,
    )


def gradient_integrability_cap(N: int, s: float, rho: float, m: float) -> float:
    """Cap on r with ||(-Lap)^{rho/2} w||_{L^r(space-time)} finite for L^m sources."""
    denom = (N + 2 * s) * (m * (rho - s) + 1) - m * s
    return math.inf if denom <= 0 else m * (N + 2 * s) / denom


def source_spacetime_norm(
    dec_builder,
    rho: float,
    r: float,
    grid_sizes=(64, 96, 144, 216, 324),
    T: float = 0.5,
    growth_threshold: float = -0.15,
) -> dict:
    """Finiteness and refinement trend of the space-time gradient norm.

    ``dec_builder(n)`` returns the decomposition on an n-point grid.  The
    source is a unit-mass spike supported on the first ladder interval
    (the rough extremal of the L^1 class); the ladder floor tracks the
    grid scale, so refining n probes the t -> 0 singularity.  The norm is
    fitted against the ladder floor: exponents near zero mean a stable
    finite limit, clearly negative ones a blow-up trend.
    """
    norms, floors = [], []
    s = rho_seen = None
    for n in grid_sizes:
        dec = dec_builder(n)
        grid = dec.grid
        s = dec.operator.order / 2
        rho_seen = rho
        b_rho = assemble(grid, rho, dec.operator.scheme).full()
        t_min = (2 * grid.h) ** (2 * s)
        ladder = geometric_ladder(t_min, T, 24)
        spike = grid.spike(mass=1.0)
        tau1 = ladder[1]

        def h_src(t, spike=spike, tau1=tau1, grid=grid):
            if t <= tau1:
                return spike.interior_values() / tau1
            return np.zeros(grid.interior_idx.size)

        traj = solve_duhamel(dec, SourceSpec(source=h_src, m=1.0), ladder)
        dt = np.diff(ladder)
        total = sum(
            (np.abs(b_rho @ f.interior_values()) ** r).sum() * grid.cell_measure * dt[k]
            for k, f in enumerate(traj.fields[1:])
        )
        norms.append(total ** (1 / r))
        floors.append(t_min)
    gamma, _, r2 = loglog_slope(floors, norms)
    cap = gradient_integrability_cap(dec.grid.dim, s, rho_seen, 1.0)
    stable = gamma > growth_threshold
    return {
        "theorem_tag": "source-spacetime",
        "params": {"m": 1.0, "rho": rho, "r": r, "s": s, "cap": cap},
        "grid_sizes": list(grid_sizes),
        "norms": [float(v) for v in norms],
        "growth_exponent": gamma,
        "r2": r2,
        "below_cap": r < cap,
        "stable": bool(stable),
        "blow_up_indicator": bool(not stable),
        # the source has unit space-time mass, so the norm is the constant
        "empirical_constant": float(norms[-1]),
    }


def _pair_difference_sample(f_values: np.ndarray, grid: Grid, exponent: float):
    """Difference quotients over node pairs with near-diagonal exclusion."""
    pts = grid.nodes
    r = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    keep = r >= 0.5 * grid.h
    w = np.zeros_like(r)
    diff = f_values[:, None] - f_values[None, :]
    w[keep] = diff[keep] / r[keep] ** exponent
    return w[keep]


def gut_check(f: GridField, s: float, p: float) -> dict:
    """Marcinkiewicz quasi-norm of the difference quotient against the Bessel norm.

    Both sides are homogeneous degree one in f after the p-th root, so the
    reported ratio is scale invariant.
    """
    grid = f.grid
    if np.any(f.values[~grid.interior] != 0):
        raise ValueError("difference-quotient check expects zero exterior values")
    rhs = lp_norm(apply_half_gradient(f, s), p, region="all")
    if rhs == 0:
        return {"theorem_tag": "difference-quotient", "ratio": 0.0, "quasinorm": 0.0, "rhs": 0.0}
    sample = _pair_difference_sample(f.values, grid, grid.dim / p + s)
    quasi = marcinkiewicz_quasinorm(sample, [grid.cell_measure ** 2], p)
    return {
        "theorem_tag": "difference-quotient",
        "params": {"s": s, "p": p, "n": grid.n},
        "quasinorm": quasi,
        "rhs": rhs,
        "ratio": quasi ** (1 / p) / rhs,
    }


def difference_quotient_levels(
    dec: SpectralDecomposition, q: float, r: float, ladder=None
) -> dict:
    """Level-set constant for the solution difference quotient with L^1 data.

    For W = (w(x,t) - w(y,t)) / |x-y|^{N/q + s}, the tail-measure bound
    |{|W| >= rho}| <= C rho^{-2qr/(2r+q)} is evaluated exactly on the
    sampled pairs; the returned constant is regression material.
    """
    grid = dec.grid
    s = dec.operator.order / 2
    if not q < min((grid.dim + 2 * s) / (grid.dim + s), (grid.dim + 2 * s) / (grid.dim + 1 - 2 * s)):
        raise ValueError("q outside the admissible difference-quotient range")
    if ladder is None:
        ladder = geometric_ladder(0.02, 0.4, 8)
    traj = solve_duhamel(dec, SourceSpec(w0=grid.spike(mass=1.0), sigma=1.0), ladder)
    p_eff = 2 * q * r / (2 * r + q)
    dt = np.diff(traj.times)
    vals, meas = [], []
    for k, f in enumerate(traj.fields[1:]):
        sample = _pair_difference_sample(f.values, grid, grid.dim / q + s)
        vals.append(sample)
        meas.append(np.full(sample.size, grid.cell_measure ** 2 * dt[k]))
    constant = marcinkiewicz_quasinorm(np.concatenate(vals), np.concatenate(meas), p_eff)
    return {
        "theorem_tag": "difference-quotient-levels",
        "params": {"q": q, "r": r, "s": s, "n": grid.n, "p_eff": p_eff},
        "constant": constant,
    }


def functional_inequalities(f: GridField, s: float, p: float) -> dict:
    """Hardy (p = 2) and fractional Sobolev inequalities on one field.

    Sobolev requires N > p*s; below that the embedding target exponent is
    undefined and the check refuses.
    """
    grid = f.grid
    out = {"theorem_tag": "functional-inequalities", "params": {"s": s, "p": p, "N": grid.dim}}
    semi = gagliardo_seminorm(f, s, p)
    out["gagliardo"] = semi.value
    out["quadrature_warning"] = semi.quadrature_warning
    if p == 2:
        delta = np.where(grid.interior, grid.delta, np.inf)
        hardy_lhs = float((f.values ** 2 / delta ** (2 * s)).sum() * grid.cell_measure)
        out["hardy_lhs"] = hardy_lhs
        out["hardy_rhs"] = semi.value ** 2
        out["hardy_ratio"] = 0.0 if semi.value == 0 else hardy_lhs / semi.value ** 2
    if grid.dim > p * s:
        p_star = p * grid.dim / (grid.dim - p * s)
        lhs = lp_norm(f, p_star, region="all")
        out["sobolev_p_star"] = p_star
        out["sobolev_lhs"] = lhs
        out["sobolev_ratio"] = 0.0 if semi.value == 0 else lhs / semi.value
    else:
        out["sobolev_refused"] = f"Sobolev embedding needs N > p*s, got N={grid.dim}, p*s={p * s}"
    return out
