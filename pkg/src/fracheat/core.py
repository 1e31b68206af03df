"""Domains, uniform grids, grid functions and scalar (quasi-)norms.

Everything downstream (operator assembly, kernels, solvers, regularity
checks) works on the structures defined here.  All quadrature is plain
midpoint/Riemann with cell weight ``h**N``; double sums skip near-diagonal
pairs (``|x - y| < h/2``), the singular self-contribution being handled
only inside the assembled nonlocal operator.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "SpatialDomain",
    "Grid",
    "GridField",
    "ExponentSet",
    "SeminormResult",
    "lp_norm",
    "gagliardo_seminorm",
    "marcinkiewicz_quasinorm",
    "truncate",
    "loglog_slope",
]


@dataclass(frozen=True)
class SpatialDomain:
    """Open box domain with an ambient padding belt of exterior nodes.

    The domain is the open box ``prod (lo[k], hi[k])``; the grid covers the
    larger ambient box obtained by extending every side by ``padding``.
    """

    dim: int
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    padding: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dim}")
        if len(self.lo) != self.dim or len(self.hi) != self.dim:
            raise ValueError("bounds must have one entry per axis")
        for a, b in zip(self.lo, self.hi):
            if not (math.isfinite(a) and math.isfinite(b) and a < b):
                raise ValueError(f"invalid axis bounds ({a}, {b})")
        if not (math.isfinite(self.padding) and self.padding > 0):
            raise ValueError("padding must be positive")

    @classmethod
    def interval(cls, lo: float = -1.0, hi: float = 1.0, padding: float = 1.0) -> "SpatialDomain":
        return cls(1, (lo,), (hi,), padding)

    @classmethod
    def square(cls, lo: float = -1.0, hi: float = 1.0, padding: float = 1.0) -> "SpatialDomain":
        return cls(2, (lo, lo), (hi, hi), padding)

    @property
    def diameter(self) -> float:
        return math.hypot(*(b - a for a, b in zip(self.lo, self.hi)))

    @property
    def log_scale(self) -> float:
        """Scale D used inside logarithmic envelope factors, fixed to 4*diam."""
        return 4.0 * self.diameter

    @property
    def box_lo(self) -> tuple[float, ...]:
        return tuple(a - self.padding for a in self.lo)

    @property
    def box_hi(self) -> tuple[float, ...]:
        return tuple(b + self.padding for b in self.hi)

    def with_padding(self, padding: float) -> "SpatialDomain":
        return replace(self, padding=padding)


def _boundary_distance(domain: SpatialDomain, pts: np.ndarray) -> np.ndarray:
    """Distance to the domain boundary, valid inside and outside the box."""
    lo = np.asarray(domain.lo)
    hi = np.asarray(domain.hi)
    inside_gap = np.minimum(pts - lo, hi - pts).min(axis=1)
    outside_gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
    dist_out = np.linalg.norm(outside_gap, axis=1)
    return np.where(inside_gap > 0, inside_gap, dist_out)


class Grid:
    """Uniform tensor grid on the ambient box of a :class:`SpatialDomain`.

    Nodes are stored flat (C order).  ``interior`` flags nodes strictly
    inside the domain box; ``delta`` holds the distance to the domain
    boundary for every node, exterior nodes included.
    """

    def __init__(self, domain: SpatialDomain, n: int):
        if n < 16:
            raise ValueError(f"need at least 16 nodes per axis, got {n}")
        self.domain = domain
        self.n = int(n)
        axes = []
        spacings = []
        for a, b in zip(domain.box_lo, domain.box_hi):
            axes.append(np.linspace(a, b, self.n))
            spacings.append((b - a) / (self.n - 1))
        if domain.dim == 2 and abs(spacings[0] - spacings[1]) > 1e-12 * max(spacings):
            raise ValueError("anisotropic spacing not supported; use a square ambient box")
        self.axes = axes
        self.h = spacings[0]
        if domain.dim == 1:
            self.nodes = axes[0][:, None]
        else:
            xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
            self.nodes = np.column_stack([xx.ravel(), yy.ravel()])
        lo = np.asarray(domain.lo)
        hi = np.asarray(domain.hi)
        self.interior = np.all((self.nodes > lo) & (self.nodes < hi), axis=1)
        self.delta = _boundary_distance(domain, self.nodes)
        self.interior_idx = np.flatnonzero(self.interior)
        self.exterior_idx = np.flatnonzero(~self.interior)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def cell_measure(self) -> float:
        return self.h ** self.dim

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[self.interior]

    @property
    def interior_delta(self) -> np.ndarray:
        return self.delta[self.interior]

    def key(self) -> str:
        """Content hash identifying the grid (used for cache files)."""
        payload = json.dumps(
            {
                "dim": self.domain.dim,
                "lo": self.domain.lo,
                "hi": self.domain.hi,
                "padding": self.domain.padding,
                "n": self.n,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def field(self, values, t: float | None = None) -> "GridField":
        return GridField(self, np.asarray(values, dtype=float), t)

    def field_from_callable(self, fn, t: float | None = None, interior_only: bool = False) -> "GridField":
        vals = np.apply_along_axis(lambda p: fn(*p), 1, self.nodes).astype(float)
        if interior_only:
            vals = np.where(self.interior, vals, 0.0)
        return GridField(self, vals, t)

    def spike(self, center: tuple[float, ...] | None = None, mass: float = 1.0) -> "GridField":
        """One-cell indicator scaled to the given mass (rough-data surrogate)."""
        if center is None:
            center = tuple(0.5 * (a + b) for a, b in zip(self.domain.lo, self.domain.hi))
        d = np.linalg.norm(self.nodes - np.asarray(center), axis=1)
        d = np.where(self.interior, d, np.inf)
        j = int(np.argmin(d))
        vals = np.zeros(self.node_count)
        vals[j] = mass / self.cell_measure
        return GridField(self, vals)


@dataclass
class GridField:
    """Real-valued function sampled on every grid node, with optional time tag."""

    grid: Grid
    values: np.ndarray
    t: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.node_count,):
            raise ValueError(
                f"value count {self.values.shape} does not match node count {self.grid.node_count}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if self.t is not None and self.t < 0:
            raise ValueError("time tag must be nonnegative")

    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior]

    def copy_with(self, values: np.ndarray, t: float | None = None) -> "GridField":
        return GridField(self.grid, values, self.t if t is None else t)

    def save_csv(self, path: str | Path) -> None:
        """Flat CSV (index, coordinates, value) plus a JSON sidecar header."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            coords = [f"x{k}" for k in range(self.grid.dim)]
            writer.writerow(["index", *coords, "value"])
            for i in range(self.grid.node_count):
                writer.writerow(
                    [i, *(f"{c:.17g}" for c in self.grid.nodes[i]), f"{self.values[i]:.17g}"]
                )
        header = {
            "dim": self.grid.dim,
            "lo": self.grid.domain.lo,
            "hi": self.grid.domain.hi,
            "padding": self.grid.domain.padding,
            "n": self.grid.n,
            "t": self.t,
        }
        Path(str(path) + ".json").write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")

    @staticmethod
    def load_csv(path: str | Path) -> "GridField":
        path = Path(path)
        header = json.loads(Path(str(path) + ".json").read_text())
        dom = SpatialDomain(header["dim"], tuple(header["lo"]), tuple(header["hi"]), header["padding"])
        grid = Grid(dom, header["n"])
        values = np.zeros(grid.node_count)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                values[int(row[0])] = float(row[-1])
        return GridField(grid, values, header["t"])


@dataclass(frozen=True)
class ExponentSet:
    """Exponent bundle shared by the regularity and fixed-point modules.

    Thresholds derived from these exponents (gradient-integrability caps,
    fixed-point exponent bounds, ...) are recomputed on demand and never
    stored, so they cannot go stale.
    """

    s: float
    rho: float | None = None
    p: float = 2.0
    q: float = 2.0
    m: float = 1.0
    sigma: float = 1.0
    r: float = 2.0
    eta: float = 0.01
    alpha: float = 0.0
    lam: float = 0.0
    k: float = 1.0

    def __post_init__(self):
        if not 0 < self.s < 1:
            raise ValueError(f"s must lie in (0,1), got {self.s}")
        rho = self.s if self.rho is None else self.rho
        object.__setattr__(self, "rho", rho)
        if not (self.s <= rho < max(1.0, 2 * self.s)):
            raise ValueError(f"rho={rho} outside [s, max(1,2s)) for s={self.s}")
        for name in ("p", "q", "m", "sigma", "r"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.alpha <= -1:
            raise ValueError("alpha must exceed -1")
        if self.k <= 0:
            raise ValueError("truncation level must be positive")

    def sigma_hat(self) -> float:
        """min(sigma, 1/(rho-s)); +inf branch collapses to sigma when rho=s."""
        if self.rho == self.s:
            return self.sigma
        return min(self.sigma, 1.0 / (self.rho - self.s))

    def m_bar(self, N: int) -> float:
        """Gradient-integrability cap m(N+2s)/(N+2s-ms) for an L^m source."""
        denom = N + 2 * self.s - self.m * self.s
        return math.inf if denom <= 0 else self.m * (N + 2 * self.s) / denom

    def kappa_hat(self, N: int) -> float:
        """Exponent cap for the L^1-data gradient class."""
        d = (N + 2 * self.s) * (self.rho - self.s)
        return min(
            (N + 2 * self.s) / (d + N + self.s),
            (N + 2 * self.s) / (d + N + 1 - self.s - self.rho),
        )


@dataclass(frozen=True)
class SeminormResult:
    value: float
    quadrature_warning: bool = False


def _region_mask(grid: Grid, region: str) -> np.ndarray:
    if region == "interior":
        return grid.interior
    if region == "exterior":
        return ~grid.interior
    if region == "all":
        return np.ones(grid.node_count, dtype=bool)
    raise ValueError(f"unknown region {region!r}")


def lp_norm(f: GridField, p: float, region: str = "interior") -> float:
    """Riemann-sum L^p norm over the requested node region (max for p=inf)."""
    mask = _region_mask(f.grid, region)
    if not mask.any():
        raise ValueError("empty region")
    vals = np.abs(f.values[mask])
    if math.isinf(p):
        return float(vals.max())
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float((vals ** p).sum() * f.grid.cell_measure) ** (1.0 / p)


def gagliardo_seminorm(f: GridField, s: float, p: float, region: str = "all") -> SeminormResult:
    """Double-sum quadrature of the W^{s,p} seminorm over node pairs.

    Pairs closer than h/2 are skipped; the quadrature is flagged (not
    rejected) when s*p reaches the dimension, where the near-diagonal
    contribution converges too slowly for the plain double sum.
    """
    if not 0 < s < 1:
        raise ValueError("s must lie in (0,1)")
    if p < 1:
        raise ValueError("p must be >= 1")
    grid = f.grid
    mask = _region_mask(grid, region)
    pts = grid.nodes[mask]
    vals = f.values[mask]
    diff = np.abs(vals[:, None] - vals[None, :])
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    keep = dist >= 0.5 * grid.h
    kernel = np.zeros_like(dist)
    kernel[keep] = diff[keep] ** p / dist[keep] ** (grid.dim + s * p)
    total = kernel.sum() * grid.cell_measure ** 2
    warn = s * p >= grid.dim
    return SeminormResult(float(total ** (1.0 / p)), warn)


def marcinkiewicz_quasinorm(values, measures, p: float) -> float:
    """Smallest C with tail-measure(|f| > k) <= C k^{-p}, exact on the sample.

    ``values`` and ``measures`` are matching sequences (sample values and
    their cell measures).  The supremum over levels is attained at the
    sampled magnitudes, scanning the tail from the largest value down.
    """
    v = np.abs(np.asarray(values, dtype=float)).ravel()
    mu = np.asarray(measures, dtype=float).ravel()
    if v.size == 0:
        return 0.0
    if mu.size == 1:
        mu = np.full_like(v, mu[0])
    if np.any(mu <= 0):
        raise ValueError("cell measures must be positive")
    keep = v > 0
    v, mu = v[keep], mu[keep]
    if v.size == 0:
        return 0.0
    order = np.argsort(v)[::-1]
    v, mu = v[order], mu[order]
    tails = np.cumsum(mu)
    return float(np.max(v ** p * tails))


def truncate(f: GridField, k: float) -> GridField:
    """Pointwise clamp to [-k, k]."""
    if k <= 0:
        raise ValueError("truncation level must be positive")
    return f.copy_with(np.clip(f.values, -k, k))


def loglog_slope(x, y) -> tuple[float, float, float]:
    """Least-squares slope of log y against log x; returns (slope, intercept, R^2)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if lx.size < 2 or not (np.all(np.isfinite(lx)) and np.all(np.isfinite(ly))):
        raise ValueError("need at least two positive samples to fit a slope")
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - np.sum(resid ** 2) / ss_tot
    return float(slope), float(intercept), float(r2)
