"""Certification of the pointwise kernel-gradient and Green-function bounds.

The claimed estimates hold with an unspecified constant, so certification
computes the empirical constant C* = sup |quantity| / envelope over a
tensor sample of interior pairs and a time ladder, and asserts finiteness
plus stability of C* under grid refinement.  Envelopes are evaluated with
unit constant and log scale D = 4 * diam(domain).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fracop import assemble
from .kernel import SpectralDecomposition, green_function, heat_kernel

__all__ = [
    "SRestrictionError",
    "EnvelopeSpec",
    "CertificationReport",
    "certify_kernel_gradient",
    "certify_green_gradient",
    "certify_comparability",
    "with_stability",
]


class SRestrictionError(ValueError):
    """Raised when a check is requested outside its validity range in s."""


def _legal_rho(s: float, rho: float) -> None:
    if not s <= rho < max(1.0, 2 * s):
        raise ValueError(f"rho={rho} outside [s, max(1,2s)) for s={s}")


@dataclass(frozen=True)
class EnvelopeSpec:
    """Closed-form envelope for the fractional gradient of the heat kernel.

    Regime ``low`` applies for s <= 1/2, ``high`` for s > 1/2; the two
    differ in the kernel-power prefactor and in which bracket terms carry
    the singular time factor.
    """

    s: float
    rho: float
    N: int
    D: float

    def __post_init__(self):
        _legal_rho(self.s, self.rho)
        if self.D <= 0:
            raise ValueError("log scale D must be positive")

    @property
    def regime(self) -> str:
        return "low" if self.s <= 0.5 else "high"

    def bracket_terms(self, dx, dy, r, t):
        """Prefactor and the five additive bracket terms, broadcast together."""
        s, rho, N, D = self.s, self.rho, self.N, self.D
        dx, dy, r, t = np.broadcast_arrays(
            *map(np.asarray, (dx, dy, r, t))
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            tpow = t ** (1.0 / (2 * s))
            damp = np.minimum(dy ** s / np.sqrt(t), 1.0)
            logr = np.log(D / r)
            logdx = np.abs(np.log(dx))
            if self.regime == "low":
                pre = damp / (tpow + r) ** (N + 2 * s + rho - 1)
                terms = [
                    dx ** (s - rho) * (tpow + r) ** (s + rho - 1),
                    t ** ((2 * s - 1) / (2 * s)) * logr,
                    t ** ((s + rho - 1) / (2 * s)) * dx ** (s - rho),
                    t ** ((2 * s - 1) / (2 * s)) * logdx,
                    r ** (2 * s - 1),
                ]
            else:
                pre = damp / (tpow + r) ** (N + rho)
                terms = [
                    dx ** (s - rho) * (tpow + r) ** (rho - s),
                    t ** ((2 * s - 1) / (2 * s)) * r ** (1 - 2 * s),
                    t ** ((rho - s) / (2 * s)) * dx ** (s - rho),
                    logr,
                    logdx,
                ]
        return pre, terms

    def __call__(self, dx, dy, r, t):
        pre, terms = self.bracket_terms(dx, dy, r, t)
        return pre * sum(terms)


def green_envelope(s: float, rho: float, N: int, D: float, dx, r):
    """Envelope for the fractional gradient of the Green function."""
    _legal_rho(s, rho)
    dx, r = np.broadcast_arrays(np.asarray(dx), np.asarray(r))
    with np.errstate(divide="ignore", invalid="ignore"):
        bracket = dx ** (s - rho) * r ** (rho - s) + np.log(D / r) + np.abs(np.log(dx))
        return bracket / r ** (N - (2 * s - rho))


def comparability_envelope(s: float, N: int, dx, dy, r, t):
    """Two-sided kernel envelope (product of boundary factors and bulk decay)."""
    dx, dy, r, t = np.broadcast_arrays(*map(np.asarray, (dx, dy, r, t)))
    fx = np.minimum(dx ** s / np.sqrt(t), 1.0)
    fy = np.minimum(dy ** s / np.sqrt(t), 1.0)
    return fx * fy * t / (t ** (1.0 / (2 * s)) + r) ** (N + 2 * s)


@dataclass
class CertificationReport:
    """Empirical constant, its arg-max location and refinement stability."""

    quantity: str
    regime: str
    s: float
    rho: float
    c_star: float
    argmax: dict
    samples: int
    D: float
    exclusion: float
    grid_n: int
    stability_ratio: float | None = None
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        payload = {
            "quantity": self.quantity,
            "regime": self.regime,
            "s": self.s,
            "rho": self.rho,
            "C_star": self.c_star,
            "argmax": self.argmax,
            "samples": self.samples,
            "D": self.D,
            "exclusion": self.exclusion,
            "grid_n": self.grid_n,
            "stability_ratio": self.stability_ratio,
        }
        payload.update(self.extras)
        return payload

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n")


def _pair_geometry(dec: SpectralDecomposition):
    grid = dec.grid
    pts = grid.interior_nodes
    delta = grid.interior_delta
    r = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    return pts, delta, r


def _sup_report(quantity, regime, s, rho, ratios, keep, pts, times, dec, exclusion, extras=None):
    masked = np.where(keep, ratios, -np.inf)
    flat = int(np.argmax(masked))
    i, j, k = np.unravel_index(flat, ratios.shape)
    c_star = float(ratios[i, j, k])
    if not math.isfinite(c_star):
        raise FloatingPointError("certification produced a non-finite constant")
    return CertificationReport(
        quantity=quantity,
        regime=regime,
        s=s,
        rho=rho,
        c_star=c_star,
        argmax={
            "x": list(map(float, pts[i])),
            "y": list(map(float, pts[j])),
            "t": float(times[k]),
        },
        samples=int(keep.sum()),
        D=dec.grid.domain.log_scale,
        exclusion=float(exclusion),
        grid_n=dec.grid.n,
        extras=extras or {},
    )


def certify_kernel_gradient(
    dec: SpectralDecomposition,
    rho: float,
    times,
    exclusion: float | None = None,
) -> CertificationReport:
    """Empirical constant for |(-Delta_x)^{rho/2} P(x,y,t)| against its envelope.

    The x-gradient of each kernel column is computed by applying the
    assembled order-rho Dirichlet matrix to the column, mirroring the
    integral route the estimate itself is proved by.
    """
    s = dec.operator.order / 2
    _legal_rho(s, rho)
    grid = dec.grid
    exclusion = 2 * grid.h if exclusion is None else exclusion
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    env = EnvelopeSpec(s, rho, grid.dim, grid.domain.log_scale)
    b_rho = assemble(grid, rho, dec.operator.scheme).full()

    pts, delta, r = _pair_geometry(dec)
    keep_pair = (r >= exclusion) & (delta[:, None] >= 2 * grid.h)
    ratios = np.empty(r.shape + (times.size,))
    keep = np.empty_like(ratios, dtype=bool)
    for k, t in enumerate(times):
        P = heat_kernel(dec, t)
        grad = b_rho @ P.values  # column j: x-gradient of P(., y_j, t)
        envelope = env(delta[:, None], delta[None, :], r, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios[:, :, k] = np.abs(grad) / envelope
        keep[:, :, k] = keep_pair & (envelope > 0)
    ratios[~keep] = 0.0
    return _sup_report(
        "kernel-gradient", env.regime, s, rho, ratios, keep, pts, times, dec, exclusion
    )


def certify_green_gradient(dec: SpectralDecomposition, rho: float) -> CertificationReport:
    """Empirical constant for the fractional gradient of the Green function.

    Refuses for s <= 1/4: the time integral of the kernel-gradient envelope
    only converges near t = 0 above that threshold.
    """
    s = dec.operator.order / 2
    if s <= 0.25:
        raise SRestrictionError(
            f"Green-function gradient certification requires s > 1/4, got s={s}"
        )
    _legal_rho(s, rho)
    grid = dec.grid
    exclusion = 2 * grid.h
    b_rho = assemble(grid, rho, dec.operator.scheme).full()
    G = green_function(dec)
    grad = b_rho @ G.values

    pts, delta, r = _pair_geometry(dec)
    envelope = green_envelope(s, rho, grid.dim, grid.domain.log_scale, delta[:, None], r)
    keep = (r >= exclusion) & (delta[:, None] >= 2 * grid.h) & (envelope > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.abs(grad) / envelope
    ratios3 = np.where(keep, ratios, 0.0)[:, :, None]
    return _sup_report(
        "green-gradient",
        "low" if s <= 0.5 else "high",
        s,
        rho,
        ratios3,
        keep[:, :, None],
        pts,
        np.array([math.inf]),
        dec,
        exclusion,
    )


def certify_comparability(dec: SpectralDecomposition, times) -> CertificationReport:
    """Min and max of P / envelope over sampled pairs; both must be finite."""
    s = dec.operator.order / 2
    grid = dec.grid
    exclusion = 2 * grid.h
    times = np.asarray(times, dtype=float)
    pts, delta, r = _pair_geometry(dec)
    keep_pair = r >= exclusion
    ratios = np.empty(r.shape + (times.size,))
    keep = np.empty_like(ratios, dtype=bool)
    for k, t in enumerate(times):
        P = heat_kernel(dec, t)
        envelope = comparability_envelope(s, grid.dim, delta[:, None], delta[None, :], r, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios[:, :, k] = P.values / envelope
        keep[:, :, k] = keep_pair & (envelope > 0)
    if not keep.any():
        raise ValueError("no admissible pairs; grid too small for the exclusion radius")
    vals = ratios[keep]
    rmin, rmax = float(vals.min()), float(vals.max())
    if not (0 < rmin <= rmax < math.inf):
        raise FloatingPointError(
            f"comparability ratio escaped (min={rmin:.3e}, max={rmax:.3e})"
        )
    ratios[~keep] = 0.0
    report = _sup_report(
        "comparability",
        "low" if s <= 0.5 else "high",
        s,
        s,
        ratios,
        keep,
        pts,
        times,
        dec,
        exclusion,
        extras={"min_ratio": rmin, "max_ratio": rmax, "spread": rmax / rmin},
    )
    return report


def with_stability(fine: CertificationReport, coarse: CertificationReport) -> CertificationReport:
    """Attach the refinement-stability ratio C*(fine) / C*(coarse)."""
    if fine.quantity != coarse.quantity:
        raise ValueError("reports certify different quantities")
    fine.stability_ratio = fine.c_star / coarse.c_star
    return fine
