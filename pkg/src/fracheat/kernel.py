"""Heat kernel, free-space kernel oracle and Green function.

The Dirichlet kernel is realised exactly in the discrete model through the
dense eigendecomposition of the assembled operator, so kernel-bound checks
are not polluted by time-integration error.  Eigenvectors are normalised
against the h^N-weighted inner product, making ``sum_k exp(-lam_k t)
phi_k(x) phi_k(y)`` the discrete analogue of the continuum kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.integrate import quad
from scipy.special import gamma, j0, jn_zeros

from .fracop import OperatorMatrix

__all__ = [
    "SpectralDecomposition",
    "spectral_decompose",
    "HeatKernelField",
    "heat_kernel",
    "FreeSpaceResult",
    "free_space_kernel",
    "free_space_kernel_radial",
    "GreenField",
    "green_function",
]

_MODE_FLOOR = 1e-14


@dataclass
class SpectralDecomposition:
    """Eigenpairs of the Dirichlet operator, h^N-weighted orthonormal."""

    operator: OperatorMatrix
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # column k holds phi_k on interior nodes

    @property
    def grid(self):
        return self.operator.grid

    def project(self, interior_values: np.ndarray) -> np.ndarray:
        """Modal coefficients <f, phi_k> with the h^N weight."""
        return self.eigenvectors.T @ interior_values * self.grid.cell_measure

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return self.eigenvectors @ coeffs

    def mode_field(self, k: int):
        vals = np.zeros(self.grid.node_count)
        vals[self.grid.interior] = self.eigenvectors[:, k]
        return self.grid.field(vals)

    def save(self, path: str | Path) -> None:
        np.savez_compressed(
            path,
            eigenvalues=self.eigenvalues,
            eigenvectors=self.eigenvectors,
            key=np.bytes_(self.operator.key().encode()),
        )

    @staticmethod
    def load(path: str | Path, operator: OperatorMatrix) -> "SpectralDecomposition":
        data = np.load(path)
        stored = data["key"].tobytes().decode()
        if stored != operator.key():
            raise ValueError(f"cache key mismatch: file {stored}, expected {operator.key()}")
        return SpectralDecomposition(operator, data["eigenvalues"], data["eigenvectors"])


def spectral_decompose(op: OperatorMatrix) -> SpectralDecomposition:
    """Full dense eigendecomposition of the Dirichlet matrix."""
    full = op.full()
    try:
        lam, vecs = scipy.linalg.eigh(full)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise RuntimeError(f"eigendecomposition did not converge: {exc}") from exc
    if lam[0] <= 0:
        raise ValueError(f"operator is not positive definite (lambda_1 = {lam[0]:.3e})")
    phi = vecs / math.sqrt(op.grid.cell_measure)
    dec = SpectralDecomposition(op, lam, phi)
    resid = np.linalg.norm(full @ phi[:, 0] - lam[0] * phi[:, 0]) / (
        lam[0] * np.linalg.norm(phi[:, 0])
    )
    if resid > 1e-6:
        raise RuntimeError(f"eigenpair residual {resid:.3e} exceeds tolerance")
    return dec


@dataclass
class HeatKernelField:
    """Kernel values P(x_i, y_j, t) over interior node pairs."""

    dec: SpectralDecomposition
    t: float
    values: np.ndarray

    def column_mass(self) -> np.ndarray:
        """h^N-weighted column sums; sub-Markov property keeps them <= 1."""
        return self.values.sum(axis=0) * self.dec.grid.cell_measure

    def save_csv(self, path: str | Path) -> None:
        """Flat (i, j, x, y, t, value) rows over interior node pairs."""
        grid = self.dec.grid
        pts = grid.interior_nodes
        lines = ["i,j,x,y,t,value"]
        for i in range(pts.shape[0]):
            xs = ";".join(repr(c) for c in pts[i])
            for j in range(pts.shape[0]):
                ys = ";".join(repr(c) for c in pts[j])
                lines.append(f"{i},{j},{xs},{ys},{self.t!r},{self.values[i, j]!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def heat_kernel(dec: SpectralDecomposition, t: float) -> HeatKernelField:
    """Spectral kernel at time t, modes below the exp(-lam t) floor dropped."""
    if t <= 0:
        raise ValueError(f"time must be positive, got {t}")
    w = np.exp(-dec.eigenvalues * t)
    keep = w >= _MODE_FLOOR
    phi = dec.eigenvectors[:, keep]
    vals = (phi * w[keep]) @ phi.T
    # the spectral sum is symmetric; enforce it exactly against matmul round-off
    vals = 0.5 * (vals + vals.T)
    return HeatKernelField(dec, t, vals)


@dataclass(frozen=True)
class FreeSpaceResult:
    value: float
    tail_estimate: float
    converged: bool


def _free_space_1d(r: float, t: float, s: float) -> FreeSpaceResult:
    decay = lambda xi: math.exp(-t * xi ** (2 * s))
    # frequency beyond which the envelope is negligible
    xi_max = (37.0 / t) ** (1.0 / (2 * s))
    if r < 1e-12:
        val = gamma(1 + 1 / (2 * s)) * t ** (-1 / (2 * s)) / math.pi
        return FreeSpaceResult(val, 0.0, True)
    main, _ = quad(decay, 0.0, xi_max, weight="cos", wvar=r, limit=400)
    tail = decay(xi_max) / (r * math.pi)  # one oscillation envelope bound
    return FreeSpaceResult(main / math.pi, tail, tail <= 1e-6)


def _free_space_2d(r: float, t: float, s: float) -> FreeSpaceResult:
    decay = lambda xi: math.exp(-t * xi ** (2 * s))
    if r < 1e-12:
        val = gamma(1 / s) * t ** (-1 / s) / (2 * s) / (2 * math.pi)
        return FreeSpaceResult(val, 0.0, True)
    xi_max = (37.0 / t) ** (1.0 / (2 * s))
    integrand = lambda xi: j0(r * xi) * xi * decay(xi)
    # integrate between Bessel zeros; alternating pieces are averaged once
    # (Euler step) to accelerate the slowly damped oscillation
    zeros = jn_zeros(0, 2000) / r
    cuts = [0.0] + [z for z in zeros if z < xi_max] + [xi_max]
    pieces = [quad(integrand, a, b, limit=200)[0] for a, b in zip(cuts[:-1], cuts[1:])]
    total = math.fsum(pieces)
    tail = abs(pieces[-1]) if len(pieces) > 1 else 0.0
    if len(pieces) > 4:
        # Euler transform of the alternating tail: replace last piece by half
        total = math.fsum(pieces[:-1]) + 0.5 * pieces[-1]
        tail = 0.5 * abs(pieces[-1])
    val = total / (2 * math.pi)
    return FreeSpaceResult(val, tail / (2 * math.pi), tail / (2 * math.pi) <= 1e-6)


def free_space_kernel(x, t: float, s: float, with_diagnostics: bool = False):
    """Whole-space kernel by Fourier inversion of exp(-t |xi|^{2s}).

    ``x`` is a point (sequence of N coordinates) or a scalar for N=1.
    """
    if t <= 0:
        raise ValueError(f"time must be positive, got {t}")
    if not 0 < s < 1:
        raise ValueError(f"s must lie in (0,1), got {s}")
    pt = np.atleast_1d(np.asarray(x, dtype=float))
    r = float(np.linalg.norm(pt))
    if pt.size == 1:
        res = _free_space_1d(r, t, s)
    elif pt.size == 2:
        res = _free_space_2d(r, t, s)
    else:
        raise ValueError("only N in {1,2} supported")
    return res if with_diagnostics else res.value


def free_space_kernel_radial(rvals, t: float, s: float, N: int) -> np.ndarray:
    """Vectorised radial evaluation (used for domain-monotonicity checks)."""
    fn = _free_space_1d if N == 1 else _free_space_2d
    return np.array([fn(float(r), t, s).value for r in np.atleast_1d(rvals)])


@dataclass
class GreenField:
    """Green function values over interior node pairs (inverse of A / h^N)."""

    dec: SpectralDecomposition
    values: np.ndarray


def green_function(dec: SpectralDecomposition) -> GreenField:
    phi = dec.eigenvectors
    vals = (phi / dec.eigenvalues) @ phi.T
    return GreenField(dec, vals)
