"""Gaussian kernel evaluation and the dense matrices built from it.

Everything downstream (margin constraints, consensus change of variables,
implicit-curve evaluation) reduces to three objects: pairwise kernel
matrices over one point set, cross-kernel matrices between two point sets,
and symmetric square roots of the former.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularGramError

#: Eigenvalues at or below this are treated as numerically zero.
EIGEN_FLOOR = 1e-12

#: Default diagonal jitter for Gram matrices built from sensor data.
DEFAULT_DATA_JITTER = 1e-10


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel parameters.

    ``bandwidth_sq`` is the squared length scale; the kernel is
    ``exp(-||x - y||^2 / (2 * bandwidth_sq))``, so the default of 1.0
    gives ``exp(-||x - y||^2 / 2)``.
    """

    bandwidth_sq: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.bandwidth_sq) and self.bandwidth_sq > 0):
            raise ValueError(f"bandwidth_sq must be a positive finite real, got {self.bandwidth_sq}")


def _as_points(points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of 2-D points, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must have finite coordinates")
    return pts


def kernel_eval(x, y, cfg: KernelConfig = KernelConfig()) -> float:
    """Gaussian kernel value for a single pair of 2-D points.

    Always in (0, 1], with 1 exactly when ``x == y``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("kernel_eval requires finite coordinates")
    d = x - y
    return float(np.exp(-float(d @ d) / (2.0 * cfg.bandwidth_sq)))


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Direct differences (not the inner-product expansion): exact zeros on
    # coincident points, and bitwise agreement with kernel_eval.
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kernel_matrix(a, b, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    """Dense matrix of kernel values k(a_i, b_j)."""
    a = _as_points(a)
    b = _as_points(b)
    return np.exp(-_pairwise_sq_dists(a, b) / (2.0 * cfg.bandwidth_sq))


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric kernel matrix over one point set, plus the jitter baked in.

    Invariants enforced at construction: symmetry, unit diagonal (up to the
    jitter), entries in (0, 1 + jitter], and numerical positive
    definiteness.
    """

    entries: np.ndarray
    jitter_applied: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"Gram matrix must be square, got shape {m.shape}")
        if np.max(np.abs(m - m.T), initial=0.0) > 1e-12:
            raise ValueError("Gram matrix must be symmetric to 1e-12")
        if self.jitter_applied < 0:
            raise ValueError("jitter must be non-negative")
        diag = np.diagonal(m)
        if np.max(np.abs(diag - (1.0 + self.jitter_applied)), initial=0.0) > 1e-12:
            raise ValueError("Gram diagonal must equal 1 + jitter")
        if np.any(m <= 0.0) or np.any(m > 1.0 + self.jitter_applied + 1e-15):
            raise ValueError("Gram entries must lie in (0, 1 + jitter]")
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            raise SingularGramError(
                "kernel matrix is not positive definite (duplicate or "
                "near-duplicate points with insufficient jitter)"
            ) from None
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "entries", m)

    @property
    def size(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class CrossKernelMatrix:
    """Rectangular matrix of kernel values between two point sets."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.ndim != 2:
            raise ValueError("cross-kernel matrix must be 2-D")
        if np.any(m <= 0.0) or np.any(m > 1.0 + 1e-15):
            raise ValueError("cross-kernel entries must lie in (0, 1]")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "entries", m)

    @property
    def shape(self):
        return self.entries.shape


def gram(points, cfg: KernelConfig = KernelConfig(), jitter: float = 0.0) -> GramMatrix:
    """Kernel Gram matrix of a point set, with optional diagonal jitter.

    Raises SingularGramError when the result is not numerically positive
    definite, which with zero jitter signals duplicate or near-duplicate
    points.
    """
    pts = _as_points(points)
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    m = kernel_matrix(pts, pts, cfg)
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 1.0 + jitter)
    return GramMatrix(entries=m, jitter_applied=float(jitter))


def cross_kernel(data, grid, cfg: KernelConfig = KernelConfig()) -> CrossKernelMatrix:
    """Kernel values between data points (rows) and basis points (columns)."""
    d = _as_points(data)
    g = _as_points(grid)
    if d.shape[0] == 0 or g.shape[0] == 0:
        raise ValueError("cross_kernel requires non-empty point lists")
    return CrossKernelMatrix(entries=kernel_matrix(d, g, cfg))


def sqrt_and_inv_sqrt(g) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root and inverse square root of an SPD matrix.

    Accepts a GramMatrix or any symmetric positive definite ndarray.
    Computed by symmetric eigendecomposition so that both factors are
    symmetric; eigenvalues at or below EIGEN_FLOOR raise SingularGramError.
    """
    mat = g.entries if isinstance(g, GramMatrix) else np.asarray(g, dtype=float)
    w, v = np.linalg.eigh(mat)
    if w[0] <= EIGEN_FLOOR:
        raise SingularGramError(
            f"smallest eigenvalue {w[0]:.3e} is at or below the {EIGEN_FLOOR:.0e} floor"
        )
    root = np.sqrt(w)
    s = (v * root) @ v.T
    s_inv = (v / root) @ v.T
    # symmetrize away rounding skew
    s = 0.5 * (s + s.T)
    s_inv = 0.5 * (s_inv + s_inv.T)
    return s, s_inv
