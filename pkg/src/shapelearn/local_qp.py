"""Single-agent hard-margin kernel classifier as a quadratic program.

The primal is min 1/2 c'Qc over (c, gamma) subject to the margin
constraints theta_i (w_i'c + gamma) >= 1, where Q is the basis Gram matrix
and w_i the kernel features of data point i (Gram row for the data basis,
cross-kernel row for the grid basis).

It is solved through its dual, a quadratic maximization over lambda >= 0
intersected with theta'lambda = 0 (the bias is unpenalized), by accelerated
projected gradient ascent. Iterates identify the active set, which is then
polished by a direct KKT solve; the polished point is accepted only if it
passes primal and dual feasibility checks. Hard-margin problems can be
infeasible, in which case the dual is unbounded; this is detected by a
divergence threshold, growth of the iterates, and a normalized recession
certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import GridBasis, LabeledDataset
from .errors import DimensionMismatchError
from .kernel import (
    DEFAULT_DATA_JITTER,
    CrossKernelMatrix,
    GramMatrix,
    KernelConfig,
    cross_kernel,
    gram,
    kernel_eval,
)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200_000

#: Dual objective beyond this is treated as an unbounded (infeasible) problem.
DIVERGENCE_THRESHOLD = 1e8

_CHECK_EVERY = 100  # iterations between divergence / polish checkpoints
_NORM_WINDOW = 100  # spacing of the iterate-growth window
_CERT_TOL = 1e-7  # recession-certificate tolerance


@dataclass(frozen=True)
class LocalProblem:
    """Margin QP data for one agent.

    ``constraint_matrix`` holds the rows -theta_i [w_i, 1]; the feature
    matrix is recovered exactly from it, so the two never drift apart.
    """

    gram: GramMatrix
    constraint_matrix: np.ndarray
    labels: np.ndarray
    basis_kind: str
    basis_points: np.ndarray

    def __post_init__(self):
        cm = np.asarray(self.constraint_matrix, dtype=float)
        labels = np.asarray(self.labels, dtype=int).ravel()
        if self.basis_kind not in ("data", "grid"):
            raise ValueError("basis_kind must be 'data' or 'grid'")
        if cm.ndim != 2 or cm.shape[1] != self.gram.size + 1:
            raise DimensionMismatchError(
                f"constraint matrix {cm.shape} does not match basis size {self.gram.size}"
            )
        if labels.shape[0] != cm.shape[0]:
            raise DimensionMismatchError("one label per constraint row required")
        if labels.size and not np.all(np.isin(labels, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        pts = np.asarray(self.basis_points, dtype=float)
        if pts.shape != (self.gram.size, 2):
            raise DimensionMismatchError("one 2-D basis point per Gram row required")
        for name, arr in (("constraint_matrix", cm), ("labels", labels), ("basis_points", pts)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_constraints(self) -> int:
        return self.constraint_matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.gram.size

    @property
    def features(self) -> np.ndarray:
        """Kernel feature rows w_i, recovered from the constraint matrix."""
        return -self.labels[:, None] * self.constraint_matrix[:, :-1]


@dataclass(frozen=True)
class ClassifierSolution:
    """Result of a margin QP solve."""

    coefficients: np.ndarray
    bias: float
    objective: float
    status: str  # optimal | infeasible | max_iter
    max_violation: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float).copy()
        c.flags.writeable = False
        object.__setattr__(self, "coefficients", c)
        if self.status not in ("optimal", "infeasible", "max_iter"):
            raise ValueError(f"unknown status {self.status!r}")


def build_local(
    dataset: LabeledDataset,
    basis,
    cfg: KernelConfig = KernelConfig(),
    jitter: float | None = None,
) -> LocalProblem:
    """Assemble the margin QP for one dataset.

    ``basis`` is the string "data" (Gram over the data points themselves)
    or a GridBasis (shared grid Gram with cross-kernel constraint rows).
    Data-basis Gram matrices get a small default diagonal jitter to
    tolerate near-duplicate sensor returns; grid Grams get none.
    """
    theta = dataset.labels.astype(float)
    if basis == "data":
        j = DEFAULT_DATA_JITTER if jitter is None else jitter
        g = gram(dataset.points, cfg, jitter=j)
        w = cross_kernel(dataset.points, dataset.points, cfg).entries
        basis_kind, basis_points = "data", dataset.points
    elif isinstance(basis, GridBasis):
        j = 0.0 if jitter is None else jitter
        g = gram(basis.points, cfg, jitter=j)
        w = cross_kernel(dataset.points, basis.points, cfg).entries
        basis_kind, basis_points = "grid", basis.points
    else:
        raise ValueError("basis must be 'data' or a GridBasis")
    rows = np.hstack([w, np.ones((dataset.size, 1))])
    cm = -theta[:, None] * rows
    return LocalProblem(
        gram=g,
        constraint_matrix=cm,
        labels=dataset.labels,
        basis_kind=basis_kind,
        basis_points=basis_points,
    )


def evaluate(sol: ClassifierSolution, basis_points, x, cfg: KernelConfig = KernelConfig()) -> float:
    """Pointwise classifier value sum_j c_j k(x, b_j) + gamma.

    Deliberately a scalar kernel-sum loop: it is the reference evaluation
    path that vectorized raster evaluation is checked against.
    """
    pts = np.atleast_2d(np.asarray(basis_points, dtype=float))
    c = sol.coefficients
    if pts.shape[0] != c.shape[0]:
        raise DimensionMismatchError(
            f"{c.shape[0]} coefficients vs {pts.shape[0]} basis points"
        )
    acc = 0.0
    for cj, bj in zip(c, pts):
        acc += cj * kernel_eval(x, bj, cfg)
    return acc + sol.bias


# ---------------------------------------------------------------------------
# projections


def project_nonneg(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0.0)


def project_nonneg_hyperplane(v: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {lam >= 0, theta'lam = 0} with theta in {-1,+1}^n.

    The KKT shift gives lam_i = max(0, v_i - t*theta_i) with t the root of
    the monotone piecewise-linear h(t) = theta'max(0, v - t*theta); the root
    is found exactly by scanning the sorted breakpoints.
    """
    # h(t) decreasing: positive-label terms max(0, v_i - t), negative ones
    # -max(0, v_i + t). Breakpoints where activity changes: t = theta_i*v_i.
    bps = np.sort(theta * v)

    def h(t):
        return float(theta @ np.maximum(0.0, v - t * theta))

    lo, hi = bps[0] - 1.0, bps[-1] + 1.0
    h_lo, h_hi = h(lo), h(hi)
    if h_lo <= 0.0:
        return np.maximum(0.0, v - lo * theta)
    if h_hi >= 0.0:
        return np.maximum(0.0, v - hi * theta)
    # locate the bracketing pair of breakpoints, then solve the linear piece
    vals = np.array([h(t) for t in bps])
    k = int(np.searchsorted(-vals, 0.0, side="left"))
    left = bps[k - 1] if k > 0 else lo
    right = bps[k] if k < bps.size else hi
    h_left, h_right = h(left), h(right)
    if h_left == h_right:
        t = left
    else:
        t = left + (right - left) * h_left / (h_left - h_right)
    lam = np.maximum(0.0, v - t * theta)
    # one Newton-style correction guards against breakpoint-ordering ties
    active = lam > 0.0
    slope = float(np.sum(active))
    if slope > 0:
        t += float(theta @ lam) / slope
        lam = np.maximum(0.0, v - t * theta)
    return lam


# ---------------------------------------------------------------------------
# accelerated dual ascent


@dataclass
class _DualResult:
    lam: np.ndarray
    iterations: int
    flag: str  # converged | max_iter | unbounded


def maximize_box_quadratic(
    hess: np.ndarray,
    lin: np.ndarray,
    lam0: np.ndarray,
    project,
    tol_pg: float,
    max_iter: int,
    checkpoint=None,
    lipschitz: float | None = None,
) -> _DualResult:
    """Maximize lin'lam - 1/2 lam'H lam over a projectable convex set.

    FISTA with gradient-based adaptive restart. ``checkpoint(k, lam, obj)``
    is called every _CHECK_EVERY iterations and may return "unbounded" to
    abort (used for infeasibility detection), or "stop" to accept.
    """
    n = lam0.shape[0]
    if n == 0:
        return _DualResult(lam0.copy(), 0, "converged")
    if lipschitz is None:
        lipschitz = float(np.linalg.eigvalsh(hess)[-1])
    step = 1.0 / max(lipschitz, 1e-300)
    lam = project(lam0.copy())
    y = lam.copy()
    t = 1.0
    lam_prev = lam.copy()
    for k in range(1, max_iter + 1):
        grad_y = lin - hess @ y
        lam_new = project(y + step * grad_y)
        if float(grad_y @ (lam_new - lam)) < 0.0:
            # momentum points downhill: restart
            t = 1.0
            y = lam.copy()
            grad_y = lin - hess @ y
            lam_new = project(y + step * grad_y)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = lam_new + ((t - 1.0) / t_new) * (lam_new - lam)
        lam_prev, lam, t = lam, lam_new, t_new
        if float(np.max(np.abs(lam - lam_prev))) / step <= tol_pg:
            # small iterate motion can be a momentum artifact; confirm with a
            # genuine projected-gradient step before declaring convergence
            pg = project(lam + step * (lin - hess @ lam)) - lam
            if float(np.max(np.abs(pg))) / step <= tol_pg:
                return _DualResult(lam, k, "converged")
        if checkpoint is not None and k % _CHECK_EVERY == 0:
            obj = float(lin @ lam - 0.5 * (lam @ (hess @ lam)))
            verdict = checkpoint(k, lam, obj)
            if verdict == "unbounded":
                return _DualResult(lam, k, "unbounded")
            if verdict == "stop":
                return _DualResult(lam, k, "converged")
    return _DualResult(lam, max_iter, "max_iter")


class _GrowthTracker:
    """Flags dual iterates whose norm keeps doubling across fixed windows."""

    def __init__(self, window=_NORM_WINDOW, floor=1e4, needed=3):
        self.window = window
        self.floor = floor
        self.needed = needed
        self._last = None
        self._streak = 0

    def update(self, norm: float) -> bool:
        grew = self._last is not None and norm > self.floor and norm >= 2.0 * self._last
        self._streak = self._streak + 1 if grew else 0
        self._last = norm
        return self._streak >= self.needed


def _recession_certificate(hess, lin, lam, hess_scale: float) -> bool:
    """Approximate Farkas certificate: the iterate direction is a feasible
    recession ray of the dual, so the primal has no feasible point."""
    nrm = float(np.linalg.norm(lam))
    if nrm <= 0.0:
        return False
    d = lam / nrm
    return (
        float(np.max(np.abs(hess @ d))) <= _CERT_TOL * max(1.0, hess_scale)
        and float(lin @ d) >= _CERT_TOL
    )


# ---------------------------------------------------------------------------
# KKT polish


def _polish_active_set(q_mat, features, theta, active, feas_tol, dual_tol):
    """Solve the equality KKT system for a candidate active set.

    Returns (c, gamma, lam_full) on success, None when the system is
    singular or the candidate fails feasibility checks.
    """
    n, dim = features.shape
    idx = np.flatnonzero(active)
    m = idx.size
    if m == 0:
        return None
    wa = features[idx]  # m x dim
    ta = theta[idx]
    kkt = np.zeros((dim + 1 + m, dim + 1 + m))
    kkt[:dim, :dim] = q_mat
    kkt[:dim, dim + 1 :] = -(wa * ta[:, None]).T
    kkt[dim, dim + 1 :] = -ta
    kkt[dim + 1 :, :dim] = wa * ta[:, None]
    kkt[dim + 1 :, dim] = ta
    rhs = np.zeros(dim + 1 + m)
    rhs[dim + 1 :] = 1.0
    try:
        sol = np.linalg.solve(kkt, rhs)
        residual = float(np.max(np.abs(kkt @ sol - rhs)))
        if residual > 1e-8:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        if float(np.max(np.abs(kkt @ sol - rhs))) > 1e-8:
            return None
    c = sol[:dim]
    gamma = sol[dim]
    lam_a = sol[dim + 1 :]
    if lam_a.size and float(np.min(lam_a)) < -dual_tol * max(1.0, float(np.max(np.abs(lam_a)))):
        return None
    margins = theta * (features @ c + gamma)
    if n and float(np.min(margins)) < 1.0 - feas_tol:
        return None
    lam = np.zeros(n)
    lam[idx] = np.maximum(lam_a, 0.0)
    return c, gamma, lam


def _candidate_active_sets(lam, margins):
    lam_scale = max(1.0, float(np.max(lam, initial=0.0)))
    support = lam > 1e-9 * lam_scale
    near = margins <= 1.0 + 1e-7
    yield support
    yield support | near
    yield near


# ---------------------------------------------------------------------------
# the solver


def solve_local(
    p: LocalProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ClassifierSolution:
    """Solve the hard-margin QP; never raises on infeasible or slow input.

    status "optimal" guarantees margins >= 1 - tol with consistent
    multipliers; "infeasible" means the dual was certified or driven
    unbounded; "max_iter" returns the best iterate found.
    """
    theta = p.labels.astype(float)
    n, dim = p.n_constraints, p.dim
    q_mat = p.gram.entries
    feats = p.features

    if n == 0:
        return ClassifierSolution(np.zeros(dim), 0.0, 0.0, "optimal")
    if np.all(theta > 0) or np.all(theta < 0):
        # one-sided labels: c = 0 with unit bias of the right sign
        g = float(theta[0])
        return ClassifierSolution(np.zeros(dim), g, 0.0, "optimal")

    # dual pieces: H = B' Q^-1 B with B = W' Theta, c(lam) = Q^-1 B lam
    b_mat = (feats * theta[:, None]).T  # dim x n
    x_mat = np.linalg.solve(q_mat, b_mat)  # Q^-1 B
    hess = b_mat.T @ x_mat
    hess = 0.5 * (hess + hess.T)
    lin = np.ones(n)

    hess_scale = float(np.max(np.abs(hess)))
    growth = _GrowthTracker()

    def primal_from(lam):
        c = x_mat @ lam
        weight = float(lam.sum())
        if weight > 1e-12 * max(1.0, float(np.max(lam))):
            gamma = float(lam @ (theta - feats @ c)) / weight
        else:
            gamma = 0.0
        return c, gamma

    def try_polish(lam):
        c, gamma = primal_from(lam)
        margins = theta * (feats @ c + gamma)
        for active in _candidate_active_sets(lam, margins):
            polished = _polish_active_set(q_mat, feats, theta, active, tol, tol)
            if polished is not None:
                return polished
        return None

    polished_sol = None

    def checkpoint(k, lam, obj):
        nonlocal polished_sol
        if obj > DIVERGENCE_THRESHOLD:
            return "unbounded"
        doubled = growth.update(float(np.linalg.norm(lam)))
        if doubled or k % (5 * _CHECK_EVERY) == 0:
            if _recession_certificate(hess, lin, lam, hess_scale):
                return "unbounded"
        if doubled:
            return "unbounded"
        polished_sol = try_polish(lam)
        if polished_sol is not None:
            return "stop"
        return None

    project = lambda v: project_nonneg_hyperplane(v, theta)
    result = maximize_box_quadratic(
        hess, lin, np.zeros(n), project, tol_pg=tol * 1e-3, max_iter=max_iter, checkpoint=checkpoint
    )

    if result.flag == "unbounded":
        c, gamma = primal_from(result.lam)
        margins = theta * (feats @ c + gamma)
        violation = max(0.0, 1.0 - float(np.min(margins)))
        return ClassifierSolution(
            c, gamma, 0.5 * float(c @ (q_mat @ c)), "infeasible", violation, result.iterations
        )

    if polished_sol is None:
        polished_sol = try_polish(result.lam)
    if polished_sol is not None:
        c, gamma, _lam = polished_sol
        margins = theta * (feats @ c + gamma)
        violation = max(0.0, 1.0 - float(np.min(margins)))
        return ClassifierSolution(
            c, gamma, 0.5 * float(c @ (q_mat @ c)), "optimal", violation, result.iterations
        )

    c, gamma = primal_from(result.lam)
    margins = theta * (feats @ c + gamma)
    violation = max(0.0, 1.0 - float(np.min(margins)))
    status = "optimal" if (result.flag == "converged" and violation <= tol) else "max_iter"
    return ClassifierSolution(
        c, gamma, 0.5 * float(c @ (q_mat @ c)), status, violation, result.iterations
    )


def export_solution(sol: ClassifierSolution, path) -> None:
    """Structured text dump: status, bias, coefficients, objective, violation."""
    lines = [
        f"status {sol.status}",
        f"gamma {sol.bias:.17g}",
        f"objective {sol.objective:.17g}",
        f"max_margin_violation {sol.max_violation:.17g}",
        "coefficients " + " ".join(f"{v:.17g}" for v in sol.coefficients),
    ]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
