"""Reference solvers used only to check the production solvers.

``brute_force_small`` enumerates every subset of margin constraints as a
candidate active set and keeps the best candidate whose KKT system is
solvable, primal-feasible, and dual-feasible. ``solve_centralized``
eliminates the consensus constraints by substitution and solves the pooled
single-machine problem.

Both are deliberately independent of the iterative machinery they verify;
keep it that way.
"""

from __future__ import annotations

import numpy as np

from .datagen import GridBasis, LabeledDataset, union_has_both_labels
from .errors import TooLargeError
from .kernel import KernelConfig
from .local_qp import ClassifierSolution, LocalProblem, build_local, solve_local

BRUTE_FORCE_LIMIT = 12

_FEAS_TOL = 1e-9
_DUAL_TOL = 1e-9


def _kkt_candidate(q_mat, feats, theta, idx):
    """Equality-KKT solve for active rows ``idx``; None if singular."""
    dim = q_mat.shape[0]
    m = idx.size
    if m == 0:
        return np.zeros(dim), 0.0, np.zeros(0)
    wa = feats[idx]
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
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)) or float(np.max(np.abs(kkt @ sol - rhs))) > 1e-7:
        return None
    return sol[:dim], float(sol[dim]), sol[dim + 1 :]


def brute_force_small(p: LocalProblem) -> ClassifierSolution:
    """Exhaustive active-set enumeration for tiny margin QPs.

    Tries all 2^n subsets in ascending bitmask order; among candidates that
    pass feasibility both ways, the lowest objective wins and ties keep the
    earliest (lowest bitmask) candidate.
    """
    n = p.n_constraints
    if n > BRUTE_FORCE_LIMIT:
        raise TooLargeError(f"{n} constraints exceed the 2^{BRUTE_FORCE_LIMIT} enumeration limit")
    theta = p.labels.astype(float)
    feats = p.features
    q_mat = p.gram.entries
    indices = np.arange(n)

    best = None  # (objective, c, gamma)
    for mask in range(1 << n):
        idx = indices[[(mask >> i) & 1 == 1 for i in range(n)]]
        cand = _kkt_candidate(q_mat, feats, theta, idx)
        if cand is None:
            continue
        c, gamma, lam_a = cand
        if lam_a.size and float(np.min(lam_a)) < -_DUAL_TOL:
            continue
        if n:
            margins = theta * (feats @ c + gamma)
            if float(np.min(margins)) < 1.0 - _FEAS_TOL:
                continue
        obj = 0.5 * float(c @ (q_mat @ c))
        if best is None or obj < best[0] - 1e-12:
            best = (obj, c, gamma)
    if best is None:
        return ClassifierSolution(
            np.zeros(p.dim), 0.0, 0.0, "infeasible", max_violation=float("inf")
        )
    obj, c, gamma = best
    return ClassifierSolution(c, gamma, obj, "optimal")


def pooled_problem(
    datasets: list[LabeledDataset], grid: GridBasis, cfg: KernelConfig = KernelConfig()
) -> LocalProblem:
    """The consensus problem with the equalities substituted away: one QP
    over (c, gamma) carrying every agent's margin constraints."""
    pts = np.vstack([d.points for d in datasets])
    labs = np.concatenate([d.labels for d in datasets])
    merged = LabeledDataset(agent_id=1, points=pts, labels=labs)
    return build_local(merged, grid, cfg)


def solve_centralized(
    datasets: list[LabeledDataset],
    grid: GridBasis,
    cfg: KernelConfig = KernelConfig(),
    tol: float = 1e-10,
    max_iter: int = 400_000,
) -> ClassifierSolution:
    """Ground-truth solution of the multi-agent grid-basis problem.

    The reported objective is the per-agent 1/2 c'Kc (the pooled objective
    is N times that, with the same argmin).
    """
    if not union_has_both_labels(datasets):
        raise ValueError("pooled dataset must contain both labels")
    return solve_local(pooled_problem(datasets, grid, cfg), tol=tol, max_iter=max_iter)
