"""Multi-agent consensus solver for the shared grid-basis classifier.

Each agent holds margin constraints over the same M grid-point basis; the
coupling constraint forces every agent's stacked coefficient/bias vector
[c; gamma] to equal a shared z. Two interchangeable engines drive all
agents to that common z:

* ``discrete_admm`` (default): scaled consensus ADMM. Each round, every
  agent minimizes its augmented Lagrangian over its own variables subject
  to its margin constraints (a small strongly convex QP, solved through
  its box-constrained dual with warm-started active-set pivoting and an
  accelerated projected-gradient fallback), then z is updated with the
  scaled-dual-corrected mean and the duals move by the consensus gap.
  The agent subproblem is equivalent, through the change of variables
  x = K^(1/2) c and slack y >= 0, to the equality-constrained form whose
  block matrix is assembled in AgentProblem for verification.

* ``euler_flow``: explicit-Euler integration of an augmented-Lagrangian
  primal-dual flow with the same fixed points, stepped at a fixed sampling
  period and reported against the T_SP time unit. The primal dynamics are
  preconditioned by the inverse of the per-agent prox matrix and the rates
  are auto-scaled from a measured stiffness bound, so the loop speed is set
  by the integrator stability margin rather than the data.

Infeasible instances (no grid-basis separator) surface as either a
diverging agent subproblem (empty margin set) or duals growing without
bound; both are reported as status "diverged" rather than raised from
``run``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .datagen import GridBasis, LabeledDataset
from .errors import DimensionMismatchError, ConsensusViolationError, NumericalDivergenceError
from .geometry import ShapeModel
from .kernel import CrossKernelMatrix, GramMatrix, KernelConfig, cross_kernel, gram, sqrt_and_inv_sqrt
from .local_qp import _GrowthTracker, _recession_certificate, maximize_box_quadratic, project_nonneg

#: Reporting time unit for the continuous-time mode: one T_SP spans
#: T_SP / step_size integrator steps.
T_SP = 0.01

DIVERGENCE_THRESHOLD = 1e8

_HISTORY_LEN = 16
_MAX_PIVOTS_FACTOR = 4
_FEAS_TOL = 1e-10
_DUAL_TOL = 1e-10

# euler_flow rate design: the primal gain uses this fraction of the explicit
# Euler stability limit (from the measured stiffness of the preconditioned
# loop); multiplier rates are fixed fractions of the step frequency, with
# the inequality rate kept below 1/step so multipliers stay nonnegative.
_FLOW_STABILITY_FRACTION = 0.8
_FLOW_INEQ_RATE = 0.95
_FLOW_CONSENSUS_RATE = 0.4


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for both consensus engines."""

    beta_x: float = 1.0
    rho: float = 1.0
    q_scale: dict | None = None  # agent_id -> positive diagonal (length M+1)
    mode: str = "discrete_admm"  # or "euler_flow"
    step_size: float = 0.001  # euler_flow integrator step
    max_iter: int = 50_000
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    divergence_threshold: float = DIVERGENCE_THRESHOLD

    def __post_init__(self):
        if self.beta_x <= 0 or self.rho <= 0 or self.step_size <= 0:
            raise ValueError("beta_x, rho and step_size must be positive")
        if self.mode not in ("discrete_admm", "euler_flow"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ValueError("tolerances must be positive")

    def scale_for(self, agent_id: int, m_plus_1: int) -> np.ndarray:
        if not self.q_scale or agent_id not in self.q_scale:
            return np.ones(m_plus_1)
        d = np.asarray(self.q_scale[agent_id], dtype=float).ravel()
        if d.shape[0] != m_plus_1:
            raise DimensionMismatchError(
                f"q_scale for agent {agent_id} has length {d.shape[0]}, expected {m_plus_1}"
            )
        if np.any(d <= 0):
            raise ValueError("q_scale diagonals must be positive")
        return d


@dataclass(frozen=True)
class AgentProblem:
    """Per-agent constraint data over the shared grid basis.

    ``constraint_matrix`` is the full equality block matrix of the
    transformed problem, rows [margin rows; coefficient coupling; bias
    coupling] over columns [x (M); gamma; y (n); z (M+1)], with right-hand
    side [-1; 0]. The engines work on the structured pieces; the assembled
    matrix is kept for verification and diagnostics.
    """

    agent_id: int
    cross: CrossKernelMatrix
    labels: np.ndarray
    grid_gram: GramMatrix
    grid_gram_sqrt: np.ndarray
    grid_gram_inv_sqrt: np.ndarray
    constraint_matrix: np.ndarray
    grid: GridBasis
    kernel: KernelConfig

    def __post_init__(self):
        n, m = self.cross.shape
        labels = np.asarray(self.labels, dtype=int).ravel()
        if labels.shape[0] != n:
            raise DimensionMismatchError("one label per data row required")
        if not np.all(np.isin(labels, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        if self.grid_gram.size != m or self.grid.size != m:
            raise DimensionMismatchError("grid Gram and basis must match the cross-kernel width")
        for name in ("grid_gram_sqrt", "grid_gram_inv_sqrt"):
            mat = np.asarray(getattr(self, name), dtype=float)
            if mat.shape != (m, m):
                raise DimensionMismatchError(f"{name} must be {m}x{m}")
        roundtrip = self.grid_gram_sqrt @ self.grid_gram_inv_sqrt
        if float(np.max(np.abs(roundtrip - np.eye(m)))) > 1e-9:
            raise ValueError("grid_gram_sqrt and grid_gram_inv_sqrt are not inverses")
        a = np.asarray(self.constraint_matrix, dtype=float)
        if a.shape != (n + m + 1, m + 1 + n + m + 1):
            raise DimensionMismatchError(
                f"constraint matrix has shape {a.shape}, expected {(n + m + 1, m + 1 + n + m + 1)}"
            )
        for name, arr in (("labels", labels), ("constraint_matrix", a)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_points(self) -> int:
        return self.cross.shape[0]

    @property
    def basis_size(self) -> int:
        return self.cross.shape[1]

    @property
    def constraint_rhs(self) -> np.ndarray:
        n, m = self.cross.shape
        rhs = np.zeros(n + m + 1)
        rhs[:n] = -1.0
        return rhs


def assemble_agent(
    dataset: LabeledDataset, grid: GridBasis, cfg: KernelConfig = KernelConfig()
) -> AgentProblem:
    """Build one agent's problem data from its dataset and the shared grid."""
    kg = gram(grid.points, cfg, jitter=0.0)
    s, s_inv = sqrt_and_inv_sqrt(kg)
    kdg = cross_kernel(dataset.points, grid.points, cfg)
    theta = dataset.labels.astype(float)
    n, m = kdg.shape

    a = np.zeros((n + m + 1, m + 1 + n + m + 1))
    a[:n, :m] = -theta[:, None] * (kdg.entries @ s_inv)
    a[:n, m] = -theta
    a[:n, m + 1 : m + 1 + n] = np.eye(n)
    a[n : n + m, :m] = -s_inv
    a[n : n + m, m + 1 + n : m + 1 + n + m] = np.eye(m)
    a[n + m, m] = -1.0
    a[n + m, -1] = 1.0

    return AgentProblem(
        agent_id=dataset.agent_id,
        cross=kdg,
        labels=dataset.labels,
        grid_gram=kg,
        grid_gram_sqrt=s,
        grid_gram_inv_sqrt=s_inv,
        constraint_matrix=a,
        grid=grid,
        kernel=cfg,
    )


@dataclass
class AgentState:
    """Mutable per-agent iterate plus solver caches.

    ``dual_eq`` stacks the margin multipliers and the consensus multipliers
    (for the constraint u - z = 0); in discrete mode the consensus part is
    rho times the scaled dual.
    """

    problem: AgentProblem
    c: np.ndarray
    gamma: float
    y: np.ndarray
    lam: np.ndarray
    consensus_dual: np.ndarray  # scaled dual w (discrete) or nu (flow)
    dual_scale: float  # rho (discrete) or 1.0 (flow)
    history: deque
    # solver caches
    _p_inv: np.ndarray | None = None
    _pi_gt: np.ndarray | None = None
    _hess: np.ndarray | None = None
    _lip: float = 0.0
    _hess_scale: float = 0.0
    _d2: np.ndarray | None = None
    _g_mat: np.ndarray | None = None
    _active: tuple = ()
    _flow_ku: float = 0.0  # shared primal rate, filled on the first flow step

    @property
    def u(self) -> np.ndarray:
        return np.concatenate([self.c, [self.gamma]])

    @property
    def x(self) -> np.ndarray:
        """Transformed coefficients K^(1/2) c."""
        return self.problem.grid_gram_sqrt @ self.c

    @property
    def dual_eq(self) -> np.ndarray:
        return np.concatenate([self.lam, self.dual_scale * self.consensus_dual])

    def x_norm(self) -> float:
        return float(np.sqrt(max(self.c @ (self.problem.grid_gram.entries @ self.c), 0.0)))

    def record(self):
        self.history.append((self.c.copy(), self.gamma))


@dataclass
class ConsensusState:
    """Shared vector plus the residuals of the latest round."""

    z: np.ndarray
    iteration: int = 0
    primal_residual: float = float("inf")
    dual_residual: float = float("inf")


@dataclass
class ConvergenceReport:
    """Per-iteration trace of a consensus run."""

    status: str  # converged | max_iter | diverged
    mode: str
    iterations: int
    agent_ids: tuple
    iteration_trace: np.ndarray
    primal_trace: np.ndarray
    dual_trace: np.ndarray
    objective_trace: np.ndarray
    x_norm_trace: np.ndarray  # iterations x N
    t_sp_units: float | None = None  # euler_flow only
    consensus: "ConsensusState | None" = None
    states: "list[AgentState] | None" = None

    @property
    def final_primal_residual(self) -> float:
        return float(self.primal_trace[-1]) if self.primal_trace.size else float("inf")

    @property
    def final_dual_residual(self) -> float:
        return float(self.dual_trace[-1]) if self.dual_trace.size else float("inf")

    @property
    def final_objective(self) -> float:
        return float(self.objective_trace[-1]) if self.objective_trace.size else float("nan")

    def write_table(self, path) -> None:
        header = ["# status " + self.status, "# mode " + self.mode]
        if self.t_sp_units is not None:
            header.append(f"# t_sp_units {self.t_sp_units:.17g}")
        cols = "# iteration primal_residual dual_residual objective " + " ".join(
            f"x_norm_agent_{a}" for a in self.agent_ids
        )
        header.append(cols)
        lines = header
        for k in range(self.iteration_trace.shape[0]):
            row = [
                str(int(self.iteration_trace[k])),
                f"{self.primal_trace[k]:.17g}",
                f"{self.dual_trace[k]:.17g}",
                f"{self.objective_trace[k]:.17g}",
            ]
            row += [f"{v:.17g}" for v in self.x_norm_trace[k]]
            lines.append(" ".join(row))
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")


def init_state(problem: AgentProblem, cfg: SolverConfig) -> AgentState:
    """Zero-initialized state with the solver matrices prefactored."""
    n, m = problem.cross.shape
    state = AgentState(
        problem=problem,
        c=np.zeros(m),
        gamma=0.0,
        y=np.zeros(n),
        lam=np.zeros(n),
        consensus_dual=np.zeros(m + 1),
        dual_scale=cfg.rho if cfg.mode == "discrete_admm" else 1.0,
        history=deque(maxlen=_HISTORY_LEN),
    )
    d = cfg.scale_for(problem.agent_id, m + 1)
    state._d2 = d * d
    g_mat = _margin_rows(problem)
    p = cfg.beta_x * _padded_gram(problem) + cfg.rho * np.diag(state._d2)
    p_inv = np.linalg.inv(p)
    pi_gt = p_inv @ g_mat.T
    hess = g_mat @ pi_gt
    hess = 0.5 * (hess + hess.T)
    state._g_mat = g_mat
    state._p_inv = p_inv
    state._pi_gt = pi_gt
    state._hess = hess
    state._lip = float(np.linalg.eigvalsh(hess)[-1]) if n else 0.0
    state._hess_scale = float(np.max(np.abs(hess))) if n else 0.0
    return state


def _padded_gram(problem: AgentProblem) -> np.ndarray:
    m = problem.basis_size
    k = np.zeros((m + 1, m + 1))
    k[:m, :m] = problem.grid_gram.entries
    return k


def _margin_rows(problem: AgentProblem) -> np.ndarray:
    """G with rows -theta_i [w_i, 1] so the margins read G u <= -1."""
    theta = problem.labels.astype(float)
    rows = np.hstack([problem.cross.entries, np.ones((problem.n_points, 1))])
    return -theta[:, None] * rows


def _subproblem(state: AgentState, v: np.ndarray, cfg: SolverConfig) -> None:
    """min beta/2 c'Kc + rho/2 ||D(u - v)||^2 s.t. margins >= 1, in place.

    Solved through the dual in lambda >= 0. The cached active set is tried
    first (one small linear solve); pivots add the worst violated row or
    drop the most negative multiplier; an accelerated projected-gradient
    fallback breaks ties and certifies unbounded duals (empty margin set).
    """
    problem = state.problem
    n = problem.n_points
    u0 = state._p_inv @ (cfg.rho * state._d2 * v)
    if n == 0:
        _commit(state, u0, np.zeros(0))
        return
    r0 = state._g_mat @ u0 + 1.0  # G u0 - h with h = -1
    hess = state._hess

    active = list(state._active)
    for _ in range(_MAX_PIVOTS_FACTOR * n + 4):
        if active:
            idx = np.array(active, dtype=int)
            try:
                lam_a = np.linalg.solve(hess[np.ix_(idx, idx)], r0[idx])
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(lam_a)):
                break
            lam_scale = max(1.0, float(np.max(np.abs(lam_a))))
            if float(np.min(lam_a)) < -_DUAL_TOL * lam_scale:
                active.pop(int(np.argmin(lam_a)))
                continue
            slack = r0 - hess[:, idx] @ lam_a
            slack[idx] = 0.0
        else:
            lam_a = np.zeros(0)
            slack = r0.copy()
        worst = int(np.argmax(slack))
        if slack[worst] <= _FEAS_TOL:
            lam = np.zeros(n)
            if active:
                lam[idx] = np.maximum(lam_a, 0.0)
            state._active = tuple(active)
            u = u0 - state._pi_gt @ lam
            _commit(state, u, lam)
            return
        active.append(worst)

    # fallback: accelerated dual ascent with divergence detection
    growth = _GrowthTracker()

    def checkpoint(_k, lam, obj):
        if obj > cfg.divergence_threshold:
            return "unbounded"
        if growth.update(float(np.linalg.norm(lam))) or _recession_certificate(
            hess, r0, lam, state._hess_scale
        ):
            return "unbounded"
        return None

    result = maximize_box_quadratic(
        hess,
        r0,
        state.lam.copy(),
        project_nonneg,
        tol_pg=1e-10,
        max_iter=20_000,
        checkpoint=checkpoint,
        lipschitz=state._lip,
    )
    if result.flag == "unbounded":
        raise NumericalDivergenceError(
            f"agent {problem.agent_id}: margin constraints admit no point in the "
            "grid basis (dual unbounded)"
        )
    lam = result.lam
    support = np.flatnonzero(lam > 1e-9 * max(1.0, float(np.max(lam, initial=0.0))))
    if support.size:
        try:
            lam_a = np.linalg.solve(hess[np.ix_(support, support)], r0[support])
            slack = r0 - hess[:, support] @ lam_a
            slack[support] = 0.0
            if float(np.min(lam_a)) >= -_DUAL_TOL * max(1.0, float(np.max(np.abs(lam_a)))) and float(
                np.max(slack)
            ) <= _FEAS_TOL:
                lam = np.zeros(n)
                lam[support] = np.maximum(lam_a, 0.0)
                state._active = tuple(support.tolist())
        except np.linalg.LinAlgError:
            pass
    u = u0 - state._pi_gt @ lam
    _commit(state, u, lam)


def _commit(state: AgentState, u: np.ndarray, lam: np.ndarray) -> None:
    m = state.problem.basis_size
    state.c = u[:m]
    state.gamma = float(u[m])
    margins = state.problem.labels.astype(float) * (
        state.problem.cross.entries @ state.c + state.gamma
    )
    state.y = margins - 1.0
    state.lam = lam
    state.record()


def _agent_objective(state: AgentState) -> float:
    return 0.5 * float(state.c @ (state.problem.grid_gram.entries @ state.c))


def admm_step(
    pairs: list[tuple[AgentProblem, AgentState]],
    consensus: ConsensusState,
    cfg: SolverConfig,
) -> None:
    """One synchronized round of scaled consensus ADMM, in place.

    Agents are processed in agent_id order so the z average is a fixed
    summation order regardless of the caller's list order.
    """
    pairs = sorted(pairs, key=lambda pr: pr[0].agent_id)
    _check_shared_grid(pairs)
    m1 = pairs[0][0].basis_size + 1
    z = consensus.z

    weight = np.zeros(m1)
    accum = np.zeros(m1)
    for problem, state in pairs:
        d = np.sqrt(state._d2)
        v = z - state.consensus_dual / d
        _subproblem(state, v, cfg)
        weight += state._d2
        accum += state._d2 * state.u + d * state.consensus_dual

    z_new = accum / weight
    primal = 0.0
    for _, state in pairs:
        d = np.sqrt(state._d2)
        state.consensus_dual = state.consensus_dual + d * (state.u - z_new)
        primal = max(primal, float(np.max(np.abs(state.u - z_new))))

    consensus.dual_residual = cfg.rho * float(np.max(np.abs(z_new - z)))
    consensus.primal_residual = primal
    consensus.z = z_new
    consensus.iteration += 1

    worst = max(
        (float(np.max(np.abs(s.consensus_dual), initial=0.0)) for _, s in pairs),
        default=0.0,
    )
    if (
        primal > cfg.divergence_threshold
        or consensus.dual_residual > cfg.divergence_threshold
        or worst > cfg.divergence_threshold
    ):
        raise NumericalDivergenceError("consensus residuals exceeded the divergence threshold")


def _flow_primal_rate(pairs, cfg: SolverConfig) -> float:
    """Primal rate from the explicit-Euler stability limit.

    The preconditioned primal loop's stiffness is bounded by the largest
    eigenvalue, over agents, of P^-1 (beta K + rho D^2 + rho G'G); the rate
    uses a fixed fraction of 2 / (step * stiffness).
    """
    stiffness = 0.0
    for problem, state in pairs:
        s_mat = (
            cfg.beta_x * _padded_gram(problem)
            + cfg.rho * np.diag(state._d2)
            + cfg.rho * state._g_mat.T @ state._g_mat
        )
        eigs = np.linalg.eigvals(state._p_inv @ s_mat)
        stiffness = max(stiffness, float(np.max(np.abs(eigs))))
    return _FLOW_STABILITY_FRACTION * 2.0 / (cfg.step_size * max(stiffness, 1e-12))


def euler_step(
    pairs: list[tuple[AgentProblem, AgentState]],
    consensus: ConsensusState,
    cfg: SolverConfig,
) -> None:
    """One explicit-Euler step of the preconditioned primal-dual flow.

    Equilibria coincide with the KKT points of the consensus problem: the
    inequality multipliers follow lam_dot = [lam + rho s]_+ - lam (s the
    margin violation), the consensus multipliers integrate the gap, and the
    primal variables descend the augmented Lagrangian under the P^-1
    metric. The dual residual is the largest state derivative, so it
    vanishes exactly at optimality.
    """
    pairs = sorted(pairs, key=lambda pr: pr[0].agent_id)
    _check_shared_grid(pairs)
    z = consensus.z
    eta = cfg.step_size
    rho = cfg.rho
    if pairs[0][1]._flow_ku <= 0.0:
        ku = _flow_primal_rate(pairs, cfg)
        for _, state in pairs:
            state._flow_ku = ku
    ku = pairs[0][1]._flow_ku
    k_lam = _FLOW_INEQ_RATE / eta
    k_nu = _FLOW_CONSENSUS_RATE / eta

    z_dot = np.zeros_like(z)
    weight = np.zeros_like(z)
    stationarity = 0.0
    updates = []
    for problem, state in pairs:
        g_mat = state._g_mat
        u = state.u
        d = np.sqrt(state._d2)
        violation = g_mat @ u + 1.0  # <= 0 when margins hold
        m_hat = np.maximum(0.0, state.lam + rho * violation)
        gap = u - z
        grad = np.zeros_like(u)
        grad[:-1] = cfg.beta_x * (problem.grid_gram.entries @ state.c)
        grad += g_mat.T @ m_hat + d * state.consensus_dual + rho * state._d2 * gap
        u_dot = -ku * (state._p_inv @ grad)
        lam_dot = k_lam * (m_hat - state.lam)
        nu_dot = k_nu * (d * gap)
        z_dot += d * state.consensus_dual + rho * state._d2 * gap
        weight += rho * state._d2
        updates.append((state, u_dot, lam_dot, nu_dot))
        stationarity = max(
            stationarity,
            float(np.max(np.abs(u_dot))),
            float(np.max(np.abs(lam_dot), initial=0.0)),
        )
    z_dot = ku * z_dot / weight

    for state, u_dot, lam_dot, nu_dot in updates:
        m = state.problem.basis_size
        u = state.u + eta * u_dot
        state.c = u[:m]
        state.gamma = float(u[m])
        state.lam = np.maximum(0.0, state.lam + eta * lam_dot)
        state.consensus_dual = state.consensus_dual + eta * nu_dot
        margins = state.problem.labels.astype(float) * (
            state.problem.cross.entries @ state.c + state.gamma
        )
        state.y = np.maximum(0.0, margins - 1.0)
        state.record()
    z_new = z + eta * z_dot

    consensus.primal_residual = max(
        float(np.max(np.abs(s.u - z_new))) for _, s in pairs
    )
    consensus.dual_residual = max(stationarity, float(np.max(np.abs(z_dot))))
    consensus.z = z_new
    consensus.iteration += 1

    worst = max(
        max(
            float(np.max(np.abs(s.u))),
            float(np.max(np.abs(s.lam), initial=0.0)),
            float(np.max(np.abs(s.consensus_dual), initial=0.0)),
        )
        for _, s in pairs
    )
    if worst > cfg.divergence_threshold or consensus.primal_residual > cfg.divergence_threshold:
        raise NumericalDivergenceError("flow state exceeded the divergence threshold")


def _check_shared_grid(pairs) -> None:
    first = pairs[0][0]
    for problem, _ in pairs[1:]:
        if problem.basis_size != first.basis_size:
            raise DimensionMismatchError("agents must share the grid dimension")
        if not np.array_equal(problem.grid.points, first.grid.points):
            raise DimensionMismatchError("agents must share identical grid points")


def run(
    problems: list[AgentProblem],
    cfg: SolverConfig = SolverConfig(),
) -> tuple[ShapeModel, ConvergenceReport]:
    """Iterate the chosen engine to consensus.

    Returns the shape model built from the final z (whatever the status;
    non-converged models are what the failure-mode diagnostics evaluate)
    and the full residual/objective trace. Divergence is reported as
    status "diverged", not raised.
    """
    if not problems:
        raise ValueError("need at least one agent")
    problems = sorted(problems, key=lambda p: p.agent_id)
    ids = [p.agent_id for p in problems]
    if len(set(ids)) != len(ids):
        raise ValueError(f"agent ids must be distinct, got {ids}")
    states = [init_state(p, cfg) for p in problems]
    pairs = list(zip(problems, states))
    _check_shared_grid(pairs)
    m1 = problems[0].basis_size + 1
    consensus = ConsensusState(z=np.zeros(m1))
    step_fn = admm_step if cfg.mode == "discrete_admm" else euler_step

    rows = []
    status = "max_iter"
    for _ in range(cfg.max_iter):
        try:
            step_fn(pairs, consensus, cfg)
        except NumericalDivergenceError:
            status = "diverged"
            break
        rows.append(
            (
                consensus.iteration,
                consensus.primal_residual,
                consensus.dual_residual,
                sum(_agent_objective(s) for s in states),
                [s.x_norm() for s in states],
            )
        )
        if (
            consensus.primal_residual <= cfg.tol_primal
            and consensus.dual_residual <= cfg.tol_dual
        ):
            status = "converged"
            break

    report = _build_report(status, cfg, ids, rows)
    report.consensus = consensus
    report.states = states
    model = ShapeModel(
        grid=problems[0].grid,
        coefficients=consensus.z[:-1],
        bias=float(consensus.z[-1]),
        kernel=problems[0].kernel,
    )
    return model, report


def _build_report(status, cfg, ids, rows) -> ConvergenceReport:
    n_rows = len(rows)
    iteration = np.array([r[0] for r in rows], dtype=float)
    primal = np.array([r[1] for r in rows])
    dual = np.array([r[2] for r in rows])
    objective = np.array([r[3] for r in rows])
    x_norms = np.array([r[4] for r in rows]) if rows else np.zeros((0, len(ids)))
    t_sp = None
    if cfg.mode == "euler_flow":
        t_sp = n_rows * cfg.step_size / T_SP
    return ConvergenceReport(
        status=status,
        mode=cfg.mode,
        iterations=n_rows,
        agent_ids=tuple(ids),
        iteration_trace=iteration,
        primal_trace=primal,
        dual_trace=dual,
        objective_trace=objective,
        x_norm_trace=x_norms,
        t_sp_units=t_sp,
    )


def extract_model(
    consensus: ConsensusState,
    grid: GridBasis,
    kernel: KernelConfig,
    states=(),
    tol: float = 1e-4,
) -> ShapeModel:
    """Validated projection of the consensus vector into a ShapeModel.

    Every provided agent state must agree with z within ``tol`` in the
    max norm, mirroring the claim that the learned curve is common to all
    agents; otherwise ConsensusViolationError.
    """
    z = consensus.z
    worst = 0.0
    for state in states:
        worst = max(worst, float(np.max(np.abs(state.u - z))))
    if worst > tol:
        raise ConsensusViolationError(
            f"agent iterates deviate from consensus by {worst:.3e} (tol {tol:.1e})"
        )
    return ShapeModel(grid=grid, coefficients=z[:-1], bias=float(z[-1]), kernel=kernel)
