"""Consensus engines: assembly, ADMM rounds, the Euler flow, extraction."""

import numpy as np
import pytest

from shapelearn import (
    ConsensusViolationError,
    DimensionMismatchError,
    KernelConfig,
    LabeledDataset,
    SolverConfig,
    assemble_agent,
    admm_step,
    build_local,
    extract_model,
    kernel_eval,
    make_grid,
    run,
    solve_centralized,
    solve_local,
    sqrt_and_inv_sqrt,
)
from shapelearn.consensus import ConsensusState, init_state

from conftest import (
    default_star_scenario,
    grid_feasible_instance,
    infeasible_grid,
    random_labeled_points,
    window_max_monotone,
)


def small_instance(seed=0, n_agents=3, max_points=8, grid_shape=(3, 3)):
    rng = np.random.default_rng(seed)
    grid = make_grid((-2, 2, -2, 2), *grid_shape)
    datasets = grid_feasible_instance(rng, n_agents, max_points, grid)
    return datasets, grid


class TestAssembleAgent:
    def test_block_matrix_dimensions(self):
        rng = np.random.default_rng(1)
        pts, labs = random_labeled_points(rng, 20)
        ds = LabeledDataset(agent_id=1, points=pts, labels=labs)
        grid = make_grid((-2, 2, -2, 2), 3, 3)
        agent = assemble_agent(ds, grid)
        assert agent.constraint_matrix.shape == (30, 40)
        assert agent.constraint_rhs.shape == (30,)
        assert np.all(agent.constraint_rhs[:20] == -1.0)
        assert np.all(agent.constraint_rhs[20:] == 0.0)

    def test_single_grid_point(self):
        ds = LabeledDataset(agent_id=1, points=[(0.5, 0)], labels=[1])
        grid = make_grid((0, 0, 0, 0), 1, 1)
        agent = assemble_agent(ds, grid)
        assert agent.grid_gram.entries[0, 0] == 1.0
        assert agent.grid_gram_sqrt[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_sqrt_pair_invariant(self):
        _, datasets, grid = default_star_scenario()
        agent = assemble_agent(datasets[0], grid)
        roundtrip = agent.grid_gram_sqrt @ agent.grid_gram_inv_sqrt
        assert np.max(np.abs(roundtrip - np.eye(grid.size))) < 1e-9

    def test_entrywise_independent_rebuild(self):
        # rebuild every block from scalar kernel calls and a separately
        # computed inverse square root
        rng = np.random.default_rng(3)
        pts, labs = random_labeled_points(rng, 5)
        ds = LabeledDataset(agent_id=1, points=pts, labels=labs)
        grid = make_grid((-1, 1, -1, 1), 2, 2)
        agent = assemble_agent(ds, grid)
        n, m = 5, 4

        kg = np.array([[kernel_eval(a, b) for b in grid.points] for a in grid.points])
        w_eig, v_eig = np.linalg.eigh(kg)
        kg_inv_sqrt = (v_eig / np.sqrt(w_eig)) @ v_eig.T
        kdg = np.array([[kernel_eval(d, g) for g in grid.points] for d in pts])

        expected = np.zeros((n + m + 1, m + 1 + n + m + 1))
        expected[:n, :m] = -labs[:, None] * (kdg @ kg_inv_sqrt)
        expected[:n, m] = -labs
        expected[:n, m + 1 : m + 1 + n] = np.eye(n)
        expected[n : n + m, :m] = -kg_inv_sqrt
        expected[n : n + m, m + 1 + n : m + 1 + n + m] = np.eye(m)
        expected[n + m, m] = -1.0
        expected[n + m, -1] = 1.0
        assert np.allclose(agent.constraint_matrix, expected, atol=1e-9)

    def test_x_change_of_variables_roundtrip(self):
        _, datasets, grid = default_star_scenario()
        agent = assemble_agent(datasets[0], grid)
        rng = np.random.default_rng(0)
        c = rng.normal(size=grid.size)
        x = agent.grid_gram_sqrt @ c
        back = agent.grid_gram_inv_sqrt @ x
        assert np.max(np.abs(back - c)) < 1e-9


class TestAdmm:
    def test_single_agent_matches_local_solver(self):
        datasets, grid = small_instance(seed=5, n_agents=1)
        model, report = run([assemble_agent(datasets[0], grid)], SolverConfig(tol_dual=1e-9))
        assert report.status == "converged"
        local = solve_local(build_local(datasets[0], grid), tol=1e-10, max_iter=400_000)
        z = np.concatenate([model.coefficients, [model.bias]])
        ref = np.concatenate([local.coefficients, [local.bias]])
        assert np.max(np.abs(z - ref)) < 1e-6

    def test_identical_datasets_consensus_is_local_solution(self):
        datasets, grid = small_instance(seed=6, n_agents=1)
        base = datasets[0]
        copies = [
            LabeledDataset(agent_id=k + 1, points=base.points, labels=base.labels)
            for k in range(3)
        ]
        cfg = SolverConfig(tol_primal=1e-8, tol_dual=1e-9)
        model, report = run([assemble_agent(d, grid) for d in copies], cfg)
        assert report.status == "converged"
        assert report.final_primal_residual < 1e-8
        local = solve_local(build_local(base, grid), tol=1e-10, max_iter=400_000)
        z = np.concatenate([model.coefficients, [model.bias]])
        ref = np.concatenate([local.coefficients, [local.bias]])
        assert np.max(np.abs(z - ref)) < 1e-5

    def test_three_agents_match_centralized(self):
        datasets, grid = small_instance(seed=7)
        problems = [assemble_agent(d, grid) for d in datasets]
        model, report = run(problems, SolverConfig())
        assert report.status == "converged"
        central = solve_centralized(datasets, grid)
        kg = problems[0].grid_gram.entries
        obj = 0.5 * float(model.coefficients @ (kg @ model.coefficients))
        assert obj == pytest.approx(central.objective, rel=1e-4, abs=1e-8)
        z = np.concatenate([model.coefficients, [model.bias]])
        ref = np.concatenate([central.coefficients, [central.bias]])
        assert np.max(np.abs(z - ref)) < 1e-3

    def test_margins_hold_at_consensus(self):
        _, datasets, grid = default_star_scenario()
        problems = [assemble_agent(d, grid) for d in datasets]
        model, report = run(problems, SolverConfig())
        assert report.status == "converged"
        pts = np.vstack([d.points for d in datasets])
        theta = np.concatenate([d.labels for d in datasets])
        margins = theta * model.evaluate_many(pts)
        assert margins.min() >= 1.0 - 1e-4

    def test_agent_order_invariance_bitwise(self):
        datasets, grid = small_instance(seed=8)
        problems = [assemble_agent(d, grid) for d in datasets]

        def z_trajectory(order, iters=40):
            states = [init_state(problems[i], SolverConfig()) for i in order]
            pairs = [(problems[i], st) for i, st in zip(order, states)]
            consensus = ConsensusState(z=np.zeros(grid.size + 1))
            traj = []
            for _ in range(iters):
                admm_step(pairs, consensus, SolverConfig())
                traj.append(consensus.z.copy())
            return np.array(traj)

        a = z_trajectory([0, 1, 2])
        b = z_trajectory([2, 0, 1])
        assert np.array_equal(a, b)

    def test_beta_rho_joint_scaling_invariance(self):
        datasets, grid = small_instance(seed=9)
        problems = [assemble_agent(d, grid) for d in datasets]
        m1, _ = run(problems, SolverConfig(beta_x=1.0, rho=1.0))
        m2, _ = run(problems, SolverConfig(beta_x=7.0, rho=7.0))
        z1 = np.concatenate([m1.coefficients, [m1.bias]])
        z2 = np.concatenate([m2.coefficients, [m2.bias]])
        assert np.max(np.abs(z1 - z2)) < 1e-6

    def test_slack_nonnegative_throughout(self):
        datasets, grid = small_instance(seed=10)
        problems = [assemble_agent(d, grid) for d in datasets]
        cfg = SolverConfig()
        states = [init_state(p, cfg) for p in problems]
        pairs = list(zip(problems, states))
        consensus = ConsensusState(z=np.zeros(grid.size + 1))
        for _ in range(200):
            admm_step(pairs, consensus, cfg)
            for _, st in pairs:
                assert st.y.min() >= -1e-9

    def test_windowed_monotone_primal_residual(self):
        _, datasets, grid = default_star_scenario()
        _, report = run([assemble_agent(d, grid) for d in datasets], SolverConfig())
        assert report.status == "converged"
        assert window_max_monotone(report.primal_trace)

    def test_objective_trace_matches_state(self):
        datasets, grid = small_instance(seed=11)
        problems = [assemble_agent(d, grid) for d in datasets]
        model, report = run(problems, SolverConfig())
        kg = problems[0].grid_gram.entries
        final = sum(
            0.5 * float(st.c @ (kg @ st.c)) for st in report.states
        )
        assert report.final_objective == pytest.approx(final, abs=1e-12)

    def test_mixed_grids_rejected(self):
        datasets, grid = small_instance(seed=12, n_agents=2)
        other_grid = make_grid((-2, 2, -2, 2), 2, 2)
        problems = [
            assemble_agent(datasets[0], grid),
            assemble_agent(datasets[1], other_grid),
        ]
        with pytest.raises(DimensionMismatchError):
            run(problems, SolverConfig())

    def test_duplicate_agent_ids_rejected(self):
        datasets, grid = small_instance(seed=13, n_agents=1)
        agent = assemble_agent(datasets[0], grid)
        with pytest.raises(ValueError):
            run([agent, agent], SolverConfig())

    def test_q_scale_identity_equivalence(self):
        datasets, grid = small_instance(seed=14, n_agents=2)
        problems = [assemble_agent(d, grid) for d in datasets]
        ones = {p.agent_id: np.ones(grid.size + 1) for p in problems}
        m1, _ = run(problems, SolverConfig())
        m2, _ = run(problems, SolverConfig(q_scale=ones))
        assert np.array_equal(m1.coefficients, m2.coefficients)

    def test_q_scale_diagonal_converges_to_same_point(self):
        datasets, grid = small_instance(seed=15, n_agents=2)
        problems = [assemble_agent(d, grid) for d in datasets]
        scale = {
            p.agent_id: np.linspace(0.5, 2.0, grid.size + 1) for p in problems
        }
        m1, r1 = run(problems, SolverConfig())
        m2, r2 = run(problems, SolverConfig(q_scale=scale))
        assert r1.status == r2.status == "converged"
        z1 = np.concatenate([m1.coefficients, [m1.bias]])
        z2 = np.concatenate([m2.coefficients, [m2.bias]])
        assert np.max(np.abs(z1 - z2)) < 1e-4


class TestFailureModes:
    def test_infeasible_grid_does_not_converge(self):
        _, datasets, _ = default_star_scenario()
        problems = [assemble_agent(d, infeasible_grid()) for d in datasets]
        model, report = run(problems, SolverConfig(max_iter=3000))
        assert report.status in ("diverged", "max_iter")
        pts = np.vstack([d.points for d in datasets])
        theta = np.concatenate([d.labels for d in datasets])
        margins = theta * model.evaluate_many(pts)
        assert float(np.mean(margins > 0)) < 1.0

    def test_agentwise_infeasible_diverges(self):
        _, datasets, _ = default_star_scenario()
        lone = make_grid((1.2, 1.2, 1.2, 1.2), 1, 1)
        problems = [assemble_agent(d, lone) for d in datasets]
        _, report = run(problems, SolverConfig(max_iter=2000))
        assert report.status == "diverged"


class TestExtractModel:
    def test_extracts_after_convergence(self):
        datasets, grid = small_instance(seed=16)
        problems = [assemble_agent(d, grid) for d in datasets]
        _, report = run(problems, SolverConfig())
        model = extract_model(
            report.consensus, grid, KernelConfig(), states=report.states
        )
        assert model.coefficients.shape == (grid.size,)

    def test_perturbed_agent_violates(self):
        datasets, grid = small_instance(seed=17)
        problems = [assemble_agent(d, grid) for d in datasets]
        _, report = run(problems, SolverConfig())
        report.states[0].c = report.states[0].c + 1.0
        with pytest.raises(ConsensusViolationError):
            extract_model(report.consensus, grid, KernelConfig(), states=report.states)

    def test_state_bookkeeping(self):
        datasets, grid = small_instance(seed=18, n_agents=1)
        problems = [assemble_agent(datasets[0], grid)]
        _, report = run(problems, SolverConfig())
        st = report.states[0]
        n = problems[0].n_points
        m = grid.size
        assert st.dual_eq.shape == (n + m + 1,)
        assert len(st.history) <= 16
        np.testing.assert_allclose(st.x, problems[0].grid_gram_sqrt @ st.c, atol=1e-12)


class TestEulerFlow:
    def test_matches_admm_on_small_instance(self):
        datasets, grid = small_instance(seed=19, n_agents=2, max_points=6)
        problems = [assemble_agent(d, grid) for d in datasets]
        m_admm, r_admm = run(problems, SolverConfig())
        m_euler, r_euler = run(
            problems, SolverConfig(mode="euler_flow", max_iter=120_000)
        )
        assert r_admm.status == "converged"
        assert r_euler.status == "converged"
        za = np.concatenate([m_admm.coefficients, [m_admm.bias]])
        ze = np.concatenate([m_euler.coefficients, [m_euler.bias]])
        assert np.max(np.abs(za - ze)) < 1e-3

    def test_t_sp_accounting(self):
        datasets, grid = small_instance(seed=20, n_agents=1, max_points=5)
        problems = [assemble_agent(datasets[0], grid)]
        _, report = run(problems, SolverConfig(mode="euler_flow", max_iter=120_000))
        assert report.t_sp_units == pytest.approx(report.iterations * 0.001 / 0.01)

    def test_flow_slack_projection(self):
        datasets, grid = small_instance(seed=21, n_agents=1, max_points=5)
        problems = [assemble_agent(datasets[0], grid)]
        cfg = SolverConfig(mode="euler_flow")
        states = [init_state(problems[0], cfg)]
        pairs = list(zip(problems, states))
        consensus = ConsensusState(z=np.zeros(grid.size + 1))
        from shapelearn.consensus import euler_step

        for _ in range(500):
            euler_step(pairs, consensus, cfg)
            assert states[0].y.min() >= -1e-9
            assert states[0].lam.min() >= 0.0
