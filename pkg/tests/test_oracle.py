"""Reference solvers and their agreement with the production solver."""

import math

import numpy as np
import pytest

from shapelearn import (
    GramMatrix,
    LabeledDataset,
    TooLargeError,
    brute_force_small,
    build_local,
    make_grid,
    solve_centralized,
    solve_local,
)
from shapelearn.local_qp import LocalProblem

from conftest import grid_feasible_instance, random_labeled_points


class TestBruteForce:
    def test_two_point_hand_kkt(self):
        ds = LabeledDataset(agent_id=1, points=[(-1, 0), (1, 0)], labels=[-1, 1])
        sol = brute_force_small(build_local(ds, "data"))
        c_star = 1.0 / (1.0 - math.exp(-2.0))
        assert sol.status == "optimal"
        assert sol.coefficients[1] == pytest.approx(c_star, rel=1e-9)
        assert sol.coefficients[0] == pytest.approx(-c_star, rel=1e-9)
        assert sol.objective == pytest.approx(c_star, rel=1e-9)

    def test_contradictory_infeasible(self):
        ds = LabeledDataset(agent_id=1, points=[(0, 0), (0, 0)], labels=[1, -1])
        sol = brute_force_small(build_local(ds, "data"))
        assert sol.status == "infeasible"

    def test_zero_constraints(self):
        p = LocalProblem(
            gram=GramMatrix(entries=np.array([[1.0]])),
            constraint_matrix=np.zeros((0, 2)),
            labels=np.zeros(0, dtype=int),
            basis_kind="data",
            basis_points=np.zeros((1, 2)),
        )
        sol = brute_force_small(p)
        assert sol.status == "optimal"
        assert sol.objective == 0.0
        assert sol.bias == 0.0
        assert np.all(sol.coefficients == 0.0)

    def test_too_large(self):
        rng = np.random.default_rng(0)
        pts, labs = random_labeled_points(rng, 13)
        p = build_local(LabeledDataset(agent_id=1, points=pts, labels=labs), "data")
        with pytest.raises(TooLargeError):
            brute_force_small(p)

    def test_agrees_with_solver_on_random_instances(self):
        rng = np.random.default_rng(100)
        for _ in range(40):
            n = int(rng.integers(2, 9))
            pts, labs = random_labeled_points(rng, n)
            p = build_local(LabeledDataset(agent_id=1, points=pts, labels=labs), "data")
            fast = solve_local(p)
            slow = brute_force_small(p)
            assert fast.status == "optimal" and slow.status == "optimal"
            rel = abs(fast.objective - slow.objective) / max(1.0, abs(slow.objective))
            assert rel < 1e-8


class TestSolveCentralized:
    def test_single_agent_equals_local(self):
        grid = make_grid((-2, 2, -2, 2), 3, 3)
        rng = np.random.default_rng(12)
        (ds,) = grid_feasible_instance(rng, 1, 8, grid)
        central = solve_centralized([ds], grid)
        local = solve_local(build_local(ds, grid), tol=1e-10, max_iter=400_000)
        assert central.status == local.status == "optimal"
        assert central.objective == pytest.approx(local.objective, rel=1e-9)
        assert np.allclose(central.coefficients, local.coefficients, atol=1e-7)

    def test_identical_datasets_pool_to_same_solution(self):
        grid = make_grid((-2, 2, -2, 2), 3, 3)
        rng = np.random.default_rng(21)
        (ds,) = grid_feasible_instance(rng, 1, 8, grid)
        copies = [
            LabeledDataset(agent_id=k + 1, points=ds.points, labels=ds.labels) for k in range(3)
        ]
        single = solve_centralized([copies[0]], grid)
        pooled = solve_centralized(copies, grid)
        assert pooled.objective == pytest.approx(single.objective, rel=1e-9)
        assert np.allclose(pooled.coefficients, single.coefficients, atol=1e-7)

    def test_three_arcs_of_circle_separate(self):
        from shapelearn import Circle, sample_lidar

        circle = Circle()
        positions = [(3, 0), (-1.5, 2.6), (-1.5, -2.6)]
        datasets = [
            sample_lidar(circle, pos, 7, 6.0, 0.25, seed=i, agent_id=i + 1)
            for i, pos in enumerate(positions)
        ]
        grid = make_grid((-1.6, 1.6, -1.6, 1.6), 3, 3)
        sol = solve_centralized(datasets, grid)
        assert sol.status == "optimal"
        p = build_local(
            LabeledDataset(
                agent_id=1,
                points=np.vstack([d.points for d in datasets]),
                labels=np.concatenate([d.labels for d in datasets]),
            ),
            grid,
        )
        margins = p.labels * (p.features @ sol.coefficients + sol.bias)
        assert margins.min() >= 1.0 - 1e-6

    def test_requires_both_labels(self):
        ds = LabeledDataset(agent_id=1, points=[(0, 0), (1, 1)], labels=[1, 1])
        with pytest.raises(ValueError):
            solve_centralized([ds], make_grid((-1, 1, -1, 1), 2, 2))

    def test_infeasible_grid_reported(self):
        from conftest import default_star_scenario, infeasible_grid

        _, datasets, _ = default_star_scenario()
        sol = solve_centralized(datasets, infeasible_grid())
        assert sol.status == "infeasible"
