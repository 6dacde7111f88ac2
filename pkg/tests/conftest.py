"""Shared instance generators for the solver test suites."""

import math

import numpy as np
import pytest

from shapelearn import (
    GridBasis,
    LabeledDataset,
    Star,
    make_grid,
    sample_lidar,
)


def random_labeled_points(rng, n, box=2.0, min_dist=0.05):
    """n distinct points with mixed random labels (both classes present)."""
    while True:
        pts = rng.uniform(-box, box, size=(n, 2))
        diff = pts[:, None, :] - pts[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        np.fill_diagonal(d2, np.inf)
        if d2.min() > min_dist**2:
            break
    labs = rng.choice([-1, 1], size=n)
    if abs(int(labs.sum())) == n:
        labs[int(rng.integers(0, n))] *= -1
    return pts, labs


def grid_feasible_instance(rng, n_agents, max_points, grid):
    """Per-agent datasets labeled by a random function in the grid span.

    The labeling function is rescaled so its smallest magnitude is 1.5,
    which makes it a strictly feasible point of every margin constraint:
    the pooled problem is separable by construction.
    """
    from shapelearn.kernel import kernel_matrix

    while True:
        c = rng.normal(size=grid.size)
        gamma = float(rng.normal(scale=0.3))
        datasets = []
        all_vals = []
        for a in range(n_agents):
            n = int(rng.integers(3, max_points + 1))
            pts = rng.uniform(-2.0, 2.0, size=(n, 2))
            vals = kernel_matrix(pts, grid.points) @ c + gamma
            all_vals.append(vals)
            datasets.append((pts, vals))
        flat = np.concatenate(all_vals)
        if np.min(np.abs(flat)) > 1e-3 and np.any(flat > 0) and np.any(flat < 0):
            break
    # rescaling (c, gamma) by 1.5/min|f| meets every margin with slack 0.5
    out = []
    for a, (pts, vals) in enumerate(datasets):
        labs = np.sign(vals).astype(int)
        out.append(LabeledDataset(agent_id=a + 1, points=pts, labels=labs))
    return out


def default_star_scenario():
    """The 3-robot, 20-points-each star instance used across solver tests."""
    shape = Star(base_radius=1.0, lobe_amplitude=0.22, lobes=5)
    angles = (math.pi / 2, math.pi / 2 + 2 * math.pi / 3, math.pi / 2 + 4 * math.pi / 3)
    robots = [(2.5 * math.cos(a), 2.5 * math.sin(a)) for a in angles]
    datasets = [
        sample_lidar(shape, pos, 10, 6.0, 0.35, 7 + i, agent_id=i + 1)
        for i, pos in enumerate(robots)
    ]
    grid = make_grid((-1.8, 1.8, -1.8, 1.8), 4, 4)
    return shape, datasets, grid


def infeasible_grid() -> GridBasis:
    """Offset three-point row: no separator for the star band exists."""
    return make_grid((-1.5, 1.5, 1.5, 1.5), 1, 3)


def window_max_monotone(trace, window=200, factor=10.0):
    """True when no length-`window` stretch grows the residual by > factor.

    Compares adjacent window maxima, so a startup ramp inside the first
    window does not count as oscillation but any later flare-up does.
    """
    trace = np.asarray(trace)
    if trace.size <= window:
        return True
    for start in range(0, trace.size - window, window):
        prev = trace[start : start + window].max()
        nxt = trace[start + window : start + 2 * window].max()
        if nxt > factor * max(prev, 1e-12):
            return False
    return True


@pytest.fixture(scope="session")
def star_scenario():
    return default_star_scenario()
