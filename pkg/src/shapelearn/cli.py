"""Experiment runner: scenario file in, text tables and a figure out.

Verbs: ``run`` (full pipeline), ``compare`` (both solver modes on one
instance), ``gen-data`` (datasets only), ``plot`` (re-render the figure
from a run directory's saved tables). Exit codes: 0 converged and
separating, 1 usage or config error, 2 solver reported infeasible,
diverged, or out of iterations.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .consensus import SolverConfig, T_SP, assemble_agent, run as run_consensus
from .datagen import dump_datasets, load_datasets
from .errors import ConfigError, ShapeLearnError
from .geometry import (
    Contour,
    ShapeModel,
    default_bbox,
    marching_squares,
    raster_eval,
    read_contour_table,
    render_figure_svg,
    shape_metrics,
    write_contour_table,
)
from .local_qp import ClassifierSolution, export_solution
from .scenario import Scenario, apply_overrides, load_scenario

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2

_BOUNDARY_SAMPLES = 512


def _write_grid_table(grid, path):
    lines = ["# x y"] + [f"{x:.17g} {y:.17g}" for x, y in grid.points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _read_point_table(path):
    pts = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            x, y = line.split()
            pts.append((float(x), float(y)))
    return np.array(pts)


def _figure_bbox(datasets, grid):
    pts = np.vstack([d.points for d in datasets] + [grid.points])
    return default_bbox(pts, inflate=0.1)


def _raster_bbox(datasets):
    return default_bbox(np.vstack([d.points for d in datasets]), inflate=0.2)


def _extract_contour(model: ShapeModel, bbox, resolution) -> Contour:
    return marching_squares(raster_eval(model, bbox, resolution), bbox)


def run_scenario(config_path, seed=None, out=None, max_iter=None, mode=None) -> int:
    """Full pipeline for one scenario; returns the process exit code."""
    scn = apply_overrides(load_scenario(config_path), seed, out, max_iter, mode)
    t_start = time.perf_counter()
    out_dir = Path(scn.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    datasets = scn.datasets()
    grid = scn.grid()
    dump_datasets(datasets, out_dir / "dataset.txt")
    _write_grid_table(grid, out_dir / "grid.txt")
    boundary = scn.shape.boundary_points(_BOUNDARY_SAMPLES)
    lines = ["# x y"] + [f"{x:.17g} {y:.17g}" for x, y in boundary]
    (out_dir / "truth_boundary.txt").write_text("\n".join(lines) + "\n", encoding="ascii")

    problems = [assemble_agent(d, grid, scn.kernel) for d in datasets]
    model, report = run_consensus(problems, scn.solver)
    report.write_table(out_dir / "convergence.txt")

    kg = problems[0].grid_gram.entries
    consensus_obj = 0.5 * float(model.coefficients @ (kg @ model.coefficients))
    consensus_sol = ClassifierSolution(
        coefficients=model.coefficients,
        bias=model.bias,
        objective=consensus_obj,
        status="optimal" if report.status == "converged" else "max_iter",
    )
    export_solution(consensus_sol, out_dir / "solution_consensus.txt")
    for state in report.states:
        sol = ClassifierSolution(
            coefficients=state.c,
            bias=state.gamma,
            objective=0.5 * float(state.c @ (kg @ state.c)),
            status="optimal" if report.status == "converged" else "max_iter",
        )
        export_solution(sol, out_dir / f"solution_agent_{state.problem.agent_id}.txt")

    raster_box = _raster_bbox(datasets)
    contour = _extract_contour(model, raster_box, scn.raster)
    write_contour_table(contour, out_dir / "contour_consensus.txt")
    agent_contours = {}
    for state in report.states:
        agent_model = ShapeModel(
            grid=grid, coefficients=state.c, bias=state.gamma, kernel=scn.kernel
        )
        agent_contours[state.problem.agent_id] = _extract_contour(
            agent_model, raster_box, scn.raster
        )
        write_contour_table(
            agent_contours[state.problem.agent_id],
            out_dir / f"contour_agent_{state.problem.agent_id}.txt",
        )

    metrics = shape_metrics(contour, scn.shape, datasets, model)
    render_figure_svg(
        out_dir / "figure.svg",
        _figure_bbox(datasets, grid),
        truth_boundary=boundary,
        agent_contours=agent_contours,
        datasets=datasets,
        grid=grid,
    )

    separating = metrics.separation_fraction == 1.0
    code = EXIT_OK if (report.status == "converged" and separating) else EXIT_SOLVER
    wall = time.perf_counter() - t_start
    summary = [
        f"status {report.status}",
        f"mode {report.mode}",
        f"iterations {report.iterations}",
        f"objective {consensus_obj:.17g}",
        f"consensus_error {report.final_primal_residual:.17g}",
        f"dual_residual {report.final_dual_residual:.17g}",
        f"separation_fraction {metrics.separation_fraction:.17g}",
        f"min_margin {metrics.min_margin:.17g}",
        f"hausdorff {metrics.hausdorff:.17g}",
        f"agreement {metrics.agreement:.17g}",
        f"exit_code {code}",
        f"wall_time_s {wall:.3f}",
    ]
    if report.t_sp_units is not None:
        summary.insert(3, f"t_sp_units {report.t_sp_units:.17g}")
    (out_dir / "summary.txt").write_text("\n".join(summary) + "\n", encoding="ascii")
    print("\n".join(summary))
    return code


def compare_modes(config_path, seed=None, out=None, max_iter=None) -> int:
    """Run both engines on the same instance and report their agreement."""
    scn = apply_overrides(load_scenario(config_path), seed, out, max_iter, None)
    out_dir = Path(scn.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    datasets = scn.datasets()
    grid = scn.grid()
    problems = [assemble_agent(d, grid, scn.kernel) for d in datasets]

    results = {}
    for mode in ("discrete_admm", "euler_flow"):
        cfg = replace(scn.solver, mode=mode)
        model, report = run_consensus(problems, cfg)
        results[mode] = (model, report)

    (model_a, rep_a), (model_e, rep_e) = results["discrete_admm"], results["euler_flow"]
    za = np.concatenate([model_a.coefficients, [model_a.bias]])
    ze = np.concatenate([model_e.coefficients, [model_e.bias]])
    gap = float(np.max(np.abs(za - ze)))
    lines = [
        f"admm_status {rep_a.status}",
        f"admm_iterations {rep_a.iterations}",
        f"admm_primal_residual {rep_a.final_primal_residual:.17g}",
        f"euler_status {rep_e.status}",
        f"euler_iterations {rep_e.iterations}",
        f"euler_t_sp_units {rep_e.t_sp_units:.17g}",
        f"euler_primal_residual {rep_e.final_primal_residual:.17g}",
        f"z_gap_inf {gap:.17g}",
    ]
    (out_dir / "compare.txt").write_text("\n".join(lines) + "\n", encoding="ascii")
    print("\n".join(lines))
    ok = rep_a.status == "converged" and rep_e.status == "converged"
    return EXIT_OK if ok else EXIT_SOLVER


def gen_data(config_path, seed=None, out=None) -> int:
    scn = apply_overrides(load_scenario(config_path), seed, out, None, None)
    out_dir = Path(scn.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_datasets(scn.datasets(), out_dir / "dataset.txt")
    print(f"wrote {out_dir / 'dataset.txt'}")
    return EXIT_OK


def plot_run(run_dir, out=None) -> int:
    """Re-render the figure from a finished run's saved tables."""
    run_dir = Path(run_dir)
    needed = ["dataset.txt", "grid.txt", "truth_boundary.txt", "contour_consensus.txt"]
    missing = [n for n in needed if not (run_dir / n).exists()]
    if missing:
        raise ConfigError([f"{run_dir / n}: file not found" for n in missing])
    datasets = load_datasets(run_dir / "dataset.txt")
    grid_pts = _read_point_table(run_dir / "grid.txt")
    boundary = _read_point_table(run_dir / "truth_boundary.txt")
    from .datagen import GridBasis

    grid = GridBasis(points=grid_pts)
    agent_contours = {}
    for ds in datasets:
        path = run_dir / f"contour_agent_{ds.agent_id}.txt"
        if path.exists():
            agent_contours[ds.agent_id] = read_contour_table(path)
    if not agent_contours:
        agent_contours[1] = read_contour_table(run_dir / "contour_consensus.txt")
    target = Path(out) if out else run_dir / "figure.svg"
    render_figure_svg(
        target,
        _figure_bbox(datasets, grid),
        truth_boundary=boundary,
        agent_contours=agent_contours,
        datasets=datasets,
        grid=grid,
    )
    print(f"wrote {target}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="shapelearn",
        description="Distributed shape learning experiments over grid-basis kernel classifiers.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_common(p, with_mode=True):
        p.add_argument("--seed", type=int, default=None, help="override the base data seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--max-iter", type=int, default=None, help="override solver max_iter")
        if with_mode:
            p.add_argument(
                "--mode", choices=("discrete_admm", "euler_flow"), default=None,
                help="override solver mode",
            )

    p_run = sub.add_parser("run", help="run one scenario end to end")
    p_run.add_argument("config")
    add_common(p_run)

    p_cmp = sub.add_parser("compare", help="run both solver modes and compare")
    p_cmp.add_argument("config")
    add_common(p_cmp, with_mode=False)

    p_gen = sub.add_parser("gen-data", help="generate and write datasets only")
    p_gen.add_argument("config")
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--out", default=None)

    p_plot = sub.add_parser("plot", help="re-render the figure from a run directory")
    p_plot.add_argument("run_dir")
    p_plot.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        if args.verb == "run":
            return run_scenario(args.config, args.seed, args.out, args.max_iter, args.mode)
        if args.verb == "compare":
            return compare_modes(args.config, args.seed, args.out, args.max_iter)
        if args.verb == "gen-data":
            return gen_data(args.config, args.seed, args.out)
        return plot_run(args.run_dir, args.out)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ShapeLearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
