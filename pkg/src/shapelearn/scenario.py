"""Scenario files: a flat INI format describing one end-to-end experiment.

Sections mirror the run's moving parts (shape, robots, grid, kernel,
solver, output). Unknown sections or keys are hard errors so typos cannot
silently fall back to defaults; all problems are collected and reported
together. A scenario fully determines a run: same file, same outputs.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .consensus import SolverConfig
from .datagen import Blob, Circle, Ellipse, GridBasis, ObjectShape, Star, make_grid, sample_lidar
from .errors import ConfigError
from .kernel import KernelConfig

_SECTIONS = ("shape", "robots", "grid", "kernel", "solver", "output")

_SHAPE_KEYS = {
    "circle": {"kind", "center", "radius"},
    "ellipse": {"kind", "center", "semi_x", "semi_y"},
    "star": {"kind", "center", "base_radius", "lobe_amplitude", "lobes", "phase"},
    "blob": {"kind", "components", "threshold"},
}
_ROBOT_KEYS = {"positions", "rays", "max_range", "offset", "seeds", "angle_jitter"}
_GRID_KEYS = {"xmin", "xmax", "ymin", "ymax", "rows", "cols"}
_KERNEL_KEYS = {"bandwidth_sq"}
_SOLVER_KEYS = {
    "mode",
    "rho",
    "beta_x",
    "step_size",
    "max_iter",
    "tol_primal",
    "tol_dual",
}
_OUTPUT_KEYS = {"directory", "raster"}


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one experiment."""

    shape: ObjectShape
    robots: tuple  # ((x, y), ...)
    rays: tuple  # per robot
    offsets: tuple  # per robot
    seeds: tuple  # per robot
    max_range: float
    angle_jitter: float
    grid_bbox: tuple
    grid_rows: int
    grid_cols: int
    kernel: KernelConfig
    solver: SolverConfig
    out_dir: str
    raster: int

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    def grid(self) -> GridBasis:
        return make_grid(self.grid_bbox, self.grid_rows, self.grid_cols)

    def datasets(self):
        return [
            sample_lidar(
                self.shape,
                pos,
                self.rays[i],
                self.max_range,
                self.offsets[i],
                self.seeds[i],
                agent_id=i + 1,
                angle_jitter=self.angle_jitter,
            )
            for i, pos in enumerate(self.robots)
        ]


def _floats(text, count=None):
    vals = [float(v) for v in text.replace(",", " ").split()]
    if count is not None and len(vals) != count:
        raise ValueError(f"expected {count} numbers, got {len(vals)}")
    return vals


def _pairs(text):
    out = []
    for part in text.split(";"):
        part = part.strip()
        if part:
            out.append(tuple(_floats(part, 2)))
    return out


def _per_robot(vals, n, caster, name, problems):
    if len(vals) == 1:
        return tuple(caster(vals[0]) for _ in range(n))
    if len(vals) != n:
        problems.append(f"robots.{name}: need 1 or {n} values, got {len(vals)}")
        return tuple(caster(vals[0]) for _ in range(n))
    return tuple(caster(v) for v in vals)


def _build_shape(section, problems) -> ObjectShape:
    kind = section.get("kind", "").strip()
    if kind not in _SHAPE_KEYS:
        problems.append(f"shape.kind: must be one of {sorted(_SHAPE_KEYS)}, got {kind!r}")
        return Circle()
    unknown = set(section) - _SHAPE_KEYS[kind]
    for key in sorted(unknown):
        problems.append(f"shape.{key}: unknown key for kind {kind!r}")
    try:
        cx, cy = _floats(section.get("center", "0 0"), 2)
        if kind == "circle":
            return Circle(cx=cx, cy=cy, radius=float(section.get("radius", "1.0")))
        if kind == "ellipse":
            return Ellipse(
                cx=cx,
                cy=cy,
                semi_x=float(section.get("semi_x", "1.0")),
                semi_y=float(section.get("semi_y", "0.7")),
            )
        if kind == "star":
            return Star(
                cx=cx,
                cy=cy,
                base_radius=float(section.get("base_radius", "1.0")),
                lobe_amplitude=float(section.get("lobe_amplitude", "0.3")),
                lobes=int(section.get("lobes", "5")),
                phase=float(section.get("phase", "0.0")),
            )
        comps = []
        for part in section.get("components", "0 0 1 1").split(";"):
            part = part.strip()
            if part:
                comps.append(tuple(_floats(part, 4)))
        return Blob(components=tuple(comps), threshold=float(section.get("threshold", "0.5")))
    except (ValueError, TypeError) as exc:
        problems.append(f"shape: {exc}")
        return Circle()


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file; ConfigError lists every problem."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    problems: list[str] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    except configparser.Error as exc:
        raise ConfigError([f"parse error: {exc}"]) from None

    for section in parser.sections():
        if section not in _SECTIONS:
            problems.append(f"[{section}]: unknown section")
    for section, allowed in (
        ("robots", _ROBOT_KEYS),
        ("grid", _GRID_KEYS),
        ("kernel", _KERNEL_KEYS),
        ("solver", _SOLVER_KEYS),
        ("output", _OUTPUT_KEYS),
    ):
        if parser.has_section(section):
            for key in parser[section]:
                if key not in allowed:
                    problems.append(f"{section}.{key}: unknown key")

    shape_sec = parser["shape"] if parser.has_section("shape") else {}
    if not shape_sec:
        problems.append("[shape]: section is required")
    shape = _build_shape(dict(shape_sec), problems)

    robots_sec = parser["robots"] if parser.has_section("robots") else {}
    try:
        robots = tuple(_pairs(robots_sec.get("positions", "")))
    except ValueError as exc:
        problems.append(f"robots.positions: {exc}")
        robots = ()
    if not robots:
        problems.append("robots.positions: at least one robot position is required")
        robots = ((2.5, 0.0),)
    n = len(robots)

    def get_list(key, default, caster, positive=True):
        raw = robots_sec.get(key, default)
        try:
            vals = _floats(raw)
        except ValueError as exc:
            problems.append(f"robots.{key}: {exc}")
            vals = _floats(default)
        out = _per_robot(vals, n, caster, key, problems)
        if positive and any(v <= 0 for v in out):
            problems.append(f"robots.{key}: values must be positive")
        return out

    rays = get_list("rays", "10", int)
    offsets = get_list("offset", "0.35", float)
    seeds = get_list("seeds", " ".join(str(7 + i) for i in range(n)), int, positive=False)
    try:
        max_range = float(robots_sec.get("max_range", "6.0"))
        if max_range <= 0:
            problems.append("robots.max_range: must be positive")
    except ValueError as exc:
        problems.append(f"robots.max_range: {exc}")
        max_range = 6.0
    try:
        angle_jitter = float(robots_sec.get("angle_jitter", "0.0"))
        if not (0.0 <= angle_jitter <= 0.5):
            problems.append("robots.angle_jitter: must lie in [0, 0.5]")
    except ValueError as exc:
        problems.append(f"robots.angle_jitter: {exc}")
        angle_jitter = 0.0

    grid_sec = parser["grid"] if parser.has_section("grid") else {}
    grid_vals = {}
    for key, default in (
        ("xmin", "-1.8"),
        ("xmax", "1.8"),
        ("ymin", "-1.8"),
        ("ymax", "1.8"),
    ):
        try:
            grid_vals[key] = float(grid_sec.get(key, default))
        except ValueError as exc:
            problems.append(f"grid.{key}: {exc}")
            grid_vals[key] = float(default)
    grid_rows = grid_cols = 4
    for key in ("rows", "cols"):
        try:
            val = int(grid_sec.get(key, "4"))
            if val < 1:
                problems.append(f"grid.{key}: must be >= 1")
                val = 4
        except ValueError as exc:
            problems.append(f"grid.{key}: {exc}")
            val = 4
        if key == "rows":
            grid_rows = val
        else:
            grid_cols = val

    kernel_sec = parser["kernel"] if parser.has_section("kernel") else {}
    try:
        kernel = KernelConfig(bandwidth_sq=float(kernel_sec.get("bandwidth_sq", "1.0")))
    except (ValueError, TypeError) as exc:
        problems.append(f"kernel.bandwidth_sq: {exc}")
        kernel = KernelConfig()

    solver_sec = parser["solver"] if parser.has_section("solver") else {}
    solver_kwargs = {}
    for key, caster in (
        ("mode", str),
        ("rho", float),
        ("beta_x", float),
        ("step_size", float),
        ("max_iter", int),
        ("tol_primal", float),
        ("tol_dual", float),
    ):
        if key in solver_sec:
            try:
                solver_kwargs[key] = caster(solver_sec[key])
            except ValueError as exc:
                problems.append(f"solver.{key}: {exc}")
    try:
        solver = SolverConfig(**solver_kwargs)
    except (ValueError, TypeError) as exc:
        problems.append(f"solver: {exc}")
        solver = SolverConfig()

    output_sec = parser["output"] if parser.has_section("output") else {}
    out_dir = output_sec.get("directory", "out")
    try:
        raster = int(output_sec.get("raster", "201"))
        if raster < 2:
            problems.append("output.raster: must be >= 2")
            raster = 201
    except ValueError as exc:
        problems.append(f"output.raster: {exc}")
        raster = 201

    grid_bbox = (grid_vals["xmin"], grid_vals["xmax"], grid_vals["ymin"], grid_vals["ymax"])
    if grid_vals["xmin"] > grid_vals["xmax"] or grid_vals["ymin"] > grid_vals["ymax"]:
        problems.append("grid: xmin/ymin must not exceed xmax/ymax")
        grid_bbox = (-1.8, 1.8, -1.8, 1.8)

    scenario = Scenario(
        shape=shape,
        robots=robots,
        rays=rays,
        offsets=offsets,
        seeds=seeds,
        max_range=max_range,
        angle_jitter=angle_jitter,
        grid_bbox=grid_bbox,
        grid_rows=grid_rows,
        grid_cols=grid_cols,
        kernel=kernel,
        solver=solver,
        out_dir=out_dir,
        raster=raster,
    )

    for pos in robots:
        if shape.inside(pos):
            problems.append(f"robots.positions: {pos} lies inside the object")

    if problems:
        raise ConfigError(problems)
    return scenario


def apply_overrides(scn: Scenario, seed=None, out=None, max_iter=None, mode=None) -> Scenario:
    """CLI flag overrides; a base seed re-derives per-robot seeds as seed+i."""
    from dataclasses import replace

    solver = scn.solver
    if max_iter is not None or mode is not None:
        kwargs = {}
        if max_iter is not None:
            kwargs["max_iter"] = int(max_iter)
        if mode is not None:
            kwargs["mode"] = mode
        solver = replace(solver, **kwargs)
    updates = {"solver": solver}
    if seed is not None:
        updates["seeds"] = tuple(int(seed) + i for i in range(scn.n_robots))
    if out is not None:
        updates["out_dir"] = str(out)
    return replace(scn, **updates)
