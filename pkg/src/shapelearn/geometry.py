"""Evaluating the learned implicit function and extracting its zero curve.

The learned classifier F(x) = sum_j c_j k(x, g_j) + gamma is rasterized on
a regular lattice; the zero level set is pulled out with marching squares
(linear interpolation along cell edges, saddles resolved by the cell-center
sign) and chained into maximal polylines. Quality metrics compare the curve
and sign pattern against the generating shape and datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import GridBasis, ObjectShape
from .errors import DimensionMismatchError
from .kernel import KernelConfig, kernel_matrix

_EVAL_CHUNK = 8192


@dataclass(frozen=True)
class ShapeModel:
    """Implicit classifier over the shared grid basis.

    F is positive on the +1 (outside) side of the training labels and the
    learned boundary is its zero level set. |F| is globally bounded by
    ||c||_1 + |gamma|.
    """

    grid: GridBasis
    coefficients: np.ndarray
    bias: float
    kernel: KernelConfig = KernelConfig()

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float).ravel().copy()
        if c.shape[0] != self.grid.size:
            raise DimensionMismatchError(
                f"{c.shape[0]} coefficients for {self.grid.size} grid points"
            )
        c.flags.writeable = False
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "bias", float(self.bias))

    def evaluate_many(self, pts) -> np.ndarray:
        """Vectorized F over an (n, 2) array of points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.empty(pts.shape[0])
        for start in range(0, pts.shape[0], _EVAL_CHUNK):
            chunk = pts[start : start + _EVAL_CHUNK]
            out[start : start + _EVAL_CHUNK] = (
                kernel_matrix(chunk, self.grid.points, self.kernel) @ self.coefficients
            )
        return out + self.bias

    def bound(self) -> float:
        return float(np.sum(np.abs(self.coefficients)) + abs(self.bias))


@dataclass(frozen=True)
class Contour:
    """Zero-level polylines on a raster; empty when the field has one sign."""

    polylines: tuple
    bbox: tuple
    resolution: int

    def __post_init__(self):
        polys = tuple(np.asarray(p, dtype=float) for p in self.polylines)
        for p in polys:
            p.flags.writeable = False
        object.__setattr__(self, "polylines", polys)
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))

    @property
    def is_empty(self) -> bool:
        return len(self.polylines) == 0

    def vertices(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros((0, 2))
        return np.vstack([p for p in self.polylines])


def raster_eval(model: ShapeModel, bbox, resolution: int) -> np.ndarray:
    """F on a regular lattice; field[i, j] = F(xs[i], ys[j]) with
    xs = linspace(xmin, xmax, resolution) and likewise ys."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    xmin, xmax, ymin, ymax = (float(v) for v in bbox)
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return model.evaluate_many(pts).reshape(resolution, resolution)


def _edge_vertex(p0, p1, f0, f1):
    t = f0 / (f0 - f1)
    return (p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1]))


def marching_squares(field: np.ndarray, bbox) -> Contour:
    """Zero-level curve of a rasterized field.

    Values >= 0 count as positive (so exact zeros sit on the curve
    deterministically). Crossing vertices are linearly interpolated on cell
    edges; the two ambiguous saddle configurations are split according to
    the sign of the cell-center estimate (corner average). Segments sharing
    an edge vertex are chained into maximal open paths or closed loops
    (closed polylines repeat their first vertex).
    """
    field = np.asarray(field, dtype=float)
    if field.ndim != 2 or field.shape[0] < 2 or field.shape[1] < 2:
        raise ValueError("field must be at least 2x2")
    if not np.all(np.isfinite(field)):
        raise ValueError("field must be finite")
    nx, ny = field.shape
    xmin, xmax, ymin, ymax = (float(v) for v in bbox)
    xs = np.linspace(xmin, xmax, nx)
    ys = np.linspace(ymin, ymax, ny)

    pos = field >= 0.0
    if bool(np.all(pos)) or not bool(np.any(pos)):
        return Contour(polylines=(), bbox=bbox, resolution=nx)

    verts: dict = {}  # edge key -> vertex
    adj: dict = {}  # edge key -> [edge key, ...]

    def corner(i, j):
        return (xs[i], ys[j])

    def crossing(key, i0, j0, i1, j1):
        if key not in verts:
            verts[key] = _edge_vertex(corner(i0, j0), corner(i1, j1), field[i0, j0], field[i1, j1])
        return key

    def link(k1, k2):
        adj.setdefault(k1, []).append(k2)
        adj.setdefault(k2, []).append(k1)

    for i in range(nx - 1):
        for j in range(ny - 1):
            sa, sb = pos[i, j], pos[i + 1, j]
            sc, sd = pos[i + 1, j + 1], pos[i, j + 1]
            edges = []
            if sa != sb:
                edges.append(crossing(("x", i, j), i, j, i + 1, j))
            if sb != sc:
                edges.append(crossing(("y", i + 1, j), i + 1, j, i + 1, j + 1))
            if sc != sd:
                edges.append(crossing(("x", i, j + 1), i, j + 1, i + 1, j + 1))
            if sd != sa:
                edges.append(crossing(("y", i, j), i, j, i, j + 1))
            if not edges:
                continue
            if len(edges) == 2:
                link(edges[0], edges[1])
            else:
                # saddle: edges are [bottom, right, top, left]
                center_pos = (
                    field[i, j] + field[i + 1, j] + field[i + 1, j + 1] + field[i, j + 1]
                ) >= 0.0
                bottom, right, top, left = edges
                if center_pos == sa:
                    # positive diagonal a-c: cut off corners b and d
                    link(bottom, right)
                    link(top, left)
                else:
                    link(bottom, left)
                    link(top, right)

    # every vertex has degree <= 2, so the graph is a union of simple open
    # paths and simple cycles; walk them deterministically
    polylines = []
    seen = set()

    def walk(start):
        path = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            nbrs = [k for k in adj[cur] if k != prev]
            if not nbrs:
                return path, False
            nxt = nbrs[0]
            if nxt == start:
                return path, True
            path.append(nxt)
            seen.add(nxt)
            prev, cur = cur, nxt

    keys = sorted(adj.keys())
    for key in keys:  # open paths start at degree-1 vertices
        if len(adj[key]) == 1 and key not in seen:
            path, _ = walk(key)
            polylines.append(np.array([verts[k] for k in path]))
    for key in keys:  # what remains are cycles
        if key not in seen:
            path, closed = walk(key)
            pts = [verts[k] for k in path]
            if closed:
                pts.append(pts[0])
            polylines.append(np.array(pts))

    return Contour(polylines=tuple(polylines), bbox=bbox, resolution=nx)


def default_bbox(points: np.ndarray, inflate: float = 0.2) -> tuple:
    """Axis-aligned box around the points, inflated by a fraction per side."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    xmin, ymin = pts.min(axis=0)
    xmax, ymax = pts.max(axis=0)
    wx = max(xmax - xmin, 1e-9) * inflate
    wy = max(ymax - ymin, 1e-9) * inflate
    return (xmin - wx, xmax + wx, ymin - wy, ymax + wy)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ShapeMetrics:
    separation_fraction: float
    min_margin: float
    hausdorff: float
    agreement: float
    n_points: int

    def as_text(self) -> str:
        return "\n".join(
            [
                f"separation_fraction {self.separation_fraction:.17g}",
                f"min_margin {self.min_margin:.17g}",
                f"hausdorff {self.hausdorff:.17g}",
                f"agreement {self.agreement:.17g}",
                f"n_points {self.n_points}",
            ]
        )


def _directed_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    # max over a of min distance to b; chunked to bound the distance matrix
    worst = 0.0
    for start in range(0, a.shape[0], 1024):
        chunk = a[start : start + 1024]
        diff = chunk[:, None, :] - b[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        worst = max(worst, float(np.sqrt(d2.min(axis=1).max())))
    return worst


def shape_metrics(
    contour: Contour,
    truth: ObjectShape,
    datasets,
    model: ShapeModel,
    boundary_samples: int = 2048,
    probes: int = 4096,
    probe_seed: int = 0,
) -> ShapeMetrics:
    """Separation, curve distance, and sign-agreement diagnostics.

    Separation uses the datasets' own labels; Hausdorff compares contour
    vertices against a dense boundary sampling of the truth shape (a
    raster-resolution-dependent diagnostic, not a pass/fail gate);
    agreement checks sign(F) against the membership oracle on uniform
    random probes over the contour's bounding box.
    """
    pts = np.vstack([d.points for d in datasets])
    theta = np.concatenate([d.labels for d in datasets]).astype(float)
    margins = theta * model.evaluate_many(pts)
    separation = float(np.mean(margins > 0.0))
    min_margin = float(np.min(margins))

    if contour.is_empty:
        hausdorff = math.inf
    else:
        boundary = truth.boundary_points(boundary_samples)
        v = contour.vertices()
        hausdorff = max(_directed_hausdorff(v, boundary), _directed_hausdorff(boundary, v))

    rng = np.random.default_rng(probe_seed)
    xmin, xmax, ymin, ymax = contour.bbox
    probe_pts = np.column_stack(
        [rng.uniform(xmin, xmax, probes), rng.uniform(ymin, ymax, probes)]
    )
    f_sign = model.evaluate_many(probe_pts) > 0.0
    truth_outside = np.array([not truth.inside(p) for p in probe_pts])
    agreement = float(np.mean(f_sign == truth_outside))

    return ShapeMetrics(
        separation_fraction=separation,
        min_margin=min_margin,
        hausdorff=hausdorff,
        agreement=agreement,
        n_points=pts.shape[0],
    )


# ---------------------------------------------------------------------------
# text and figure export


def write_contour_table(contour: Contour, path) -> None:
    """Text table of contour vertices: polyline_id x y."""
    lines = ["# polyline_id x y"]
    for pid, poly in enumerate(contour.polylines):
        for x, y in poly:
            lines.append(f"{pid} {x:.17g} {y:.17g}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_contour_table(path) -> list[np.ndarray]:
    rows: dict[int, list] = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            pid, x, y = line.split()
            rows.setdefault(int(pid), []).append((float(x), float(y)))
    return [np.array(rows[pid]) for pid in sorted(rows)]


_AGENT_COLORS = ("#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2")


def _svg_path(points: np.ndarray, transform, closed: bool) -> str:
    cmds = []
    for k, (x, y) in enumerate(points):
        px, py = transform(x, y)
        cmds.append(f"{'M' if k == 0 else 'L'} {px:.2f} {py:.2f}")
    if closed:
        cmds.append("Z")
    return " ".join(cmds)


def render_figure_svg(
    path,
    bbox,
    truth_boundary: np.ndarray | None = None,
    agent_contours: dict | None = None,
    datasets=(),
    grid: GridBasis | None = None,
    size: int = 640,
) -> None:
    """Deterministic standalone SVG: truth boundary (dashed), learned
    contours per agent (solid), data points (circle = +1, cross = -1), and
    grid points (plus marks)."""
    xmin, xmax, ymin, ymax = (float(v) for v in bbox)
    span = max(xmax - xmin, ymax - ymin, 1e-9)
    margin = 20.0
    scale = (size - 2 * margin) / span

    def tf(x, y):
        return (margin + (x - xmin) * scale, size - margin - (y - ymin) * scale)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if truth_boundary is not None and len(truth_boundary):
        d = _svg_path(np.asarray(truth_boundary), tf, closed=True)
        parts.append(
            f'<path d="{d}" fill="none" stroke="magenta" stroke-width="1.5" '
            'stroke-dasharray="6 4"/>'
        )
    if grid is not None:
        for x, y in grid.points:
            px, py = tf(x, y)
            parts.append(
                f'<path d="M {px - 4:.2f} {py:.2f} H {px + 4:.2f} M {px:.2f} {py - 4:.2f} '
                f'V {py + 4:.2f}" stroke="black" stroke-width="1"/>'
            )
    for ds in sorted(datasets, key=lambda d: d.agent_id):
        color = _AGENT_COLORS[(ds.agent_id - 1) % len(_AGENT_COLORS)]
        for (x, y), lab in zip(ds.points, ds.labels):
            px, py = tf(x, y)
            if lab > 0:
                parts.append(
                    f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="none" '
                    f'stroke="{color}" stroke-width="1"/>'
                )
            else:
                parts.append(
                    f'<path d="M {px - 3:.2f} {py - 3:.2f} L {px + 3:.2f} {py + 3:.2f} '
                    f'M {px - 3:.2f} {py + 3:.2f} L {px + 3:.2f} {py - 3:.2f}" '
                    f'stroke="{color}" stroke-width="1"/>'
                )
    for agent_id, contour in sorted((agent_contours or {}).items()):
        color = _AGENT_COLORS[(agent_id - 1) % len(_AGENT_COLORS)]
        polys = contour.polylines if isinstance(contour, Contour) else contour
        for poly in polys:
            closed = len(poly) > 2 and np.array_equal(poly[0], poly[-1])
            d = _svg_path(poly[:-1] if closed else poly, tf, closed=closed)
            parts.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(parts) + "\n")
