"""Synthetic 2-D objects, simulated LiDAR sampling, and shared grid layouts.

Objects are described by a signed implicit function (negative inside,
positive outside); the boundary is its zero level set. A simulated scan
casts rays from a robot position toward the object, locates the first
boundary crossing along each ray by bisection, and emits a labeled pair of
points straddling the hit: one just outside (+1), one just inside (-1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoReturnsError

_BOUNDARY_TOL = 1e-10  # bisection tolerance along a ray
_MARCH_SAMPLES = 2048  # bracketing resolution along a ray


# ---------------------------------------------------------------------------
# object shapes


class ObjectShape:
    """A closed 2-D region given by a signed implicit function.

    ``implicit(x) < 0`` strictly inside, ``> 0`` outside, ``== 0`` on the
    boundary. Points exactly on the boundary are classified as outside.
    """

    kind: str = "abstract"

    def implicit(self, pts: np.ndarray) -> np.ndarray:
        """Signed implicit values for an (n, 2) array of points."""
        raise NotImplementedError

    def inside(self, x) -> bool:
        """True iff x is strictly inside the object."""
        x = np.asarray(x, dtype=float).reshape(1, 2)
        return bool(self.implicit(x)[0] < 0.0)

    def center(self) -> np.ndarray:
        """A reference interior point used for aiming and boundary scans."""
        raise NotImplementedError

    def inner_radius(self) -> float:
        """Radius of a disk around center() guaranteed to lie inside."""
        raise NotImplementedError

    def outer_radius(self) -> float:
        """Radius of a disk around center() guaranteed to contain the object."""
        raise NotImplementedError

    def boundary_points(self, count: int) -> np.ndarray:
        """Points sampled along the boundary (radial scan from the center)."""
        angles = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
        ctr = self.center()
        out = np.empty((count, 2))
        rmax = self.outer_radius() * 1.05
        for i, a in enumerate(angles):
            u = np.array([math.cos(a), math.sin(a)])
            t = _first_crossing(self, ctr, u, rmax)
            if t is None:  # pragma: no cover - closed boundary guarantees a hit
                t = self.inner_radius()
            out[i] = ctr + t * u
        return out


def inside(shape: ObjectShape, x) -> bool:
    """Membership oracle; boundary points count as outside."""
    return shape.inside(x)


@dataclass(frozen=True)
class Circle(ObjectShape):
    cx: float = 0.0
    cy: float = 0.0
    radius: float = 1.0
    kind: str = field(default="circle", init=False, repr=False)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("circle radius must be positive")

    def implicit(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.hypot(pts[:, 0] - self.cx, pts[:, 1] - self.cy) - self.radius

    def center(self):
        return np.array([self.cx, self.cy])

    def inner_radius(self):
        return self.radius

    def outer_radius(self):
        return self.radius

    def boundary_points(self, count):
        a = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
        return np.column_stack([self.cx + self.radius * np.cos(a), self.cy + self.radius * np.sin(a)])


@dataclass(frozen=True)
class Ellipse(ObjectShape):
    cx: float = 0.0
    cy: float = 0.0
    semi_x: float = 1.0
    semi_y: float = 1.0
    kind: str = field(default="ellipse", init=False, repr=False)

    def __post_init__(self):
        if self.semi_x <= 0 or self.semi_y <= 0:
            raise ValueError("ellipse semi-axes must be positive")

    def implicit(self, pts):
        pts = np.asarray(pts, dtype=float)
        u = (pts[:, 0] - self.cx) / self.semi_x
        v = (pts[:, 1] - self.cy) / self.semi_y
        return np.hypot(u, v) - 1.0

    def center(self):
        return np.array([self.cx, self.cy])

    def inner_radius(self):
        return min(self.semi_x, self.semi_y)

    def outer_radius(self):
        return max(self.semi_x, self.semi_y)

    def boundary_points(self, count):
        a = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
        return np.column_stack([self.cx + self.semi_x * np.cos(a), self.cy + self.semi_y * np.sin(a)])


@dataclass(frozen=True)
class Star(ObjectShape):
    """Lobed star r(phi) = base_radius + lobe_amplitude * cos(lobes * (phi - phase))."""

    cx: float = 0.0
    cy: float = 0.0
    base_radius: float = 1.0
    lobe_amplitude: float = 0.3
    lobes: int = 5
    phase: float = 0.0
    kind: str = field(default="star", init=False, repr=False)

    def __post_init__(self):
        if self.lobes < 1:
            raise ValueError("lobes must be >= 1")
        if not (0 <= self.lobe_amplitude < self.base_radius):
            raise ValueError("need 0 <= lobe_amplitude < base_radius for a simple closed curve")

    def _radius_at(self, phi):
        return self.base_radius + self.lobe_amplitude * np.cos(self.lobes * (phi - self.phase))

    def implicit(self, pts):
        pts = np.asarray(pts, dtype=float)
        dx = pts[:, 0] - self.cx
        dy = pts[:, 1] - self.cy
        return np.hypot(dx, dy) - self._radius_at(np.arctan2(dy, dx))

    def center(self):
        return np.array([self.cx, self.cy])

    def inner_radius(self):
        return self.base_radius - self.lobe_amplitude

    def outer_radius(self):
        return self.base_radius + self.lobe_amplitude

    def boundary_points(self, count):
        a = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
        r = self._radius_at(a)
        return np.column_stack([self.cx + r * np.cos(a), self.cy + r * np.sin(a)])


@dataclass(frozen=True)
class Blob(ObjectShape):
    """Sum-of-Gaussians density thresholded at a level.

    ``components`` is a sequence of (x, y, weight, width) tuples; the object
    is the region where the summed density exceeds ``threshold``.
    """

    components: tuple = ((0.0, 0.0, 1.0, 1.0),)
    threshold: float = 0.5
    kind: str = field(default="blob", init=False, repr=False)

    def __post_init__(self):
        comps = tuple(tuple(float(v) for v in c) for c in self.components)
        if not comps or any(len(c) != 4 for c in comps):
            raise ValueError("components must be non-empty (x, y, weight, width) tuples")
        if any(c[2] <= 0 or c[3] <= 0 for c in comps):
            raise ValueError("component weights and widths must be positive")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        object.__setattr__(self, "components", comps)
        if not self.inside(self.center()):
            raise ValueError("blob center must lie inside the object; lower the threshold")

    def _density(self, pts):
        pts = np.asarray(pts, dtype=float)
        total = np.zeros(pts.shape[0])
        for x, y, w, s in self.components:
            d2 = (pts[:, 0] - x) ** 2 + (pts[:, 1] - y) ** 2
            total += w * np.exp(-d2 / (2.0 * s * s))
        return total

    def implicit(self, pts):
        return self.threshold - self._density(pts)

    def center(self):
        w = np.array([c[2] for c in self.components])
        xy = np.array([[c[0], c[1]] for c in self.components])
        return (w[:, None] * xy).sum(axis=0) / w.sum()

    def inner_radius(self):
        return min(self._radial_crossings())

    def outer_radius(self):
        # Conservative: beyond this distance from every component the summed
        # density cannot reach the threshold.
        total_w = sum(c[2] for c in self.components)
        reach = math.sqrt(2.0 * math.log(max(total_w / self.threshold, 1.0)))
        ctr = self.center()
        return max(
            math.hypot(c[0] - ctr[0], c[1] - ctr[1]) + c[3] * reach for c in self.components
        )

    def _radial_crossings(self, count: int = 256):
        ctr = self.center()
        rmax = self.outer_radius() * 1.05
        dists = []
        for a in np.linspace(0.0, 2.0 * math.pi, count, endpoint=False):
            u = np.array([math.cos(a), math.sin(a)])
            t = _first_crossing(self, ctr, u, rmax)
            if t is not None:
                dists.append(t)
        if not dists:
            raise ValueError("blob has no detectable boundary")
        return dists


_SHAPE_KINDS = {"circle": Circle, "ellipse": Ellipse, "star": Star, "blob": Blob}


def shape_kinds() -> tuple[str, ...]:
    return tuple(sorted(_SHAPE_KINDS))


# ---------------------------------------------------------------------------
# ray casting


def _first_crossing(shape: ObjectShape, origin: np.ndarray, direction: np.ndarray, max_range: float):
    """Distance along origin + t*direction to the first boundary crossing.

    Brackets the first sign change of the implicit function on a fixed
    marching lattice, then bisects to _BOUNDARY_TOL. Returns None when no
    crossing is found within max_range.
    """
    ts = np.linspace(0.0, max_range, _MARCH_SAMPLES + 1)
    pts = origin[None, :] + ts[:, None] * direction[None, :]
    vals = shape.implicit(pts)
    neg = np.nonzero(vals < 0.0)[0]
    if neg.size == 0:
        return None
    hi_idx = neg[0]
    if hi_idx == 0:
        return 0.0  # origin already inside
    lo, hi = ts[hi_idx - 1], ts[hi_idx]
    f_lo = vals[hi_idx - 1]
    while hi - lo > _BOUNDARY_TOL:
        mid = 0.5 * (lo + hi)
        f_mid = shape.implicit(np.array([origin + mid * direction]))[0]
        if f_mid < 0.0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# datasets and grids


@dataclass(frozen=True)
class LabeledDataset:
    """One robot's labeled points: +1 outside the object, -1 inside."""

    agent_id: int
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        lab = np.asarray(self.labels, dtype=int).ravel()
        if int(self.agent_id) < 1:
            raise ValueError("agent_id must be a positive integer")
        if pts.shape[0] != lab.shape[0] or pts.shape[0] < 1:
            raise ValueError("need equally many points and labels, at least one of each")
        if pts.shape[1] != 2 or not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite 2-D coordinates")
        if not np.all(np.isin(lab, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        pts = pts.copy()
        lab = lab.copy()
        pts.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "agent_id", int(self.agent_id))
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    @property
    def size(self) -> int:
        return self.points.shape[0]


def union_has_both_labels(datasets) -> bool:
    labels = np.concatenate([d.labels for d in datasets])
    return bool(np.any(labels > 0) and np.any(labels < 0))


@dataclass(frozen=True)
class GridBasis:
    """The shared basis points; identical across agents by construction."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] < 1 or pts.shape[1] != 2 or not np.all(np.isfinite(pts)):
            raise ValueError("grid must contain at least one finite 2-D point")
        if pts.shape[0] > 1:
            diff = pts[:, None, :] - pts[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            np.fill_diagonal(d2, np.inf)
            if d2.min() <= 0.0:
                raise ValueError("grid points must be pairwise distinct")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.shape[0]


def make_grid(bbox, rows: int, cols: int) -> GridBasis:
    """Regular lattice over an axis-aligned box, corners included.

    bbox is (xmin, xmax, ymin, ymax). A single row or column is centered
    on its axis.
    """
    xmin, xmax, ymin, ymax = (float(v) for v in bbox)
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    if xmin > xmax or ymin > ymax:
        raise ValueError("bbox must have xmin <= xmax and ymin <= ymax")
    if cols > 1 and xmin == xmax:
        raise ValueError("bbox is degenerate along x but cols > 1")
    if rows > 1 and ymin == ymax:
        raise ValueError("bbox is degenerate along y but rows > 1")
    xs = np.linspace(xmin, xmax, cols) if cols > 1 else np.array([0.5 * (xmin + xmax)])
    ys = np.linspace(ymin, ymax, rows) if rows > 1 else np.array([0.5 * (ymin + ymax)])
    pts = np.array([(x, y) for y in ys for x in xs])
    return GridBasis(points=pts)


def sample_lidar(
    shape: ObjectShape,
    robot_pos,
    ray_count: int,
    max_range: float,
    offset: float,
    seed: int,
    agent_id: int = 1,
    angle_jitter: float = 0.0,
) -> LabeledDataset:
    """Simulate one scan: paired points straddling each ray's first hit.

    Rays are spread evenly across the cone under which the robot sees the
    object's inscribed disk, so a convex-enough target returns exactly
    ``ray_count`` hits; rays that miss (possible between star lobes) emit
    nothing. Each hit h on a ray with unit direction u yields an outside
    point ``h - offset*u`` labeled +1 and an inside point ``h + offset*u``
    labeled -1. ``angle_jitter`` (fraction of the ray spacing, in [0, 0.5])
    lets ``seed`` perturb the ray angles; the default of 0 keeps the fan
    exactly regular, and the output is deterministic given the seed either
    way.

    Raises NoReturnsError when no ray hits.
    """
    robot = np.asarray(robot_pos, dtype=float).reshape(2)
    if ray_count < 1:
        raise ValueError("ray_count must be >= 1")
    if max_range <= 0 or offset <= 0:
        raise ValueError("max_range and offset must be positive")
    if not (0.0 <= angle_jitter <= 0.5):
        raise ValueError("angle_jitter must lie in [0, 0.5]")
    if shape.inside(robot):
        raise ValueError("robot position must be outside the object")

    ctr = shape.center()
    to_ctr = ctr - robot
    dist = float(np.hypot(*to_ctr))
    if dist == 0.0:
        raise ValueError("robot position coincides with the object center")
    aim = math.atan2(to_ctr[1], to_ctr[0])
    half_angle = math.asin(min(1.0, shape.inner_radius() / dist))

    rng = np.random.default_rng(seed)
    spacing = 2.0 * half_angle / ray_count
    base = aim - half_angle + (np.arange(ray_count) + 0.5) * spacing
    angles = base + rng.uniform(-angle_jitter, angle_jitter, size=ray_count) * spacing

    pts = []
    labs = []
    for a in angles:
        u = np.array([math.cos(a), math.sin(a)])
        t = _first_crossing(shape, robot, u, max_range)
        if t is None or t <= offset:
            continue
        hit = robot + t * u
        p_out = hit - offset * u
        p_in = hit + offset * u
        # keep only pairs whose labels the membership oracle confirms
        if shape.inside(p_in) and not shape.inside(p_out):
            pts.append(p_out)
            labs.append(1)
            pts.append(p_in)
            labs.append(-1)
    if not pts:
        raise NoReturnsError(f"no ray from {tuple(robot)} hit the object within range {max_range}")
    return LabeledDataset(agent_id=agent_id, points=np.array(pts), labels=np.array(labs, dtype=int))


# ---------------------------------------------------------------------------
# dataset text I/O


def dump_datasets(datasets, path) -> None:
    """Write datasets as a text table: agent_id x y label, one point per row.

    Floats use shortest-exact rendering (17 significant digits), so a
    round-trip through load_datasets is bit-exact.
    """
    lines = ["# agent_id x y label"]
    for ds in sorted(datasets, key=lambda d: d.agent_id):
        for (x, y), lab in zip(ds.points, ds.labels):
            lines.append(f"{ds.agent_id} {x:.17g} {y:.17g} {lab:+d}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_datasets(path) -> list[LabeledDataset]:
    """Read a dump_datasets table back into per-agent datasets."""
    rows: dict[int, list[tuple[float, float, int]]] = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            a, x, y, lab = line.split()
            rows.setdefault(int(a), []).append((float(x), float(y), int(lab)))
    out = []
    for agent_id in sorted(rows):
        recs = rows[agent_id]
        out.append(
            LabeledDataset(
                agent_id=agent_id,
                points=np.array([(x, y) for x, y, _ in recs]),
                labels=np.array([lab for _, _, lab in recs], dtype=int),
            )
        )
    return out
