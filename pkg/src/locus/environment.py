"""Room geometry: anchor layout, test points, ground-truth distances and angles.

Rooms are axis-aligned rectangles with the origin at one corner. Three fixed
anchors (transmitters) sit in the room, by default on the corners (0, 0),
(length, 0) and (0, width). Each anchor carries a sign frame (sx, sy) that
fixes how its bearing angle maps back to cartesian offsets:

    x = ax + sx * d * sin(theta),   y = ay + sy * d * cos(theta)

true_aoa() below is the exact inverse of that map, so distance + angle from
any single anchor reconstructs the point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

# Default sign frames per anchor id. Anchor 1 adds both offsets, anchor 2
# flips the y offset, anchor 3 flips both.
DEFAULT_FRAMES = {1: (1, 1), 2: (1, -1), 3: (-1, -1)}

# Anchors must span a real triangle (square meters).
MIN_TRIANGLE_AREA = 1e-6

STANDARD_ROOMS = {
    "big_classroom": (13.0, 13.0),
    "corridor": (12.0, 4.0),
    "small_classroom": (9.0, 7.0),
}

# Fixed jitter seeds so the default test points of the standard rooms are
# stable across runs.
_STANDARD_POINT_SEEDS = {"big_classroom": 11, "corridor": 12, "small_classroom": 13}


@dataclass(frozen=True)
class Point2D:
    """A position in meters."""

    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def distance_to(self, other: "Point2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Anchor:
    """A fixed transmitter with a known position and angle sign frame."""

    id: int
    position: Point2D
    frame: tuple[int, int]

    def __post_init__(self):
        if self.id not in (1, 2, 3):
            raise ValueError(f"anchor id must be 1, 2 or 3, got {self.id}")
        sx, sy = self.frame
        if sx not in (-1, 1) or sy not in (-1, 1):
            raise ValueError(f"frame signs must be -1 or +1, got {self.frame}")


@dataclass(frozen=True)
class Environment:
    """A rectangular room with exactly three anchors and a set of test points."""

    name: str
    length: float
    width: float
    anchors: tuple[Anchor, Anchor, Anchor]
    test_points: tuple[Point2D, ...]

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"room dimensions must be positive, got {self.length} x {self.width}")
        if len(self.anchors) != 3:
            raise ValueError(f"exactly 3 anchors required, got {len(self.anchors)}")
        if sorted(a.id for a in self.anchors) != [1, 2, 3]:
            raise ValueError("anchor ids must be exactly {1, 2, 3}")
        pos = [a.position for a in self.anchors]
        for i in range(3):
            for j in range(i + 1, 3):
                if pos[i].x == pos[j].x and pos[i].y == pos[j].y:
                    raise ValueError("anchor positions must be pairwise distinct")
        # Twice the signed triangle area.
        cross = (pos[1].x - pos[0].x) * (pos[2].y - pos[0].y) - (pos[1].y - pos[0].y) * (
            pos[2].x - pos[0].x
        )
        if abs(cross) / 2.0 <= MIN_TRIANGLE_AREA:
            raise ValueError("anchors are collinear (triangle area too small)")
        for p in self.test_points:
            if not self.contains(p):
                raise ValueError(f"test point ({p.x}, {p.y}) outside room")

    def contains(self, p: Point2D) -> bool:
        return 0.0 <= p.x <= self.length and 0.0 <= p.y <= self.width

    def anchor(self, anchor_id: int) -> Anchor:
        for a in self.anchors:
            if a.id == anchor_id:
                return a
        raise ValueError(f"unknown anchor id {anchor_id}")


def make_environment(name, length, width, test_points=()) -> Environment:
    """Build a room with the default corner anchor layout.

    Anchor 1 sits at (0, 0), anchor 2 at (length, 0), anchor 3 at (0, width),
    each with its default sign frame.
    """
    corners = {1: Point2D(0.0, 0.0), 2: Point2D(float(length), 0.0), 3: Point2D(0.0, float(width))}
    anchors = tuple(Anchor(i, corners[i], DEFAULT_FRAMES[i]) for i in (1, 2, 3))
    return Environment(str(name), float(length), float(width), anchors, tuple(test_points))


def true_distance(env: Environment, anchor_id: int, p: Point2D) -> float:
    """Euclidean distance from anchor to p. Zero when p sits on the anchor."""
    return env.anchor(anchor_id).position.distance_to(p)


def true_aoa(env: Environment, anchor_id: int, p: Point2D) -> float:
    """Bearing angle of p seen from an anchor, in degrees within (-180, 180].

    Defined as atan2(sx * (p.x - ax), sy * (p.y - ay)), which makes the
    anchor's sign-frame reconstruction an exact identity.
    """
    a = env.anchor(anchor_id)
    dx = p.x - a.position.x
    dy = p.y - a.position.y
    if dx == 0.0 and dy == 0.0:
        raise ValueError(f"point coincides with anchor {anchor_id}; angle undefined")
    sx, sy = a.frame
    deg = math.degrees(math.atan2(sx * dx, sy * dy))
    if deg <= -180.0:
        deg += 360.0
    return deg


def jittered_grid(length, width, n=10, seed=0, margin_frac=0.12, jitter_frac=0.3):
    """n interior points on a jittered grid, rows x cols chosen by aspect ratio.

    Margins keep every point away from the walls (and hence the corner
    anchors) even at maximum jitter.
    """
    if n < 1:
        raise ValueError("need at least one point")
    rows = max(1, int(round(math.sqrt(n * width / length))))
    cols = int(math.ceil(n / rows))
    mx = margin_frac * length
    my = margin_frac * width
    cw = (length - 2 * mx) / cols
    ch = (width - 2 * my) / rows
    rng = np.random.default_rng(seed)
    jit = rng.uniform(-jitter_frac, jitter_frac, size=(rows * cols, 2))
    points = []
    i = 0
    for r in range(rows):
        for c in range(cols):
            px = mx + (c + 0.5 + jit[i, 0]) * cw
            py = my + (r + 0.5 + jit[i, 1]) * ch
            points.append(Point2D(px, py))
            i += 1
    return points[:n]


def standard_environment(name: str, n_points=10, point_seed=None) -> Environment:
    """One of the three built-in rooms with its default jittered test points."""
    if name not in STANDARD_ROOMS:
        raise ValueError(f"unknown room {name!r}; choices: {sorted(STANDARD_ROOMS)}")
    length, width = STANDARD_ROOMS[name]
    if point_seed is None:
        point_seed = _STANDARD_POINT_SEEDS[name]
    pts = jittered_grid(length, width, n=n_points, seed=point_seed)
    return make_environment(name, length, width, pts)


def standard_environments() -> list[Environment]:
    return [standard_environment(name) for name in STANDARD_ROOMS]


def environment_to_dict(env: Environment) -> dict:
    return {
        "name": env.name,
        "length_m": env.length,
        "width_m": env.width,
        "anchors": [
            {"id": a.id, "x": a.position.x, "y": a.position.y, "sx": a.frame[0], "sy": a.frame[1]}
            for a in env.anchors
        ],
        "test_points": [{"x": p.x, "y": p.y} for p in env.test_points],
    }


def environment_from_dict(d: dict) -> Environment:
    anchors = tuple(
        Anchor(int(a["id"]), Point2D(float(a["x"]), float(a["y"])), (int(a["sx"]), int(a["sy"])))
        for a in d["anchors"]
    )
    points = tuple(Point2D(float(p["x"]), float(p["y"])) for p in d["test_points"])
    return Environment(str(d["name"]), float(d["length_m"]), float(d["width_m"]), anchors, points)


def load_environment(path) -> Environment:
    with open(path) as f:
        return environment_from_dict(json.load(f))


def save_environment(env: Environment, path) -> None:
    with open(path, "w") as f:
        json.dump(environment_to_dict(env), f, indent=2, sort_keys=True)
        f.write("\n")
