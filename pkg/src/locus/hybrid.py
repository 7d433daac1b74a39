"""Hybrid localization from per-anchor distance plus bearing angle.

Each anchor's sign frame turns one (distance, angle) pair into a full
position fix:

    x = ax + sx * d * sin(theta),   y = ay + sy * d * cos(theta)

The final estimate averages the three single-anchor fixes; the spread of
those fixes (max pairwise distance) is reported as the residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .environment import Anchor, Environment, Point2D
from .trilat import DistanceVector, PositionEstimate


@dataclass(frozen=True)
class AnchorEstimate:
    anchor_id: int
    p: Point2D


def anchor_estimate(anchor: Anchor, d: float, theta_deg: float) -> AnchorEstimate:
    """Position implied by one anchor's distance and bearing angle."""
    if not (math.isfinite(d) and d >= 0):
        raise ValueError(f"distance must be finite and nonnegative, got {d}")
    if not math.isfinite(theta_deg):
        raise ValueError("angle must be finite")
    sx, sy = anchor.frame
    t = math.radians(theta_deg)
    x = anchor.position.x + sx * d * math.sin(t)
    y = anchor.position.y + sy * d * math.cos(t)
    return AnchorEstimate(anchor_id=anchor.id, p=Point2D(x, y))


def hybrid_position(env: Environment, d: DistanceVector, thetas_deg) -> PositionEstimate:
    """Average the three single-anchor fixes.

    thetas_deg: bearing angles in anchor id order (1, 2, 3). The residual is
    the maximum pairwise distance among the three fixes; it is zero exactly
    when distances and angles are mutually consistent.
    """
    thetas = list(thetas_deg)
    if len(thetas) != 3:
        raise ValueError("exactly three angles required")
    fixes = [
        anchor_estimate(env.anchor(i + 1), d.d[i], thetas[i]).p for i in range(3)
    ]
    x = sum(f.x for f in fixes) / 3.0
    y = sum(f.y for f in fixes) / 3.0
    residual = max(
        fixes[i].distance_to(fixes[j]) for i in range(3) for j in range(i + 1, 3)
    )
    return PositionEstimate(p=Point2D(x, y), residual=residual)
