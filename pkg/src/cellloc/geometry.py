"""Range inversion and three-circle trilateration.

All lengths are kilometers and all times seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .exceptions import (
    ConfigurationError,
    DegenerateGeometryError,
    DegenerateTopologyError,
    InconsistentMeasurementError,
    TimingError,
)

SPEED_OF_LIGHT_KM_S = 299792.458

# relative singularity threshold for the 2x2 solve
COLLINEAR_RTOL = 1e-9

# loop inversions this far below zero (relative to the loop length) are
# floating-point cancellation, not a timing inconsistency
ROUNDOFF_RTOL = 1e-12


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinate ({self.x}, {self.y})")

    def __add__(self, other: Point) -> Point:
        return Point(self.x + other.x, self.y + other.y)

    def __sub__(self, other: Point) -> Point:
        return Point(self.x - other.x, self.y - other.y)

    def __iter__(self):
        yield self.x
        yield self.y


@dataclass(frozen=True)
class CircleConstraint:
    center: Point
    radius: float

    def __post_init__(self):
        if not math.isfinite(self.radius) or self.radius < 0:
            raise ValueError(f"radius must be finite and >= 0, got {self.radius}")


@dataclass(frozen=True)
class LinearEquation:
    """The line ``a*x + b*y + c = 0``."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.a == 0 and self.b == 0:
            raise DegenerateGeometryError("linear equation with a = b = 0")

    def evaluate(self, p: Point) -> float:
        return self.a * p.x + self.b * p.y + self.c


@dataclass(frozen=True)
class PropagationConstants:
    c: float = SPEED_OF_LIGHT_KM_S

    def __post_init__(self):
        if not (math.isfinite(self.c) and self.c > 0):
            raise ValueError(f"signal speed must be positive, got {self.c}")


DEFAULT_CONSTANTS = PropagationConstants()


def euclidean_distance(p: Point, q: Point) -> float:
    return math.hypot(p.x - q.x, p.y - q.y)


def _check_delta(delta_t: float) -> None:
    if not math.isfinite(delta_t) or delta_t < 0:
        raise TimingError(f"time difference must be finite and >= 0, got {delta_t}")


def _nonnegative(d: float, loop: float) -> float:
    return 0.0 if -ROUNDOFF_RTOL * loop <= d < 0 else d


def master_distance_from_roundtrip(delta_t: float,
                                   consts: PropagationConstants = DEFAULT_CONSTANTS) -> float:
    """Distance to a node that echoes a message straight back: ``c*dt/2``."""
    _check_delta(delta_t)
    return consts.c * delta_t / 2.0


def slave_distance_from_loop(delta_t: float, consts: PropagationConstants,
                             inter_bts: float, master_mobile: float) -> float:
    """Unknown leg of the loop master -> slave -> mobile -> master.

    The loop time is ``(inter_bts + d + master_mobile) / c``; returns ``d``.

    Raises
    ------
    InconsistentMeasurementError
        If the loop is shorter than its two known legs.
    """
    _check_delta(delta_t)
    if inter_bts < 0 or master_mobile < 0:
        raise ValueError("known loop legs must be >= 0")
    loop = consts.c * delta_t
    d = _nonnegative(loop - inter_bts - master_mobile, loop)
    if d < 0:
        raise InconsistentMeasurementError(
            f"loop of {consts.c * delta_t:.9g} km is shorter than its known legs "
            f"({inter_bts:.9g} + {master_mobile:.9g} km)")
    return d


def cdba_distance_from_loop(delta_t: float, consts: PropagationConstants,
                            bsc_bts: float, literal: bool = False) -> float:
    """BTS-to-mobile distance from a BSC-timed loop.

    The physical loop is BSC -> BTS -> mobile -> BTS -> BSC, so
    ``dt = 2*(bsc_bts + d)/c``. With ``literal=True`` the one-way form
    ``dt = (bsc_bts + d)/c`` is inverted instead.
    """
    _check_delta(delta_t)
    if bsc_bts < 0:
        raise ValueError("BSC-to-BTS distance must be >= 0")
    loop = consts.c * delta_t if literal else consts.c * delta_t / 2.0
    d = _nonnegative(loop - bsc_bts, loop)
    if d < 0:
        raise InconsistentMeasurementError(
            f"loop half-length {loop:.9g} km is shorter than the BSC leg {bsc_bts:.9g} km")
    return d


def linearize(c0: CircleConstraint, c1: CircleConstraint) -> LinearEquation:
    """Subtract the expanded equation of ``c1`` from that of ``c0``."""
    x0, y0 = c0.center
    x1, y1 = c1.center
    if x0 == x1 and y0 == y1:
        raise DegenerateGeometryError(f"coincident circle centers at ({x0}, {y0})")
    a = 2.0 * (x1 - x0)
    b = 2.0 * (y1 - y0)
    c = x0 * x0 - x1 * x1 + y0 * y0 - y1 * y1 - c0.radius ** 2 + c1.radius ** 2
    return LinearEquation(a, b, c)


def _is_singular(e1: LinearEquation, e2: LinearEquation) -> bool:
    p, q = e1.a * e2.b, e2.a * e1.b
    return abs(p - q) < COLLINEAR_RTOL * max(1.0, abs(p), abs(q))


def is_collinear(p0: Point, p1: Point, p2: Point) -> bool:
    """Same relative test the trilateration solve applies to its centers."""
    if p0 == p1 or p0 == p2 or p1 == p2:
        return True
    e1 = LinearEquation(2.0 * (p1.x - p0.x), 2.0 * (p1.y - p0.y), 0.0)
    e2 = LinearEquation(2.0 * (p2.x - p0.x), 2.0 * (p2.y - p0.y), 0.0)
    return _is_singular(e1, e2)


def trilaterate(c0: CircleConstraint, c1: CircleConstraint,
                c2: CircleConstraint) -> Point:
    """Intersect three circles by solving the two radical-axis lines.

    The solve runs in a frame centered on ``c0`` so large coordinates do not
    cancel; the answer is shifted back afterwards.
    """
    origin = c0.center
    shifted = [CircleConstraint(c.center - origin, c.radius) for c in (c0, c1, c2)]
    e1 = linearize(shifted[0], shifted[1])
    e2 = linearize(shifted[0], shifted[2])
    if shifted[1].center == shifted[2].center:
        raise DegenerateGeometryError("coincident circle centers")
    if _is_singular(e1, e2):
        raise DegenerateGeometryError("circle centers are collinear")
    det = e1.a * e2.b - e2.a * e1.b
    x = (e1.b * e2.c - e2.b * e1.c) / det
    y = (e2.a * e1.c - e1.a * e2.c) / det
    return Point(x, y) + origin


def residual_sum(p: Point, circles: Sequence[CircleConstraint]) -> float:
    """Sum of squared radial misfits of ``p`` against each circle."""
    if not circles:
        raise ValueError("residual_sum needs at least one circle")
    return math.fsum((euclidean_distance(p, c.center) - c.radius) ** 2 for c in circles)


def choose_slaves(origin_id: int, origin: Point,
                  candidates: Iterable[tuple[int, Point]]) -> tuple[int, int]:
    """Pick the two candidates nearest ``origin`` that form a usable triangle.

    Candidates are ranked by distance then id. Pairs are tried in
    lexicographic rank order, so a collinear second pick is replaced by the
    next-nearest candidate before the first pick is given up.
    """
    ranked = sorted(((euclidean_distance(origin, pos), cid, pos)
                     for cid, pos in candidates if cid != origin_id),
                    key=lambda t: (t[0], t[1]))
    if len(ranked) < 2:
        raise ConfigurationError(
            f"station {origin_id} has {len(ranked)} candidate slave(s), needs 2")
    for i in range(len(ranked)):
        for j in range(i + 1, len(ranked)):
            if not is_collinear(origin, ranked[i][2], ranked[j][2]):
                return ranked[i][1], ranked[j][1]
    raise DegenerateTopologyError(
        f"every candidate slave pair is collinear with station {origin_id}")
