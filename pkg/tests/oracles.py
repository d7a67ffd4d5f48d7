"""Independent reference computations used by the tests.

Nothing here calls the code under test except to build plain data objects.
"""

import numpy as np
from mpmath import mp, mpf, sqrt

from cellloc.geometry import Point
from cellloc.simulator import Bsc, Bts, Mobile, Topology

EXAMPLE_MOBILE = (0.922827, 7.43964)
EXAMPLE_BTS = ((1.0, 2.0), (4.0, 6.0), (9.0, 8.0))


def hp_distance(p, q, digits=40):
    """Euclidean distance in high precision, returned as float."""
    with mp.workdps(digits):
        return float(sqrt((mpf(p[0]) - mpf(q[0])) ** 2 + (mpf(p[1]) - mpf(q[1])) ** 2))


def residual_grid(xs, ys, centers, radii):
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    total = np.zeros_like(X)
    for (cx, cy), r in zip(centers, radii):
        total += (np.hypot(X - cx, Y - cy) - r) ** 2
    return total


def grid_refine_argmin(centers, radii, start, half_width=5.0, n=41, rounds=30):
    """Brute-force argmin of the squared radial misfit by zooming grids."""
    cx, cy = start
    w = half_width
    for _ in range(rounds):
        xs = np.linspace(cx - w, cx + w, n)
        ys = np.linspace(cy - w, cy + w, n)
        g = residual_grid(xs, ys, centers, radii)
        i, j = np.unravel_index(np.argmin(g), g.shape)
        cx, cy = xs[i], ys[j]
        w *= 4.0 / n * 2
    return cx, cy


def min_angle_deg(a, b, c):
    pts = np.array([a, b, c], dtype=float)
    angles = []
    for k in range(3):
        u = pts[(k + 1) % 3] - pts[k]
        v = pts[(k + 2) % 3] - pts[k]
        cos = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
        angles.append(np.degrees(np.arccos(np.clip(cos, -1, 1))))
    return min(angles)


def random_triangle(rng, lo=-100.0, hi=100.0, min_side=5.0, min_angle=10.0):
    """Three well-separated, clearly non-collinear points."""
    while True:
        pts = rng.uniform(lo, hi, size=(3, 2))
        sides = [np.linalg.norm(pts[i] - pts[(i + 1) % 3]) for i in range(3)]
        if min(sides) >= min_side and min_angle_deg(*pts) >= min_angle:
            return [tuple(map(float, p)) for p in pts]


def random_topology(rng, n_mobiles=1, lo=-100.0, hi=100.0):
    stations = random_triangle(rng, lo, hi)
    bsc = tuple(map(float, rng.uniform(lo, hi, size=2)))
    mobiles = [tuple(map(float, rng.uniform(lo, hi, size=2))) for _ in range(n_mobiles)]
    return make_topology(stations, bsc, mobiles)


def make_topology(stations, bsc, mobiles, serving=None):
    btss = tuple(Bts(i + 1, Point(*p), 1) for i, p in enumerate(stations))
    mobs = tuple(Mobile(i + 1, Point(*p), serving_bts=serving)
                 for i, p in enumerate(mobiles))
    return Topology(btss, (Bsc(1, Point(*bsc)),), mobs)


def example_topology(serving=1, bsc=(5.0, 5.0)):
    btss = tuple(Bts(i + 1, Point(*p), 111) for i, p in enumerate(EXAMPLE_BTS))
    return Topology(btss, (Bsc(111, Point(*bsc)),),
                    (Mobile(1, Point(*EXAMPLE_MOBILE), b"nearest hotels", serving),))


_RAW_FIELDS = (("master_id", "<I"), ("master_timestamp", "<d"), ("slave_id", "<I"),
               ("s_slave_id", "<I"), ("flag", "<B"), ("bsc_id", "<I"))


def raw_frame(tag, mobile_id, data=b"", length=None, **fields):
    """Hand-built wire frame, independent of the codec under test."""
    import struct

    bitmap, tail = 0, b""
    for bit, (name, fmt) in enumerate(_RAW_FIELDS):
        if name in fields:
            bitmap |= 1 << bit
            tail += struct.pack(fmt, fields[name])
    body = struct.pack("<IH", mobile_id, len(data)) + data + struct.pack("<B", bitmap) + tail
    if length is None:
        length = 3 + len(body)
    return struct.pack("<BH", tag, length) + body
