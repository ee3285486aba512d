"""Oriented-rectangle footprints, segment clipping and overlap tests.

Footprints are described by rows of ``(x, y, heading, length, width)`` where
``(x, y)`` is the rectangle center and ``length`` runs along ``heading``.
All routines are vectorized over numpy arrays.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-12


def wrap_angle(a):
    """Wrap angles to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def footprint_corners(x, y, heading, length, width):
    """Return corner coordinates with shape (..., 4, 2), counter-clockwise."""
    x, y, heading, length, width = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, y, heading, length, width))
    )
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    lx = local[:, 0] * hl[..., None]
    ly = local[:, 1] * hw[..., None]
    cx = x[..., None] + lx * c[..., None] - ly * s[..., None]
    cy = y[..., None] + lx * s[..., None] + ly * c[..., None]
    return np.stack([cx, cy], axis=-1)


def segments_hit_boxes(p0, p1, boxes):
    """Closed intersection test of M segments against K oriented rectangles.

    Args:
        p0, p1: segment endpoints, shape (M, 2).
        boxes: footprint rows, shape (K, 5).

    Returns:
        Boolean matrix (M, K); True where the segment touches the rectangle.
    """
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    boxes = np.atleast_2d(np.asarray(boxes, dtype=float))
    if p0.shape[0] == 0 or boxes.shape[0] == 0:
        return np.zeros((p0.shape[0], boxes.shape[0]), dtype=bool)

    bx, by, bh, bl, bw = (boxes[:, i][None, :] for i in range(5))
    c, s = np.cos(bh), np.sin(bh)
    # segment start and direction in each box frame: (M, K)
    dx0 = p0[:, 0:1] - bx
    dy0 = p0[:, 1:2] - by
    ox = dx0 * c + dy0 * s
    oy = -dx0 * s + dy0 * c
    ddx = (p1[:, 0] - p0[:, 0])[:, None]
    ddy = (p1[:, 1] - p0[:, 1])[:, None]
    vx = ddx * c + ddy * s
    vy = -ddx * s + ddy * c
    hx = np.broadcast_to(bl / 2.0, ox.shape)
    hy = np.broadcast_to(bw / 2.0, oy.shape)

    t0 = np.zeros(ox.shape)
    t1 = np.ones(ox.shape)
    ok = np.ones(ox.shape, dtype=bool)
    # Liang-Barsky clipping against |x| <= hx, |y| <= hy
    for o, v, h in ((ox, vx, hx), (oy, vy, hy)):
        parallel = np.abs(v) < EPS
        ok &= ~(parallel & (np.abs(o) > h))
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (-h - o) / v
            tb = (h - o) / v
        lo = np.where(parallel, -np.inf, np.minimum(ta, tb))
        hi = np.where(parallel, np.inf, np.maximum(ta, tb))
        t0 = np.maximum(t0, lo)
        t1 = np.minimum(t1, hi)
    return ok & (t0 <= t1)


def _axes(corners):
    edges = np.roll(corners, -1, axis=-2) - corners
    return np.stack([-edges[..., 1], edges[..., 0]], axis=-1)


def boxes_overlap(a, b):
    """Pairwise separating-axis overlap test.

    Rectangles that only touch along an edge do not count as overlapping.

    Returns:
        Boolean matrix (len(a), len(b)).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    ca = footprint_corners(*a.T)  # (A, 4, 2)
    cb = footprint_corners(*b.T)
    axes = np.concatenate(
        [np.broadcast_to(_axes(ca)[:, None, :2], (len(a), len(b), 2, 2)),
         np.broadcast_to(_axes(cb)[None, :, :2], (len(a), len(b), 2, 2))],
        axis=2,
    )  # (A, B, 4, 2); two edge normals per rectangle suffice
    pa = np.einsum("akd,abnd->abnk", ca, axes)
    pb = np.einsum("bkd,abnd->abnk", cb, axes)
    separated = (pa.max(-1) <= pb.min(-1) + 1e-9) | (pb.max(-1) <= pa.min(-1) + 1e-9)
    return ~separated.any(-1)
