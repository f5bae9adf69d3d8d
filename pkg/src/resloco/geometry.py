"""Planar rectangle geometry: signed distances, surface sampling, rigid transforms.

Objects are unions of axis-aligned rectangles in their local frame (a single
box, or two boxes forming an L-shape).  All angles are radians, lengths metres.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ObjectShape:
    """Union of rectangles in the object's local frame."""

    rect_offsets: np.ndarray  # (R, 2) centre of each rectangle
    rect_half_extents: np.ndarray  # (R, 2)
    mass: float = 2.0
    inertia: float = 0.03

    def __post_init__(self):
        off = np.atleast_2d(np.asarray(self.rect_offsets, dtype=np.float64))
        he = np.atleast_2d(np.asarray(self.rect_half_extents, dtype=np.float64))
        if off.shape != he.shape or off.shape[1] != 2:
            raise ValueError("rect_offsets and rect_half_extents must be (R, 2)")
        if np.any(he <= 0):
            raise ValueError("half extents must be positive")
        if self.mass <= 0 or self.inertia <= 0:
            raise ValueError("object mass and inertia must be positive")
        object.__setattr__(self, "rect_offsets", off)
        object.__setattr__(self, "rect_half_extents", he)

    @property
    def n_rects(self) -> int:
        return self.rect_offsets.shape[0]


def box_shape(half_extents=(0.12, 0.12), mass=2.0) -> ObjectShape:
    hx, hz = half_extents
    inertia = mass * ((2 * hx) ** 2 + (2 * hz) ** 2) / 12.0
    return ObjectShape(np.array([[0.0, 0.0]]), np.array([[hx, hz]]),
                       mass=mass, inertia=inertia)


def l_shape(mass=4.0) -> ObjectShape:
    """Chair stand-in: a seat box with a vertical backrest box."""
    offsets = np.array([[0.0, 0.0], [-0.17, 0.33]])
    halves = np.array([[0.22, 0.06], [0.05, 0.27]])
    # crude union inertia: treat rects as point masses at offsets plus own inertia
    areas = np.prod(2 * halves, axis=1)
    m = mass * areas / areas.sum()
    own = m * np.sum((2 * halves) ** 2, axis=1) / 12.0
    inertia = float(np.sum(own + m * np.sum(offsets ** 2, axis=1)))
    return ObjectShape(offsets, halves, mass=mass, inertia=inertia)


def rect_signed_distance(point, half_extents) -> float:
    """Signed distance from a local-frame point to one rectangle boundary.

    Negative inside, positive outside, zero on the boundary.
    """
    p = np.abs(np.asarray(point, dtype=np.float64))
    he = np.asarray(half_extents, dtype=np.float64)
    d = p - he
    outside = np.maximum(d, 0.0)
    return float(np.hypot(outside[0], outside[1]) + min(max(d[0], d[1]), 0.0))


def shape_signed_distance(point_local, shape: ObjectShape) -> float:
    """Signed distance from an object-local point to the rectangle union."""
    return min(
        rect_signed_distance(np.asarray(point_local) - shape.rect_offsets[r],
                             shape.rect_half_extents[r])
        for r in range(shape.n_rects)
    )


def rect_perimeter_point(half_extents, s: float) -> np.ndarray:
    """Point on the rectangle boundary at arc-length fraction s in [0, 1).

    s = 0 is the (+hx, +hz) corner; traversal is counter-clockwise.
    """
    hx, hz = float(half_extents[0]), float(half_extents[1])
    per = 4.0 * (hx + hz)
    d = (s % 1.0) * per
    if d < 2 * hx:
        return np.array([hx - d, hz])
    d -= 2 * hx
    if d < 2 * hz:
        return np.array([-hx, hz - d])
    d -= 2 * hz
    if d < 2 * hx:
        return np.array([-hx + d, -hz])
    d -= 2 * hx
    return np.array([hx, -hz + d])


def sample_surface_points(half_extents, n: int, seed: int) -> np.ndarray:
    """Deterministic stratified perimeter samples on one rectangle boundary.

    One point per stratum of width 1/n, with a common phase derived from
    `seed`; seed 0 starts exactly at the (+hx, +hz) corner.
    """
    if n < 1:
        raise ValueError("need at least one sample point")
    phase = (seed % 997) / 997.0
    fracs = (np.arange(n) + phase) / n
    return np.array([rect_perimeter_point(half_extents, s) for s in fracs])


def shape_surface_points(shape: ObjectShape, n: int, seed: int) -> np.ndarray:
    """Stratified boundary samples over a rectangle union, allocated by perimeter."""
    if n < 1:
        raise ValueError("need at least one sample point")
    pers = 4.0 * np.sum(shape.rect_half_extents, axis=1)
    counts = np.maximum(1, np.round(n * pers / pers.sum()).astype(int))
    # fix rounding so the total is exactly n
    while counts.sum() > n:
        counts[np.argmax(counts)] -= 1
    while counts.sum() < n:
        counts[np.argmax(pers / counts)] += 1
    pts = []
    for r in range(shape.n_rects):
        local = sample_surface_points(shape.rect_half_extents[r], int(counts[r]),
                                      seed + r)
        pts.append(local + shape.rect_offsets[r])
    return np.vstack(pts)


def rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def transform_points(points, pose) -> np.ndarray:
    """Apply rotate-then-translate to an (N, 2) array; pose = (x, z, theta)."""
    p = np.asarray(points, dtype=np.float64)
    x, z, th = pose
    if not np.all(np.isfinite([x, z, th])):
        raise ValueError("non-finite pose")
    return p @ rot2(th).T + np.array([x, z])


def inverse_pose(pose):
    x, z, th = pose
    R = rot2(-th)
    t = -R @ np.array([x, z])
    return (t[0], t[1], -th)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = -((-np.asarray(a) + np.pi) % (2 * np.pi) - np.pi)
    return w if np.ndim(a) else float(w)
