"""Synthetic workpieces with known geometry, used for demos and tests."""
from __future__ import annotations

import numpy as np

from .cloudio import PointCloud, TriangleMesh, sample_mesh


def _quad(v0, v1, v2, v3):
    return [v0, v1, v2, v3], [(0, 1, 2), (0, 2, 3)]


def open_box_mesh(width=60.0, depth=50.0, height=40.0) -> TriangleMesh:
    """Axis-aligned box without its top face; bottom at z=0.

    Triangle order is bottom, x=0, x=width, y=0, y=depth (two triangles each),
    so ``face_of_triangle = tri_index // 2``.
    """
    w, d, h = float(width), float(depth), float(height)
    faces = [
        ((0, 0, 0), (w, 0, 0), (w, d, 0), (0, d, 0)),
        ((0, 0, 0), (0, d, 0), (0, d, h), (0, 0, h)),
        ((w, 0, 0), (w, d, 0), (w, d, h), (w, 0, h)),
        ((0, 0, 0), (w, 0, 0), (w, 0, h), (0, 0, h)),
        ((0, d, 0), (w, d, 0), (w, d, h), (0, d, h)),
    ]
    verts, tris = [], []
    for quad in faces:
        base = len(verts)
        vs, ts = _quad(*quad)
        verts += vs
        tris += [(base + a, base + b, base + c) for a, b, c in ts]
    return TriangleMesh(np.array(verts, float), np.array(tris))


def open_box_labels(points: np.ndarray, width=60.0, depth=50.0, height=40.0) -> np.ndarray:
    """Ground-truth face label (0..4) for points sampled from ``open_box_mesh``."""
    p = np.asarray(points)
    dist = np.column_stack([
        np.abs(p[:, 2]),
        np.abs(p[:, 0]),
        np.abs(p[:, 0] - width),
        np.abs(p[:, 1]),
        np.abs(p[:, 1] - depth),
    ])
    return np.argmin(dist, axis=1)


def noisy_open_box(count=10000, noise=0.1, seed=0, width=60.0, depth=50.0, height=40.0):
    """Sampled open box plus isotropic Gaussian noise; returns (cloud, labels)."""
    mesh = open_box_mesh(width, depth, height)
    cloud = sample_mesh(mesh, count, seed)
    labels = open_box_labels(cloud.points, width, depth, height)
    rng = np.random.default_rng(seed + 1)
    pts = cloud.points + rng.normal(0.0, noise, cloud.points.shape)
    return PointCloud(pts, sample_count=count), labels


def plate(length=200.0, width=60.0, count=6000, seed=0, z=0.0) -> PointCloud:
    rng = np.random.default_rng(seed)
    xy = rng.random((count, 2)) * [length, width]
    return PointCloud(np.column_stack([xy, np.full(count, z)]))


def grid_plate(length, width, spacing, z=0.0) -> PointCloud:
    xs = np.arange(0.0, length + 1e-9, spacing)
    ys = np.arange(0.0, width + 1e-9, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return PointCloud(np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)]))


def sphere(radius=50.0, count=20000, seed=0, center=(0.0, 0.0, 0.0)) -> PointCloud:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloud(radius * v + np.asarray(center, float))


def cylinder(radius=25.0, length=100.0, count=20000, seed=0,
             angle_range=(0.0, 2 * np.pi)) -> PointCloud:
    """Cylinder shell about the x axis."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(angle_range[0], angle_range[1], count)
    x = rng.uniform(0.0, length, count)
    return PointCloud(np.column_stack([x, radius * np.cos(t), radius * np.sin(t)]))


def plane_with_dome(size=160.0, radius=30.0, count=8000, seed=0, center=None):
    """Square plate at z=0 with a hemispherical bump; returns (cloud, is_dome).

    Samples are area-weighted between the plate (minus the dome footprint)
    and the dome so density is uniform.
    """
    rng = np.random.default_rng(seed)
    if center is None:
        center = (size / 2.0, size / 2.0)
    cx, cy = center
    plate_area = size * size - np.pi * radius ** 2
    dome_area = 2.0 * np.pi * radius ** 2
    n_dome = int(round(count * dome_area / (plate_area + dome_area)))
    n_plate = count - n_dome
    flat = []
    while len(flat) < n_plate:
        xy = rng.random((n_plate, 2)) * size
        keep = np.hypot(xy[:, 0] - cx, xy[:, 1] - cy) > radius
        flat.extend(xy[keep])
    flat = np.asarray(flat[:n_plate])
    v = rng.normal(size=(n_dome, 3))
    v[:, 2] = np.abs(v[:, 2])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    dome = radius * v + [cx, cy, 0.0]
    pts = np.vstack([np.column_stack([flat, np.zeros(n_plate)]), dome])
    is_dome = np.r_[np.zeros(n_plate, bool), np.ones(n_dome, bool)]
    return PointCloud(pts, sample_count=count), is_dome


def plane_with_ridge(size=160.0, radius=25.0, count=8000, seed=0):
    """Square plate at z=0 with a half-cylinder ridge along x through its middle."""
    rng = np.random.default_rng(seed)
    cy = size / 2.0
    plate_area = size * (size - 2 * radius)
    ridge_area = np.pi * radius * size
    n_ridge = int(round(count * ridge_area / (plate_area + ridge_area)))
    n_plate = count - n_ridge
    x = rng.random(n_plate) * size
    y = rng.random(n_plate) * (size - 2 * radius)
    y = np.where(y < cy - radius, y, y + 2 * radius)
    t = rng.uniform(0.0, np.pi, n_ridge)
    rx = rng.random(n_ridge) * size
    ridge = np.column_stack([rx, cy + radius * np.cos(t), radius * np.sin(t)])
    pts = np.vstack([np.column_stack([x, y, np.zeros(n_plate)]), ridge])
    is_ridge = np.r_[np.zeros(n_plate, bool), np.ones(n_ridge, bool)]
    return PointCloud(pts, sample_count=count), is_ridge


def random_segments(count, seed=0, extent=400.0, min_len=20.0, max_len=120.0):
    """Random straight scan segments as an array of shape (count, 2, 3)."""
    rng = np.random.default_rng(seed)
    start = rng.random((count, 3)) * extent
    d = rng.normal(size=(count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    length = rng.uniform(min_len, max_len, count)
    return np.stack([start, start + d * length[:, None]], axis=1)


def gaussian_bump(size=120.0, amplitude=15.0, sigma=20.0, count=6000, seed=0) -> PointCloud:
    """Height field z = A exp(-r^2 / 2 sigma^2) over a square, centered bump."""
    rng = np.random.default_rng(seed)
    xy = rng.random((count, 2)) * size
    r2 = ((xy - size / 2.0) ** 2).sum(axis=1)
    return PointCloud(np.column_stack([xy, amplitude * np.exp(-r2 / (2 * sigma ** 2))]))


def paraboloid(size=120.0, focal=100.0, count=6000, seed=0, convex=True) -> PointCloud:
    """Height field z = -+ r^2 / (2 focal) centered over a square."""
    rng = np.random.default_rng(seed)
    xy = (rng.random((count, 2)) - 0.5) * size
    z = (xy ** 2).sum(axis=1) / (2.0 * focal)
    return PointCloud(np.column_stack([xy, -z if convex else z]))
