"""Ray casting, sampling along rays, projection into source views and view selection."""

from dataclasses import dataclass

import numpy as np
import torch

from .data_io import undistort_points, undistort_pixel

IN_FRONT_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        if o.shape != (3,) or d.shape != (3,):
            raise ValueError("origin and direction must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError(f"ray direction must have unit norm, got {np.linalg.norm(d)}")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t):
        return self.origin + np.asarray(t, dtype=np.float64)[..., None] * self.direction


@dataclass(frozen=True, eq=False)
class RaySamples:
    depths: np.ndarray
    positions: np.ndarray


def camera_rays(camera, pixels):
    """World-space ray origins and unit directions through pixels of shape (..., 2)."""
    intr, pose = camera
    ideal = undistort_points(intr, pixels)
    d_cam = np.stack(
        [(ideal[..., 0] - intr.cx) / intr.fx, (ideal[..., 1] - intr.cy) / intr.fy, np.ones(ideal.shape[:-1])],
        axis=-1,
    )
    d_world = d_cam @ pose.rotation
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.center, d_world.shape).copy()
    return origins, d_world


def pixel_to_ray(camera, pixel):
    intr, _ = camera
    undistort_pixel(intr, pixel)  # bounds check
    origins, dirs = camera_rays(camera, np.asarray(pixel, dtype=np.float64))
    return Ray(origins, dirs)


def sample_depths(t_near, t_far, n_samples, n_rays=1, stratified=False, rng=None):
    """Depths of shape (n_rays, n_samples) in [t_near, t_far], sorted along each ray.

    Deterministic mode is an evenly spaced grid including both endpoints
    (the midpoint when ``n_samples == 1``); stratified mode draws one uniform
    sample per equal-width bin.
    """
    if n_samples < 1:
        raise ValueError(f"need at least one sample per ray, got {n_samples}")
    if not (0 < t_near < t_far):
        raise ValueError(f"need 0 < t_near < t_far, got {t_near}, {t_far}")
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        edges = np.linspace(t_near, t_far, n_samples + 1)
        u = rng.uniform(size=(n_rays, n_samples))
        return edges[:-1] + u * (edges[1:] - edges[:-1])
    if n_samples == 1:
        grid = np.array([(t_near + t_far) / 2.0])
    else:
        grid = np.linspace(t_near, t_far, n_samples)
    return np.broadcast_to(grid, (n_rays, n_samples)).copy()


def sample_along_ray(ray, t_near, t_far, n_samples, stratified=False, rng=None):
    depths = sample_depths(t_near, t_far, n_samples, 1, stratified, rng)[0]
    return RaySamples(depths, ray.at(depths))


def project(point, camera):
    """Project a world point; returns (pixel, camera-frame depth, in_front)."""
    intr, pose = camera
    p = pose.rotation @ np.asarray(point, dtype=np.float64) + pose.translation
    depth = float(p[2])
    in_front = depth > IN_FRONT_EPS
    z = depth if in_front else IN_FRONT_EPS
    x, y = p[0] / z, p[1] / z
    scale = 1.0 + intr.k1 * (x * x + y * y)
    pixel = np.array([intr.fx * x * scale + intr.cx, intr.fy * y * scale + intr.cy])
    return pixel, depth, in_front


def camera_tensors(cameras, dtype=torch.float64):
    """Stack cameras into tensors for ``project_points``."""
    R = torch.tensor(np.stack([pose.rotation for _, pose in cameras]), dtype=dtype)
    t = torch.tensor(np.stack([pose.translation for _, pose in cameras]), dtype=dtype)
    intr = torch.tensor([[c.fx, c.fy, c.cx, c.cy, c.k1, c.width, c.height] for c, _ in cameras], dtype=dtype)
    return R, t, intr


def project_points(points, R, t, intr):
    """Project points (..., 3) into V cameras.

    Returns pixels (V, ..., 2), camera depths (V, ...) and a bool mask that is
    true where the point lies in front of the camera and inside the image.
    """
    V = R.shape[0]
    flat = points.reshape(1, -1, 3)
    cam = torch.einsum("vij,vpj->vpi", R, flat.expand(V, -1, -1)) + t[:, None, :]
    depth = cam[..., 2]
    in_front = depth > IN_FRONT_EPS
    z = torch.where(in_front, depth, torch.full_like(depth, IN_FRONT_EPS))
    x, y = cam[..., 0] / z, cam[..., 1] / z
    fx, fy, cx, cy, k1, w, h = (intr[:, i : i + 1] for i in range(7))
    scale = 1.0 + k1 * (x * x + y * y)
    u = fx * x * scale + cx
    v = fy * y * scale + cy
    inside = (u >= -0.5) & (u <= w - 0.5) & (v >= -0.5) & (v <= h - 0.5)
    shape = (V,) + points.shape[:-1]
    pixels = torch.stack([u, v], dim=-1).reshape(shape + (2,))
    return pixels, depth.reshape(shape), (in_front & inside).reshape(shape)


def view_nearness(target, poses):
    """(angle between optical axes, camera-center distance) for each pose."""
    axis = target.optical_axis
    angles = np.array([np.arccos(np.clip(axis @ p.optical_axis, -1.0, 1.0)) for p in poses])
    dists = np.array([np.linalg.norm(target.center - p.center) for p in poses])
    return angles, dists


def rank_by_nearness(target, poses, exclude=()):
    """Indices of ``poses`` sorted by angle, ties broken by center distance."""
    angles, dists = view_nearness(target, poses)
    order = np.lexsort((dists, angles))
    excluded = set(exclude)
    return [int(i) for i in order if int(i) not in excluded]


def select_source_views(target, all_views, k, n, rng, exclude=()):
    """Pick ``n`` source views uniformly from the ``k * n`` views nearest to ``target``.

    ``exclude`` lists indices into ``all_views`` that must never be returned
    (typically the target itself).
    """
    ranked = rank_by_nearness(target, all_views, exclude)
    if n > len(ranked):
        raise ValueError(f"requested {n} source views but only {len(ranked)} are available")
    pool = ranked[: min(int(k) * int(n), len(ranked))]
    picked = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in picked]
