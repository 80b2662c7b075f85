"""Training-input synthesis: noisy, cropped, occluded, clipped and corrupted grids."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .sensing import CameraModel, LocalGrid, PointCloud


@dataclass(frozen=True)
class AugmentConfig:
    """Sampling ranges for every augmentation; each sample draws its own values.

    Ranges are ``(low, high)`` and drawn uniformly.  Probabilities gate the
    stages that have no natural zero setting.
    """

    noise_mag_range: tuple[float, float] = (0.0, 0.05)
    crop_max_cells: int = 6
    occlusion_prob: float = 0.8
    sensor_x_range: tuple[float, float] = (-0.4, 0.4)  # relative to the grid's rear edge, m
    sensor_y_range: tuple[float, float] = (-0.3, 0.3)  # relative to the grid center line, m
    sensor_height_range: tuple[float, float] = (0.3, 1.0)  # above base, m
    sensor_fov_range: tuple[float, float] = (1.2, 2.4)  # horizontal field of view, rad
    clip_prob: float = 0.5
    clip_low_bounds: tuple[float, float] = (-2.0, -1.0)  # m, base-relative
    clip_high_bounds: tuple[float, float] = (0.3, 1.5)
    missing_ratio_range: tuple[float, float] = (0.0, 0.3)
    outlier_ratio_range: tuple[float, float] = (0.0, 0.03)
    outlier_elevation_range: tuple[float, float] = (-1.5, 1.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("noise_mag_range", "sensor_x_range", "sensor_y_range", "sensor_height_range",
                     "sensor_fov_range", "clip_low_bounds", "clip_high_bounds", "missing_ratio_range",
                     "outlier_ratio_range", "outlier_elevation_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} is not ordered: {lo} > {hi}")
        for name in ("missing_ratio_range", "outlier_ratio_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi > 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("occlusion_prob", "clip_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.noise_mag_range[0] < 0 or self.crop_max_cells < 0:
            raise ValueError("noise magnitude and crop size must be non-negative")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentConfig":
        return cls(noise_mag_range=(0.0, 0.0), crop_max_cells=0, occlusion_prob=0.0, clip_prob=0.0,
                   missing_ratio_range=(0.0, 0.0), outlier_ratio_range=(0.0, 0.0), seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)


def _uniform(rng, bounds):
    lo, hi = bounds
    return lo if lo == hi else rng.uniform(lo, hi)


def shadow_mask(elev: np.ndarray, valid: np.ndarray, resolution: float, center_offset,
                sensor: tuple[float, float, float], fov: float, heading: float = 0.0) -> np.ndarray:
    """Cells visible from a point sensor over a 2.5-D grid.

    A cell is visible when it is inside the horizontal field of view and the
    sight line to its surface clears every valid cell in between.
    """
    rows, cols = elev.shape
    xs = center_offset[0] + (np.arange(rows) - (rows - 1) / 2) * resolution
    ys = center_offset[1] + (np.arange(cols) - (cols - 1) / 2) * resolution
    cx, cy = np.meshgrid(xs, ys, indexing="ij")
    sx, sy, sz = sensor
    dx, dy = cx - sx, cy - sy
    bearing = np.arctan2(dy, dx) - heading
    bearing = np.abs((bearing + np.pi) % (2 * np.pi) - np.pi)
    in_fov = bearing <= fov / 2

    dist = np.hypot(dx, dy)
    n_steps = int(np.ceil(dist.max() / (0.5 * resolution))) + 1
    frac = (np.arange(1, n_steps) / n_steps)[:, None, None]  # exclude both ends
    px = sx + frac * dx
    py = sy + frac * dy
    line_z = sz + frac * (elev - sz)
    pi = np.floor((px - center_offset[0]) / resolution + rows / 2).astype(np.int64)
    pj = np.floor((py - center_offset[1]) / resolution + cols / 2).astype(np.int64)
    inside = (pi >= 0) & (pi < rows) & (pj >= 0) & (pj < cols)
    pic, pjc = np.clip(pi, 0, rows - 1), np.clip(pj, 0, cols - 1)
    self_cell = (pic == np.arange(rows)[:, None]) & (pjc == np.arange(cols)[None, :])
    occ_z = np.where(valid[pic, pjc], elev[pic, pjc], -np.inf)
    blocked = inside & ~self_cell & (occ_z > line_z + 1e-9)
    return in_fov & ~blocked.any(axis=0)


def augment(label: LocalGrid, cfg: AugmentConfig, rng: np.random.Generator | None = None) -> LocalGrid:
    """Synthesize a degraded input grid from a clean label grid.

    Stages run in a fixed order: noise, border crop, occlusion, clipping,
    dropout, outliers.  The label is never modified.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    elev = label.elevations.copy()
    valid = label.valid.copy()
    rows, cols = elev.shape

    a = _uniform(rng, cfg.noise_mag_range)
    if a > 0:
        elev = elev + rng.uniform(-a, a, size=elev.shape)

    if cfg.crop_max_cells > 0:
        top, bot, left, right = rng.integers(0, cfg.crop_max_cells + 1, size=4)
        keep = np.zeros_like(valid)
        keep[top:rows - bot, left:cols - right] = True
        valid &= keep

    if cfg.occlusion_prob > 0 and rng.random() < cfg.occlusion_prob:
        rear = label.center_offset[0] - rows / 2 * label.resolution
        sensor = (rear + _uniform(rng, cfg.sensor_x_range),
                  label.center_offset[1] + _uniform(rng, cfg.sensor_y_range),
                  _uniform(rng, cfg.sensor_height_range))
        fov = _uniform(rng, cfg.sensor_fov_range)
        heading = np.arctan2(label.center_offset[1] - sensor[1], label.center_offset[0] - sensor[0])
        valid &= shadow_mask(label.elevations, label.valid, label.resolution, label.center_offset,
                             sensor, fov, heading)

    if cfg.clip_prob > 0 and rng.random() < cfg.clip_prob:
        lo, hi = _uniform(rng, cfg.clip_low_bounds), _uniform(rng, cfg.clip_high_bounds)
        elev = np.clip(elev, lo, hi)

    r = _uniform(rng, cfg.missing_ratio_range)
    if r > 0:
        valid &= rng.random(elev.shape) >= r

    o = _uniform(rng, cfg.outlier_ratio_range)
    if o > 0:
        hit = rng.random(elev.shape) < o
        elev = np.where(hit, rng.uniform(*cfg.outlier_elevation_range, size=elev.shape), elev)
        valid |= hit

    elev = np.where(valid, elev, label.sentinel)
    return LocalGrid(elev, valid, label.resolution, label.center_offset, label.sentinel)


def corrupt_cloud(cloud: PointCloud, missing: float, artifact: float, rng: np.random.Generator,
                  camera: CameraModel | None = None) -> PointCloud:
    """Drop ``floor(missing*n)`` points, then replace ``floor(artifact*n)`` survivors with random points.

    Artifacts are drawn inside the camera frustum when a camera is given,
    otherwise inside the cloud's bounding box.
    """
    if not (0 <= missing <= 1 and 0 <= artifact <= 1):
        raise ValueError("fractions must lie in [0, 1]")
    pts = cloud.points
    n = len(pts)
    n_drop = int(np.floor(missing * n))
    if n_drop:
        keep = np.sort(rng.choice(n, size=n - n_drop, replace=False))
        pts = pts[keep]
    else:
        pts = pts.copy()
    n_art = min(int(np.floor(artifact * n)), len(pts))
    if n_art:
        idx = rng.choice(len(pts), size=n_art, replace=False)
        pts[idx] = _random_points(rng, n_art, camera, cloud.points)
    return PointCloud(pts, cloud.frame)


def _random_points(rng, k, camera, ref):
    if camera is None:
        lo, hi = ref.min(axis=0), ref.max(axis=0)
        return rng.uniform(lo, hi, size=(k, 3))
    # uniform over the pyramid volume: depth ~ r^3 cube-root law
    depth = camera.max_range * rng.random(k) ** (1.0 / 3.0)
    u = rng.uniform(-1, 1, k) * np.tan(camera.horizontal_fov / 2)
    v = rng.uniform(-1, 1, k) * np.tan(camera.vertical_fov / 2)
    local = np.stack([depth, u * depth, v * depth], axis=1)
    local *= np.minimum(1.0, camera.max_range / np.linalg.norm(local, axis=1))[:, None]
    return camera.pose.apply(local)
