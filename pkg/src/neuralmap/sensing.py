"""Depth sensing on heightfields and projection into robot-centric local grids."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose
from .terrain import Heightfield, RobotProfile

SENTINEL = -10.0


@dataclass(frozen=True)
class GridConfig:
    """Shape and placement of a robot-centric grid.

    Rows run along the base x axis (forward), columns along y.  Row 0 is the
    rearmost row and column 0 the rightmost (most negative y) column.
    """

    rows: int
    cols: int
    resolution: float
    center_offset: tuple[float, float] = (0.0, 0.0)
    sentinel: float = SENTINEL

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Base-frame (x, y) of every cell center, each shaped (rows, cols)."""
        xs = self.center_offset[0] + (np.arange(self.rows) - (self.rows - 1) / 2) * self.resolution
        ys = self.center_offset[1] + (np.arange(self.cols) - (self.cols - 1) / 2) * self.resolution
        return np.broadcast_to(xs[:, None], (self.rows, self.cols)), np.broadcast_to(ys[None, :], (self.rows, self.cols))

    def bin(self, x, y):
        i = np.floor((np.asarray(x) - self.center_offset[0]) / self.resolution + self.rows / 2).astype(np.int64)
        j = np.floor((np.asarray(y) - self.center_offset[1]) / self.resolution + self.cols / 2).astype(np.int64)
        return i, j


LOCAL_GRIDS = {
    RobotProfile.QUADRUPED_A: GridConfig(51, 31, 0.04, (1.0, 0.0)),
    RobotProfile.BIPED_T: GridConfig(31, 31, 0.04, (0.6, 0.0)),
}

# Controller map footprints queried from the global map.
QUERY_GRIDS = {
    RobotProfile.QUADRUPED_A: GridConfig(36, 14, 0.08, (0.6, 0.0)),
    RobotProfile.BIPED_T: GridConfig(18, 13, 0.08, (0.32, 0.0)),
}

STANDING_HEIGHT = {RobotProfile.QUADRUPED_A: 0.6, RobotProfile.BIPED_T: 0.45}


@dataclass
class LocalGrid:
    elevations: np.ndarray
    valid: np.ndarray
    resolution: float
    center_offset: tuple[float, float] = (0.0, 0.0)
    sentinel: float = SENTINEL

    def __post_init__(self):
        self.elevations = np.asarray(self.elevations, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.elevations.shape != self.valid.shape:
            raise ValueError("elevation and validity shapes differ")
        self.center_offset = (float(self.center_offset[0]), float(self.center_offset[1]))

    @property
    def shape(self) -> tuple[int, int]:
        return self.elevations.shape

    @property
    def config(self) -> GridConfig:
        return GridConfig(*self.shape, self.resolution, self.center_offset, self.sentinel)

    @classmethod
    def empty(cls, config: GridConfig) -> "LocalGrid":
        shape = (config.rows, config.cols)
        return cls(np.full(shape, config.sentinel), np.zeros(shape, dtype=bool),
                   config.resolution, config.center_offset, config.sentinel)

    def copy(self) -> "LocalGrid":
        return replace(self, elevations=self.elevations.copy(), valid=self.valid.copy())

    def filled(self) -> np.ndarray:
        """Elevations with the sentinel enforced on invalid cells."""
        return np.where(self.valid, self.elevations, self.sentinel)


@dataclass
class PointCloud:
    points: np.ndarray
    frame: str = "world"  # world | base

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.frame not in ("world", "base"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return len(self.points)

    @staticmethod
    def concat(clouds: list["PointCloud"]) -> "PointCloud":
        frames = {c.frame for c in clouds}
        if len(frames) > 1:
            raise ValueError("cannot merge clouds in different frames")
        pts = np.concatenate([c.points for c in clouds]) if clouds else np.zeros((0, 3))
        return PointCloud(pts, frames.pop() if frames else "world")


@dataclass(frozen=True)
class CameraModel:
    horizontal_fov: float
    vertical_fov: float
    cols: int
    rows: int
    max_range: float
    pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        if not (0 < self.horizontal_fov < np.pi and 0 < self.vertical_fov < np.pi):
            raise ValueError("fields of view must lie in (0, pi)")
        if self.cols < 1 or self.rows < 1:
            raise ValueError("camera needs at least one pixel")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the camera frame (x forward, y left, z up), row-major."""
        u = np.linspace(1.0, -1.0, self.cols) if self.cols > 1 else np.zeros(1)
        v = np.linspace(1.0, -1.0, self.rows) if self.rows > 1 else np.zeros(1)
        vv, uu = np.meshgrid(v, u, indexing="ij")
        d = np.stack([np.ones_like(uu), uu * np.tan(self.horizontal_fov / 2), vv * np.tan(self.vertical_fov / 2)], axis=-1)
        d = d.reshape(-1, 3)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def mounted(self, base_pose: Pose) -> "CameraModel":
        """This camera with its pose reinterpreted as base<-camera, moved to the world."""
        return replace(self, pose=base_pose.compose(self.pose))


def default_rig(profile=RobotProfile.QUADRUPED_A, n_cameras: int = 2, cols: int = 64, rows: int = 40):
    """Front-facing depth cameras with mounts relative to the base."""
    profile = RobotProfile.parse(profile)
    hfov, vfov = np.radians(87.0), np.radians(58.0)
    if profile is RobotProfile.QUADRUPED_A:
        mounts = [Pose.from_xyz_rpy(0.35, 0.0, 0.05, pitch=np.radians(30.0)),
                  Pose.from_xyz_rpy(0.40, 0.0, -0.05, pitch=np.radians(60.0))]
    else:
        mounts = [Pose.from_xyz_rpy(0.10, 0.0, 0.10, pitch=np.radians(45.0))]
    if n_cameras < 1 or n_cameras > len(mounts):
        raise ValueError(f"{profile.value} supports 1..{len(mounts)} cameras")
    return [CameraModel(hfov, vfov, cols, rows, 3.0, m) for m in mounts[:n_cameras]]


def _surface_layers(field: Heightfield):
    ground = np.where(field.void_mask, -np.inf, field.elevations)
    if field.has_overlay:
        bottom = np.where(np.isnan(field.box_bottom), np.inf, field.box_bottom)
        top = np.where(np.isnan(field.box_top), -np.inf, field.box_top)
    else:
        bottom = top = None
    return ground, bottom, top


def raycast_many(field: Heightfield, origins, directions, max_range=np.inf):
    """Cast rays against the 2.5-D surface by 2-D DDA over grid cells.

    Each cell is a column of ground up to its elevation, plus an optional
    floating box.  Returns ``(points, hit)`` with NaN rows for misses.
    """
    O = np.atleast_2d(np.asarray(origins, dtype=float))
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    O, D = np.broadcast_arrays(O, D)
    n = len(O)
    res = field.resolution
    nx, ny = field.length_cells, field.width_cells
    ground, bottom, top = _surface_layers(field)

    t_lo = np.zeros(n)
    t_hi = np.broadcast_to(np.asarray(max_range, dtype=float), (n,)).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        for axis, size in ((0, nx * res), (1, ny * res)):
            o, d = O[:, axis], D[:, axis]
            t1, t2 = (0.0 - o) / d, (size - o) / d
            par = d == 0
            inside = (o >= 0) & (o <= size)
            tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
            tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
            t_lo = np.maximum(t_lo, tmin)
            t_hi = np.minimum(t_hi, tmax)

    t_hit = np.full(n, np.inf)
    act = np.flatnonzero(t_lo <= t_hi)
    if len(act):
        o, d = O[act], D[act]
        t = t_lo[act]
        p = o + d * t[:, None]
        ix = np.clip(np.floor(p[:, 0] / res).astype(np.int64), 0, nx - 1)
        iy = np.clip(np.floor(p[:, 1] / res).astype(np.int64), 0, ny - 1)
        sx, sy = np.sign(d[:, 0]).astype(np.int64), np.sign(d[:, 1]).astype(np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_x, inv_y = 1.0 / d[:, 0], 1.0 / d[:, 1]
            tmx = np.where(sx > 0, ((ix + 1) * res - o[:, 0]) * inv_x, np.where(sx < 0, (ix * res - o[:, 0]) * inv_x, np.inf))
            tmy = np.where(sy > 0, ((iy + 1) * res - o[:, 1]) * inv_y, np.where(sy < 0, (iy * res - o[:, 1]) * inv_y, np.inf))
            tdx = np.where(sx != 0, res * np.abs(inv_x), np.inf)
            tdy = np.where(sy != 0, res * np.abs(inv_y), np.inf)
        th = t_hi[act]
        while len(act):
            t1 = np.minimum(np.minimum(tmx, tmy), th)
            t1 = np.maximum(t1, t)
            oz, dz = o[:, 2], d[:, 2]
            z0 = oz + dz * t
            best = np.full(len(act), np.inf)
            with np.errstate(divide="ignore", invalid="ignore"):
                e = ground[ix, iy]
                cand = np.where(z0 <= e, t, np.where(dz < 0, (e - oz) / dz, np.inf))
                best = np.minimum(best, np.where(cand <= t1, cand, np.inf))
                if top is not None:
                    b, tp = bottom[ix, iy], top[ix, iy]
                    inside = (z0 >= b) & (z0 <= tp)
                    cand = np.where(inside, t, np.where((z0 > tp) & (dz < 0), (tp - oz) / dz,
                                                        np.where((z0 < b) & (dz > 0), (b - oz) / dz, np.inf)))
                    best = np.minimum(best, np.where(cand <= t1, cand, np.inf))
            found = np.isfinite(best)
            t_hit[act[found]] = best[found]
            step_x = tmx <= tmy
            nix = np.where(step_x, ix + sx, ix)
            niy = np.where(step_x, iy, iy + sy)
            keep = ~found & (t1 < th) & (nix >= 0) & (nix < nx) & (niy >= 0) & (niy < ny)
            t = t1
            tmx = np.where(step_x, tmx + tdx, tmx)
            tmy = np.where(step_x, tmy, tmy + tdy)
            sel = np.flatnonzero(keep)
            act, o, d, t, th = act[sel], o[sel], d[sel], t[sel], th[sel]
            ix, iy, sx, sy = nix[sel], niy[sel], sx[sel], sy[sel]
            tmx, tmy, tdx, tdy = tmx[sel], tmy[sel], tdx[sel], tdy[sel]

    hit = np.isfinite(t_hit)
    pts = np.full((n, 3), np.nan)
    pts[hit] = O[hit] + D[hit] * t_hit[hit, None]
    return pts, hit


def raycast(field: Heightfield, origin, direction, max_range: float = np.inf):
    """Nearest intersection of one ray with the surface, or None."""
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    pts, hit = raycast_many(field, np.asarray(origin, dtype=float)[None], direction[None], max_range)
    return tuple(pts[0]) if hit[0] else None


def render_depth(field: Heightfield, camera: CameraModel) -> PointCloud:
    """One ray per pixel through the pinhole frustum; world-frame hits only."""
    dirs = camera.ray_directions() @ camera.pose.rotation.T
    origins = np.broadcast_to(camera.pose.position, dirs.shape)
    pts, hit = raycast_many(field, origins, dirs, camera.max_range)
    return PointCloud(pts[hit], "world")


def to_base(points: np.ndarray, base_pose: Pose) -> np.ndarray:
    """World points into the gravity-aligned, yaw-rotated base frame."""
    c, s = np.cos(base_pose.yaw), np.sin(base_pose.yaw)
    rel = np.asarray(points, dtype=float) - base_pose.position
    out = np.empty_like(rel)
    out[:, 0] = c * rel[:, 0] + s * rel[:, 1]
    out[:, 1] = -s * rel[:, 0] + c * rel[:, 1]
    out[:, 2] = rel[:, 2]
    return out


def from_base(points: np.ndarray, base_pose: Pose) -> np.ndarray:
    c, s = np.cos(base_pose.yaw), np.sin(base_pose.yaw)
    p = np.asarray(points, dtype=float)
    out = np.empty(p.shape)
    out[..., 0] = c * p[..., 0] - s * p[..., 1] + base_pose.position[0]
    out[..., 1] = s * p[..., 0] + c * p[..., 1] + base_pose.position[1]
    out[..., 2] = p[..., 2] + base_pose.position[2]
    return out


def project_to_grid(cloud: PointCloud, base_pose: Pose, config: GridConfig) -> LocalGrid:
    """Bin points into the local grid keeping the per-cell maximum z."""
    pts = cloud.points if cloud.frame == "base" else to_base(cloud.points, base_pose)
    i, j = config.bin(pts[:, 0], pts[:, 1])
    inside = (i >= 0) & (i < config.rows) & (j >= 0) & (j < config.cols)
    flat = np.full(config.rows * config.cols, -np.inf)
    np.maximum.at(flat, i[inside] * config.cols + j[inside], pts[inside, 2])
    flat = flat.reshape(config.rows, config.cols)
    valid = np.isfinite(flat)
    # keep genuine observations distinguishable from the sentinel
    elev = np.where(valid, np.maximum(flat, np.nextafter(config.sentinel, np.inf)), config.sentinel)
    return LocalGrid(elev, valid, config.resolution, config.center_offset, config.sentinel)


def label_grid(field: Heightfield, base_pose: Pose, config: GridConfig) -> LocalGrid:
    """Exact top-surface elevation under every cell center by vertical raycast."""
    bx, by = config.cell_centers()
    xy = np.stack([bx.ravel(), by.ravel(), np.zeros(bx.size)], axis=1)
    world = from_base(xy, base_pose)
    top = np.nanmax(field.top_surface()) if np.any(~field.void_mask) or field.has_overlay else 0.0
    start = float(max(top, base_pose.position[2])) + 1.0
    world[:, 2] = start
    pts, hit = raycast_many(field, world, np.array([0.0, 0.0, -1.0]))
    elev = np.full(bx.size, config.sentinel)
    elev[hit] = pts[hit, 2] - base_pose.position[2]
    return LocalGrid(elev.reshape(bx.shape), hit.reshape(bx.shape), config.resolution,
                     config.center_offset, config.sentinel)


def sample_scan(field: Heightfield, base_pose: Pose, cameras, config: GridConfig):
    """Return ``(input, label)``: the rendered, occluded grid and the exact surface grid.

    ``cameras`` is a CameraModel or a list of them, posed in the world frame.
    """
    if isinstance(cameras, CameraModel):
        cameras = [cameras]
    cloud = PointCloud.concat([render_depth(field, cam) for cam in cameras])
    return project_to_grid(cloud, base_pose, config), label_grid(field, base_pose, config)
