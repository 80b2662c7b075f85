"""Probabilistic winner-take-all fusion of per-frame estimates into a global map.

Map layers are indexed ``[iy, ix]``: rows run along world y, columns along
world x, and cell ``(0, 0)`` has its lower corner at ``origin``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .geometry import Pose
from .predictor.loss import ElevationEstimate
from .sensing import GridConfig


@dataclass(frozen=True)
class FusionConfig:
    init_variance: float = 4.0
    floor_factor: float = 0.5
    validity_factor: float = 1.5
    absolute_gate: float = 0.2  # m; the gate variance is its square
    seed: int = 0
    extent: int = 200  # cells per side
    resolution: float = 0.04

    def __post_init__(self):
        if not 0 < self.floor_factor < 1:
            raise ValueError("floor_factor must lie in (0, 1)")
        if not self.validity_factor > 1:
            raise ValueError("validity_factor must exceed 1")
        if not self.absolute_gate > 0:
            raise ValueError("absolute_gate must be positive")
        if not self.init_variance > 0 or self.extent < 2 or not self.resolution > 0:
            raise ValueError("bad map geometry or initial variance")

    @property
    def gate_variance(self) -> float:
        return self.absolute_gate**2


@dataclass
class GlobalMap:
    elevation: np.ndarray
    variance: np.ndarray
    origin: tuple[float, float]
    resolution: float
    ground_height: float
    standing_height: float
    init_variance: float
    frame: int = 0

    @property
    def extent(self) -> int:
        return self.elevation.shape[0]

    @property
    def center(self) -> tuple[float, float]:
        half = self.extent * self.resolution / 2
        return self.origin[0] + half, self.origin[1] + half

    def copy(self) -> "GlobalMap":
        return replace(self, elevation=self.elevation.copy(), variance=self.variance.copy())

    def cell_of(self, x, y):
        ix = np.floor((np.asarray(x) - self.origin[0]) / self.resolution).astype(np.int64)
        iy = np.floor((np.asarray(y) - self.origin[1]) / self.resolution).astype(np.int64)
        return ix, iy

    def world_cell_offset(self) -> tuple[int, int]:
        return int(round(self.origin[0] / self.resolution)), int(round(self.origin[1] / self.resolution))


@dataclass
class FrameStats:
    frame: int
    covered: int
    valid: int
    won: int
    rejected: int
    recentered: bool = False


@dataclass
class QueryResult:
    points: np.ndarray  # (rows, cols, 4): base-frame x, y, elevation z, uncertainty u
    meta: dict = field(default_factory=lambda: {"uncertainty": "variance", "frame": "base (yaw-aligned)"})

    @property
    def z(self) -> np.ndarray:
        return self.points[..., 2]

    @property
    def u(self) -> np.ndarray:
        return self.points[..., 3]


def _snap(v: float, res: float) -> float:
    return float(np.floor(v / res + 0.5) * res)


def init_map(standing_height: float, cfg: FusionConfig = FusionConfig(), base_position=None) -> GlobalMap:
    """Flat ground at the standing pose with a uniformly large variance."""
    if base_position is None:
        base_position = (0.0, 0.0, standing_height)
    bx, by, bz = (float(v) for v in base_position)
    half = cfg.extent * cfg.resolution / 2
    origin = (_snap(bx - half, cfg.resolution), _snap(by - half, cfg.resolution))
    ground = bz - standing_height
    shape = (cfg.extent, cfg.extent)
    return GlobalMap(np.full(shape, ground), np.full(shape, float(cfg.init_variance)), origin,
                     cfg.resolution, ground, float(standing_height), float(cfg.init_variance))


def effective_variance(sigma2_t, sigma2_prior, cfg: FusionConfig = FusionConfig()):
    """Measurement variance floored at a fraction of the prior."""
    return np.maximum(sigma2_t, cfg.floor_factor * np.asarray(sigma2_prior))


def _fuse(h_t, s_t, h_p, s_p, xi, cfg):
    s_eff = effective_variance(s_t, s_p, cfg)
    valid = (s_eff < cfg.validity_factor * s_p) | (s_eff < cfg.gate_variance)
    p_win = s_p / (s_eff + s_p)  # relative precision of the measurement
    won = valid & (xi < p_win)
    return np.where(won, h_t, h_p), np.where(won, s_eff, s_p), valid, won


def win_probability(sigma2_t, sigma2_prior, cfg: FusionConfig = FusionConfig()):
    s_eff = effective_variance(sigma2_t, sigma2_prior, cfg)
    s_p = np.asarray(sigma2_prior)
    return s_p / (s_eff + s_p)


def fuse_cell(h_t, sigma2_t, h_prior, sigma2_prior, xi, cfg: FusionConfig = FusionConfig()):
    """Fuse one measurement into one cell (broadcasts over arrays).

    Returns ``(h_new, sigma2_new, updated)``; ``updated`` is true when the
    measurement took over the cell.
    """
    h, s, _, won = _fuse(h_t, sigma2_t, h_prior, sigma2_prior, xi, cfg)
    if np.ndim(h) == 0:
        return float(h), float(s), bool(won)
    return h, s, won


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


_MASK64 = (1 << 64) - 1


def _mix64_int(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _mix64(z):
    z = np.asarray(z, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, frame: int, cell_x, cell_y) -> np.ndarray:
    """Uniform [0, 1) draws keyed on (seed, frame, world cell); order-independent."""
    base = np.uint64(_mix64_int(_mix64_int(int(seed) & _MASK64) ^ (int(frame) & _MASK64)))
    cx = np.asarray(cell_x).astype(np.int64).astype(np.uint64) & np.uint64(0xFFFFFFFF)
    cy = np.asarray(cell_y).astype(np.int64).astype(np.uint64) & np.uint64(0xFFFFFFFF)
    with np.errstate(over="ignore"):
        key = _mix64(base ^ ((cx << np.uint64(32)) | cy))
    return (key >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def shift(gmap: GlobalMap, dx_cells: int, dy_cells: int) -> GlobalMap:
    """Translate the map window by whole cells; entering cells are reinitialized."""
    n = gmap.extent
    elev = np.full((n, n), gmap.ground_height)
    var = np.full((n, n), gmap.init_variance)
    sx, sy = int(dx_cells), int(dy_cells)
    if abs(sx) < n and abs(sy) < n:
        dst_x = slice(max(0, -sx), n - max(0, sx))
        src_x = slice(max(0, sx), n - max(0, -sx))
        dst_y = slice(max(0, -sy), n - max(0, sy))
        src_y = slice(max(0, sy), n - max(0, -sy))
        elev[dst_y, dst_x] = gmap.elevation[src_y, src_x]
        var[dst_y, dst_x] = gmap.variance[src_y, src_x]
    origin = (gmap.origin[0] + sx * gmap.resolution, gmap.origin[1] + sy * gmap.resolution)
    return replace(gmap, elevation=elev, variance=var, origin=origin)


def recenter(gmap: GlobalMap, new_center) -> GlobalMap:
    """Move the map window so its center is the cell-snapped ``new_center``."""
    cx, cy = gmap.center
    dx = int(np.floor((new_center[0] - cx) / gmap.resolution + 0.5))
    dy = int(np.floor((new_center[1] - cy) / gmap.resolution + 0.5))
    if dx == 0 and dy == 0:
        return gmap.copy()
    return shift(gmap, dx, dy)


@lru_cache(maxsize=32)
def _grid_points(grid: GridConfig):
    bx, by = grid.cell_centers()
    return np.ascontiguousarray(bx.ravel()), np.ascontiguousarray(by.ravel())


def _to_world_xy(grid: GridConfig, base_pose: Pose, drift=None):
    bx, by = _grid_points(grid)
    yaw = base_pose.yaw
    c, s = np.cos(yaw), np.sin(yaw)
    ox, oy = base_pose.position[0], base_pose.position[1]
    if drift is not None:
        ox, oy = ox + drift[0], oy + drift[1]
    return c * bx - s * by + ox, s * bx + c * by + oy


def _inside(gmap: GlobalMap, ix, iy) -> np.ndarray:
    n = gmap.extent
    return (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n)


def _all_inside(gmap: GlobalMap, ix, iy) -> bool:
    n = gmap.extent
    return ix.min() >= 0 and iy.min() >= 0 and ix.max() < n and iy.max() < n


def fuse_frame(gmap: GlobalMap, est: ElevationEstimate, base_pose: Pose, grid: GridConfig,
               cfg: FusionConfig = FusionConfig(), inplace: bool = False):
    """Fuse one base-relative estimate into the map.

    Estimate cells land on the nearest world cell; when several land on the
    same cell the lowest-variance one is used.  The map is recentered on the
    base first if the footprint leaves the window.  Returns ``(map, stats)``.
    """
    if est.shape != (grid.rows, grid.cols):
        raise ValueError(f"estimate shape {est.shape} does not match grid {(grid.rows, grid.cols)}")
    out = gmap if inplace else gmap.copy()
    wx, wy = _to_world_xy(grid, base_pose)
    ix, iy = out.cell_of(wx, wy)
    recentered = False
    if not _all_inside(out, ix, iy):
        moved = recenter(out, base_pose.position[:2])
        if inplace:
            out.elevation, out.variance, out.origin = moved.elevation, moved.variance, moved.origin
        else:
            out = moved
        ix, iy = out.cell_of(wx, wy)
        recentered = True
    n = out.extent
    flat = iy * n + ix
    s_t = np.exp(est.log_variance.ravel())
    cand = np.arange(flat.size) if not recentered else np.flatnonzero(_inside(out, ix, iy))
    # one integer sort key: cell index in the high bits, the variance's float
    # bit pattern (order-preserving for positives) truncated into the low bits
    nbits = int(n * n - 1).bit_length()
    key = (flat[cand] << (63 - nbits)) | (s_t[cand].view(np.int64) >> nbits)
    order = cand[np.argsort(key)]
    fs = flat[order]
    first = np.empty(len(fs), dtype=bool)
    first[:1] = True
    np.not_equal(fs[1:], fs[:-1], out=first[1:])
    sel = order[first]
    cells = flat[sel]
    ox, oy = out.world_cell_offset()
    xi = counter_uniform(cfg.seed, out.frame, ix[sel] + ox, iy[sel] + oy)
    e_flat, v_flat = out.elevation.reshape(-1), out.variance.reshape(-1)
    h_t = est.mean.ravel()[sel] + base_pose.position[2]
    h_new, s_new, valid, won = _fuse(h_t, s_t[sel], e_flat[cells], v_flat[cells], xi, cfg)
    e_flat[cells] = h_new
    v_flat[cells] = s_new
    n_valid = int(valid.sum())
    stats = FrameStats(out.frame, len(cells), n_valid, int(won.sum()), len(cells) - n_valid, recentered)
    out.frame += 1
    return out, stats


def query(gmap: GlobalMap, base_pose: Pose, grid: GridConfig, drift=None) -> QueryResult:
    """Sample the map at the controller grid points (nearest cell), base-relative.

    ``drift`` offsets the query origin in world x, y.  Points outside the map
    window read the initialization values.
    """
    wx, wy = _to_world_xy(grid, base_pose, drift)
    ix, iy = gmap.cell_of(wx, wy)
    if _all_inside(gmap, ix, iy):
        elev = gmap.elevation[iy, ix]
        var = gmap.variance[iy, ix]
    else:
        inside = _inside(gmap, ix, iy)
        elev = np.full(ix.shape, gmap.ground_height)
        var = np.full(ix.shape, gmap.init_variance)
        elev[inside] = gmap.elevation[iy[inside], ix[inside]]
        var[inside] = gmap.variance[iy[inside], ix[inside]]
    bx, by = _grid_points(grid)
    pts = np.empty((bx.size, 4))
    pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3] = bx, by, elev - base_pose.position[2], var
    return QueryResult(pts.reshape(grid.rows, grid.cols, 4))


def footprint_cells(gmap: GlobalMap, base_pose: Pose, grid: GridConfig) -> np.ndarray:
    """World-indexed cells ``(N, 2)`` that an estimate at ``base_pose`` lands on."""
    wx, wy = _to_world_xy(grid, base_pose)
    ix, iy = gmap.cell_of(wx, wy)
    ox, oy = gmap.world_cell_offset()
    return np.unique(np.stack([ix + ox, iy + oy], axis=1), axis=0)
