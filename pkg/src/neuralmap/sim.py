"""Closed-loop mapping along scripted trajectories.

Each frame: place the base on the terrain, render the depth cameras,
optionally corrupt the clouds, project into the local grid, predict,
fuse into the global map, and query the controller grid.  The queried map
is scored against the exact surface with the L0.5 metric.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .augment import corrupt_cloud
from .fusion import FusionConfig, GlobalMap, fuse_frame, footprint_cells, init_map, query
from .geometry import Pose, wrap_angle
from .predictor.baseline import baseline_predict
from .predictor.loss import ElevationEstimate, ShapeMismatch, l05
from .predictor.net import GatedNet, predict
from .sensing import (LOCAL_GRIDS, QUERY_GRIDS, STANDING_HEIGHT, PointCloud, default_rig, label_grid,
                      project_to_grid, render_depth)
from .terrain import Heightfield, RobotProfile, TerrainSpec, generate


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    profile: str = "QuadrupedA"
    family: str = "Flat"  # any terrain family, or Flat
    difficulty: float = 0.5
    terrain_seed: int = 0
    floor: str = "physical"
    waypoints: str = "1,4,0;7,4,0"  # "x,y,yaw;..." world frame
    speed: float = 1.0  # m/s
    turn_rate: float = 1.5  # rad/s, turning in place between segments
    frame_dt: float = 0.1  # s between mapping frames
    cameras: int = 0  # 0 uses every camera of the profile's rig
    camera_cols: int = 64
    camera_rows: int = 40
    predictor: str = "baseline"  # baseline | trained
    weights: str = ""
    corrupt: bool = False
    missing_fraction: float = 0.15
    artifact_fraction: float = 0.02
    drift: float = 0.0  # m; uniform query drift bound per axis
    fusion_seed: int = 0
    seed: int = 0  # corruption and drift
    init_variance: float = 4.0
    map_extent: int = 200

    def __post_init__(self):
        try:
            RobotProfile.parse(self.profile)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.predictor not in ("baseline", "trained"):
            raise ConfigError("predictor must be 'baseline' or 'trained'")
        if self.predictor == "trained" and not self.weights:
            raise ConfigError("the trained predictor needs a weights file")
        if self.speed <= 0 or self.turn_rate <= 0 or self.frame_dt <= 0:
            raise ConfigError("speed, turn_rate and frame_dt must be positive")
        if len(self.path()) < 2:
            raise ConfigError("a trajectory needs at least two waypoints")

    def path(self) -> list[tuple[float, float, float]]:
        try:
            pts = [tuple(float(v) for v in wp.split(",")) for wp in self.waypoints.split(";") if wp.strip()]
        except ValueError:
            raise ConfigError(f"bad waypoints {self.waypoints!r}") from None
        if any(len(p) != 3 for p in pts):
            raise ConfigError("waypoints are x,y,yaw triples")
        return pts

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        """Build from string values (config file), coercing to the field types."""
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in kinds:
                raise ConfigError(f"unknown run setting {key!r}")
            out[key] = _coerce(raw, kinds[key], key)
        return cls(**out)

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(raw, kind, key):
    if not isinstance(raw, str):
        return raw
    try:
        if kind in ("bool", bool):
            if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError
            return raw.lower() in ("1", "true", "yes")
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw


def flat_field(size=(8.0, 8.0), resolution: float = 0.04, height: float = 0.0) -> Heightfield:
    n = (int(round(size[0] / resolution)), int(round(size[1] / resolution)))
    return Heightfield(np.full(n, height), resolution, params={"family": "Flat"})


def build_field(cfg: RunConfig) -> Heightfield:
    if cfg.family.lower() == "flat":
        return flat_field()
    try:
        spec = TerrainSpec(cfg.family, cfg.difficulty, cfg.terrain_seed, cfg.profile, floor=cfg.floor)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return generate(spec)


def trajectory(waypoints, speed: float, turn_rate: float, dt: float) -> list[tuple[float, float, float]]:
    """Planar poses ``(x, y, yaw)`` every ``dt`` seconds.

    Between waypoints the base first turns in place to the next waypoint's
    yaw, then translates at constant speed holding that yaw.
    """
    x, y, yaw = waypoints[0]
    out = [(x, y, float(wrap_angle(yaw)))]
    for tx, ty, tyaw in waypoints[1:]:
        turn = float(wrap_angle(tyaw - yaw))
        steps = int(math.ceil(abs(turn) / (turn_rate * dt)))
        for k in range(1, steps + 1):
            out.append((x, y, float(wrap_angle(yaw + turn * k / steps))))
        yaw = yaw + turn
        dist = math.hypot(tx - x, ty - y)
        steps = int(math.ceil(dist / (speed * dt)))
        for k in range(1, steps + 1):
            f = k / steps
            out.append((x + f * (tx - x), y + f * (ty - y), float(wrap_angle(yaw))))
        x, y = tx, ty
    return out


def base_poses(field: Heightfield, planar, standing_height: float) -> list[Pose]:
    poses, ground = [], 0.0
    for x, y, yaw in planar:
        z = field.surface_at(np.array([x]), np.array([y]))[0]
        if np.isfinite(z):
            ground = float(z)
        poses.append(Pose.from_xyz_rpy(x, y, ground + standing_height, yaw=yaw))
    return poses


@dataclass
class FrameRecord:
    frame: int
    covered: int
    valid: int
    won: int
    rejected: int
    l05: float
    observed: int  # map cells below the initial variance
    points: int
    fuse_seconds: float


@dataclass
class SimResult:
    config: RunConfig
    field: Heightfield
    poses: list[Pose]
    gmap: GlobalMap
    frames: list[FrameRecord]
    footprints: list[np.ndarray] = field(default_factory=list)
    snapshots: dict[int, GlobalMap] = field(default_factory=dict)

    def stats_rows(self):
        return [(r.frame, r.valid, r.won, r.rejected) for r in self.frames]

    def metric_rows(self):
        return [(r.frame, repr(r.l05), r.observed, r.points) for r in self.frames]


def load_predictor(cfg: RunConfig):
    if cfg.predictor == "baseline":
        return baseline_predict
    from .io import load

    net = load(cfg.weights)
    if not isinstance(net, GatedNet):
        raise ConfigError(f"{cfg.weights} is not a weights file")
    return lambda grid: predict(net, grid)


def run(cfg: RunConfig, predictor=None, keep_footprints: bool = False, snapshot_frames=()) -> SimResult:
    """Run the mapping loop; raises ShapeMismatch if the predictor grid differs."""
    profile = RobotProfile.parse(cfg.profile)
    field_ = build_field(cfg)
    local_cfg, query_cfg = LOCAL_GRIDS[profile], QUERY_GRIDS[profile]
    standing = STANDING_HEIGHT[profile]
    try:
        n_cams = cfg.cameras or (2 if profile is RobotProfile.QUADRUPED_A else 1)
        rig = default_rig(profile, n_cams, cfg.camera_cols, cfg.camera_rows)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    predictor = predictor or load_predictor(cfg)
    poses = base_poses(field_, trajectory(cfg.path(), cfg.speed, cfg.turn_rate, cfg.frame_dt), standing)
    fcfg = FusionConfig(init_variance=cfg.init_variance, seed=cfg.fusion_seed, extent=cfg.map_extent,
                        resolution=local_cfg.resolution)
    gmap = init_map(standing, fcfg, poses[0].position)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    frames, footprints, snaps = [], [], {}
    for k, pose in enumerate(poses):
        cams = [c.mounted(pose) for c in rig]
        clouds = [render_depth(field_, c) for c in cams]
        if cfg.corrupt:
            clouds = [corrupt_cloud(cl, cfg.missing_fraction, cfg.artifact_fraction, rng, cam)
                      for cl, cam in zip(clouds, cams)]
        cloud = PointCloud.concat(clouds)
        grid = project_to_grid(cloud, pose, local_cfg)
        est = predictor(grid)
        if est.shape != (local_cfg.rows, local_cfg.cols):
            raise ShapeMismatch(f"predictor returned {est.shape}, grid is {(local_cfg.rows, local_cfg.cols)}")
        drift = rng.uniform(-cfg.drift, cfg.drift, size=2) if cfg.drift > 0 else None
        if keep_footprints:
            footprints.append(footprint_cells(gmap, pose, local_cfg))
        t0 = time.perf_counter()
        gmap, st = fuse_frame(gmap, est, pose, local_cfg, fcfg, inplace=True)
        q = query(gmap, pose, query_cfg, drift)
        elapsed = time.perf_counter() - t0
        truth = label_grid(field_, pose, query_cfg)
        score = l05(ElevationEstimate(q.z, np.log(q.u)), truth)
        observed = int(np.count_nonzero(gmap.variance < gmap.init_variance))
        frames.append(FrameRecord(k, st.covered, st.valid, st.won, st.rejected, score, observed, len(cloud),
                                  elapsed))
        if k in snapshot_frames:
            snaps[k] = gmap.copy()
    return SimResult(cfg, field_, poses, gmap, frames, footprints, snaps)
