"""Synthetic (input, label) grid pairs sampled from random terrains."""
from __future__ import annotations

import math

import numpy as np

from .augment import AugmentConfig, augment
from .geometry import Pose
from .predictor.train import Dataset
from .sensing import LOCAL_GRIDS, STANDING_HEIGHT, GridConfig, label_grid
from .terrain import DEFAULT_PROPORTIONS, Family, RobotProfile, generate, mix

# Locomotion terrains plus the three extra mapping mesh families, equal thirds.
MAPPING_PROPORTIONS: dict[Family, float] = {
    **{fam: 0.5 * frac for fam, frac in DEFAULT_PROPORTIONS.items()},
    Family.STACKED_BOXES: 0.5 / 3,
    Family.RANDOM_HEIGHTFIELD: 0.5 / 3,
    Family.FLOATING_BOXES: 0.5 / 3,
}


def _renormalize(props: dict) -> dict:
    total = sum(props.values())
    return {k: v / total for k, v in props.items()}


def random_base_pose(field, rng, standing_height: float, margin: float = 0.5) -> Pose:
    sx, sy = field.size
    for _ in range(100):
        x, y = rng.uniform(margin, sx - margin), rng.uniform(margin, sy - margin)
        ground = field.surface_at(np.array([x]), np.array([y]))[0]
        if np.isfinite(ground):
            break
    else:
        ground = 0.0
    z = ground + standing_height + rng.uniform(-0.1, 0.1)
    return Pose.from_xyz_rpy(x, y, z, yaw=rng.uniform(-math.pi, math.pi))


def synthesize(n: int, proportions=None, aug: AugmentConfig | None = None, seed: int = 0,
               profile=RobotProfile.QUADRUPED_A, grid: GridConfig | None = None,
               poses_per_terrain: int = 25, difficulty: float | None = None) -> Dataset:
    """Draw ``n`` samples: label by vertical raycast, input by augmentation of the label."""
    if n <= 0:
        raise ValueError("dataset size must be positive")
    profile = RobotProfile.parse(profile)
    grid = grid or LOCAL_GRIDS[profile]
    aug = aug or AugmentConfig(seed=seed)
    props = _renormalize(dict(proportions or MAPPING_PROPORTIONS))
    n_terrains = max(1, math.ceil(n / poses_per_terrain))
    specs = mix(props, n_terrains, seed, difficulty=difficulty, robot_profile=profile)
    order = np.random.default_rng(np.random.SeedSequence([seed, 2])).permutation(len(specs))
    specs = [specs[k] for k in order]
    shape = (n, grid.rows, grid.cols)
    out = Dataset(np.empty(shape), np.empty(shape, dtype=bool), np.empty(shape), np.empty(shape, dtype=bool),
                  grid.resolution)
    field = None
    for i in range(n):
        t = i // poses_per_terrain
        if i % poses_per_terrain == 0:
            field = generate(specs[t])
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3, i]))
        pose = random_base_pose(field, rng, STANDING_HEIGHT[profile])
        label = label_grid(field, pose, grid)
        inp = augment(label, aug, np.random.default_rng(np.random.SeedSequence([aug.seed, 4, i])))
        out.input_elev[i], out.input_valid[i] = inp.elevations, inp.valid
        out.label_elev[i], out.label_valid[i] = label.elevations, label.valid
    out.meta = {
        "count": n,
        "seed": seed,
        "profile": profile.value,
        "grid": {"rows": grid.rows, "cols": grid.cols, "resolution": grid.resolution,
                 "center_offset": list(grid.center_offset), "sentinel": grid.sentinel},
        "proportions": {Family.parse(k).value: v for k, v in props.items()},
        "augment": aug.to_dict(),
        "poses_per_terrain": poses_per_terrain,
    }
    return out
