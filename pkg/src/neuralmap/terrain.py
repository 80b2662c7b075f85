"""Procedural ground-truth terrains.

Every family is emitted as a 2.5-D heightfield with an optional void mask
and an optional overlay of floating boxes.  Cell ``(i, j)`` covers
``x in [i*res, (i+1)*res)`` and ``y in [j*res, (j+1)*res)``; the first array
axis runs along x (the terrain length, the traversal direction of the
cross-type families) and the second along y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping

import numpy as np
from scipy import ndimage


class NoValidGoal(ValueError):
    pass


class BadProportions(ValueError):
    pass


class Family(str, Enum):
    ROUGH = "Rough"
    STAIR_DOWN = "StairDown"
    STAIR_UP = "StairUp"
    BOXES = "Boxes"
    OBSTACLES = "Obstacles"
    CLIMB_UP = "ClimbUp"
    CLIMB_DOWN = "ClimbDown"
    CLIMB_CONSECUTIVE = "ClimbConsecutive"
    GAP = "Gap"
    PALLETS = "Pallets"
    STONES = "Stones"
    BEAM = "Beam"
    STACKED_BOXES = "StackedBoxes"
    RANDOM_HEIGHTFIELD = "RandomHeightfield"
    FLOATING_BOXES = "FloatingBoxes"

    @classmethod
    def parse(cls, name) -> "Family":
        if isinstance(name, cls):
            return name
        key = str(name).replace("_", "").replace("-", "").lower()
        for fam in cls:
            if fam.value.lower() == key:
                return fam
        raise ValueError(f"unknown terrain family {name!r}")


class RobotProfile(str, Enum):
    QUADRUPED_A = "QuadrupedA"
    BIPED_T = "BipedT"

    @classmethod
    def parse(cls, name) -> "RobotProfile":
        if isinstance(name, cls):
            return name
        key = str(name).replace("_", "").replace("-", "").lower()
        for prof in cls:
            if prof.value.lower() == key:
                return prof
        aliases = {"quadruped": cls.QUADRUPED_A, "biped": cls.BIPED_T}
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown robot profile {name!r}")


SPARSE_FAMILIES = frozenset({Family.GAP, Family.PALLETS, Family.STONES, Family.BEAM})

# Families whose goal lies at the far (+x) end rather than anywhere.
CROSS_FAMILIES = frozenset({
    Family.CLIMB_UP, Family.CLIMB_DOWN, Family.CLIMB_CONSECUTIVE,
    Family.GAP, Family.PALLETS, Family.BEAM,
})

# (start, end) of every curriculum-governed parameter per robot profile.
RAMPS: dict[Family, dict[str, dict[RobotProfile, tuple[float, float]]]] = {
    Family.ROUGH: {"noise_amplitude": {RobotProfile.QUADRUPED_A: (0.0, 0.2), RobotProfile.BIPED_T: (0.0, 0.15)}},
    Family.STAIR_DOWN: {"slope_deg": {RobotProfile.QUADRUPED_A: (5.0, 45.0), RobotProfile.BIPED_T: (5.0, 45.0)}},
    Family.STAIR_UP: {"slope_deg": {RobotProfile.QUADRUPED_A: (5.0, 45.0), RobotProfile.BIPED_T: (5.0, 45.0)}},
    Family.BOXES: {"max_box_height": {RobotProfile.QUADRUPED_A: (0.05, 0.4), RobotProfile.BIPED_T: (0.05, 0.3)}},
    Family.OBSTACLES: {"obstacle_density": {RobotProfile.QUADRUPED_A: (0.0, 0.5), RobotProfile.BIPED_T: (0.0, 0.5)}},
    Family.CLIMB_UP: {"pit_height": {RobotProfile.QUADRUPED_A: (0.1, 1.0), RobotProfile.BIPED_T: (0.1, 0.48)}},
    Family.CLIMB_DOWN: {"platform_height": {RobotProfile.QUADRUPED_A: (0.2, 1.0), RobotProfile.BIPED_T: (0.2, 0.88)}},
    Family.CLIMB_CONSECUTIVE: {
        "ring1_height": {RobotProfile.QUADRUPED_A: (0.05, 0.5), RobotProfile.BIPED_T: (0.05, 0.3)},
        "ring2_height": {RobotProfile.QUADRUPED_A: (0.05, 0.4), RobotProfile.BIPED_T: (0.05, 0.3)},
    },
    Family.GAP: {"gap_width": {RobotProfile.QUADRUPED_A: (0.1, 1.1), RobotProfile.BIPED_T: (0.1, 0.6)}},
    Family.PALLETS: {
        "beam_width": {RobotProfile.QUADRUPED_A: (0.4, 0.16), RobotProfile.BIPED_T: (0.4, 0.16)},
        "gap_width": {RobotProfile.QUADRUPED_A: (0.08, 0.35), RobotProfile.BIPED_T: (0.08, 0.2)},
        "height_difference": {RobotProfile.QUADRUPED_A: (0.0, 0.3), RobotProfile.BIPED_T: (0.0, 0.2)},
    },
    # Stone parameters are not published; these are configurable defaults.
    Family.STONES: {
        "stone_size": {RobotProfile.QUADRUPED_A: (0.8, 0.25), RobotProfile.BIPED_T: (0.8, 0.3)},
        "stone_gap": {RobotProfile.QUADRUPED_A: (0.05, 0.3), RobotProfile.BIPED_T: (0.05, 0.2)},
    },
    Family.BEAM: {"beam_width": {RobotProfile.QUADRUPED_A: (0.9, 0.18), RobotProfile.BIPED_T: (0.9, 0.18)}},
    Family.STACKED_BOXES: {"max_stack_height": {RobotProfile.QUADRUPED_A: (0.2, 1.5), RobotProfile.BIPED_T: (0.2, 1.5)}},
    Family.RANDOM_HEIGHTFIELD: {"amplitude": {RobotProfile.QUADRUPED_A: (0.05, 1.0), RobotProfile.BIPED_T: (0.05, 1.0)}},
    Family.FLOATING_BOXES: {"box_count": {RobotProfile.QUADRUPED_A: (4.0, 40.0), RobotProfile.BIPED_T: (4.0, 40.0)}},
}

# Tunable defaults.  Override per terrain through ``options``.
DEFAULT_OPTIONS: dict[str, float] = {
    "stair_step_height_min": 0.10,
    "stair_step_height_max": 0.20,
    "stair_width_min": 1.0,
    "stair_width_max": 3.0,
    "stair_wall_height_min": 0.0,
    "stair_wall_height_max": 0.5,
    "stair_wall_thickness": 0.2,
    "box_count": 30,
    "box_size_min": 0.3,
    "box_size_max": 1.0,
    "obstacle_size_min": 0.2,
    "obstacle_size_max": 0.8,
    "obstacle_height_min": 0.1,
    "obstacle_height_max": 0.4,
    "obstacle_max_slope_deg": 15.0,
    "stone_height_jitter": 0.05,
    "stone_position_jitter": 0.05,
    "floor_min": -1.5,
    "floor_max": -0.35,
    "platform_length": 1.5,
}

# Appendix-style default training mix (fractions sum to one).
DEFAULT_PROPORTIONS: dict[Family, float] = {
    Family.ROUGH: 0.05,
    Family.STAIR_DOWN: 0.05,
    Family.STAIR_UP: 0.05,
    Family.BOXES: 0.05,
    Family.OBSTACLES: 0.05,
    Family.CLIMB_UP: 0.20,
    Family.CLIMB_DOWN: 0.05,
    Family.CLIMB_CONSECUTIVE: 0.05,
    Family.GAP: 0.05,
    Family.PALLETS: 0.05,
    Family.STONES: 0.30,
    Family.BEAM: 0.05,
}


@dataclass(frozen=True)
class TerrainSpec:
    family: Family
    difficulty: float = 0.5
    seed: int = 0
    robot_profile: RobotProfile = RobotProfile.QUADRUPED_A
    size: tuple[float, float] = (8.0, 8.0)
    resolution: float = 0.04
    floor: str = "random"  # sparse families: random | physical | virtual | void
    options: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "robot_profile", RobotProfile.parse(self.robot_profile))
        d = float(self.difficulty)
        if not math.isfinite(d):
            raise ValueError("difficulty must be finite")
        object.__setattr__(self, "difficulty", min(1.0, max(0.0, d)))
        object.__setattr__(self, "seed", int(self.seed) % (1 << 64))
        if self.floor not in ("random", "physical", "virtual", "void"):
            raise ValueError(f"bad floor mode {self.floor!r}")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    def option(self, name: str) -> float:
        return float(self.options.get(name, DEFAULT_OPTIONS[name]))

    def ramp(self, name: str) -> float:
        lo, hi = RAMPS[self.family][name][self.robot_profile]
        return lo + (hi - lo) * self.difficulty


@dataclass
class Heightfield:
    elevations: np.ndarray
    resolution: float
    void_mask: np.ndarray | None = None
    floor_mask: np.ndarray | None = None
    box_bottom: np.ndarray | None = None
    box_top: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.elevations = np.asarray(self.elevations, dtype=float)
        if self.elevations.ndim != 2 or min(self.elevations.shape) < 2:
            raise ValueError("heightfield must be at least 2x2")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        shape = self.elevations.shape
        if self.void_mask is None:
            self.void_mask = np.zeros(shape, dtype=bool)
        if self.floor_mask is None:
            self.floor_mask = np.zeros(shape, dtype=bool)
        self.void_mask = np.asarray(self.void_mask, dtype=bool)
        self.floor_mask = np.asarray(self.floor_mask, dtype=bool)
        if (self.box_bottom is None) != (self.box_top is None):
            raise ValueError("box_bottom and box_top come together")
        if not np.all(np.isfinite(self.elevations[~self.void_mask])):
            raise ValueError("non-void elevations must be finite")

    @property
    def length_cells(self) -> int:
        return self.elevations.shape[0]

    @property
    def width_cells(self) -> int:
        return self.elevations.shape[1]

    @property
    def size(self) -> tuple[float, float]:
        return self.length_cells * self.resolution, self.width_cells * self.resolution

    @property
    def has_overlay(self) -> bool:
        return self.box_top is not None

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = (np.arange(self.length_cells) + 0.5) * self.resolution
        ys = (np.arange(self.width_cells) + 0.5) * self.resolution
        return xs, ys

    def top_surface(self) -> np.ndarray:
        """Highest surface per cell (ground or overlay box top); NaN where nothing exists."""
        top = np.where(self.void_mask, np.nan, self.elevations)
        if self.has_overlay:
            top = np.fmax(top, self.box_top)
        return top

    def cell_index(self, x, y):
        i = np.floor(np.asarray(x, dtype=float) / self.resolution).astype(int)
        j = np.floor(np.asarray(y, dtype=float) / self.resolution).astype(int)
        return i, j

    def surface_at(self, x, y) -> np.ndarray:
        """Top surface at world (x, y); NaN outside the grid or over void."""
        i, j = self.cell_index(x, y)
        inside = (i >= 0) & (i < self.length_cells) & (j >= 0) & (j < self.width_cells)
        top = self.top_surface()
        out = np.full(np.shape(i), np.nan)
        out[inside] = top[i[inside], j[inside]]
        return out

    def standable_mask(self) -> np.ndarray:
        return ~self.void_mask & ~self.floor_mask


def _rng(spec: TerrainSpec) -> np.random.Generator:
    fam = list(Family).index(spec.family)
    prof = list(RobotProfile).index(spec.robot_profile)
    return np.random.default_rng(np.random.SeedSequence([spec.seed, fam, prof]))


def _grid(spec: TerrainSpec):
    n_x = max(2, int(round(spec.size[0] / spec.resolution)))
    n_y = max(2, int(round(spec.size[1] / spec.resolution)))
    xs = (np.arange(n_x) + 0.5) * spec.resolution
    ys = (np.arange(n_y) + 0.5) * spec.resolution
    return xs[:, None] + 0 * ys[None, :], 0 * xs[:, None] + ys[None, :]


def _jitter_edges(elev: np.ndarray, region: np.ndarray, amp: float, rng) -> np.ndarray:
    """Perturb cells on either side of the boundary of ``region``."""
    if amp <= 0:
        return elev
    grown = ndimage.binary_dilation(region)
    shrunk = ndimage.binary_erosion(region, border_value=1)
    edge = grown & ~shrunk
    noise = rng.uniform(-amp, amp, size=elev.shape)
    return np.where(edge, elev + noise, elev)


def _apply_floor(spec, rng, elev, gap_mask, params):
    """Fill the non-support cells of sparse terrains with a floor or void."""
    mode = spec.floor
    if mode == "random":
        mode = "physical" if rng.random() < 0.5 else "virtual"
    params["floor_kind"] = mode
    void = np.zeros(elev.shape, dtype=bool)
    floor = np.zeros(elev.shape, dtype=bool)
    if mode == "void":
        void = gap_mask.copy()
        elev = np.where(void, np.nan, elev)
    else:
        h = rng.uniform(spec.option("floor_min"), spec.option("floor_max"))
        params["floor_height"] = float(h)
        elev = np.where(gap_mask, h, elev)
        floor = gap_mask.copy()
    return elev, void, floor


def _boxes(rng, x, y, count, size_lo, size_hi):
    """Yield boolean masks of random axis-aligned rectangles."""
    sx, sy = x.max() + x.min(), y.max() + y.min()
    for _ in range(int(count)):
        w, l = rng.uniform(size_lo, size_hi, size=2)
        cx, cy = rng.uniform(0, sx), rng.uniform(0, sy)
        yield (np.abs(x - cx) < w / 2) & (np.abs(y - cy) < l / 2)


def _gen_rough(spec, rng, x, y, p):
    a = spec.ramp("noise_amplitude")
    p["noise_amplitude"] = a
    return rng.uniform(-a, a, size=x.shape) if a > 0 else np.zeros(x.shape)


def _gen_stairs(spec, rng, x, y, p, up: bool):
    slope = spec.ramp("slope_deg")
    step_h = rng.uniform(spec.option("stair_step_height_min"), spec.option("stair_step_height_max"))
    step_d = step_h / math.tan(math.radians(slope))
    width = rng.uniform(spec.option("stair_width_min"), spec.option("stair_width_max"))
    start = spec.option("platform_length")
    stop = x.max() + x.min() - spec.option("platform_length")
    n_steps = max(1, int((stop - start) // step_d))
    k = np.clip(np.floor((x - start) / step_d) + 1, 0, n_steps)
    sign = 1.0 if up else -1.0
    elev = sign * step_h * k
    cy = (y.max() + y.min()) / 2
    thick = spec.option("stair_wall_thickness")
    walls = []
    for side in (-1.0, 1.0):
        wall_h = rng.uniform(spec.option("stair_wall_height_min"), spec.option("stair_wall_height_max"))
        walls.append(wall_h)
        band = (side * (y - cy) >= width / 2) & (side * (y - cy) < width / 2 + thick)
        elev = np.where(band, elev + wall_h, elev)
    p.update(slope_deg=slope, step_height=step_h, step_depth=step_d, stair_width=width,
             wall_heights=walls, n_steps=n_steps)
    return elev


def _gen_boxes(spec, rng, x, y, p):
    hmax = spec.ramp("max_box_height")
    elev = np.zeros(x.shape)
    for m in _boxes(rng, x, y, spec.option("box_count"), spec.option("box_size_min"), spec.option("box_size_max")):
        elev = np.where(m, elev + rng.uniform(-hmax, hmax), elev)
    p["max_box_height"] = hmax
    return elev


def _gen_obstacles(spec, rng, x, y, p):
    density = spec.ramp("obstacle_density")
    tilt = math.radians(rng.uniform(0.0, spec.option("obstacle_max_slope_deg")))
    heading = rng.uniform(-math.pi, math.pi)
    cx, cy = (x.max() + x.min()) / 2, (y.max() + y.min()) / 2
    elev = math.tan(tilt) * ((x - cx) * math.cos(heading) + (y - cy) * math.sin(heading))
    area = (x.max() + x.min()) * (y.max() + y.min())
    count = int(round(density * area))
    for m in _boxes(rng, x, y, count, spec.option("obstacle_size_min"), spec.option("obstacle_size_max")):
        h = rng.uniform(spec.option("obstacle_height_min"), spec.option("obstacle_height_max"))
        elev = np.where(m, elev + (h if rng.random() < 0.5 else -h), elev)
    p.update(obstacle_density=density, obstacle_count=count, slope_rad=tilt)
    return elev


def _gen_climb(spec, rng, x, y, p, up: bool):
    name = "pit_height" if up else "platform_height"
    h = spec.ramp(name)
    mid = (x.max() + x.min()) / 2
    near = x < mid
    # climbing up: start in the pit below the far rim; climbing down: start on top
    elev = np.where(near, -h, 0.0) if up else np.where(near, h, 0.0)
    elev = _jitter_edges(elev, near, 0.2 * h, rng)
    p[name] = h
    p["edge_x"] = mid
    return elev


def _gen_climb_consecutive(spec, rng, x, y, p):
    h1, h2 = spec.ramp("ring1_height"), spec.ramp("ring2_height")
    length = x.max() + x.min()
    u = x / length
    elev = np.zeros(x.shape)
    ring1 = (u >= 0.2) & (u < 0.8)
    ring2 = (u >= 0.4) & (u < 0.6)
    elev = np.where(ring1, h1, elev)
    elev = np.where(ring2, h1 + h2, elev)
    elev = _jitter_edges(elev, ring1, 0.2 * h1, rng)
    elev = _jitter_edges(elev, ring2, 0.2 * h2, rng)
    p.update(ring1_height=h1, ring2_height=h2)
    return elev


def _gen_gap(spec, rng, x, y, p):
    d = spec.ramp("gap_width")
    mid = (x.max() + x.min()) / 2
    far_dz = rng.uniform(-0.3 * d, 0.3 * d)
    lo, hi = mid - d / 2, mid + d / 2
    gap = (x >= lo) & (x < hi)
    elev = np.where(x >= hi, far_dz, 0.0)
    elev = _jitter_edges(elev, x < lo, 0.1 * d, rng)
    elev = _jitter_edges(elev, x >= hi, 0.1 * d, rng)
    p.update(gap_width=d, gap_start=lo, gap_end=hi, far_height=far_dz)
    return elev, gap


def _gen_pallets(spec, rng, x, y, p):
    w, g, dh = spec.ramp("beam_width"), spec.ramp("gap_width"), spec.ramp("height_difference")
    plat = spec.option("platform_length")
    length = x.max() + x.min()
    phi = rng.uniform(-math.pi / 4, math.pi / 4)
    s = (x - plat) * math.cos(phi) + (y - (y.max() + y.min()) / 2) * math.sin(phi)
    period = w + g
    k = np.floor(s / period)
    kmin, kmax = int(k.min()), int(k.max())
    heights = rng.uniform(0.0, dh, size=kmax - kmin + 1) if dh > 0 else np.zeros(kmax - kmin + 1)
    on_beam = (s - k * period) < w
    middle = (x >= plat) & (x < length - plat)
    elev = np.where(middle, heights[(k - kmin).astype(int)], 0.0)
    gap = middle & ~on_beam
    p.update(beam_width=w, gap_width=g, height_difference=dh, orientation=phi)
    return elev, gap


def _gen_stones(spec, rng, x, y, p):
    size, gap_w = spec.ramp("stone_size"), spec.ramp("stone_gap")
    period = size + gap_w
    pj = spec.option("stone_position_jitter")
    hj = spec.option("stone_height_jitter")
    ki, kj = np.floor(x / period).astype(int), np.floor(y / period).astype(int)
    n_i, n_j = ki.max() + 1, kj.max() + 1
    off = rng.uniform(-pj, pj, size=(n_i, n_j, 2))
    hs = rng.uniform(-hj, hj, size=(n_i, n_j))
    cx = (ki + 0.5) * period + off[ki, kj, 0]
    cy = (kj + 0.5) * period + off[ki, kj, 1]
    on = (np.abs(x - cx) < size / 2) & (np.abs(y - cy) < size / 2)
    elev = hs[ki, kj]
    p.update(stone_size=size, stone_gap=gap_w)
    return elev, ~on


def _gen_beam(spec, rng, x, y, p):
    w = spec.ramp("beam_width")
    # the beam pitch follows from the platform height difference
    roll, yaw = rng.uniform(-0.1, 0.1, size=2)
    far_dz = rng.uniform(-0.2, 0.2)
    length = x.max() + x.min()
    plat = spec.option("platform_length")
    cy = (y.max() + y.min()) / 2
    along = (x - plat) * math.cos(yaw) + (y - cy) * math.sin(yaw)
    across = -(x - plat) * math.sin(yaw) + (y - cy) * math.cos(yaw)
    span = length - 2 * plat
    beam_z = far_dz * np.clip(along / span, 0, 1) + math.tan(roll) * across
    on_beam = np.abs(across) < w / 2
    near, far = x < plat, x >= length - plat
    elev = np.where(near, 0.0, np.where(far, far_dz, beam_z))
    gap = ~(near | far | on_beam)
    p.update(beam_width=w, roll=roll, yaw=yaw, far_height=far_dz)
    return elev, gap


def _gen_stacked(spec, rng, x, y, p):
    hmax = spec.ramp("max_stack_height")
    elev = np.zeros(x.shape)
    for m in _boxes(rng, x, y, 40, 0.2, 1.2):
        top = elev[m].max() if m.any() else 0.0
        elev = np.where(m, min(hmax, top + rng.uniform(0.05, 0.4)), elev)
    p["max_stack_height"] = hmax
    return elev


def _gen_random_hf(spec, rng, x, y, p):
    amp = spec.ramp("amplitude")
    elev = np.zeros(x.shape)
    for sigma_m, w in ((0.08, 0.2), (0.3, 0.4), (1.0, 0.4)):
        layer = ndimage.gaussian_filter(rng.standard_normal(x.shape), sigma_m / spec.resolution, mode="wrap")
        layer /= max(np.abs(layer).max(), 1e-12)
        elev += w * layer
    p["amplitude"] = amp
    return amp * elev


def _gen_floating(spec, rng, x, y, p):
    count = int(round(spec.ramp("box_count")))
    elev = rng.uniform(-0.02, 0.02, size=x.shape)
    bottom = np.full(x.shape, np.nan)
    top = np.full(x.shape, np.nan)
    for m in _boxes(rng, x, y, count, 0.2, 1.0):
        b = rng.uniform(0.2, 1.2)
        t = b + rng.uniform(0.05, 0.5)
        free = m & np.isnan(bottom)
        bottom = np.where(free, b, bottom)
        top = np.where(free, t, top)
    p["box_count"] = count
    return elev, bottom, top


def generate(spec: TerrainSpec) -> Heightfield:
    """Deterministically build the heightfield described by ``spec``."""
    rng = _rng(spec)
    x, y = _grid(spec)
    p: dict = {"family": spec.family.value, "difficulty": spec.difficulty,
               "robot_profile": spec.robot_profile.value, "seed": spec.seed}
    fam = spec.family
    void = floor = bottom = top = None
    if fam is Family.ROUGH:
        elev = _gen_rough(spec, rng, x, y, p)
    elif fam in (Family.STAIR_UP, Family.STAIR_DOWN):
        elev = _gen_stairs(spec, rng, x, y, p, up=fam is Family.STAIR_UP)
    elif fam is Family.BOXES:
        elev = _gen_boxes(spec, rng, x, y, p)
    elif fam is Family.OBSTACLES:
        elev = _gen_obstacles(spec, rng, x, y, p)
    elif fam in (Family.CLIMB_UP, Family.CLIMB_DOWN):
        elev = _gen_climb(spec, rng, x, y, p, up=fam is Family.CLIMB_UP)
    elif fam is Family.CLIMB_CONSECUTIVE:
        elev = _gen_climb_consecutive(spec, rng, x, y, p)
    elif fam in SPARSE_FAMILIES:
        gen = {Family.GAP: _gen_gap, Family.PALLETS: _gen_pallets,
               Family.STONES: _gen_stones, Family.BEAM: _gen_beam}[fam]
        elev, gap = gen(spec, rng, x, y, p)
        elev, void, floor = _apply_floor(spec, rng, elev, gap, p)
    elif fam is Family.STACKED_BOXES:
        elev = _gen_stacked(spec, rng, x, y, p)
    elif fam is Family.RANDOM_HEIGHTFIELD:
        elev = _gen_random_hf(spec, rng, x, y, p)
    elif fam is Family.FLOATING_BOXES:
        elev, bottom, top = _gen_floating(spec, rng, x, y, p)
    else:  # pragma: no cover
        raise AssertionError(fam)
    p = {k: (v.item() if isinstance(v, np.generic) else v) for k, v in p.items()}
    return Heightfield(elev, spec.resolution, void, floor, bottom, top, p)


def sample_goal(spec: TerrainSpec, field: Heightfield, rng_seed: int, far_fraction: float = 0.15):
    """Pick a goal ``(x, y, yaw)`` on supported ground.

    Cross-type terrains place the goal in the last ``far_fraction`` of the
    terrain length; the others anywhere.
    """
    rng = np.random.default_rng(int(rng_seed) % (1 << 64))
    ok = field.standable_mask()
    if spec.family in CROSS_FAMILIES:
        xs, _ = field.cell_centers()
        ok = ok & (xs >= (1.0 - far_fraction) * field.size[0])[:, None]
    cand = np.argwhere(ok)
    if len(cand) == 0:
        raise NoValidGoal(f"no standable cell for {spec.family.value}")
    i, j = cand[rng.integers(len(cand))]
    yaw = rng.uniform(-math.pi, math.pi)
    return (float((i + 0.5) * field.resolution), float((j + 0.5) * field.resolution), float(yaw))


def mix(proportions: Mapping, count: int, seed: int, difficulty: float | None = None,
        robot_profile=RobotProfile.QUADRUPED_A, **spec_kwargs) -> list[TerrainSpec]:
    """Expand family fractions into ``count`` specs using largest-remainder rounding."""
    fams = [Family.parse(k) for k in proportions]
    fracs = np.array([float(v) for v in proportions.values()])
    if np.any(fracs < 0) or abs(fracs.sum() - 1.0) > 1e-9:
        raise BadProportions(f"fractions sum to {fracs.sum()!r}, expected 1")
    if count < 0:
        raise ValueError("count must be non-negative")
    quotas = fracs * count
    counts = np.floor(quotas).astype(int)
    rest = count - counts.sum()
    # stable: ties resolved by declaration order
    order = sorted(range(len(fams)), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in order[:rest]:
        counts[k] += 1
    rng = np.random.default_rng(int(seed) % (1 << 64))
    specs = []
    for fam, n in zip(fams, counts):
        for _ in range(n):
            d = rng.random() if difficulty is None else difficulty
            s = int(rng.integers(0, 2**63 - 1))
            specs.append(TerrainSpec(fam, d, s, robot_profile, **spec_kwargs))
    return specs


def with_difficulty(spec: TerrainSpec, difficulty: float) -> TerrainSpec:
    return replace(spec, difficulty=difficulty)
