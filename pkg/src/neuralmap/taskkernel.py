"""Goal-reaching reward terms, undesired events, termination and curriculum.

Everything here is a pure function of its arguments except the curriculum
state, which each environment owns.  Angles are compared with wrapped
distances in [0, pi].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import angular_distance, wrap_angle

DT = 0.02  # policy interval, s
GRAVITY = 9.81

# raw term -> weight; the weighted reward is weight * term * DT
REWARD_WEIGHTS: dict[str, float] = {
    "position_tracking": 100.0,
    "heading_tracking": 50.0,
    "move_to_goal": 5.0,
    "stand_at_goal": 5.0,
    "early_termination": -10.0 / DT,
    "undesired_events": -1.0,
    "roll_rate": -0.1,
    "joint_regularization": -0.001,
    "action_smoothness": -0.01,
    "link_contact_forces": -1e-5,
    "link_acceleration": -0.001,
    "joint_position_limits": -1000.0,
    "joint_velocity_limits": -1.0,
    "joint_torque_limits": -1.0,
}

V_MIN, V_MAX = 0.3, 2.0
NEAR_GOAL = 0.5
SLIP_SPEED = 0.05  # m/s
LEAP_SPAN = 0.3  # m
SPIN_RATE = 2.0  # rad/s


def t_mask(T: float, t_left: float) -> float:
    if not T > 0:
        raise ValueError("T must be positive")
    return (1.0 / T) if t_left < T else 0.0


def r_position_tracking(d_xy: float, t_left: float) -> float:
    return 1.0 / (1.0 + 0.25 * d_xy * d_xy) * t_mask(4.0, t_left)


def r_heading_tracking(d_yaw: float, d_xy: float, t_left: float) -> float:
    if not d_xy < NEAR_GOAL:
        return 0.0
    return 1.0 / (1.0 + d_yaw * d_yaw) * t_mask(2.0, t_left)


def r_move(d_xy: float, v_b, goal_direction) -> float:
    """1 near the goal, or when moving toward it at a reasonable speed."""
    if d_xy < NEAR_GOAL:
        return 1.0
    v = np.asarray(v_b, dtype=float)[:2]
    g = np.asarray(goal_direction, dtype=float)[:2]
    speed = float(np.hypot(v[0], v[1]))
    if speed == 0.0:
        return 0.0
    cos = float(v @ g) / (speed * float(np.hypot(g[0], g[1])))
    return 1.0 if (cos > 0.5 and V_MIN <= speed <= V_MAX) else 0.0


def r_stand(d_xy: float, d_yaw: float, d_foot: float, g_b, d_q: float) -> float:
    if not (d_xy < NEAR_GOAL and d_yaw < NEAR_GOAL):
        return 0.0
    d_g = 1.0 - float(g_b[2]) ** 2
    return math.exp(-(d_foot + d_g + d_q + d_xy) / 4.0)


def _vec(n, value=0.0):
    return field(default_factory=lambda: np.full(n, value, dtype=float))


@dataclass
class TaskState:
    """Kinematic snapshot of one robot at one policy step.

    Base velocities are expressed in the yaw-aligned base frame; link
    quantities, contact forces and positions in the world frame.  Joint
    limits are per joint; ``link_contact`` defaults to ``|F| > 0``.
    """

    base_position: np.ndarray = _vec(3)
    base_yaw: float = 0.0
    base_lin_vel: np.ndarray = _vec(3)
    base_ang_vel: np.ndarray = _vec(3)
    projected_gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))
    joint_pos: np.ndarray = _vec(12)
    joint_vel: np.ndarray = _vec(12)
    joint_acc: np.ndarray = _vec(12)
    joint_torque: np.ndarray = _vec(12)
    joint_pos_min: np.ndarray = _vec(12, -1.0)
    joint_pos_max: np.ndarray = _vec(12, 1.0)
    joint_vel_max: np.ndarray = _vec(12, 10.0)
    joint_torque_max: np.ndarray = _vec(12, 80.0)
    joint_pos_default: np.ndarray = _vec(12)
    action: np.ndarray = _vec(12)
    prev_action: np.ndarray = _vec(12)
    # links: row 0 is the base
    link_forces: np.ndarray = field(default_factory=lambda: np.zeros((13, 3)))
    link_velocities: np.ndarray = field(default_factory=lambda: np.zeros((13, 3)))
    link_accelerations: np.ndarray = field(default_factory=lambda: np.zeros((13, 3)))
    link_contact: np.ndarray | None = None
    prev_link_contact: np.ndarray | None = None
    foot_links: tuple[int, ...] = (3, 6, 9, 12)
    thigh_links: tuple[int, ...] = (2, 5, 8, 11)
    self_collision: bool = False
    mass: float = 50.0  # kg
    goal: tuple[float, float, float] = (0.0, 0.0, 0.0)  # x, y, yaw (world)
    t_left: float = 0.0
    position_5s_ago: np.ndarray | None = None  # None until 5 s of history exist
    terrain_span: float = 0.0  # elevation max - min over the query footprint, m

    def __post_init__(self):
        g = np.asarray(self.projected_gravity, dtype=float)
        if abs(np.linalg.norm(g) - 1.0) > 1e-6:
            raise ValueError("projected gravity must be a unit vector")
        if self.t_left < 0:
            raise ValueError("t_left must be non-negative")

    @property
    def weight(self) -> float:
        return self.mass * GRAVITY

    @property
    def contact(self) -> np.ndarray:
        if self.link_contact is not None:
            return np.asarray(self.link_contact, dtype=bool)
        return np.linalg.norm(self.link_forces, axis=1) > 0

    @property
    def non_foot_links(self) -> np.ndarray:
        mask = np.ones(len(self.link_forces), dtype=bool)
        mask[list(self.foot_links)] = False
        return mask


def goal_relation(state: TaskState):
    """Return ``(d_xy, d_yaw, direction)``; direction is the base-frame unit vector to the goal."""
    dx = state.goal[0] - state.base_position[0]
    dy = state.goal[1] - state.base_position[1]
    d_xy = math.hypot(dx, dy)
    d_yaw = float(angular_distance(state.goal[2], state.base_yaw))
    c, s = math.cos(state.base_yaw), math.sin(state.base_yaw)
    local = np.array([c * dx + s * dy, -s * dx + c * dy])
    direction = local / d_xy if d_xy > 0 else np.zeros(2)
    return d_xy, d_yaw, direction


def task_terms(state: TaskState) -> dict[str, float]:
    d_xy, d_yaw, direction = goal_relation(state)
    feet = list(state.foot_links)
    d_foot = float(np.mean(~state.contact[feet])) if feet else 0.0
    d_q = float(np.mean(np.abs(state.joint_pos - state.joint_pos_default)))
    return {
        "position_tracking": r_position_tracking(d_xy, state.t_left),
        "heading_tracking": r_heading_tracking(d_yaw, d_xy, state.t_left),
        "move_to_goal": r_move(d_xy, state.base_lin_vel, direction),
        "stand_at_goal": r_stand(d_xy, d_yaw, d_foot, state.projected_gravity, d_q),
    }


@dataclass
class RewardTerms:
    values: dict[str, float]
    weights: dict[str, float]

    def weighted(self, dt: float = DT) -> dict[str, float]:
        return {k: self.weights[k] * v * dt for k, v in self.values.items()}

    def total(self, dt: float = DT) -> float:
        return float(sum(self.weighted(dt).values()))


def regularization_terms(state: TaskState) -> RewardTerms:
    """Raw (unweighted) regularization and joint-limit terms."""
    q, qd, qdd, tau = state.joint_pos, state.joint_vel, state.joint_acc, state.joint_torque
    excess = np.maximum(np.linalg.norm(state.link_forces, axis=1) - state.weight, 0.0)
    pos_hinge = np.maximum.reduce([np.zeros_like(q), q - 0.95 * state.joint_pos_max,
                                   0.95 * state.joint_pos_min - q])
    values = {
        "roll_rate": float(state.base_ang_vel[0] ** 2),
        "joint_regularization": float(qd @ qd + 0.01 * (tau @ tau) + 0.001 * (qdd @ qdd)),
        "action_smoothness": float(np.sum((state.action - state.prev_action) ** 2)),
        "link_contact_forces": float(excess @ excess),
        "link_acceleration": float(np.linalg.norm(state.link_accelerations, axis=1).sum()),
        "joint_position_limits": float(pos_hinge.sum()),
        "joint_velocity_limits": float(np.maximum(0.0, np.abs(qd) - 0.9 * state.joint_vel_max).sum()),
        "joint_torque_limits": float(np.maximum(0.0, np.abs(tau) - 0.8 * state.joint_torque_max).sum()),
    }
    return RewardTerms(values, {k: REWARD_WEIGHTS[k] for k in values})


EVENT_LABELS = ("spin", "flat_leap", "non_foot_contact", "non_foot_contact_switch", "stumble", "slip",
                "self_collision")


def undesired_events(state: TaskState) -> tuple[int, list[str]]:
    """Detect undesired events; each type counts at most once per step."""
    labels = []
    contact = state.contact
    non_foot = state.non_foot_links
    feet = list(state.foot_links)
    if abs(state.base_ang_vel[2]) > SPIN_RATE:
        labels.append("spin")
    if feet and not contact[feet].any() and state.terrain_span < LEAP_SPAN:
        labels.append("flat_leap")
    if (contact & non_foot).any():
        labels.append("non_foot_contact")
    if state.prev_link_contact is not None:
        prev = np.asarray(state.prev_link_contact, dtype=bool)
        if (contact & ~prev & non_foot).any():
            labels.append("non_foot_contact_switch")
    f = state.link_forces
    if (contact & (np.hypot(f[:, 0], f[:, 1]) > np.abs(f[:, 2]))).any():
        labels.append("stumble")
    v = state.link_velocities
    if (contact & (np.hypot(v[:, 0], v[:, 1]) > SLIP_SPEED)).any():
        labels.append("slip")
    if state.self_collision:
        labels.append("self_collision")
    return len(labels), labels


@dataclass(frozen=True)
class TerminationThresholds:
    gravity_x: float = 0.985
    gravity_y: float = 0.7
    gravity_z: float = 0.0
    thigh_acceleration: float = 60.0  # m/s^2; 100 for the biped
    stagnation_distance: float = 0.5  # m over the 5 s window
    stagnation_goal_distance: float = 1.0

    @classmethod
    def for_profile(cls, profile) -> "TerminationThresholds":
        from .terrain import RobotProfile

        p = RobotProfile.parse(profile)
        return cls(thigh_acceleration=60.0 if p is RobotProfile.QUADRUPED_A else 100.0)


def should_terminate(state: TaskState, thresholds: TerminationThresholds = TerminationThresholds()) -> str | None:
    """First matching termination reason, or None."""
    g = state.projected_gravity
    if abs(g[0]) > thresholds.gravity_x or abs(g[1]) > thresholds.gravity_y or g[2] > thresholds.gravity_z:
        return "bad_orientation"
    if np.linalg.norm(state.link_forces[0]) > state.weight:
        return "base_collision"
    thighs = list(state.thigh_links)
    if thighs and np.linalg.norm(state.link_accelerations[thighs], axis=1).max() > thresholds.thigh_acceleration:
        return "thigh_acceleration"
    if state.position_5s_ago is not None:
        moved = math.hypot(state.base_position[0] - state.position_5s_ago[0],
                           state.base_position[1] - state.position_5s_ago[1])
        d_xy = goal_relation(state)[0]
        if moved < thresholds.stagnation_distance and d_xy > thresholds.stagnation_goal_distance:
            return "stagnation"
    return None


def step_reward(state: TaskState, thresholds: TerminationThresholds = TerminationThresholds(),
                dt: float = DT) -> RewardTerms:
    """All terms for one step; ``.total()`` gives sum(weight * term * dt)."""
    values = dict(task_terms(state))
    values["early_termination"] = 1.0 if should_terminate(state, thresholds) else 0.0
    values["undesired_events"] = float(undesired_events(state)[0])
    values.update(regularization_terms(state).values)
    return RewardTerms(values, {k: REWARD_WEIGHTS[k] for k in values})


@dataclass(frozen=True)
class CurriculumState:
    level: int = 0
    max_level: int = 9
    success_ema: float = 0.0
    ema_coefficient: float = 0.99

    def __post_init__(self):
        if not 0 <= self.level <= self.max_level:
            raise ValueError(f"level {self.level} outside [0, {self.max_level}]")
        if not 0 <= self.success_ema <= 1 or not 0 <= self.ema_coefficient < 1:
            raise ValueError("EMA and coefficient must lie in [0, 1]")


DEMOTE_DISTANCE = 4.0


def curriculum_step(cs: CurriculumState, reached_goal: bool, final_distance: float,
                    rng: np.random.Generator, passed_top: bool | None = None) -> tuple[CurriculumState, str]:
    """Update the success EMA, then promote, demote, reset or stay.

    Promotion needs a reached goal and an updated EMA above 0.5.  Promoting
    past the top level (or ``passed_top``) resets to a uniform random level.
    Returns the new state and one of ``promote``, ``demote``, ``reset``, ``stay``.
    """
    a = cs.ema_coefficient
    ema = min(1.0, max(0.0, a * cs.success_ema + (1 - a) * float(bool(reached_goal))))
    level, action = cs.level, "stay"
    if reached_goal and ema > 0.5:
        if passed_top or cs.level >= cs.max_level:
            level, action = int(rng.integers(0, cs.max_level + 1)), "reset"
        else:
            level, action = cs.level + 1, "promote"
    elif passed_top:
        level, action = int(rng.integers(0, cs.max_level + 1)), "reset"
    elif final_distance > DEMOTE_DISTANCE:
        level, action = max(0, cs.level - 1), "demote"
    return replace(cs, level=level, success_ema=ema), action


@dataclass(frozen=True)
class Command:
    dx: float
    dy: float
    yaw: float
    t_left: float | None = None


OBSERVED_DISTANCE = 2.0


def actor_command(goal_rel, yaw_rel: float, t_left: float, rng: np.random.Generator) -> tuple[Command, Command]:
    """Return ``(actor, critic)`` commands.

    The actor sees the goal clipped to 2 m with the same bearing, no
    remaining time, and a random yaw while the goal is farther than 2 m.
    The critic sees everything.
    """
    dx, dy = float(goal_rel[0]), float(goal_rel[1])
    critic = Command(dx, dy, float(wrap_angle(yaw_rel)), float(t_left))
    d = math.hypot(dx, dy)
    if d > OBSERVED_DISTANCE:
        k = OBSERVED_DISTANCE / d
        actor = Command(dx * k, dy * k, float(rng.uniform(-math.pi, math.pi)))
    else:
        actor = Command(dx, dy, critic.yaw)
    return actor, critic
