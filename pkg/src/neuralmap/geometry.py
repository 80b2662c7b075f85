"""Rigid transforms shared by the sensing, fusion and query stages."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation matrix for intrinsic z-y'-x'' (yaw, pitch, roll) angles."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    return rot_z(yaw) @ ry @ rx


@dataclass(frozen=True)
class Pose:
    """Rigid transform parent<-child: p_parent = rotation @ p_child + position."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))

    @classmethod
    def from_xyz_rpy(cls, x=0.0, y=0.0, z=0.0, roll=0.0, pitch=0.0, yaw=0.0) -> "Pose":
        return cls(np.array([x, y, z], dtype=float), rot_rpy(roll, pitch, yaw))

    @property
    def yaw(self) -> float:
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def compose(self, other: "Pose") -> "Pose":
        """self * other, i.e. grandparent<-child from parent<-child ``other``."""
        return Pose(self.rotation @ other.position + self.position, self.rotation @ other.rotation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(-rt @ self.position, rt)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.position

    def yaw_frame(self) -> "Pose":
        """Gravity-aligned frame at the same position, keeping only the yaw."""
        return Pose(self.position, rot_z(self.yaw))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.position
        return m


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def angular_distance(a, b=0.0):
    """Unsigned wrapped distance in [0, pi]."""
    return np.abs(wrap_angle(np.asarray(a, dtype=float) - b))
