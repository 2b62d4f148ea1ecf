"""Shared pose, sensor and robot configuration types."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = -((-a + np.pi) % (2.0 * np.pi) - np.pi)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Pose2D:
    """Planar pose; heading normalized to (-pi, pi]."""

    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading])

    @staticmethod
    def from_array(p) -> "Pose2D":
        return Pose2D(float(p[0]), float(p[1]), float(p[2]))


@dataclass(frozen=True)
class LaserConfig:
    """Fan-scan lidar: beams evenly spaced over `fov` centered on the heading."""

    fov: float = np.pi
    beam_count: int = 181
    max_range: float = 10.0
    range_noise_sigma: float = 0.01

    def __post_init__(self):
        if self.beam_count < 2:
            raise ValueError("beam_count must be >= 2")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    def beam_angles(self, heading: float) -> np.ndarray:
        return heading + np.linspace(-self.fov / 2.0, self.fov / 2.0, self.beam_count)


@dataclass(frozen=True)
class RobotConfig:
    """Constant-speed robot with a bounded turn rate."""

    speed: float = 1.0            # m/s
    max_turn_rate: float = 1.0    # rad/s
    control_period: float = 0.5   # s between scans while driving

    def __post_init__(self):
        if self.speed <= 0 or self.max_turn_rate <= 0 or self.control_period <= 0:
            raise ValueError("speed, max_turn_rate and control_period must be positive")
