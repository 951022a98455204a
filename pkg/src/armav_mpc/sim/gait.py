"""Periodic gait timing and foothold selection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LEG_NAMES = ("FL", "FR", "RL", "RR")
# diagonal pairs FL+RR and FR+RL alternate
TROT_OFFSETS = (0.0, 0.5, 0.5, 0.0)


@dataclass(frozen=True)
class GaitSchedule:
    period: float = 0.5
    duty: float = 0.5
    offsets: tuple[float, float, float, float] = TROT_OFFSETS

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("gait period must be positive")
        if not 0.0 < self.duty <= 1.0:
            raise ValueError("duty factor must lie in (0, 1]")

    def phase(self, t: float) -> np.ndarray:
        """Per-leg phase in [0, 1); stance occupies [0, duty)."""
        out = np.empty(4)
        base = t / self.period
        for leg, off in enumerate(self.offsets):
            # rounding keeps tick-aligned event times on the intended side
            ph = round(math.fmod(base + off, 1.0), 9)
            out[leg] = 0.0 if ph >= 1.0 else ph
        return out

    def stance(self, t: float) -> np.ndarray:
        return self.phase(t) < self.duty

    def swing_progress(self, t: float) -> np.ndarray:
        """Fraction of the swing completed per leg; NaN for stance legs."""
        ph = self.phase(t)
        out = np.full(4, np.nan)
        sw = ph >= self.duty
        if self.duty < 1.0:
            out[sw] = (ph[sw] - self.duty) / (1.0 - self.duty)
        return out

    def schedule(self, t0: float, horizon: int, dt: float) -> np.ndarray:
        """(horizon, 4) stance mask sampled at t0 + k dt."""
        return np.array([self.stance(t0 + k * dt) for k in range(horizon)])

    @property
    def stance_time(self) -> float:
        return self.duty * self.period

    @property
    def swing_time(self) -> float:
        return (1.0 - self.duty) * self.period


def default_hip_offsets(length: float = 0.78, width: float = 0.37) -> np.ndarray:
    """Hip positions in the body frame, inset from the body footprint corners."""
    hx, hy = 0.4 * length, 0.4 * width
    return np.array([[hx, hy, 0.0], [hx, -hy, 0.0], [-hx, hy, 0.0], [-hx, -hy, 0.0]])


def foothold(hip_world: np.ndarray, v: np.ndarray, v_cmd: np.ndarray, stance_time: float, height: float,
             g: float = 9.81, ground: float = 0.0) -> np.ndarray:
    """Nominal under-hip foothold with a capture-point style velocity correction."""
    xy = hip_world[:2] + 0.5 * stance_time * v[:2] + math.sqrt(max(height, 1e-3) / g) * (v[:2] - v_cmd[:2])
    return np.array([xy[0], xy[1], ground])
