"""Nonlinear rigid-body truth model that the controller does not get to see."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..srb import GRAVITY, RobotState, skew
from .gait import GaitSchedule, default_hip_offsets


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(rv))
    if angle < 1e-12:
        return np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]])
    axis = rv / angle
    s = math.sin(0.5 * angle)
    return np.array([math.cos(0.5 * angle), s * axis[0], s * axis[1], s * axis[2]])


def quat_from_euler_zyx(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
    cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
    cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    return np.array(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ]
    )


def euler_zyx(rot: np.ndarray) -> np.ndarray:
    """(roll, pitch, yaw) of a body-to-world rotation, Z-Y-X convention."""
    roll = math.atan2(rot[2, 1], rot[2, 2])
    pitch = -math.asin(max(-1.0, min(1.0, rot[2, 0])))
    yaw = math.atan2(rot[1, 0], rot[0, 0])
    return np.array([roll, pitch, yaw])


def default_inertia() -> np.ndarray:
    return np.diag([0.35, 1.1, 1.2])


@dataclass
class SimWorld:
    mass: float = 23.7
    inertia: np.ndarray = field(default_factory=default_inertia)
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    p: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.38]))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    anchors: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))
    payload: list = field(default_factory=list)
    gait: GaitSchedule = field(default_factory=GaitSchedule)
    hip_offsets: np.ndarray = field(default_factory=default_hip_offsets)
    leg_mass: float = 0.0
    swing_height: float = 0.06
    ground: float = 0.0
    gravity: float = GRAVITY
    dt: float = 0.001
    t: float = 0.0
    step_count: int = 0

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(3, 3)
        self._inertia_inv = np.linalg.inv(self.inertia)
        self.q = np.asarray(self.q, dtype=float) / np.linalg.norm(self.q)
        self.p = np.asarray(self.p, dtype=float).copy()
        self.v = np.asarray(self.v, dtype=float).copy()
        self.omega = np.asarray(self.omega, dtype=float).copy()
        if not np.any(self.anchors):
            self.anchors = self.hip_world()
            self.anchors[:, 2] = self.ground
        self.payload = sorted((float(t), float(m)) for t, m in self.payload)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def payload_mass(self, t: float | None = None) -> float:
        t = self.t if t is None else t
        return sum(m for t0, m in self.payload if t >= t0 - 1e-12)

    def total_mass(self, t: float | None = None) -> float:
        return self.mass + self.payload_mass(t)

    def hip_world(self) -> np.ndarray:
        return self.p + self.hip_offsets @ self.rotation.T

    def state(self) -> RobotState:
        return RobotState(euler_zyx(self.rotation), self.p.copy(), self.omega.copy(), self.v.copy(), self.gravity)

    def foot_positions_rel(self) -> np.ndarray:
        return self.anchors - self.p

    def swing_reaction(self) -> tuple[np.ndarray, np.ndarray]:
        """Force and torque on the body from accelerating the swing legs vertically."""
        if self.leg_mass <= 0.0 or self.gait.duty >= 1.0:
            return np.zeros(3), np.zeros(3)
        prog = self.gait.swing_progress(self.t)
        t_sw = self.gait.swing_time
        gain = self.swing_height * 0.5 * (2.0 * math.pi / t_sw) ** 2
        hips = self.hip_world()
        force = np.zeros(3)
        torque = np.zeros(3)
        for leg in range(4):
            s = prog[leg]
            if np.isnan(s):
                continue
            fz = -self.leg_mass * gain * math.cos(2.0 * math.pi * s)
            f = np.array([0.0, 0.0, fz])
            force += f
            torque += np.cross(hips[leg] - self.p, f)
        return force, torque

    def energy(self) -> float:
        m = self.total_mass()
        i_world = self.rotation @ self.inertia @ self.rotation.T
        return float(
            0.5 * m * self.v @ self.v + 0.5 * self.omega @ i_world @ self.omega + m * self.gravity * (self.p[2] - self.ground)
        )

    def copy(self) -> "SimWorld":
        out = SimWorld.__new__(SimWorld)
        out.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()})
        out.payload = list(self.payload)
        return out


def physics_step(world: SimWorld, grfs, stance_mask, external_torque=None) -> SimWorld:
    """Advance the truth model by one physics step, in place.

    Semi-implicit: velocities first from the current forces, then position with
    the mean of old and new velocity (exact under constant force) and
    orientation by the exponential map of the new angular velocity.
    """
    grfs = np.asarray(grfs, dtype=float).reshape(4, 3)
    mask = np.asarray(stance_mask, dtype=bool).reshape(4)
    dt = world.dt
    m = world.total_mass()
    rot = world.rotation

    force = np.array([0.0, 0.0, -m * world.gravity])
    torque = np.zeros(3) if external_torque is None else np.asarray(external_torque, dtype=float).copy()
    for leg in range(4):
        if mask[leg]:
            f = grfs[leg]
            force += f
            torque += np.cross(world.anchors[leg] - world.p, f)
    f_sw, t_sw = world.swing_reaction()
    force += f_sw
    torque += t_sw

    i_world = rot @ world.inertia @ rot.T
    i_world_inv = rot @ world._inertia_inv @ rot.T
    omega_dot = i_world_inv @ (torque - np.cross(world.omega, i_world @ world.omega))

    v_old = world.v
    world.v = v_old + force / m * dt
    world.p = world.p + 0.5 * (v_old + world.v) * dt
    world.omega = world.omega + omega_dot * dt
    world.q = quat_mul(quat_from_rotvec(world.omega * dt), world.q)
    world.q /= np.linalg.norm(world.q)
    world.step_count += 1
    world.t = world.step_count * dt
    return world


def angular_momentum(world: SimWorld) -> np.ndarray:
    rot = world.rotation
    return rot @ world.inertia @ rot.T @ world.omega


__all__ = [
    "SimWorld",
    "physics_step",
    "euler_zyx",
    "quat_from_euler_zyx",
    "quat_to_matrix",
    "angular_momentum",
    "skew",
]
