"""Single-rigid-body state layout and the linearized discrete dynamics used by MPC.

State order: Euler angles (roll, pitch, yaw), position, world angular velocity,
world linear velocity, gravity constant. Euler angles follow the Z-Y-X
(yaw-pitch-roll) convention; the linearization keeps only the yaw rotation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, SingularInertia

GRAVITY = 9.81
N_STATE = 13
N_INPUT = 12

# slices into the 13-state
THETA = slice(0, 3)
POS = slice(3, 6)
OMEGA = slice(6, 9)
VEL = slice(9, 12)
G_INDEX = 12
HEIGHT_INDEX = 5


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RobotState:
    theta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g: float = GRAVITY

    def __post_init__(self):
        for name in ("theta", "p", "omega", "v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, self.p, self.omega, self.v, [self.g]])

    @classmethod
    def from_vector(cls, x) -> "RobotState":
        x = np.asarray(x, dtype=float).reshape(N_STATE)
        return cls(x[THETA], x[POS], x[OMEGA], x[VEL], float(x[G_INDEX]))

    @property
    def height(self) -> float:
        return float(self.p[2])


@dataclass
class ModelParams:
    """Inertial parameters and foot positions (world frame, relative to CoM)."""

    mass: float
    inertia: np.ndarray
    foot_positions: np.ndarray

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(3, 3)
        self.foot_positions = np.asarray(self.foot_positions, dtype=float).reshape(4, 3)
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not np.allclose(self.inertia, self.inertia.T, atol=1e-12):
            raise SingularInertia("inertia must be symmetric")
        if np.any(np.linalg.eigvalsh(self.inertia) <= 0.0):
            raise SingularInertia("inertia must be positive definite")


@dataclass
class DiscreteDynamics:
    a_mat: np.ndarray
    b_mat: np.ndarray
    dt: float


def continuous_matrices(yaw: float, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """(A_c, B_c) of the yaw-linearized rigid body with augmented gravity state."""
    rz = rot_z(yaw)
    a_c = np.zeros((N_STATE, N_STATE))
    a_c[THETA, OMEGA] = rz.T
    a_c[POS, VEL] = np.eye(3)
    a_c[11, G_INDEX] = -1.0

    i_world = rz @ params.inertia @ rz.T
    try:
        i_inv = np.linalg.inv(i_world)
    except np.linalg.LinAlgError as exc:
        raise SingularInertia("world inertia is singular") from exc
    b_c = np.zeros((N_STATE, N_INPUT))
    for leg in range(4):
        cols = slice(3 * leg, 3 * leg + 3)
        b_c[OMEGA, cols] = i_inv @ skew(params.foot_positions[leg])
        b_c[VEL, cols] = np.eye(3) / params.mass
    return a_c, b_c


def discretize(a_c: np.ndarray, b_c: np.ndarray, dt: float) -> DiscreteDynamics:
    """Forward-Euler hold: A = I + A_c dt, B = B_c dt."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return DiscreteDynamics(np.eye(a_c.shape[0]) + a_c * dt, b_c * dt, dt)


def discrete_dynamics(yaw: float, params: ModelParams, dt: float) -> DiscreteDynamics:
    return discretize(*continuous_matrices(yaw, params), dt)


def step(dyn: DiscreteDynamics, x, u) -> RobotState | np.ndarray:
    """x_{t+1} = A x_t + B u_t. Accepts a RobotState or a raw 13-vector and returns the same kind."""
    as_state = isinstance(x, RobotState)
    xv = x.to_vector() if as_state else np.asarray(x, dtype=float)
    uv = np.asarray(u, dtype=float)
    if xv.shape != (N_STATE,) or uv.shape != (N_INPUT,):
        raise DimensionMismatch(f"expected (13,), (12,); got {xv.shape}, {uv.shape}")
    nxt = dyn.a_mat @ xv + dyn.b_mat @ uv
    return RobotState.from_vector(nxt) if as_state else nxt
