"""Error-compensated convex MPC over single-rigid-body dynamics.

The nominal rollout x_{k+1} = A x_k + B u_k is left untouched; the cost is
charged on the compensated states

    o_k = A o_{k-1} + c_k,   x~_k = x_k + o_k,   k = 1..N,   o_0 = 0

where c_k is the state-space compensation built from the error forecast, so
a forecast state shift carries through the rest of the horizon. With
``propagate_compensation`` off the shift is applied per step only
(o_k = c_k). The states are condensed away so the QP decides only the
stacked GRFs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .error_model import ErrorCompensator, ErrorSample, compensation_term, select_matrix
from .errors import DimensionMismatch, Infeasible, SolverInfeasible
from .qp import QpProblem, QpSolution, QpSolver, build_friction_constraints
from .srb import (
    GRAVITY,
    N_INPUT,
    N_STATE,
    DiscreteDynamics,
    ModelParams,
    RobotState,
    discrete_dynamics,
    rot_z,
)


def default_state_weights() -> np.ndarray:
    # roll pitch yaw | x y z | wx wy wz | vx vy vz | g
    return np.array([50.0, 50.0, 50.0, 5.0, 5.0, 100.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0])


@dataclass
class MpcConfig:
    horizon: int = 12
    dt: float = 0.03
    state_weights: np.ndarray = field(default_factory=default_state_weights)
    input_weight: float = 1e-5
    mu: float = 0.6
    fz_bounds: tuple[float, float] = (0.0, 500.0)
    compensation_enabled: bool = True
    propagate_compensation: bool = True
    log_effective_target: bool = False

    def __post_init__(self):
        self.state_weights = np.asarray(self.state_weights, dtype=float).reshape(N_STATE)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if np.any(self.state_weights < 0) or self.input_weight < 0:
            raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class Command:
    """Body-frame velocity command plus desired height and attitude."""

    vx: float = 0.0
    vy: float = 0.0
    yaw_rate: float = 0.0
    height: float = 0.38
    roll: float = 0.0
    pitch: float = 0.0


def build_reference(command: Command, x0: RobotState, cfg: MpcConfig, yaw0: float | None = None) -> np.ndarray:
    """Desired states for k = 0..N as an (N+1, 13) array.

    The yaw trajectory starts at ``yaw0`` (default: the measured yaw) and
    integrates the commanded yaw rate.
    """
    vals = [command.vx, command.vy, command.yaw_rate, command.height, command.roll, command.pitch]
    if not np.all(np.isfinite(vals)):
        raise ValueError("command must be finite")
    N, dt = cfg.horizon, cfg.dt
    ref = np.zeros((N + 1, N_STATE))
    yaw0 = float(x0.theta[2]) if yaw0 is None else float(yaw0)
    pos = x0.p[:2].copy()
    v_body = np.array([command.vx, command.vy, 0.0])
    for k in range(N + 1):
        yaw = yaw0 + command.yaw_rate * k * dt
        v_world = rot_z(yaw) @ v_body
        ref[k, 0:3] = (command.roll, command.pitch, yaw)
        ref[k, 3:5] = pos
        ref[k, 5] = command.height
        ref[k, 6:9] = (0.0, 0.0, command.yaw_rate)
        ref[k, 9:12] = v_world
        ref[k, 12] = x0.g
        pos = pos + v_world[:2] * dt
    return ref


def condense(dyn, compensation, x0, ref, cfg: MpcConfig, stance_schedule=None) -> QpProblem:
    """Eliminate states from the horizon QP.

    ``dyn`` is one DiscreteDynamics reused at every step or a list of N.
    ``compensation`` is None or an (N, 13) array; entry k-1 enters the
    predicted x_k and, when ``cfg.propagate_compensation`` is set, is carried
    through A to later steps. With a stance schedule (N, 4) the friction
    pyramid, force bounds and swing-foot zero-force rows are attached.
    """
    N = cfg.horizon
    dyns = list(dyn) if isinstance(dyn, (list, tuple)) else [dyn] * N
    if len(dyns) != N:
        raise DimensionMismatch(f"need {N} dynamics entries, got {len(dyns)}")
    x0v = x0.to_vector() if isinstance(x0, RobotState) else np.asarray(x0, dtype=float).reshape(N_STATE)
    ref = np.asarray(ref, dtype=float)
    if ref.shape == (N + 1, N_STATE):
        ref = ref[1:]
    if ref.shape != (N, N_STATE):
        raise DimensionMismatch(f"reference must be ({N}, 13) or ({N + 1}, 13), got {ref.shape}")
    comp = None
    if compensation is not None:
        comp = np.asarray(compensation, dtype=float)
        if comp.shape != (N, N_STATE):
            raise DimensionMismatch(f"compensation must be ({N}, 13), got {comp.shape}")
        if not np.any(comp):
            comp = None

    nx, nu = N_STATE, N_INPUT
    sx = np.zeros((N * nx, nx))
    su = np.zeros((N * nx, N * nu))
    free = np.zeros(N * nx)
    phi = np.eye(nx)
    x_free = x0v
    offset = np.zeros(nx)
    for k in range(N):
        a, b = dyns[k].a_mat, dyns[k].b_mat
        rows = slice(k * nx, (k + 1) * nx)
        phi = a @ phi
        sx[rows] = phi
        if k:
            prev = slice((k - 1) * nx, k * nx)
            su[rows, : k * nu] = a @ su[prev, : k * nu]
        su[rows, k * nu : (k + 1) * nu] = b
        x_free = a @ x_free
        free[rows] = x_free
        if comp is not None:
            if cfg.propagate_compensation:
                offset = a @ offset + comp[k]
            else:
                offset = comp[k]
            free[rows] = x_free + offset

    q_bar = np.tile(cfg.state_weights, N)
    err = free - ref.reshape(-1)
    qsu = su * q_bar[:, None]
    h = 2.0 * (su.T @ qsu) + 2.0 * cfg.input_weight * np.eye(N * nu)
    h = 0.5 * (h + h.T)
    f = 2.0 * (qsu.T @ err)

    if stance_schedule is None:
        return QpProblem(h, f)
    sched = np.asarray(stance_schedule, dtype=bool).reshape(N, 4)
    blocks_in, lows, ups, blocks_eq = [], [], [], []
    for k in range(N):
        a_in, lo, up, a_eq, _ = build_friction_constraints(cfg.mu, sched[k], cfg.fz_bounds)
        pad_in = np.zeros((a_in.shape[0], N * nu))
        pad_in[:, k * nu : (k + 1) * nu] = a_in
        pad_eq = np.zeros((a_eq.shape[0], N * nu))
        pad_eq[:, k * nu : (k + 1) * nu] = a_eq
        blocks_in.append(pad_in)
        lows.append(lo)
        ups.append(up)
        blocks_eq.append(pad_eq)
    a_ineq = np.vstack(blocks_in)
    a_eq = np.vstack(blocks_eq)
    return QpProblem(h, f, a_ineq, np.concatenate(lows), np.concatenate(ups), a_eq, np.zeros(a_eq.shape[0]))


def rollout(dyn: DiscreteDynamics, x0, grfs, compensation=None, propagate: bool = True) -> np.ndarray:
    """Predicted states x~_1..x~_N for a force plan, compensated as in condense."""
    x = x0.to_vector() if isinstance(x0, RobotState) else np.asarray(x0, dtype=float)
    grfs = np.asarray(grfs, dtype=float).reshape(-1, N_INPUT)
    out = np.zeros((grfs.shape[0], N_STATE))
    offset = np.zeros(N_STATE)
    for k, u in enumerate(grfs):
        x = dyn.a_mat @ x + dyn.b_mat @ u
        if compensation is None:
            out[k] = x
            continue
        offset = dyn.a_mat @ offset + compensation[k] if propagate else compensation[k]
        out[k] = x + offset
    return out


@dataclass
class MpcOutput:
    grfs: np.ndarray
    predicted_states: np.ndarray
    status: str
    iterations: int
    kkt_residual: float
    error_forecast: np.ndarray | None = None
    compensation: np.ndarray | None = None

    @property
    def first(self) -> np.ndarray:
        return self.grfs[0]

    @property
    def compensation_first(self) -> np.ndarray:
        """First-step error forecast (roll, pitch, yaw, height), zeros when inactive."""
        if self.error_forecast is None:
            return np.zeros(4)
        return self.error_forecast[0]


class MpcController:
    """Receding-horizon GRF planner.

    The error forecast e_hat is desired-minus-measured, so the predicted state
    is corrected by -S e_hat: a robot forecast to sit below its target is
    predicted lower, and the planner pushes harder.

    With ``log_effective_target`` the logged error is shifted by the forecast
    the planner acted on, i.e. measured against x_ref + S e_hat. Off by
    default: in closed loop it behaves like a lagged integrator.
    """

    def __init__(self, cfg: MpcConfig, mass: float, inertia, compensator: ErrorCompensator | None = None, solver=None):
        self.cfg = cfg
        self.mass = float(mass)
        self.inertia = np.asarray(inertia, dtype=float).reshape(3, 3)
        self.compensator = compensator
        self.solver = solver or QpSolver()
        self._select = select_matrix()
        self._prev: np.ndarray | None = None
        self._aimed = np.zeros(self._select.shape[1])
        self._applied_u: np.ndarray | None = None

    def reset(self) -> None:
        """Forget the previous plan; the next solve starts cold."""
        self._prev = None

    def observe_error(self, e_measured, tick: int, applied_u=None) -> ErrorSample | None:
        """Log one tracking error sample (desired minus measured) with the force that produced it."""
        if self.compensator is None:
            return None
        if applied_u is None:
            applied_u = self._applied_u if self._applied_u is not None else self.compensator.input_baseline
        e = np.asarray(e_measured, dtype=float).reshape(-1)
        if self.cfg.log_effective_target:
            e = e + self._aimed
        sample = ErrorSample(e, np.asarray(applied_u, dtype=float), int(tick))
        self.compensator.record(sample)
        return sample

    @property
    def previous_plan(self) -> np.ndarray | None:
        return None if self._prev is None else self._prev.copy()

    def planned_inputs(self) -> np.ndarray:
        """Previous plan shifted one step, last step repeated; static baseline before the first solve."""
        N = self.cfg.horizon
        if self._prev is None:
            if self.compensator is not None:
                return np.tile(self.compensator.input_baseline, (N, 1))
            return np.zeros((N, N_INPUT))
        return np.vstack([self._prev[1:], self._prev[-1:]])

    def control_tick(
        self, x_measured: RobotState, command: Command, stance_schedule, foot_positions, yaw_reference: float | None = None
    ) -> MpcOutput:
        cfg = self.cfg
        params = ModelParams(self.mass, self.inertia, foot_positions)
        dyn = discrete_dynamics(float(x_measured.theta[2]), params, cfg.dt)
        ref = build_reference(command, x_measured, cfg, yaw_reference)

        forecast = None
        comp = None
        if cfg.compensation_enabled and self.compensator is not None:
            forecast = self.compensator.forecast(self.planned_inputs())
            if forecast is not None:
                comp = -compensation_term(forecast, self._select)

        problem = condense(dyn, comp, x_measured, ref, cfg, stance_schedule)
        warm = None if self._prev is None else np.vstack([self._prev[1:], self._prev[-1:]]).reshape(-1)
        try:
            sol: QpSolution = self.solver.solve(problem, warm_start=warm)
        except Infeasible as exc:
            raise SolverInfeasible(str(exc)) from exc
        grfs = sol.y.reshape(cfg.horizon, N_INPUT)
        self._prev = grfs.copy()
        self._applied_u = grfs[0].copy()
        self._aimed = np.zeros_like(self._aimed) if forecast is None else forecast[0].copy()
        return MpcOutput(
            grfs=grfs,
            predicted_states=rollout(dyn, x_measured, grfs, comp, cfg.propagate_compensation),
            status=sol.status,
            iterations=sol.iterations,
            kkt_residual=sol.kkt_residual,
            error_forecast=forecast,
            compensation=comp,
        )


def hover_forces(mass: float, stance_mask, g: float = GRAVITY) -> np.ndarray:
    """Equal vertical load sharing across stance feet."""
    mask = np.asarray(stance_mask, dtype=bool).reshape(4)
    u = np.zeros(N_INPUT)
    u[2::3][mask] = mass * g / max(mask.sum(), 1)
    return u
