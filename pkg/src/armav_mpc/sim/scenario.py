"""Closed-loop scenarios: truth model, noisy measurement, error model and MPC."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..error_model import ErrorBuffer, ErrorCompensator, ErrorSample, static_input_baseline
from ..errors import ScenarioDiverged, SolverInfeasible
from ..mpc import Command, MpcConfig, MpcController, default_state_weights
from ..srb import RobotState
from .gait import GaitSchedule, default_hip_offsets, foothold
from .metrics import RunMetrics, Telemetry, compare_metrics, metrics
from .world import SimWorld, physics_step, quat_from_euler_zyx

FALL_HEIGHT = 0.15
FALL_ANGLE = 0.6


@dataclass
class ScenarioConfig:
    name: str = "custom"
    true_mass: float = 23.7
    control_mass: float = 23.7
    true_inertia: list = field(default_factory=lambda: [0.35, 1.1, 1.2])
    control_inertia: list = field(default_factory=lambda: [0.35, 1.1, 1.2])
    payload: list = field(default_factory=list)
    command: dict = field(default_factory=lambda: {"vx": 0.0, "vy": 0.0, "yaw_rate": 0.0, "height": 0.38})
    duration: float = 30.0
    compensation: bool = True
    order: object = field(default_factory=lambda: [1, 0])
    seed: int = 0
    noise_std: dict = field(
        default_factory=lambda: {"angle": 2e-4, "position": 2e-4, "angular_velocity": 2e-3, "velocity": 2e-3}
    )
    physics_dt: float = 0.001
    mpc_dt: float = 0.03
    horizon: int = 12
    state_weights: list = field(default_factory=lambda: default_state_weights().tolist())
    input_weight: float = 1e-5
    mu: float = 0.6
    gait_period: float = 0.48
    duty: float = 0.5
    leg_mass: float = 0.5
    swing_height: float = 0.06
    initial_height: float = 0.38
    warmup: float = 2.0
    refit_every: int | None = 10
    error_capacity: int = 2000
    min_error_samples: int = 40
    adequacy_gate: bool = False
    estimate_input: bool = False
    alpha: float = 0.95
    propagate_compensation: bool = True
    log_effective_target: bool = False

    def __post_init__(self):
        if self.physics_dt > self.mpc_dt / 10 + 1e-15:
            raise ValueError("physics dt must be at most a tenth of the MPC dt")
        ratio = self.mpc_dt / self.physics_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("MPC dt must be an integer multiple of the physics dt")
        if self.duration <= 0 or self.true_mass <= 0 or self.control_mass <= 0:
            raise ValueError("duration and masses must be positive")
        if isinstance(self.order, str):
            if self.order != "auto":
                self.order = [int(v) for v in self.order.split(",")]
        elif self.order is not None:
            self.order = [int(v) for v in self.order]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scenario fields: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def with_compensation(self, on: bool) -> "ScenarioConfig":
        return replace(self, compensation=on)

    @property
    def decimation(self) -> int:
        return int(round(self.mpc_dt / self.physics_dt))


def builtin_scenarios() -> dict:
    return {
        "ground_truth": ScenarioConfig(name="ground_truth"),
        "wrong_mass": ScenarioConfig(name="wrong_mass", control_mass=34.7),
        "payload_8kg": ScenarioConfig(name="payload_8kg", payload=[[5.0, 8.0]], duration=40.0),
    }


def get_scenario(name_or_path: str) -> ScenarioConfig:
    table = builtin_scenarios()
    if name_or_path in table:
        return table[name_or_path]
    return ScenarioConfig.load(name_or_path)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    metrics: RunMetrics
    telemetry: Telemetry
    fell_over: bool
    fall_time: float | None = None
    n_fits: int = 0
    n_infeasible: int = 0
    error_log: ErrorBuffer | None = None

    def telemetry_csv(self) -> str:
        return self.telemetry.to_csv()


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _measure(world: SimWorld, rng: np.random.Generator, noise: dict) -> RobotState:
    s = world.state()
    return RobotState(
        s.theta + rng.normal(0.0, noise.get("angle", 0.0), 3),
        s.p + rng.normal(0.0, noise.get("position", 0.0), 3),
        s.omega + rng.normal(0.0, noise.get("angular_velocity", 0.0), 3),
        s.v + rng.normal(0.0, noise.get("velocity", 0.0), 3),
        s.g,
    )


def _fell(world: SimWorld) -> bool:
    s = world.state()
    return s.p[2] < FALL_HEIGHT or abs(s.theta[0]) > FALL_ANGLE or abs(s.theta[1]) > FALL_ANGLE


def run_scenario(config: ScenarioConfig, raise_on_fall: bool = True) -> ScenarioResult:
    """Simulate one scenario; deterministic for a fixed config.

    On a fall, ScenarioDiverged carries the partial result (``fell_over``
    set) unless ``raise_on_fall`` is false.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    gait = GaitSchedule(cfg.gait_period, cfg.duty)
    hips = default_hip_offsets()
    world = SimWorld(
        mass=cfg.true_mass,
        inertia=np.diag(cfg.true_inertia) if np.ndim(cfg.true_inertia) == 1 else cfg.true_inertia,
        q=quat_from_euler_zyx(0.0, 0.0, 0.0),
        p=np.array([0.0, 0.0, cfg.initial_height]),
        payload=[tuple(p) for p in cfg.payload],
        gait=gait,
        hip_offsets=hips,
        leg_mass=cfg.leg_mass,
        swing_height=cfg.swing_height,
        dt=cfg.physics_dt,
    )
    cmd = Command(**cfg.command)
    mpc_cfg = MpcConfig(
        horizon=cfg.horizon,
        dt=cfg.mpc_dt,
        state_weights=cfg.state_weights,
        input_weight=cfg.input_weight,
        mu=cfg.mu,
        compensation_enabled=cfg.compensation,
        propagate_compensation=cfg.propagate_compensation,
        log_effective_target=cfg.log_effective_target,
    )
    baseline = static_input_baseline(cfg.control_mass)
    compensator = None
    if cfg.compensation:
        order = "auto" if cfg.order == "auto" else tuple(cfg.order)
        compensator = ErrorCompensator(
            baseline,
            order=order,
            capacity=cfg.error_capacity,
            refit_every=cfg.refit_every,
            min_samples=cfg.min_error_samples,
            alpha=cfg.alpha,
            estimate_input=cfg.estimate_input,
            adequacy_gate=cfg.adequacy_gate,
        )
    c_inertia = np.diag(cfg.control_inertia) if np.ndim(cfg.control_inertia) == 1 else cfg.control_inertia
    ctrl = MpcController(mpc_cfg, cfg.control_mass, c_inertia, compensator)

    telemetry = Telemetry()
    n_ticks = int(round(cfg.duration / cfg.mpc_dt))
    error_log = ErrorBuffer(n_ticks)
    decim = cfg.decimation
    u_prev = baseline.copy()
    u_apply = baseline.copy()
    v_cmd = np.array([cmd.vx, cmd.vy, 0.0])
    fell, fall_time, n_infeasible, fails_in_row = False, None, 0, 0

    for tick in range(n_ticks):
        t = world.t
        x_meas = _measure(world, rng, cfg.noise_std)
        yaw_des = cmd.yaw_rate * t
        desired = np.array([cmd.roll, cmd.pitch, yaw_des, cmd.height])
        measured = np.array([x_meas.theta[0], x_meas.theta[1], x_meas.theta[2], x_meas.p[2]])
        err = desired - measured
        err[2] = _wrap(err[2])
        error_log.push(ErrorSample(err, u_prev, tick))
        ctrl.observe_error(err, tick, u_prev)

        sched = gait.schedule(t, cfg.horizon, cfg.mpc_dt)
        stance_now = gait.stance(t)
        feet = world.anchors - x_meas.p
        hip_w = world.hip_world()
        for leg in range(4):
            if not stance_now[leg]:
                ph = gait.phase(t)[leg]
                t_td = (1.0 - ph) * gait.period
                hip_td = hip_w[leg] + world.v * t_td
                feet[leg] = foothold(hip_td, world.v, v_cmd, gait.stance_time, cmd.height) - x_meas.p

        try:
            out = ctrl.control_tick(x_meas, cmd, sched, feet, yaw_reference=yaw_des)
            u_apply = out.first.copy()
            status, iters, comp_first = out.status, out.iterations, out.compensation_first
            fails_in_row = 0
        except SolverInfeasible:
            # hold the previous first-step forces for one tick
            n_infeasible += 1
            fails_in_row += 1
            if fails_in_row > 1:
                raise
            ctrl.reset()
            status, iters, comp_first = "held", 0, np.zeros(4)
        telemetry.append(
            t,
            x_meas.to_vector(),
            _reference_row(cmd, x_meas, yaw_des),
            comp_first,
            u_apply,
            status,
            iters,
        )

        for _ in range(decim):
            before = gait.stance(world.t)
            mask = before
            forces = np.where(np.repeat(mask, 3), u_apply, 0.0)
            physics_step(world, forces, mask)
            after = gait.stance(world.t)
            touchdown = after & ~before
            if touchdown.any():
                hip_now = world.hip_world()
                for leg in np.flatnonzero(touchdown):
                    world.anchors[leg] = foothold(hip_now[leg], world.v, v_cmd, gait.stance_time, cmd.height)
        u_prev = u_apply
        if _fell(world):
            fell, fall_time = True, world.t
            break

    warm = min(cfg.warmup, telemetry.time[-1]) if fell else cfg.warmup
    try:
        m = metrics(telemetry, warm, fell_over=fell)
    except Exception:
        m = metrics(telemetry, 0.0, fell_over=fell)
    result = ScenarioResult(
        cfg, m, telemetry, fell, fall_time, compensator.n_fits if compensator else 0, n_infeasible, error_log
    )
    if fell and raise_on_fall:
        raise ScenarioDiverged(f"scenario {cfg.name!r} fell over at t = {fall_time:.3f} s", result)
    return result


def _reference_row(cmd: Command, x_meas: RobotState, yaw_des: float) -> np.ndarray:
    c, s = math.cos(yaw_des), math.sin(yaw_des)
    v_world = np.array([c * cmd.vx - s * cmd.vy, s * cmd.vx + c * cmd.vy, 0.0])
    return np.concatenate(
        [[cmd.roll, cmd.pitch, yaw_des], [x_meas.p[0], x_meas.p[1], cmd.height], [0.0, 0.0, cmd.yaw_rate], v_world, [x_meas.g]]
    )


@dataclass
class CompareReport:
    baseline: ScenarioResult
    compensated: ScenarioResult
    reductions: dict

    def merged_csv(self) -> str:
        """Time, baseline height and compensated height side by side."""
        a = self.baseline.telemetry.arrays()
        b = self.compensated.telemetry.arrays()
        n = min(len(a["time"]), len(b["time"]))
        lines = ["time,height_baseline,height_compensated,ref_height"]
        for i in range(n):
            lines.append(
                f"{a['time'][i]!r},{a['measured'][i, 5]!r},{b['measured'][i, 5]!r},{a['reference'][i, 5]!r}"
            )
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "scenario": self.baseline.config.name,
            "baseline": self.baseline.metrics.to_dict(),
            "compensated": self.compensated.metrics.to_dict(),
            "reductions_pct": self.reductions,
        }


def paired_compare(config: ScenarioConfig, arms: tuple[bool, bool] = (False, True)) -> CompareReport:
    """Run the scenario twice under the same seed, by default compensation off then on."""
    base = run_scenario(config.with_compensation(arms[0]), raise_on_fall=False)
    comp = run_scenario(config.with_compensation(arms[1]), raise_on_fall=False)
    red = compare_metrics(base.metrics, comp.metrics, config.command.get("height", 0.38))
    comp.metrics.reductions = red
    return CompareReport(base, comp, red)
