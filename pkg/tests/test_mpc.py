from dataclasses import replace

import numpy as np
import pytest

from armav_mpc.armav import ArmavModel
from armav_mpc.error_model import ErrorCompensator, InputAwareErrorModel, static_input_baseline
from armav_mpc.errors import DimensionMismatch
from armav_mpc.mpc import (
    Command,
    MpcConfig,
    MpcController,
    build_reference,
    condense,
    hover_forces,
    rollout,
)
from armav_mpc.qp import QpSolver
from armav_mpc.srb import GRAVITY, ModelParams, RobotState, discrete_dynamics

MASS = 23.7
INERTIA = np.diag([0.35, 1.1, 1.2])
FEET = np.array([[0.31, 0.148, -0.38], [0.31, -0.148, -0.38], [-0.31, 0.148, -0.38], [-0.31, -0.148, -0.38]])
TROT = np.array([[True, False, False, True]] * 6 + [[False, True, True, False]] * 6)


def _dyn(yaw=0.0):
    return discrete_dynamics(yaw, ModelParams(MASS, INERTIA, FEET), 0.03)


def _state(height=0.38, **kw):
    return RobotState(p=[0.0, 0.0, height], **kw)


def _warm_compensator(height_error):
    comp = ErrorCompensator(static_input_baseline(MASS), order=(1, 0), adequacy_gate=False)
    core = ArmavModel([np.eye(4) * 0.9], [])
    core.prime([[0.0, 0.0, 0.0, height_error]], [])
    comp.model = InputAwareErrorModel(core, np.zeros((4, 12)), comp.input_baseline)
    return comp


# ---------------------------------------------------------------- reference


def test_reference_constant_at_height():
    cfg = MpcConfig()
    ref = build_reference(Command(), _state(), cfg)
    assert ref.shape == (13, 13)
    assert np.all(ref[:, 5] == 0.38)
    assert np.all(ref == ref[0])


def test_reference_forward_integration():
    cfg = MpcConfig()
    ref = build_reference(Command(vx=0.5), _state(), cfg)
    np.testing.assert_allclose(np.diff(ref[:, 3]), 0.5 * cfg.dt, atol=1e-15)
    np.testing.assert_allclose(ref[:, 9], 0.5)


def test_reference_yaw_rate():
    cfg = MpcConfig()
    ref = build_reference(Command(yaw_rate=0.4), _state(theta=[0, 0, 0.1]), cfg)
    np.testing.assert_allclose(ref[:, 2], 0.1 + 0.4 * np.arange(13) * cfg.dt, atol=1e-15)


def test_reference_rejects_nan():
    with pytest.raises(ValueError):
        build_reference(Command(vx=np.nan), _state(), MpcConfig())


# ---------------------------------------------------------------- condensation


def test_zero_compensation_is_bit_identical():
    cfg = MpcConfig()
    x0 = _state(0.37, v=[0.01, 0, -0.02])
    ref = build_reference(Command(), x0, cfg)
    base = condense(_dyn(), None, x0, ref, cfg, TROT)
    zero = condense(_dyn(), np.zeros((12, 13)), x0, ref, cfg, TROT)
    assert base.h.tobytes() == zero.h.tobytes()
    assert base.f.tobytes() == zero.f.tobytes()


def test_one_step_hand_condensation():
    # [DERIVED] x1 = A x0 + B u, cost (x1 - r)'Q(x1 - r) + R u'u
    cfg = MpcConfig(horizon=1)
    dyn = _dyn(0.2)
    x0 = _state(0.36, v=[0.0, 0.1, 0.05]).to_vector()
    ref = build_reference(Command(), RobotState.from_vector(x0), cfg)
    q = np.diag(cfg.state_weights)
    prob = condense(dyn, None, x0, ref, cfg)
    h = 2.0 * (dyn.b_mat.T @ q @ dyn.b_mat + cfg.input_weight * np.eye(12))
    f = 2.0 * dyn.b_mat.T @ q @ (dyn.a_mat @ x0 - ref[1])
    np.testing.assert_allclose(prob.h, h, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(prob.f, f, rtol=1e-12, atol=1e-12)


def test_two_step_constant_shift_oracle():
    # [DERIVED] symbolic N = 2: offsets d and A d + d, f shifts by 2 Su' Q [d; A d + d]
    cfg = MpcConfig(horizon=2)
    dyn = _dyn()
    a, b = dyn.a_mat, dyn.b_mat
    x0 = _state(0.38)
    ref = build_reference(Command(), x0, cfg)
    d = np.zeros(13)
    d[5] = -0.01
    base = condense(dyn, None, x0, ref, cfg)
    comp = condense(dyn, np.tile(d, (2, 1)), x0, ref, cfg)
    su = np.block([[b, np.zeros_like(b)], [a @ b, b]])
    q = np.diag(np.tile(cfg.state_weights, 2))
    expected = 2.0 * su.T @ q @ np.concatenate([d, a @ d + d])
    np.testing.assert_allclose(comp.f - base.f, expected, atol=1e-10)
    # the same QP as an uncompensated build whose reference is lowered by the offsets
    shifted = condense(dyn, None, x0, ref[1:] - np.vstack([d, a @ d + d]), cfg)
    np.testing.assert_allclose(comp.f, shifted.f, atol=1e-10)
    assert comp.h.tobytes() == base.h.tobytes()


def test_per_step_compensation_option():
    cfg = MpcConfig(horizon=2, propagate_compensation=False)
    dyn = _dyn()
    x0 = _state()
    ref = build_reference(Command(), x0, cfg)
    d = np.zeros(13)
    d[5] = -0.01
    comp = condense(dyn, np.tile(d, (2, 1)), x0, ref, cfg)
    shifted = condense(dyn, None, x0, ref[1:] - np.vstack([d, d]), cfg)
    np.testing.assert_allclose(comp.f, shifted.f, atol=1e-10)


def test_linear_term_is_linear_in_forecast():
    cfg = MpcConfig()
    dyn = _dyn(0.3)
    x0 = _state(0.37)
    ref = build_reference(Command(vx=0.2), x0, cfg)
    rng = np.random.default_rng(0)
    c1, c2 = rng.normal(0, 0.01, (2, 12, 13))
    f0 = condense(dyn, None, x0, ref, cfg).f
    f1 = condense(dyn, c1, x0, ref, cfg).f - f0
    f2 = condense(dyn, c2, x0, ref, cfg).f - f0
    f12 = condense(dyn, 2.0 * c1 - 0.5 * c2, x0, ref, cfg).f - f0
    np.testing.assert_allclose(f12, 2.0 * f1 - 0.5 * f2, atol=1e-8 * np.abs(f0).max())


def test_condense_shape_errors():
    cfg = MpcConfig()
    x0 = _state()
    ref = build_reference(Command(), x0, cfg)
    with pytest.raises(DimensionMismatch):
        condense(_dyn(), np.zeros((11, 13)), x0, ref, cfg)
    with pytest.raises(DimensionMismatch):
        condense(_dyn(), None, x0, ref[:5], cfg)


def test_rollout_matches_condensed_prediction():
    cfg = MpcConfig(horizon=4)
    dyn = _dyn()
    x0 = _state(0.37)
    u = np.tile(hover_forces(MASS, [True, False, False, True]), (4, 1))
    comp = np.random.default_rng(1).normal(0, 0.01, (4, 13))
    pred = rollout(dyn, x0, u, comp)
    x = x0.to_vector()
    off = np.zeros(13)
    for k in range(4):
        x = dyn.a_mat @ x + dyn.b_mat @ u[k]
        off = dyn.a_mat @ off + comp[k]
        np.testing.assert_allclose(pred[k], x + off, atol=1e-14)


# ---------------------------------------------------------------- controller


def test_cold_model_matches_baseline():
    cfg = MpcConfig()
    x0 = _state(0.37)
    plain = MpcController(cfg, MASS, INERTIA).control_tick(x0, Command(), TROT, FEET)
    cold_comp = ErrorCompensator(static_input_baseline(MASS), order=(2, 1))
    cold = MpcController(cfg, MASS, INERTIA, cold_comp).control_tick(x0, Command(), TROT, FEET)
    assert plain.grfs.tobytes() == cold.grfs.tobytes()
    assert cold.error_forecast is None


def test_disabled_compensation_matches_baseline():
    x0 = _state(0.37)
    plain = MpcController(MpcConfig(), MASS, INERTIA).control_tick(x0, Command(), TROT, FEET)
    off = MpcController(replace(MpcConfig(), compensation_enabled=False), MASS, INERTIA, _warm_compensator(0.02))
    assert plain.grfs.tobytes() == off.control_tick(x0, Command(), TROT, FEET).grfs.tobytes()


def test_hover_force_balance():
    # [DERIVED] static balance: each of the two stance legs carries about m g / 2.
    # The input weight tapers the last planned forces, so the first step sits
    # slightly above the static value; the closed-loop average is checked in the
    # simulator tests.
    cfg = MpcConfig()
    sched = np.array([[True, False, False, True]] * 12)
    out = MpcController(cfg, MASS, INERTIA).control_tick(_state(), Command(), sched, FEET)
    fz = out.first[2::3]
    np.testing.assert_allclose(fz[[0, 3]], MASS * GRAVITY / 2, rtol=0.02)
    assert fz[0] == pytest.approx(fz[3], rel=1e-9)
    np.testing.assert_array_equal(fz[[1, 2]], 0.0)
    np.testing.assert_allclose(hover_forces(MASS, [True, False, False, True])[2::3][[0, 3]], MASS * GRAVITY / 2)


def test_positive_height_error_raises_vertical_force():
    x0 = _state(0.37)
    base = MpcController(MpcConfig(), MASS, INERTIA).control_tick(x0, Command(), TROT, FEET)
    ctrl = MpcController(MpcConfig(), MASS, INERTIA, _warm_compensator(0.01))
    out = ctrl.control_tick(x0, Command(), TROT, FEET)
    assert out.error_forecast[0, 3] > 0.0
    assert out.first[2::3].sum() > base.first[2::3].sum()
    assert out.compensation[0, 5] < 0.0


def test_solved_forces_satisfy_constraints():
    cfg = MpcConfig()
    rng = np.random.default_rng(2)
    ctrl = MpcController(cfg, MASS, INERTIA, _warm_compensator(0.01))
    for _ in range(5):
        x0 = _state(0.38 + rng.normal(0, 0.01), theta=rng.normal(0, 0.02, 3), v=rng.normal(0, 0.05, 3))
        out = ctrl.control_tick(x0, Command(vx=0.3), TROT, FEET)
        assert out.status == "solved"
        for k in range(cfg.horizon):
            f = out.grfs[k].reshape(4, 3)
            for leg in range(4):
                if TROT[k, leg]:
                    assert abs(f[leg, 0]) <= cfg.mu * f[leg, 2] + 1e-6
                    assert abs(f[leg, 1]) <= cfg.mu * f[leg, 2] + 1e-6
                    assert cfg.fz_bounds[0] - 1e-6 <= f[leg, 2] <= cfg.fz_bounds[1] + 1e-6
                else:
                    assert np.all(np.abs(f[leg]) <= 1e-9)


def test_repeat_solve_is_deterministic():
    x0 = _state(0.37, v=[0.0, 0.0, 0.01])
    a = MpcController(MpcConfig(), MASS, INERTIA, _warm_compensator(0.01)).control_tick(x0, Command(), TROT, FEET)
    b = MpcController(MpcConfig(), MASS, INERTIA, _warm_compensator(0.01)).control_tick(x0, Command(), TROT, FEET)
    assert a.grfs.tobytes() == b.grfs.tobytes()


def test_planned_inputs_shift_previous_plan():
    ctrl = MpcController(MpcConfig(), MASS, INERTIA, _warm_compensator(0.0))
    np.testing.assert_array_equal(ctrl.planned_inputs(), np.tile(static_input_baseline(MASS), (12, 1)))
    out = ctrl.control_tick(_state(), Command(), TROT, FEET)
    planned = ctrl.planned_inputs()
    np.testing.assert_array_equal(planned[:-1], out.grfs[1:])
    np.testing.assert_array_equal(planned[-1], out.grfs[-1])


def test_observe_error_records_applied_force():
    comp = ErrorCompensator(static_input_baseline(MASS), order=(1, 0))
    ctrl = MpcController(MpcConfig(), MASS, INERTIA, comp)
    s = ctrl.observe_error([0.0, 0.0, 0.0, 0.01], 0)
    np.testing.assert_array_equal(s.u, comp.input_baseline)
    out = ctrl.control_tick(_state(), Command(), TROT, FEET)
    s = ctrl.observe_error([0.0, 0.0, 0.0, 0.01], 1)
    np.testing.assert_array_equal(s.u, out.first)
    assert len(comp.buffer) == 2


def test_custom_solver_is_used():
    class Counting(QpSolver):
        calls = 0

        def solve(self, problem, warm_start=None, warm_active=None):
            Counting.calls += 1
            return super().solve(problem, warm_start, warm_active)

    MpcController(MpcConfig(), MASS, INERTIA, solver=Counting()).control_tick(_state(), Command(), TROT, FEET)
    assert Counting.calls == 1
