import json
import warnings

import numpy as np
import pytest
from scipy import stats

from armav_mpc.armav import (
    ArmavModel,
    InverseExpansion,
    SeriesWindow,
    f_quantile,
    f_statistic,
    filter_residuals,
    fit_ar_ls,
    fit_armav,
    inverse_coefficients,
    minimum_samples,
    phi_from_inverse,
    residual_autocorrelation,
    select_order,
    theta_from_inverse,
    whiteness_fraction,
)
from armav_mpc.errors import BuffersNotWarm, InsufficientData, SingularRegressor, ZeroVariance

from generators import PHI1, PHI2, THETA1, random_stable_arma, simulate_armav


# ---------------------------------------------------------------- windows


def test_window_rejects_non_finite():
    with pytest.raises(ValueError):
        SeriesWindow.from_samples([[0.0], [np.nan]])


def test_window_mean_and_centering():
    w = SeriesWindow.from_samples(np.arange(10.0))
    assert w.N == 10 and w.r == 1
    assert w.mean[0] == pytest.approx(4.5)
    assert w.centered.mean() == pytest.approx(0.0)


def test_minimum_samples_formula():
    assert minimum_samples(2, 1, 4) == (2 + 1) * 4 + 10


# ---------------------------------------------------------------- AR least squares


def test_ar_ls_white_noise_has_no_autoregression():
    z = np.random.default_rng(3).normal(size=5000)
    inv, _ = fit_ar_ls(SeriesWindow.from_samples(z), 2)
    assert np.all(np.abs(inv.coeffs) <= 3 / np.sqrt(5000))


def test_ar_ls_scalar_ar1():
    # [DERIVED] simulate the generating recursion, fit, compare to the known coefficient
    z, _ = simulate_armav([[[0.8]]], [], 5000, noise_std=0.1, seed=4)
    inv, diag = fit_ar_ls(SeriesWindow.from_samples(z), 1)
    assert inv.coeffs[0, 0, 0] == pytest.approx(0.8, abs=0.05)
    assert diag.rss > 0


def test_ar_ls_bivariate():
    phi = np.array([[0.5, 0.1], [0.0, 0.6]])
    z, _ = simulate_armav([phi], [], 10000, seed=5)
    inv, _ = fit_ar_ls(SeriesWindow.from_samples(z), 1)
    np.testing.assert_allclose(inv.coeffs[0], phi, atol=0.05)


def test_ar_ls_matches_unregularized_lstsq():
    # [DERIVED] plain numpy least squares on the same lagged design
    z, _ = simulate_armav([PHI1, PHI2], [THETA1], 3000, seed=6)
    w = SeriesWindow.from_samples(z)
    inv, _ = fit_ar_ls(w, 3)
    zc = w.centered
    X = np.hstack([zc[3 - i : len(zc) - i] for i in (1, 2, 3)])
    sol, *_ = np.linalg.lstsq(X, zc[3:], rcond=None)
    ref = np.stack([sol[i * 4 : (i + 1) * 4].T for i in range(3)])
    np.testing.assert_allclose(inv.coeffs, ref, atol=1e-6)


def test_ar_ls_rss_non_increasing_in_order():
    z, _ = simulate_armav([PHI1, PHI2], [THETA1], 2000, seed=7)
    w = SeriesWindow.from_samples(z)
    p_max = 6
    rss = []
    for p in range(1, p_max + 1):
        inv, _ = fit_ar_ls(w, p)
        # compare on the common sample range t >= p_max
        zc = w.centered
        pred = sum(zc[p_max - i : len(zc) - i] @ inv.coeffs[i - 1].T for i in range(1, p + 1))
        rss.append(float(np.sum((zc[p_max:] - pred) ** 2)))
    assert all(b <= a + 1e-9 for a, b in zip(rss, rss[1:]))


def test_ar_ls_exogenous_gain():
    rng = np.random.default_rng(8)
    N = 4000
    u = rng.normal(size=(N, 2))
    c = np.array([[0.3, -0.2]])
    z = np.zeros(N)
    a = rng.normal(0, 0.05, N)
    for t in range(1, N):
        z[t] = 0.7 * z[t - 1] + c[0] @ u[t] + a[t]
    inv, diag = fit_ar_ls(SeriesWindow.from_samples(z), 1, exog=u)
    np.testing.assert_allclose(inv.exog_coeffs, c, atol=0.02)
    assert diag.n_params == 1 + 2


def test_ar_ls_insufficient_data():
    with pytest.raises(InsufficientData):
        fit_ar_ls(SeriesWindow.from_samples(np.zeros((20, 4)) + np.arange(20)[:, None]), 3)


def test_ar_ls_zero_data_is_singular():
    with pytest.raises(SingularRegressor):
        fit_ar_ls(SeriesWindow.from_samples(np.zeros(100)), 1)


# ---------------------------------------------------------------- inverse function


def test_theta_empty_for_pure_ar():
    inv = InverseExpansion(np.zeros((2, 1, 1)))
    assert theta_from_inverse(inv, 2, 0) == []


def test_theta_scalar_geometric_inverse():
    # I_{j+1} = Theta_1 I_j for an ARMA(1,1)
    inv = InverseExpansion(np.array([0.5, 0.25, 0.125]).reshape(3, 1, 1))
    (theta,) = theta_from_inverse(inv, 1, 1)
    assert theta[0, 0] == pytest.approx(0.5)


def test_phi_paper_first_line():
    # [PAPER] Phi_1 = Theta_1 + I_1 with Theta_1 = 0.5, I_1 = 0.3
    inv = InverseExpansion(np.array([0.3]).reshape(1, 1, 1))
    (phi,) = phi_from_inverse(inv, [np.array([[0.5]])], 1)
    assert phi[0, 0] == pytest.approx(0.8)


def test_phi_equals_inverse_when_no_ma():
    rng = np.random.default_rng(9)
    coeffs = rng.normal(size=(3, 2, 2))
    phis = phi_from_inverse(InverseExpansion(coeffs), [], 3)
    for j in range(3):
        np.testing.assert_array_equal(phis[j], coeffs[j])


def test_inverse_coefficients_scalar_arma11():
    # [DERIVED] closed form: I_j = (phi - theta) theta^{j-1}
    inv = inverse_coefficients([[[0.8]]], [[[0.5]]], 6)
    ref = [(0.8 - 0.5) * 0.5 ** (j - 1) for j in range(1, 7)]
    np.testing.assert_allclose(inv.coeffs[:, 0, 0], ref, rtol=0, atol=1e-15)


def test_theta_bivariate_round_trip_from_exact_expansion():
    rng = np.random.default_rng(10)
    phi, theta = random_stable_arma(rng, 2)
    inv = inverse_coefficients(phi, theta, 3)
    rec = theta_from_inverse(inv, 2, 1)
    np.testing.assert_allclose(rec[0], theta[0], atol=0.05)


@pytest.mark.parametrize("r", [1, 2])
def test_inverse_round_trip_many_models(r):
    rng = np.random.default_rng(100 + r)
    for _ in range(25):
        phi, theta = random_stable_arma(rng, r)
        inv = inverse_coefficients(phi, theta, 3)
        th = theta_from_inverse(inv, 2, 1)
        ph = phi_from_inverse(inv, th, 2)
        np.testing.assert_allclose(th[0], theta[0], atol=1e-8)
        for a, b in zip(ph, phi):
            np.testing.assert_allclose(a, b, atol=1e-8)


# ---------------------------------------------------------------- full fit


def test_fit_armav_recovers_generator():
    z, _ = simulate_armav([PHI1, PHI2], [THETA1], 8000, noise_std=0.1, seed=0)
    model, diag = fit_armav(SeriesWindow.from_samples(z), 2, 1)
    np.testing.assert_allclose(model.phi[0], PHI1, atol=0.08)
    np.testing.assert_allclose(model.phi[1], PHI2, atol=0.08)
    np.testing.assert_allclose(model.theta[0], THETA1, atol=0.08)
    assert model.warm
    assert diag.rss / diag.n_samples == pytest.approx(4 * 0.01, rel=0.1)


def test_fit_armav_n1_m0_equals_ar1():
    z, _ = simulate_armav([[[0.6]]], [], 1000, seed=11)
    w = SeriesWindow.from_samples(z)
    model, diag = fit_armav(w, 1, 0)
    inv, ar_diag = fit_ar_ls(w, 1)
    np.testing.assert_array_equal(model.phi[0], inv.coeffs[0])
    assert diag.rss == pytest.approx(ar_diag.rss, rel=1e-12)


def test_filter_residuals_replays_impulse():
    # [DERIVED] running the recursion driven by one impulse backwards returns the impulse
    N = 200
    a = np.zeros(N)
    a[0] = 1.0
    z = np.zeros(N)
    for t in range(N):
        z[t] = a[t] + (0.5 * z[t - 1] if t >= 1 else 0) - (0.3 * z[t - 2] if t >= 2 else 0) - (0.4 * a[t - 1] if t >= 1 else 0)
    rec = filter_residuals(z[:, None], np.array([[[0.5]], [[-0.3]]]), np.array([[[0.4]]]), start=0)
    # the first n residuals seed the recursion and are reported as zero
    np.testing.assert_allclose(rec[2:, 0], a[2:], atol=1e-12)


def test_fit_armav_noise_free_impulse_response():
    # [DERIVED] an ARMA(1,1) impulse response obeys z_t = 0.8 z_{t-1} from t = 2 on,
    # so the refit explains every sample it scores
    N = 200
    z = np.zeros(N)
    z[0] = 1.0
    z[1] = 0.8 - 0.4
    for t in range(2, N):
        z[t] = 0.8 * z[t - 1]
    model, diag = fit_armav(SeriesWindow.from_samples(z[:, None], demean=False), 1, 1)
    assert diag.rss / diag.n_samples <= 1e-10
    assert model.phi[0, 0, 0] == pytest.approx(0.8, abs=1e-6)


def test_fit_armav_offset_invariance():
    z, _ = simulate_armav([PHI1, PHI2], [THETA1], 3000, seed=12)
    m0, _ = fit_armav(SeriesWindow.from_samples(z), 2, 1)
    m1, _ = fit_armav(SeriesWindow.from_samples(z + np.array([1.0, -2.0, 0.5, 3.0])), 2, 1)
    np.testing.assert_allclose(m0.phi, m1.phi, atol=1e-9)
    np.testing.assert_allclose(m0.theta, m1.theta, atol=1e-9)


def test_fit_armav_needs_minimum_samples():
    with pytest.raises(InsufficientData):
        fit_armav(SeriesWindow.from_samples(np.random.default_rng(0).normal(size=(21, 4))), 2, 1)


# ---------------------------------------------------------------- prediction


def _ar1(value=1.0):
    model = ArmavModel([[[0.8]]])
    model.prime([[value]])
    return model


def test_cold_model_refuses_to_predict():
    with pytest.raises(BuffersNotWarm):
        ArmavModel([[[0.8]]]).predict_one_step()


def test_zero_buffers_predict_zero():
    model = ArmavModel(np.zeros((2, 3, 3)) + 0.1, np.zeros((1, 3, 3)) + 0.2)
    model.prime()
    np.testing.assert_array_equal(model.predict_one_step(), np.zeros(3))


def test_ar1_substitution():
    assert _ar1().predict_one_step()[0] == pytest.approx(0.8)


def test_ar1_three_steps():
    np.testing.assert_allclose(_ar1().predict_k_steps(3)[:, 0], [0.8, 0.64, 0.512], rtol=0, atol=1e-15)


def test_k_step_first_element_is_one_step():
    z, _ = simulate_armav([PHI1, PHI2], [THETA1], 2000, seed=13)
    model, _ = fit_armav(SeriesWindow.from_samples(z), 2, 1)
    np.testing.assert_array_equal(model.predict_k_steps(12)[0], model.predict_one_step())


def test_one_step_hand_evaluation():
    # [DERIVED] z_hat = Phi1 z_t + Phi2 z_{t-1} - Theta1 a_t with given buffers
    model = ArmavModel([PHI1, PHI2], [THETA1])
    z_hist = np.array([[0.1, 0.2, -0.1, 0.3], [0.4, -0.2, 0.0, 0.1]])  # oldest first
    a_hist = np.array([[0.0, 0.0, 0.0, 0.0], [0.05, -0.02, 0.01, 0.0]])
    model.prime(z_hist, a_hist)
    ref = PHI1 @ z_hist[1] + PHI2 @ z_hist[0] - THETA1 @ a_hist[1]
    np.testing.assert_allclose(model.predict_one_step(), ref, atol=1e-15)


def test_observe_exact_prediction_gives_zero_residual():
    model = _ar1()
    a = model.observe(model.predict_one_step())
    assert a[0] == 0.0


def test_observe_from_zero_buffers_returns_sample():
    model = ArmavModel([[[0.8]]], [[[0.3]]])
    model.prime()
    assert model.observe([0.7])[0] == pytest.approx(0.7)


def test_observe_replays_generator_noise():
    z, a = simulate_armav([PHI1, PHI2], [THETA1], 500, seed=14, burn=0)
    model = ArmavModel([PHI1, PHI2], [THETA1])
    model.prime()
    got = np.array([model.observe(zt) for zt in z])
    np.testing.assert_allclose(got, a, atol=1e-9)


def test_sinusoid_ar2_twelve_steps():
    # [DERIVED] sin(w t) satisfies z_t = 2 cos(w) z_{t-1} - z_{t-2}
    w = 2 * np.pi / 16
    t = np.arange(200)
    z = np.sin(w * t)
    model = ArmavModel([[[2 * np.cos(w)]], [[-1.0]]])
    model.prime(z[:100, None])
    pred = model.predict_k_steps(12)[:, 0]
    assert np.max(np.abs(pred - z[100:112])) <= 1e-6


def test_mean_is_added_back():
    model = ArmavModel([[[0.5]]], mean=[2.0])
    model.prime([[3.0]])
    assert model.predict_one_step()[0] == pytest.approx(2.0 + 0.5 * 1.0)


def test_model_json_round_trip():
    z, _ = simulate_armav([PHI1, PHI2], [THETA1], 1000, seed=15)
    model, _ = fit_armav(SeriesWindow.from_samples(z), 2, 1)
    back = ArmavModel.from_json(model.to_json())
    np.testing.assert_array_equal(back.predict_k_steps(5), model.predict_k_steps(5))
    doc = json.loads(model.to_json())
    assert {"n", "m", "r", "phi", "theta", "mean", "residual_variance"} <= set(doc)


# ---------------------------------------------------------------- F test and order selection


def test_f_statistic_examples():
    assert f_statistic(100.0, 100.0, 4, 1004, 4) == 0.0
    assert f_statistic(110.0, 100.0, 4, 1004, 4) == pytest.approx(25.0)
    assert f_statistic(5.0, 0.0, 4, 1004, 4) == float("inf")


def test_f_quantile_matches_scipy():
    for d1, d2 in [(4, 1000), (32, 7000), (1, 10)]:
        assert f_quantile(0.95, d1, d2) == pytest.approx(stats.f.ppf(0.95, d1, d2), rel=1e-10)


def test_select_order_ar2():
    z, _ = simulate_armav([[[0.6]], [[-0.3]]], [], 8000, seed=16)
    sel = select_order(SeriesWindow.from_samples(z))
    assert sel.n == 2 and sel.m in (0, 1)


def test_select_order_white_noise_is_smallest():
    z = np.random.default_rng(17).normal(size=(4000, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        sel = select_order(SeriesWindow.from_samples(z))
    assert sel.n == 2
    assert np.all(np.abs(sel.model.phi) < 0.1)


# ---------------------------------------------------------------- residual autocorrelation


def test_autocorrelation_zero_variance():
    with pytest.raises(ZeroVariance):
        residual_autocorrelation(np.zeros(50), 5)


def test_autocorrelation_alternating_sequence():
    # [DERIVED] direct evaluation: sum a_t a_{t+1} = -(N-1), so rho_1 = -1 exactly
    N = 100
    a = np.where(np.arange(N) % 2 == 0, 1.0, -1.0)
    rho = residual_autocorrelation(a, 3)
    assert rho[0, 0] == pytest.approx(-1.0)
    assert rho[0, 1] == pytest.approx(1.0)


def test_autocorrelation_matches_direct_loop():
    rng = np.random.default_rng(18)
    a = rng.normal(size=(300, 2))
    rho = residual_autocorrelation(a, 4)
    for ch in range(2):
        x = a[:, ch]
        var = np.sum(x * x) / len(x)
        for lag in range(1, 5):
            num = sum(x[t] * x[t + lag] for t in range(len(x) - lag)) / (len(x) - lag)
            assert rho[ch, lag - 1] == pytest.approx(num / var, rel=1e-12)


def test_white_noise_is_white():
    fractions = []
    for seed in range(20):
        a = np.random.default_rng(seed).normal(size=5000)
        fractions.append(whiteness_fraction(residual_autocorrelation(a, 20), 5000))
    assert np.mean(fractions) >= 0.95
