"""
Multivariate ARMAV(n, m) estimation, order selection and forecasting.

The model for an r-dimensional stationary series z_t is

    z_t - Phi_1 z_{t-1} - ... - Phi_n z_{t-n} = a_t - Theta_1 a_{t-1} - ... - Theta_m a_{t-m}

Parameters are obtained without any nonlinear search: a long pure AR(p) least
squares fit estimates the inverse (pure-AR) expansion

    a_t = z_t - I_1 z_{t-1} - I_2 z_{t-2} - ...

and Theta / Phi follow from linear relations between the I_j and the ARMAV
matrices. Windows are mean-removed before fitting and the mean is added back
to every forecast.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg
from scipy.special import betaincinv

from .errors import (
    BuffersNotWarm,
    DimensionMismatch,
    InsufficientData,
    MaxOrderReached,
    NonStationary,
    SingularRegressor,
    SingularSystem,
    ZeroVariance,
)

RIDGE_SCALE = 1e-8
STATIONARITY_TOLERANCE = 0.05
DEFAULT_ALPHA = 0.95


def minimum_samples(n: int, m: int, r: int, n_exog: int = 0) -> int:
    """Smallest window length accepted for an ARMAV(n, m) fit."""
    return (max(n, m) + m) * r + n_exog + 10


def ar_order_for(n: int, m: int) -> int:
    """Length of the AR(p) fit that seeds an ARMAV(n, m) model."""
    return max(n, m) + m


def n_scalar_params(n: int, m: int, r: int, n_exog: int = 0) -> int:
    return (n + m) * r * r + n_exog * r


@dataclass(frozen=True)
class SeriesWindow:
    """A block of r-vectors, stored raw, with the mean that fitting removes."""

    samples: np.ndarray
    mean: np.ndarray

    @classmethod
    def from_samples(cls, samples, demean: bool = True) -> "SeriesWindow":
        z = np.asarray(samples, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.ndim != 2:
            raise DimensionMismatch(f"samples must be (N, r), got shape {z.shape}")
        if not np.all(np.isfinite(z)):
            raise ValueError("series window contains non-finite samples")
        mean = z.mean(axis=0) if demean else np.zeros(z.shape[1])
        return cls(samples=z, mean=mean)

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def r(self) -> int:
        return self.samples.shape[1]

    @property
    def centered(self) -> np.ndarray:
        return self.samples - self.mean


@dataclass
class InverseExpansion:
    """Truncated inverse coefficients I_1..I_L, shape (L, r, r).

    ``exog_coeffs`` is the (r, k) matrix of exogenous-input gains when the AR
    stage was run with extra regressors, otherwise None.
    """

    coeffs: np.ndarray
    exog_coeffs: np.ndarray | None = None

    @property
    def L(self) -> int:
        return self.coeffs.shape[0]

    @property
    def r(self) -> int:
        return self.coeffs.shape[1]


@dataclass
class FitDiagnostics:
    rss: float
    rss_per_channel: np.ndarray
    n_samples: int
    n_params: int
    f_statistic: float | None = None
    autocorr: np.ndarray | None = None
    residuals: np.ndarray | None = field(default=None, repr=False)
    start: int = 0


# ---------------------------------------------------------------------------
# AR(p) least squares
# ---------------------------------------------------------------------------


def _lagged_design(z: np.ndarray, p: int, exog: np.ndarray | None = None):
    N, r = z.shape
    cols = [z[p - i : N - i] for i in range(1, p + 1)]
    if exog is not None:
        cols.append(exog[p:])
    return np.hstack(cols), z[p:]


def _ridge_solve(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    gram = X.T @ X
    dim = gram.shape[0]
    scale = np.diag(gram).copy()
    tr = float(scale.sum())
    if not np.isfinite(tr) or tr <= 0.0:
        raise SingularRegressor("regressor Gram matrix is zero")
    # per-column ridge so lags and exogenous inputs of very different units
    # are damped relative to their own scale; the floor covers zero columns
    gram[np.diag_indices(dim)] += RIDGE_SCALE * np.maximum(scale, 1e-12 * tr / dim)
    try:
        factor = linalg.cho_factor(gram, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularRegressor("regressor Gram matrix not positive definite after ridge") from exc
    return linalg.cho_solve(factor, X.T @ Y, check_finite=False)


def fit_ar_ls(window: SeriesWindow, p: int, exog=None) -> tuple[InverseExpansion, FitDiagnostics]:
    """Least-squares AR(p) fit on the mean-removed window.

    The returned AR matrices double as the truncated inverse expansion
    I_1..I_p. Optional ``exog`` (N, k) columns enter as concurrent regressors
    and their gains are returned in ``InverseExpansion.exog_coeffs``.
    """
    if p < 1:
        raise ValueError("AR order must be >= 1")
    z = window.centered
    N, r = z.shape
    k = 0
    if exog is not None:
        exog = np.asarray(exog, dtype=float)
        if exog.ndim != 2 or exog.shape[0] != N:
            raise DimensionMismatch(f"exog must be ({N}, k), got {exog.shape}")
        k = exog.shape[1]
    if N < p * r + k + 10:
        raise InsufficientData(f"AR({p}) on r={r} needs {p * r + k + 10} samples, have {N}")

    X, Y = _lagged_design(z, p, exog)
    W = _ridge_solve(X, Y)
    resid = Y - X @ W
    coeffs = np.stack([W[i * r : (i + 1) * r].T for i in range(p)])
    exog_coeffs = W[p * r :].T.copy() if exog is not None else None

    per_channel = np.sum(resid**2, axis=0)
    diag = FitDiagnostics(
        rss=float(per_channel.sum()),
        rss_per_channel=per_channel,
        n_samples=Y.shape[0],
        n_params=p * r * r + k * r,
        residuals=resid,
        start=p,
    )
    return InverseExpansion(coeffs=coeffs, exog_coeffs=exog_coeffs), diag


# ---------------------------------------------------------------------------
# Inverse-function recovery
# ---------------------------------------------------------------------------


def theta_from_inverse(inv: InverseExpansion, n: int, m: int) -> list[np.ndarray]:
    """Solve (E - Theta_1 B - ... - Theta_m B^m) I_j = 0 for j > max(n, m).

    Uses every available j from max(n, m)+1 up to L, so a longer expansion
    gives an over-determined system solved in the least-squares sense.
    """
    if m == 0:
        return []
    q = max(n, m)
    L, r = inv.L, inv.r
    if L < q + m:
        raise InsufficientData(f"need {q + m} inverse coefficients, have {L}")
    I = inv.coeffs
    js = range(q + 1, L + 1)
    # I_j = [Theta_1 .. Theta_m] @ [I_{j-1}; ...; I_{j-m}]
    M = np.hstack([np.vstack([I[j - i - 1] for i in range(1, m + 1)]) for j in js])
    rhs = np.hstack([I[j - 1] for j in js])
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= s[0] * 1e-12 * max(M.shape):
        raise SingularSystem("stacked inverse-coefficient block is rank deficient")
    sol, *_ = np.linalg.lstsq(M.T, rhs.T, rcond=None)
    big = sol.T
    return [big[:, i * r : (i + 1) * r].copy() for i in range(m)]


def phi_from_inverse(inv: InverseExpansion, theta: Sequence[np.ndarray], n: int) -> list[np.ndarray]:
    """Phi_j = Theta_j - Theta_1 I_{j-1} - ... - Theta_{j-1} I_1 + I_j, j = 1..n."""
    if inv.L < n:
        raise InsufficientData(f"need {n} inverse coefficients, have {inv.L}")
    r = inv.r
    m = len(theta)
    for t in theta:
        if np.shape(t) != (r, r):
            raise DimensionMismatch(f"Theta block has shape {np.shape(t)}, expected {(r, r)}")
    I = inv.coeffs
    phis = []
    for j in range(1, n + 1):
        phi = I[j - 1].copy()
        if j <= m:
            phi += theta[j - 1]
        for i in range(1, min(j - 1, m) + 1):
            phi -= theta[i - 1] @ I[j - i - 1]
        phis.append(phi)
    return phis


def inverse_coefficients(phi: Sequence[np.ndarray], theta: Sequence[np.ndarray], L: int) -> InverseExpansion:
    """Exact inverse expansion of a known ARMAV model, by equating powers of B.

    I_j = Phi_j - Theta_j + sum_{i=1}^{min(j-1, m)} Theta_i I_{j-i}.
    """
    phi = [np.atleast_2d(np.asarray(p, dtype=float)) for p in phi]
    theta = [np.atleast_2d(np.asarray(t, dtype=float)) for t in theta]
    r = (phi or theta)[0].shape[0]
    n, m = len(phi), len(theta)
    out = np.zeros((L, r, r))
    for j in range(1, L + 1):
        acc = np.zeros((r, r))
        if j <= n:
            acc += phi[j - 1]
        if j <= m:
            acc -= theta[j - 1]
        for i in range(1, min(j - 1, m) + 1):
            acc += theta[i - 1] @ out[j - i - 1]
        out[j - 1] = acc
    return InverseExpansion(coeffs=out)


def companion_spectral_radius(mats: np.ndarray) -> float:
    """Spectral radius of the block companion matrix of lag matrices (k, r, r)."""
    k = len(mats)
    if k == 0:
        return 0.0
    r = mats.shape[1]
    comp = np.zeros((k * r, k * r))
    comp[:r, :] = np.hstack(list(mats))
    comp[r:, : (k - 1) * r] = np.eye((k - 1) * r)
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def filter_residuals(z: np.ndarray, phi: np.ndarray, theta: np.ndarray, start: int | None = None) -> np.ndarray:
    """Recover a_t from centered data by running the ARMAV recursion forward.

    Residuals before ``start`` (default n) are set to zero; they seed the MA
    recursion.
    """
    N, r = z.shape
    n, m = len(phi), len(theta)
    start = n if start is None else max(start, n)
    w = z.copy()
    for i in range(1, n + 1):
        w[start:] -= z[start - i : N - i] @ phi[i - 1].T
    a = np.zeros_like(z)
    if m == 0:
        a[start:] = w[start:]
        return a
    theta_t = np.hstack(list(theta)).T  # (m r, r)
    # a_pad[t + m] holds a_t; the m leading rows are the zero pre-sample history
    a_pad = np.zeros((N + m, r))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(start, N):
            a_pad[t + m] = w[t] + a_pad[t : t + m][::-1].reshape(-1) @ theta_t
    a[start:] = a_pad[start + m :]
    return a


# ---------------------------------------------------------------------------
# Fitted model with streaming buffers
# ---------------------------------------------------------------------------


class ArmavModel:
    """A fitted ARMAV(n, m) model plus the data/residual history it predicts from.

    Buffers are stored as deviations from ``mean``, most recent first. A model
    built without history is cold and refuses to predict until it has observed
    max(n, m) samples or been primed.
    """

    def __init__(
        self,
        phi,
        theta=(),
        mean=None,
        residual_variance=None,
        z_history=None,
        a_history=None,
        drift_flag: bool = False,
    ):
        phi = [np.atleast_2d(np.asarray(p, dtype=float)) for p in phi]
        theta = [np.atleast_2d(np.asarray(t, dtype=float)) for t in theta]
        if not phi and not theta:
            raise ValueError("model needs at least one AR or MA matrix")
        r = (phi or theta)[0].shape[0]
        for mat in phi + theta:
            if mat.shape != (r, r):
                raise DimensionMismatch(f"all blocks must be {(r, r)}, got {mat.shape}")
            if not np.all(np.isfinite(mat)):
                raise ValueError("model matrices must be finite")
        self.r = r
        self.n = len(phi)
        self.m = len(theta)
        self.phi = np.array(phi).reshape(self.n, r, r)
        self.theta = np.array(theta).reshape(self.m, r, r)
        self.mean = np.zeros(r) if mean is None else np.asarray(mean, dtype=float).reshape(r)
        self.residual_variance = (
            np.zeros((r, r)) if residual_variance is None else np.asarray(residual_variance, dtype=float)
        )
        self.drift_flag = drift_flag
        self._z = np.zeros((self.n, r))
        self._a = np.zeros((self.n_residual_lags, r))
        self._n_seen = 0
        if z_history is not None or a_history is not None:
            self.prime(z_history, a_history)

    @property
    def n_residual_lags(self) -> int:
        return max(self.n, self.m)

    @property
    def warm(self) -> bool:
        return self._n_seen >= max(self.n, self.m)

    @property
    def state_buffer(self) -> np.ndarray:
        return self._z.copy()

    @property
    def residual_buffer(self) -> np.ndarray:
        return self._a.copy()

    def prime(self, z_history=None, a_history=None) -> None:
        """Load raw data history and residual history (both oldest first)."""
        self._z[:] = 0.0
        self._a[:] = 0.0
        if z_history is not None:
            z = np.asarray(z_history, dtype=float).reshape(-1, self.r)[::-1][: self.n]
            self._z[: len(z)] = z - self.mean
        if a_history is not None:
            a = np.asarray(a_history, dtype=float).reshape(-1, self.r)[::-1][: self.n_residual_lags]
            self._a[: len(a)] = a
        self._n_seen = max(self.n, self.m)

    def copy(self) -> "ArmavModel":
        out = ArmavModel(
            self.phi, self.theta, self.mean.copy(), self.residual_variance.copy(), drift_flag=self.drift_flag
        )
        out._z = self._z.copy()
        out._a = self._a.copy()
        out._n_seen = self._n_seen
        return out

    def _one_step(self, zbuf: np.ndarray, abuf: np.ndarray) -> np.ndarray:
        dev = np.zeros(self.r)
        for i in range(self.n):
            dev += self.phi[i] @ zbuf[i]
        for i in range(self.m):
            dev -= self.theta[i] @ abuf[i]
        return dev

    def _require_warm(self):
        if not self.warm:
            raise BuffersNotWarm(f"model has seen {self._n_seen} of {max(self.n, self.m)} required samples")

    def predict_one_step(self) -> np.ndarray:
        self._require_warm()
        return self.mean + self._one_step(self._z, self._a)

    def observe(self, z_new) -> np.ndarray:
        """Push a new sample, returning the one-step residual a_{t+1}.

        While cold the residual is taken as zero and the sample only fills
        the data buffer.
        """
        z_new = np.asarray(z_new, dtype=float).reshape(self.r)
        dev_new = z_new - self.mean
        if self.warm:
            a_new = dev_new - self._one_step(self._z, self._a)
        else:
            a_new = np.zeros(self.r)
        if self.n:
            self._z = np.roll(self._z, 1, axis=0)
            self._z[0] = dev_new
        if self.n_residual_lags:
            self._a = np.roll(self._a, 1, axis=0)
            self._a[0] = a_new
        self._n_seen += 1
        return a_new

    def predict_k_steps(self, k: int) -> np.ndarray:
        """Iterated forecast; future residuals are replaced by zero. Returns (k, r)."""
        if k < 1:
            raise ValueError("horizon must be >= 1")
        self._require_warm()
        zbuf = self._z.copy()
        abuf = self._a.copy()
        out = np.empty((k, self.r))
        for step in range(k):
            dev = self._one_step(zbuf, abuf)
            out[step] = self.mean + dev
            if self.n:
                zbuf = np.roll(zbuf, 1, axis=0)
                zbuf[0] = dev
            if self.n_residual_lags:
                abuf = np.roll(abuf, 1, axis=0)
                abuf[0] = 0.0
        return out

    @property
    def spectral_radius(self) -> float:
        return companion_spectral_radius(self.phi)

    def to_dict(self) -> dict:
        """Plain-data form; matrices are nested row-major lists."""
        return {
            "n": self.n,
            "m": self.m,
            "r": self.r,
            "phi": self.phi.tolist(),
            "theta": self.theta.tolist(),
            "mean": self.mean.tolist(),
            "residual_variance": self.residual_variance.tolist(),
            "drift_flag": bool(self.drift_flag),
            "state_buffer": self._z.tolist(),
            "residual_buffer": self._a.tolist(),
            "n_seen": int(self._n_seen),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmavModel":
        r = int(d["r"])
        phi = np.asarray(d["phi"], dtype=float).reshape(int(d["n"]), r, r)
        theta = np.asarray(d["theta"], dtype=float).reshape(int(d["m"]), r, r)
        model = cls(phi, theta, d["mean"], d["residual_variance"], drift_flag=d.get("drift_flag", False))
        model._z = np.asarray(d.get("state_buffer", model._z), dtype=float).reshape(model._z.shape)
        model._a = np.asarray(d.get("residual_buffer", model._a), dtype=float).reshape(model._a.shape)
        model._n_seen = int(d.get("n_seen", 0))
        return model

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "ArmavModel":
        return cls.from_dict(json.loads(text))

    def __repr__(self) -> str:
        return f"ArmavModel(n={self.n}, m={self.m}, r={self.r}, warm={self.warm})"


def fit_armav(window: SeriesWindow, n: int, m: int, rss_start: int | None = None) -> tuple[ArmavModel, FitDiagnostics]:
    """Inverse-function estimate of an ARMAV(n, m) model.

    AR(p) least squares with p = max(n, m) + m, then Theta from the high-lag
    inverse coefficients and Phi from the low-lag ones. The residual series is
    rebuilt by filtering the window through the recovered model; its RSS is
    summed from ``rss_start`` (default p) so fits of different orders can be
    compared on the same samples.
    """
    if n < 1:
        raise ValueError("AR order n must be >= 1")
    if m < 0:
        raise ValueError("MA order m must be >= 0")
    r = window.r
    need = minimum_samples(n, m, r)
    if window.N < need:
        raise InsufficientData(f"ARMAV({n},{m}) on r={r} needs {need} samples, have {window.N}")
    p = ar_order_for(n, m)
    inv, ar_diag = fit_ar_ls(window, p)
    theta = theta_from_inverse(inv, n, m)
    phi = phi_from_inverse(inv, theta, n)

    phi_arr = np.array(phi).reshape(n, r, r)
    theta_arr = np.array(theta).reshape(m, r, r)
    rho = companion_spectral_radius(phi_arr)
    if not np.isfinite(rho) or rho >= 1.0 + STATIONARITY_TOLERANCE:
        raise NonStationary(f"AR companion spectral radius {rho:.4f} exceeds tolerance")

    z = window.centered
    a = filter_residuals(z, phi_arr, theta_arr, start=n)
    start = p if rss_start is None else max(rss_start, n)
    used = a[start:]
    with np.errstate(over="ignore"):
        per_channel = np.sum(used**2, axis=0)
    if not np.all(np.isfinite(per_channel)):
        raise NonStationary("residual filter diverged (MA part not invertible)")
    diag = FitDiagnostics(
        rss=float(per_channel.sum()),
        rss_per_channel=per_channel,
        n_samples=used.shape[0],
        n_params=n_scalar_params(n, m, r),
        residuals=used,
        start=start,
    )
    model = ArmavModel(
        phi_arr,
        theta_arr,
        mean=window.mean,
        residual_variance=used.T @ used / max(used.shape[0], 1),
        drift_flag=rho >= 1.0,
    )
    model.prime(window.samples[-n:], a[-model.n_residual_lags :])
    return model, diag


# ---------------------------------------------------------------------------
# Checking criterion and diagnostics
# ---------------------------------------------------------------------------


def f_statistic(rss_restricted: float, rss_unrestricted: float, s: int, N: int, r_params: int) -> float:
    """((A1 - A0) / s) / (A0 / (N - r)); +inf when the unrestricted RSS is zero."""
    if N <= r_params:
        raise ValueError("N must exceed the number of estimated parameters")
    if s < 1:
        raise ValueError("s must be >= 1")
    if rss_restricted == rss_unrestricted:
        return 0.0
    if rss_unrestricted == 0.0:
        return float("inf")
    return ((rss_restricted - rss_unrestricted) / s) / (rss_unrestricted / (N - r_params))


def f_quantile(alpha: float, d1: float, d2: float) -> float:
    """alpha-quantile of F(d1, d2) through the inverse regularized incomplete beta."""
    b = float(betaincinv(0.5 * d1, 0.5 * d2, alpha))
    if b >= 1.0:
        return float("inf")
    return d2 * b / (d1 * (1.0 - b))


class OrderSelection(NamedTuple):
    n: int
    m: int
    model: ArmavModel
    max_order_reached: bool


def _rss_from(diag: FitDiagnostics, start: int) -> float:
    return float(np.sum(diag.residuals[start - diag.start :] ** 2))


def _significant_drop(restricted, unrestricted, start, N_total, r, alpha) -> bool:
    (_, n_r, m_r, d_r), (_, n_u, m_u, d_u) = restricted, unrestricted
    a1 = _rss_from(d_r, start)
    a0 = _rss_from(d_u, start)
    if not a0 < a1:
        return False
    n_eff = N_total - start
    r_params = n_scalar_params(n_u, m_u, r)
    s = r_params - n_scalar_params(n_r, m_r, r)
    if n_eff <= r_params:
        return False
    F = f_statistic(a1, a0, s, n_eff, r_params)
    return F > f_quantile(alpha, s, n_eff - r_params)


def select_order(window: SeriesWindow, alpha: float = DEFAULT_ALPHA, max_k: int = 3) -> OrderSelection:
    """F-test order selection.

    AR order: compare ARMAV(2k, 2k-1) against ARMAV(2k+2, 2k+1) for k = 1, 2, ...
    and stop at the first insignificant RSS drop. MA order is then lowered one
    lag at a time while the drop stays insignificant. If the drop is still
    significant at ``max_k`` the largest model is returned with
    ``max_order_reached`` set and a warning issued.
    """
    r = window.r
    N = window.N
    largest = 2 * max_k + 2
    common_start = ar_order_for(largest, largest - 1)

    def fit(n, m):
        model, diag = fit_armav(window, n, m, rss_start=common_start)
        return model, n, m, diag

    def fit_stepping_ma(n, m):
        # an MA block that is unidentifiable on the data (near-white series,
        # or an unstable Phi from a noisy inverse expansion) is shed one lag
        # at a time rather than failing the candidate outright
        for mm in range(m, -1, -1):
            try:
                return fit(n, mm)
            except (NonStationary, SingularSystem, SingularRegressor):
                if mm == 0:
                    raise

    current = fit_stepping_ma(2, 1)
    reached = False
    k = 1
    while True:
        if k > max_k:
            reached = True
            break
        try:
            bigger = fit_stepping_ma(2 * k + 2, 2 * k + 1)
        except (NonStationary, SingularSystem, SingularRegressor, InsufficientData):
            break
        if _significant_drop(current, bigger, common_start, N, r, alpha):
            current = bigger
            k += 1
        else:
            break

    if reached:
        warnings.warn(
            f"RSS still dropping at ARMAV({current[1]},{current[2]}); returning the largest fitted model",
            RuntimeWarning,
            stacklevel=2,
        )
    else:
        n_sel = current[1]
        for m_try in range(current[2] - 1, -1, -1):
            try:
                smaller = fit(n_sel, m_try)
            except (NonStationary, SingularSystem, SingularRegressor):
                break
            if _significant_drop(smaller, current, common_start, N, r, alpha):
                break
            current = smaller

    model, n_sel, m_sel, diag = current
    diag.autocorr = residual_autocorrelation(diag.residuals, min(20, diag.residuals.shape[0] - 1), strict=False)
    return OrderSelection(n_sel, m_sel, model, reached)


def select_order_strict(window: SeriesWindow, alpha: float = DEFAULT_ALPHA, max_k: int = 3) -> OrderSelection:
    """Like :func:`select_order` but raises MaxOrderReached instead of warning."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sel = select_order(window, alpha, max_k)
    if sel.max_order_reached:
        raise MaxOrderReached(f"RSS drop still significant at ARMAV({sel.n},{sel.m})")
    return sel


def residual_autocorrelation(residuals, max_lag: int, strict: bool = True) -> np.ndarray:
    """rho_l = (sum_{t<=N-l} a_t a_{t+l} / (N-l)) / (sum a_t^2 / N), lags 1..max_lag.

    Returns an (r, max_lag) array. A channel with zero variance raises
    ZeroVariance, or yields NaNs when ``strict`` is False.
    """
    a = np.asarray(residuals, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    N, r = a.shape
    if N <= max_lag:
        raise InsufficientData(f"need more than {max_lag} residuals, have {N}")
    var = np.sum(a * a, axis=0) / N
    zero = var <= 0.0
    if strict and np.any(zero):
        raise ZeroVariance(f"residual channel(s) {np.flatnonzero(zero).tolist()} have zero variance")
    out = np.empty((r, max_lag))
    for lag in range(1, max_lag + 1):
        out[:, lag - 1] = np.sum(a[: N - lag] * a[lag:], axis=0) / (N - lag)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = out / var[:, None]
    out[zero] = np.nan
    return out


def whiteness_fraction(rho: np.ndarray, N: int) -> float:
    """Fraction of finite autocorrelations inside +-2/sqrt(N)."""
    vals = np.asarray(rho)[np.isfinite(rho)]
    if vals.size == 0:
        return 0.0
    return float(np.mean(np.abs(vals) <= 2.0 / np.sqrt(N)))
