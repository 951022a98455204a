"""Robot state-error model: a 4-channel ARMAV core plus a linear GRF input term.

Error channels are (roll, pitch, yaw, body height), each desired minus
measured. The input term maps the deviation of the commanded ground reaction
forces from a static baseline onto the error, so that

    e_t = w_t + C (u_t - baseline),    w_t ~ ARMAV(n, m)
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .armav import (
    ArmavModel,
    FitDiagnostics,
    SeriesWindow,
    fit_ar_ls,
    fit_armav,
    ar_order_for,
    minimum_samples,
    residual_autocorrelation,
    select_order,
)
from .errors import (
    ArmavMpcError,
    BuffersNotWarm,
    DimensionMismatch,
    InsufficientData,
    NonMonotonicTick,
    NonStationary,
    SingularSystem,
    ZeroVariance,
)

N_CHANNELS = 4
N_INPUTS = 12
N_STATE = 13
CHANNEL_NAMES = ("roll", "pitch", "yaw", "height")
# Euler angles occupy state rows 0-2, vertical position is row 5
SELECT_ROWS = (0, 1, 2, 5)


def select_matrix() -> np.ndarray:
    """13x4 map from the error channels into the robot state vector."""
    s = np.zeros((N_STATE, N_CHANNELS))
    for col, row in enumerate(SELECT_ROWS):
        s[row, col] = 1.0
    return s


def static_input_baseline(mass: float, n_stance: int = 2, g: float = 9.81) -> np.ndarray:
    """Per-leg static GRF: supported weight split over the stance legs, vertical only."""
    u = np.zeros(N_INPUTS)
    u[2::3] = mass * g / n_stance
    return u


@dataclass(frozen=True)
class ErrorSample:
    e: np.ndarray
    u: np.ndarray
    tick: int

    def __post_init__(self):
        e = np.asarray(self.e, dtype=float).reshape(N_CHANNELS)
        u = np.asarray(self.u, dtype=float).reshape(N_INPUTS)
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(u))):
            raise ValueError("error sample must be finite")
        if np.any(np.abs(e[:3]) >= np.pi):
            raise ValueError("angle errors must lie in (-pi, pi)")
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "u", u)


class ErrorBuffer:
    """Ring buffer of the most recent error samples, ordered by tick."""

    def __init__(self, capacity: int = 2000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._samples: deque[ErrorSample] = deque(maxlen=capacity)

    def push(self, sample: ErrorSample) -> "ErrorBuffer":
        if self._samples and sample.tick <= self._samples[-1].tick:
            raise NonMonotonicTick(f"tick {sample.tick} does not follow {self._samples[-1].tick}")
        self._samples.append(sample)
        return self

    def __len__(self) -> int:
        return len(self._samples)

    def __iter__(self):
        return iter(self._samples)

    @property
    def last_tick(self) -> int | None:
        return self._samples[-1].tick if self._samples else None

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ticks, errors (N, 4), inputs (N, 12))."""
        if not self._samples:
            return np.zeros(0, dtype=int), np.zeros((0, N_CHANNELS)), np.zeros((0, N_INPUTS))
        ticks = np.array([s.tick for s in self._samples], dtype=int)
        e = np.array([s.e for s in self._samples])
        u = np.array([s.u for s in self._samples])
        return ticks, e, u

    def to_csv(self, path=None) -> str:
        """Export as ``tick, e1..e4, u1..u12`` rows; returns the text."""
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["tick"] + [f"e{i}" for i in range(1, 5)] + [f"u{i}" for i in range(1, 13)])
        for s in self._samples:
            writer.writerow([s.tick] + [repr(float(v)) for v in s.e] + [repr(float(v)) for v in s.u])
        text = out.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source, capacity: int | None = None) -> "ErrorBuffer":
        if hasattr(source, "read"):
            text = source.read()
        else:
            with open(source, newline="") as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if len(header) != 1 + N_CHANNELS + N_INPUTS:
            raise DimensionMismatch(f"error log needs 17 columns, found {len(header)}")
        buf = cls(capacity or max(len(body), 1))
        for row in body:
            vals = [float(v) for v in row]
            buf.push(ErrorSample(e=vals[1:5], u=vals[5:17], tick=int(vals[0])))
        return buf


def push_sample(buffer: ErrorBuffer, sample: ErrorSample) -> ErrorBuffer:
    return buffer.push(sample)


@dataclass
class InputAwareErrorModel:
    core: ArmavModel
    c_matrix: np.ndarray
    input_baseline: np.ndarray
    diagnostics: FitDiagnostics | None = field(default=None, repr=False)

    def __post_init__(self):
        self.c_matrix = np.asarray(self.c_matrix, dtype=float).reshape(N_CHANNELS, N_INPUTS)
        self.input_baseline = np.asarray(self.input_baseline, dtype=float).reshape(N_INPUTS)
        if not np.all(np.isfinite(self.c_matrix)):
            raise ValueError("input matrix must be finite")
        if self.core.r != N_CHANNELS:
            raise DimensionMismatch(f"core model must have r=4, has r={self.core.r}")

    @property
    def warm(self) -> bool:
        return self.core.warm

    def input_term(self, u) -> np.ndarray:
        return self.c_matrix @ (np.asarray(u, dtype=float).reshape(N_INPUTS) - self.input_baseline)

    def observe(self, sample: ErrorSample) -> np.ndarray:
        """Feed one sample through the core; returns the innovation."""
        return self.core.observe(sample.e - self.input_term(sample.u))

    def predict_one_step(self, next_u) -> np.ndarray:
        return self.core.predict_one_step() + self.input_term(next_u)

    def predict_errors(self, planned_u) -> np.ndarray:
        planned = np.asarray(planned_u, dtype=float).reshape(-1, N_INPUTS)
        base = self.core.predict_k_steps(planned.shape[0])
        return base + (planned - self.input_baseline) @ self.c_matrix.T

    def copy(self) -> "InputAwareErrorModel":
        return InputAwareErrorModel(
            self.core.copy(), self.c_matrix.copy(), self.input_baseline.copy(), self.diagnostics
        )

    @classmethod
    def zero(cls, n: int = 2, m: int = 1, input_baseline=None) -> "InputAwareErrorModel":
        """A warm model with zero matrices and zero buffers; predicts exactly zero."""
        core = ArmavModel(np.zeros((n, 4, 4)), np.zeros((m, 4, 4)))
        core.prime()
        base = np.zeros(N_INPUTS) if input_baseline is None else input_baseline
        return cls(core, np.zeros((N_CHANNELS, N_INPUTS)), base)


def fit_error_model(
    buffer: ErrorBuffer,
    n: int,
    m: int,
    input_baseline=None,
    estimate_input: bool = True,
) -> InputAwareErrorModel:
    """Fit the core ARMAV model and the input matrix C from a buffered error log.

    C comes from the AR stage run with (u - baseline) as concurrent exogenous
    regressors. Its contribution is removed from the errors and the standard
    inverse-function ARMAV fit runs on what remains.
    """
    _, e, u = buffer.arrays()
    baseline = np.zeros(N_INPUTS) if input_baseline is None else np.asarray(input_baseline, dtype=float)
    need = minimum_samples(n, m, N_CHANNELS, N_INPUTS if estimate_input else 0)
    if len(e) < need:
        raise InsufficientData(f"error model ARMAV({n},{m}) needs {need} samples, have {len(e)}")
    du = u - baseline
    if estimate_input:
        window = SeriesWindow.from_samples(e)
        inv, _ = fit_ar_ls(window, ar_order_for(n, m), exog=du)
        c = inv.exog_coeffs
    else:
        c = np.zeros((N_CHANNELS, N_INPUTS))
    w = e - du @ c.T
    core, diag = fit_armav(SeriesWindow.from_samples(w), n, m)
    return InputAwareErrorModel(core, c, baseline, diag)


def fit_error_model_auto(
    buffer: ErrorBuffer, input_baseline=None, alpha: float = 0.95, max_k: int = 3, estimate_input: bool = True
) -> InputAwareErrorModel:
    """Same two stages, with the core order picked by the F-test procedure."""
    _, e, u = buffer.arrays()
    baseline = np.zeros(N_INPUTS) if input_baseline is None else np.asarray(input_baseline, dtype=float)
    du = u - baseline
    if estimate_input:
        inv, _ = fit_ar_ls(SeriesWindow.from_samples(e), ar_order_for(2, 1), exog=du)
        c = inv.exog_coeffs
    else:
        c = np.zeros((N_CHANNELS, N_INPUTS))
    window = SeriesWindow.from_samples(e - du @ c.T)
    sel = select_order(window, alpha=alpha, max_k=max_k)
    _, diag = fit_armav(window, sel.n, sel.m)
    return InputAwareErrorModel(sel.model, c, baseline, diag)


def predict_errors(model: InputAwareErrorModel, planned_u) -> np.ndarray:
    return model.predict_errors(planned_u)


def compensation_term(pred_errors, s: np.ndarray | None = None) -> np.ndarray:
    """Embed each forecast error into the 13-state: rows of S @ e_hat, shape (k, 13)."""
    s = select_matrix() if s is None else s
    e = np.asarray(pred_errors, dtype=float).reshape(-1, N_CHANNELS)
    return e @ s.T


@dataclass
class AdequacyReport:
    passed: bool
    reason: str
    n_outside: int
    n_lags: int
    bound: float
    rho: np.ndarray | None = field(default=None, repr=False)

    @property
    def fraction_inside(self) -> float:
        return 1.0 - self.n_outside / self.n_lags if self.n_lags else 0.0


MIN_ADEQUACY_RESIDUALS = 100


def adequacy_check(model, recent_residuals, max_lag: int = 20, max_outside: float = 0.05) -> AdequacyReport:
    """Residual whiteness test over lags 1..max_lag, pooled across channels.

    Channels with zero residual variance are left out; if every channel is
    zero the check fails with a ZeroVariance reason.
    """
    a = np.asarray(recent_residuals, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    N = a.shape[0]
    if N < MIN_ADEQUACY_RESIDUALS:
        return AdequacyReport(False, f"need {MIN_ADEQUACY_RESIDUALS} residuals, have {N}", 0, 0, np.nan)
    bound = 2.0 / np.sqrt(N)
    try:
        rho = residual_autocorrelation(a, max_lag, strict=False)
    except ZeroVariance:  # pragma: no cover - strict=False never raises
        rho = None
    finite = np.isfinite(rho).all(axis=1)
    if not finite.any():
        return AdequacyReport(False, "ZeroVariance: all residual channels are constant zero", 0, 0, bound, rho)
    used = rho[finite]
    n_lags = used.size
    n_outside = int(np.sum(np.abs(used) > bound))
    passed = n_outside <= max_outside * n_lags
    reason = "ok" if passed else f"{n_outside}/{n_lags} autocorrelations outside +-{bound:.4f}"
    return AdequacyReport(passed, reason, n_outside, n_lags, bound, rho)


class ErrorCompensator:
    """Online owner of the error log and the active model.

    Samples arrive once per control tick. The model is refit every
    ``refit_every`` samples (``None`` keeps the first fit for good), and
    forecasts are served only while the active model passed its adequacy
    check, unless gating is disabled.
    """

    def __init__(
        self,
        input_baseline,
        order: tuple[int, int] | str = (2, 1),
        capacity: int = 2000,
        refit_every: int | None = 250,
        min_samples: int | None = None,
        alpha: float = 0.95,
        estimate_input: bool = True,
        adequacy_gate: bool = True,
        adequacy_window: int = 200,
    ):
        self.buffer = ErrorBuffer(capacity)
        self.input_baseline = np.asarray(input_baseline, dtype=float).reshape(N_INPUTS)
        self.order = order
        self.refit_every = refit_every
        self.alpha = alpha
        self.estimate_input = estimate_input
        self.adequacy_gate = adequacy_gate
        self.adequacy_window = adequacy_window
        if min_samples is None:
            n, m = (6, 5) if order == "auto" else order
            min_samples = max(minimum_samples(n, m, N_CHANNELS, N_INPUTS), MIN_ADEQUACY_RESIDUALS)
        self.min_samples = min_samples
        self.model: InputAwareErrorModel | None = None
        self.last_report: AdequacyReport | None = None
        self.n_fits = 0
        self.n_fit_failures = 0
        self.fitted_order: tuple[int, int] | None = None
        self._since_fit = 0

    @property
    def active(self) -> bool:
        if self.model is None or not self.model.warm:
            return False
        if self.adequacy_gate and not (self.last_report and self.last_report.passed):
            return False
        return True

    def record(self, sample: ErrorSample) -> None:
        self.buffer.push(sample)
        if self.model is not None:
            self.model.observe(sample)
        self._since_fit += 1
        due = self.model is None or (self.refit_every is not None and self._since_fit >= self.refit_every)
        if due and len(self.buffer) >= self.min_samples:
            self.refit()

    def refit(self) -> None:
        self._since_fit = 0
        try:
            if self.order == "auto":
                model = fit_error_model_auto(self.buffer, self.input_baseline, self.alpha, estimate_input=self.estimate_input)
            else:
                model = self._fit_fixed_order()
        except ArmavMpcError:
            self.n_fit_failures += 1
            return
        resid = model.diagnostics.residuals[-self.adequacy_window :]
        self.last_report = adequacy_check(model, resid)
        self.model = model
        self.n_fits += 1

    def _fit_fixed_order(self) -> InputAwareErrorModel:
        # a non-stationary fit steps the MA order down before giving up
        n, m = self.order
        last_exc = None
        for mm in range(m, -1, -1):
            try:
                model = fit_error_model(self.buffer, n, mm, self.input_baseline, self.estimate_input)
            except (NonStationary, SingularSystem) as exc:
                last_exc = exc
                continue
            self.fitted_order = (n, mm)
            return model
        raise last_exc

    def forecast(self, planned_u) -> np.ndarray | None:
        """Error forecast for each planned input, or None while inactive."""
        if not self.active:
            return None
        try:
            return self.model.predict_errors(planned_u)
        except BuffersNotWarm:
            return None

    def one_step_prediction(self, next_u) -> np.ndarray | None:
        if not self.active:
            return None
        return self.model.predict_one_step(next_u)
