"""Per-tick telemetry records and the post-warmup tracking metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..error_model import CHANNEL_NAMES
from ..errors import EmptyWindow

STATE_NAMES = ("roll", "pitch", "yaw", "x", "y", "z", "wx", "wy", "wz", "vx", "vy", "vz", "g")
TELEMETRY_COLUMNS = (
    ("time",)
    + tuple(f"meas_{s}" for s in STATE_NAMES)
    + tuple(f"ref_{s}" for s in STATE_NAMES)
    + tuple(f"comp_{c}" for c in CHANNEL_NAMES)
    + tuple(f"f{leg}_{ax}" for leg in ("FL", "FR", "RL", "RR") for ax in "xyz")
    + ("status", "iterations")
)
# state index of each tracked channel
CHANNEL_STATE_INDEX = (0, 1, 2, 5)


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class Telemetry:
    time: list = field(default_factory=list)
    measured: list = field(default_factory=list)
    reference: list = field(default_factory=list)
    compensation: list = field(default_factory=list)
    grfs: list = field(default_factory=list)
    status: list = field(default_factory=list)
    iterations: list = field(default_factory=list)

    def append(self, t, measured, reference, compensation, grfs, status, iterations) -> None:
        self.time.append(float(t))
        self.measured.append(np.asarray(measured, dtype=float).copy())
        self.reference.append(np.asarray(reference, dtype=float).copy())
        self.compensation.append(np.asarray(compensation, dtype=float).copy())
        self.grfs.append(np.asarray(grfs, dtype=float).copy())
        self.status.append(str(status))
        self.iterations.append(int(iterations))

    def __len__(self) -> int:
        return len(self.time)

    def arrays(self) -> dict:
        n = len(self)
        return {
            "time": np.asarray(self.time, dtype=float),
            "measured": np.asarray(self.measured, dtype=float).reshape(n, 13),
            "reference": np.asarray(self.reference, dtype=float).reshape(n, 13),
            "compensation": np.asarray(self.compensation, dtype=float).reshape(n, 4),
            "grfs": np.asarray(self.grfs, dtype=float).reshape(n, 12),
        }

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TELEMETRY_COLUMNS)
        for i in range(len(self)):
            row = [_fmt(self.time[i])]
            row += [_fmt(v) for v in self.measured[i]]
            row += [_fmt(v) for v in self.reference[i]]
            row += [_fmt(v) for v in self.compensation[i]]
            row += [_fmt(v) for v in self.grfs[i]]
            row += [self.status[i], str(self.iterations[i])]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "Telemetry":
        text = source if "\n" in str(source) else open(source).read()
        rows = list(csv.reader(io.StringIO(text)))
        if tuple(rows[0]) != TELEMETRY_COLUMNS:
            raise ValueError("unexpected telemetry header")
        out = cls()
        for row in rows[1:]:
            v = [float(x) for x in row[:-2]]
            out.append(v[0], v[1:14], v[14:27], v[27:31], v[31:43], row[-2], int(row[-1]))
        return out


@dataclass
class RunMetrics:
    mean_height: float
    height_p2p: float
    mae: dict
    mse: dict
    fell_over: bool = False
    n_samples: int = 0
    reductions: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def metrics(telemetry: Telemetry, warmup: float = 2.0, fell_over: bool = False) -> RunMetrics:
    """Tracking metrics over samples with time >= warmup."""
    arr = telemetry.arrays()
    keep = arr["time"] >= warmup - 1e-12
    if not keep.any():
        raise EmptyWindow(f"no telemetry after the {warmup} s warmup")
    meas = arr["measured"][keep]
    ref = arr["reference"][keep]
    mae, mse = {}, {}
    for name, idx in zip(CHANNEL_NAMES, CHANNEL_STATE_INDEX):
        err = ref[:, idx] - meas[:, idx]
        if name == "yaw":
            err = np.angle(np.exp(1j * err))
        mae[name] = float(np.mean(np.abs(err)))
        mse[name] = float(np.mean(err**2))
    h = meas[:, 5]
    return RunMetrics(
        mean_height=float(np.mean(h)),
        height_p2p=float(np.max(h) - np.min(h)),
        mae=mae,
        mse=mse,
        fell_over=bool(fell_over),
        n_samples=int(keep.sum()),
    )


def reduction_pct(baseline: float, improved: float) -> float:
    """Percent decrease from baseline; 0 when both are zero."""
    if baseline == 0.0:
        return 0.0 if improved == 0.0 else -math.inf
    return 100.0 * (baseline - improved) / baseline


def compare_metrics(baseline: RunMetrics, compensated: RunMetrics, desired_height: float) -> dict:
    out = {
        "height_p2p": reduction_pct(baseline.height_p2p, compensated.height_p2p),
        "height_offset": reduction_pct(
            abs(baseline.mean_height - desired_height), abs(compensated.mean_height - desired_height)
        ),
    }
    for name in CHANNEL_NAMES:
        out[f"mae_{name}"] = reduction_pct(baseline.mae[name], compensated.mae[name])
        out[f"mse_{name}"] = reduction_pct(baseline.mse[name], compensated.mse[name])
    return out
