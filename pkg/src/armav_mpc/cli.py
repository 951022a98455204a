"""Command line entry point: run scenarios, paired comparisons and offline fits."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .error_model import ErrorBuffer, fit_error_model, fit_error_model_auto
from .errors import ArmavMpcError, ScenarioDiverged, SolverInfeasible
from .sim.scenario import get_scenario, paired_compare, run_scenario

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_SOLVER = 3


def _write_run(out: Path, tag: str, result) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    result.telemetry.to_csv(out / f"telemetry_{tag}.csv")
    if result.error_log is not None:
        result.error_log.to_csv(out / f"errors_{tag}.csv")
    summary = result.metrics.to_dict()
    summary["fall_time"] = result.fall_time
    summary["n_fits"] = result.n_fits
    (out / f"metrics_{tag}.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def _cmd_run(args) -> int:
    cfg = get_scenario(args.scenario)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.json").write_text(cfg.to_json())
    arms = {"on": [True], "off": [False], "both": [False, True]}[args.compensation]
    code = EXIT_OK
    summaries = {}
    for on in arms:
        tag = "compensated" if on else "baseline"
        try:
            res = run_scenario(cfg.with_compensation(on))
        except ScenarioDiverged as exc:
            res = exc.result
            print(f"{tag}: {exc}", file=sys.stderr)
            code = EXIT_DIVERGED
        summaries[tag] = _write_run(out, tag, res)
        m = res.metrics
        print(f"{tag}: mean height {m.mean_height:.4f} m, peak-to-peak {m.height_p2p * 1e3:.2f} mm, fell_over={m.fell_over}")
    return code


def _cmd_compare(args) -> int:
    cfg = get_scenario(args.scenario)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out)
    report = paired_compare(cfg)
    _write_run(out, "baseline", report.baseline)
    _write_run(out, "compensated", report.compensated)
    (out / "compare.csv").write_text(report.merged_csv())
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    red = report.reductions
    print(f"vibration reduction {red['height_p2p']:.1f} %, height offset reduction {red['height_offset']:.1f} %")
    return EXIT_DIVERGED if report.compensated.fell_over else EXIT_OK


def _cmd_fit(args) -> int:
    buf = ErrorBuffer.from_csv(args.input)
    if args.order == "auto":
        model = fit_error_model_auto(buf, alpha=args.alpha, estimate_input=not args.no_input)
    else:
        n, m = (int(v) for v in args.order.split(","))
        model = fit_error_model(buf, n, m, estimate_input=not args.no_input)
    core = model.core
    payload = {
        "n": core.n,
        "m": core.m,
        "spectral_radius": core.spectral_radius,
        "rss": None if model.diagnostics is None else model.diagnostics.rss,
        "model": core.to_dict(),
        "c_matrix": model.c_matrix.tolist(),
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(f"ARMAV({core.n},{core.m}) fitted on {len(buf)} samples, spectral radius {core.spectral_radius:.4f}")
    if not args.out:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="armav-mpc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario")
    run.add_argument("--scenario", required=True, help="built-in name or path to a scenario JSON file")
    run.add_argument("--compensation", choices=("on", "off", "both"), default="both")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default="runs")
    run.set_defaults(func=_cmd_run)

    cmp_ = sub.add_parser("compare", help="paired baseline vs compensated run")
    cmp_.add_argument("--scenario", required=True)
    cmp_.add_argument("--seed", type=int, default=None)
    cmp_.add_argument("--out", default="runs")
    cmp_.set_defaults(func=_cmd_compare)

    fit = sub.add_parser("fit", help="fit an error model to a logged error CSV")
    fit.add_argument("--input", required=True)
    fit.add_argument("--order", default="auto", help="'auto' or 'n,m'")
    fit.add_argument("--alpha", type=float, default=0.95)
    fit.add_argument("--no-input", action="store_true", help="skip the GRF input matrix")
    fit.add_argument("--out", default=None, help="write the fitted model as JSON")
    fit.set_defaults(func=_cmd_fit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SolverInfeasible as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ArmavMpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
