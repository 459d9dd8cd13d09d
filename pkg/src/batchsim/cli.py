"""Command-line experiment driver.

Exit codes: 0 success, 1 configuration or input error, 2 runtime error,
3 check failure (replay violations or a failed acceptance check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from batchsim.costmodel import (
    CalibrationWarning,
    CostModel,
    fit,
    fit_token_only,
    generate_samples,
    load_samples,
    mape,
    save_model,
    save_samples,
)
from batchsim.errors import BatchSimError, ConfigError, TraceParseError, ValidationError
from batchsim.events import EventLog
from batchsim.experiments import (
    DEFAULT_POLICIES,
    compare_reports,
    format_compare,
    parse_policy,
    peak_by_policy,
    run_scenario,
    sweep,
    sweep_table,
    tune_sarathi,
    write_run_outputs,
)
from batchsim.acceptance import CHECKS, run_checks
from batchsim.presets import PRESETS
from batchsim.replay import replay_check
from batchsim.scenario import Scenario, load_scenario
from batchsim.workload import save_trace

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("batchsim")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _load(path: str, max_requests: int | None = None) -> tuple[Scenario, Path]:
    if path.startswith("preset:"):
        name = path.split(":", 1)[1]
        if name not in PRESETS:
            raise ConfigError("scenario", f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
        scn, base = PRESETS[name](), Path.cwd()
    else:
        scn, base = load_scenario(path), Path(path).resolve().parent
    if max_requests is not None:
        if max_requests < 1:
            raise ConfigError("max_requests", f"must be >= 1, got {max_requests}")
        scn = scn.with_max_requests(max_requests)
    return scn, base


def cmd_run(args) -> int:
    scn, base = _load(args.scenario, args.max_requests)
    if args.policy:
        name, budget = parse_policy(args.policy)
        scn = scn.with_policy(name, budget)
    if args.scale is not None:
        scn = scn.with_scale(args.scale)
    res = run_scenario(scn, base_dir=base)
    out = Path(args.out or scn.run.output_dir)
    written = write_run_outputs(res, out)
    r = res.report
    print(f"{scn.run.name}: {r.n_requests} requests, {r.n_good} good, {r.n_rejected} rejected, "
          f"effective {r.effective_rps:.3f} of {r.offered_rps:.3f} req/s")
    for p in written:
        print(f"  wrote {p}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scn, base = _load(args.scenario, args.max_requests)
    rows = sweep(scn, args.scales, args.policies, base_dir=base)
    table = sweep_table(rows)
    sys.stdout.write(table)
    peaks = peak_by_policy(rows)
    print("peak effective RPS: " + ", ".join(f"{k}={v:.3f}" for k, v in peaks.items()))
    if args.out:
        Path(args.out).write_text(json.dumps([r.as_dict() for r in rows], indent=2) + "\n")
    return EXIT_OK


def cmd_tune_sarathi(args) -> int:
    scn, base = _load(args.scenario, args.max_requests)
    res = tune_sarathi(scn, args.budgets, base_dir=base)
    print(f"{'token_budget':>12}  {'effective_rps':>14}")
    for b, eff in res.table:
        print(f"{b:>12}  {eff:>14.3f}")
    print(f"best token budget: {res.best_budget}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    samples = load_samples(args.samples)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CalibrationWarning)
        model = fit(samples)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    err = mape(model, samples)
    print(f"a = {model.a:.6g} ms, b = {model.b:.6g} ms/token, c = {model.c:.6g} ms/context-token")
    print(f"MAPE = {err:.3%} over {len(samples)} samples")
    if args.compare_token_only:
        print(f"token-only MAPE = {mape(fit_token_only(samples), samples):.3%}")
    if args.out:
        save_model(model, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_check(args) -> int:
    bad = 0
    for path in args.logs:
        lg = EventLog.read_jsonl(path)
        lg.complete = not args.incomplete
        rep = replay_check(lg)
        print(f"{path}: {rep.summary(args.max_show)}")
        bad += len(rep.violations)
    return EXIT_CHECK if bad else EXIT_OK


def cmd_compare(args) -> int:
    docs = []
    for p in (args.a, args.b):
        try:
            docs.append(json.loads(Path(p).read_text()))
        except (OSError, ValueError) as e:
            raise ConfigError("report", f"cannot read report {p}: {e}") from None
    sys.stdout.write(format_compare(compare_reports(*docs)))
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    scn, base = _load(args.scenario, args.max_requests)
    tr = scn.build_trace(base)
    save_trace(tr, args.out)
    print(f"wrote {len(tr)} requests ({tr.offered_rps:.3f} req/s) to {args.out}")
    return EXIT_OK


def cmd_gen_samples(args) -> int:
    model = CostModel(args.a, args.b, args.c)
    samples = generate_samples(model, args.n, args.seed, args.noise, args.noise_kind,
                               args.max_new, args.max_context)
    save_samples(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def cmd_preset(args) -> int:
    if args.name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {args.name!r}; expected one of {', '.join(PRESETS)}")
    text = PRESETS[args.name]().dumps()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_accept(args) -> int:
    names = args.only or list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError("only", f"unknown check {unknown[0]!r}; expected one of {', '.join(CHECKS)}")
    failed = 0
    for res in run_checks(names):
        print(res.line(), flush=True)
        failed += not res.passed
    return EXIT_CHECK if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="batchsim", description="Continuous-batching scheduler simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    scn_help = "scenario YAML file, or preset:NAME"
    head = argparse.ArgumentParser(add_help=False)
    head.add_argument("--max-requests", type=int, help="keep only the first N requests of the trace")

    s = sub.add_parser("run", parents=[head], help="simulate one scenario and write logs and reports")
    s.add_argument("scenario", help=scn_help)
    s.add_argument("--out", help="output directory (default: run.output_dir)")
    s.add_argument("--policy", help="override scheduler policy, optionally NAME:TOKEN_BUDGET")
    s.add_argument("--scale", type=float, help="override the arrival-rate scale")
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", parents=[head], help="effective RPS over load scales for several policies")
    s.add_argument("scenario", help=scn_help)
    s.add_argument("--scales", type=_floats, required=True, help="comma-separated rate multipliers")
    s.add_argument("--policies", type=_names, default=list(DEFAULT_POLICIES),
                   help="comma-separated NAME or NAME:TOKEN_BUDGET (default: %(default)s)")
    s.add_argument("--out", help="write rows as JSON")
    s.set_defaults(fn=cmd_sweep)

    s = sub.add_parser("tune-sarathi", parents=[head], help="pick the Sarathi token budget with the best effective RPS")
    s.add_argument("scenario", help=scn_help)
    s.add_argument("--budgets", type=_ints, required=True, help="comma-separated token budgets")
    s.set_defaults(fn=cmd_tune_sarathi)

    s = sub.add_parser("calibrate", help="fit the step-time model to profiling samples")
    s.add_argument("samples", help="CSV with total_new_tokens,total_context,observed_time_ms")
    s.add_argument("--out", help="write the fitted model as YAML")
    s.add_argument("--compare-token-only", action="store_true", help="also report the context-free fit")
    s.set_defaults(fn=cmd_calibrate)

    s = sub.add_parser("check", help="re-validate event logs")
    s.add_argument("logs", nargs="+", help="event log JSONL files")
    s.add_argument("--incomplete", action="store_true", help="log was cut by a horizon; skip end-state rules")
    s.add_argument("--max-show", type=int, default=20, help="violations to print per log")
    s.set_defaults(fn=cmd_check)

    s = sub.add_parser("compare", help="delta table between two report.json files")
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("gen-trace", parents=[head], help="write a scenario's request trace")
    s.add_argument("scenario", help=scn_help)
    s.add_argument("--out", required=True, help="trace path (.jsonl or .csv)")
    s.set_defaults(fn=cmd_gen_trace)

    s = sub.add_parser("gen-samples", help="write synthetic calibration samples")
    s.add_argument("--a", type=float, default=5.0, help="fixed ms per step")
    s.add_argument("--b", type=float, default=0.01, help="ms per new token")
    s.add_argument("--c", type=float, default=0.0001, help="ms per context token")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.02, help="relative noise magnitude")
    s.add_argument("--noise-kind", choices=("uniform", "gaussian"), default="uniform")
    s.add_argument("--max-new", type=int, default=2048)
    s.add_argument("--max-context", type=int, default=100_000)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_gen_samples)

    s = sub.add_parser("preset", help="print or save a pinned scenario as YAML")
    s.add_argument("name")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_preset)

    s = sub.add_parser("accept", help="run the phenomenon-level checks on the pinned scenarios")
    s.add_argument("--only", type=_names, help="comma-separated check names")
    s.set_defaults(fn=cmd_accept)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceParseError, ValidationError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"input error: {e.filename}: not found", file=sys.stderr)
        return EXIT_CONFIG
    except BatchSimError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001
        log.debug("unhandled", exc_info=True)
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
