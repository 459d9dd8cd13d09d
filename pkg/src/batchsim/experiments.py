"""Experiment driver: single runs, load sweeps, Sarathi budget tuning, report comparison."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from batchsim.cluster import run_cluster
from batchsim.engine import run_node
from batchsim.errors import ConfigError
from batchsim.events import EventLog
from batchsim.metrics import ScenarioReport, envelope_lead_series, scenario_report, write_long_csv, write_report_csv
from batchsim.sched import POLICIES
from batchsim.scenario import Scenario
from batchsim.workload import Trace, scale_trace

DEFAULT_POLICIES = ("prefill_first", "sarathi:512", "fairbatch", "fairbatch_pab")


@dataclass
class RunResult:
    scenario: Scenario
    trace: Trace
    logs: list[EventLog]
    report: ScenarioReport
    routing: list[dict] | None = None

    def lead_series(self) -> list[tuple[float, int]]:
        return envelope_lead_series(self.logs, self.scenario.run.lead_bucket_ms)


def parse_policy(spec: str) -> tuple[str, int | None]:
    """``name`` or ``name:token_budget``."""
    name, _, budget = spec.partition(":")
    if name not in POLICIES:
        raise ConfigError("policies", f"unknown policy {name!r}; expected one of {', '.join(POLICIES)}")
    if not budget:
        return name, None
    try:
        b = int(budget)
    except ValueError:
        raise ConfigError("policies", f"bad token budget in {spec!r}") from None
    if b < 1:
        raise ConfigError("policies", f"token budget must be >= 1 in {spec!r}")
    return name, b


def run_scenario(scn: Scenario, trace: Trace | None = None, base_dir: Path | None = None,
                 name: str | None = None) -> RunResult:
    """Run one scenario on a single node or, when ``cluster.nodes > 1``, on a cluster."""
    if trace is None:
        trace = scn.build_trace(base_dir)
    nc = scn.node_config()
    horizon = scn.run.horizon_ms
    routing = None
    if scn.cluster.nodes > 1:
        res = run_cluster(trace, [nc] * scn.cluster.nodes, scn.cluster.lb(), horizon)
        logs, routing = res.logs, res.routing
    else:
        logs = [run_node(trace, nc, horizon)]
    rep = scenario_report(logs, trace.offered_rps, name or scn.run.name, scn.run.tpot_mode)
    return RunResult(scn, trace, logs, rep, routing)


@dataclass(frozen=True)
class SweepRow:
    policy: str
    scale: float
    offered_rps: float
    effective_rps: float
    slo_violation_rate: float
    n_rejected: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def sweep(scn: Scenario, scales: Sequence[float], policies: Sequence[str] = DEFAULT_POLICIES,
          base_dir: Path | None = None, on_result=None) -> list[SweepRow]:
    """One run per (policy, scale); the base trace is generated once and rescaled.

    ``on_result``, if given, is called with each RunResult.
    """
    if not scales:
        raise ConfigError("scales", "need at least one scale")
    if not policies:
        raise ConfigError("policies", "need at least one policy")
    parsed = [(p, *parse_policy(p)) for p in policies]
    base = scn.base_trace(base_dir)
    rows = []
    for spec, name, budget in parsed:
        for s in scales:
            if s <= 0:
                raise ConfigError("scales", f"scale must be > 0, got {s}")
            var = scn.with_policy(name, budget).with_scale(s)
            res = run_scenario(var, scale_trace(base, s), name=spec)
            if on_result is not None:
                on_result(res)
            r = res.report
            rows.append(SweepRow(spec, s, r.offered_rps, r.effective_rps, r.slo_violation_rate, r.n_rejected))
    return rows


def peak_by_policy(rows: Sequence[SweepRow]) -> dict[str, float]:
    peaks: dict[str, float] = {}
    for r in rows:
        peaks[r.policy] = max(peaks.get(r.policy, 0.0), r.effective_rps)
    return peaks


def sweep_table(rows: Sequence[SweepRow]) -> str:
    """Effective RPS with one row per scale and one column per policy."""
    policies = list(dict.fromkeys(r.policy for r in rows))
    scales = list(dict.fromkeys(r.scale for r in rows))
    cell = {(r.policy, r.scale): r for r in rows}
    head = ["scale", "offered_rps"] + policies
    lines = ["  ".join(f"{h:>14}" for h in head)]
    for s in scales:
        offered = next(r.offered_rps for r in rows if r.scale == s)
        vals = [f"{s:>14g}", f"{offered:>14.3f}"]
        vals += [f"{cell[(p, s)].effective_rps:>14.3f}" if (p, s) in cell else f"{'-':>14}" for p in policies]
        lines.append("  ".join(vals))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TuneResult:
    best_budget: int
    table: list[tuple[int, float]]  # (budget, effective_rps)


def tune_sarathi(scn: Scenario, budgets: Sequence[int], base_dir: Path | None = None,
                 trace: Trace | None = None) -> TuneResult:
    """Pick the Sarathi token budget with the highest effective RPS; ties go to the smallest."""
    if not budgets:
        raise ConfigError("budgets", "need at least one token budget")
    if any(b < 1 for b in budgets):
        raise ConfigError("budgets", "token budgets must be >= 1")
    if trace is None:
        trace = scn.build_trace(base_dir)
    table = []
    for b in sorted(set(budgets)):
        r = run_scenario(scn.with_policy("sarathi", b), trace).report
        table.append((b, r.effective_rps))
    best = min(table, key=lambda bt: (-bt[1], bt[0]))[0]
    return TuneResult(best, table)


def write_run_outputs(res: RunResult, out_dir: Path) -> list[Path]:
    """Event logs, routing log (cluster runs), report JSON/CSV and the lead series."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for lg in res.logs:
        p = out_dir / f"events_node{lg.node_id}.jsonl"
        lg.write_jsonl(p)
        written.append(p)
    if res.routing is not None:
        p = out_dir / "routing.jsonl"
        p.write_text("".join(json.dumps(r, separators=(",", ":")) + "\n" for r in res.routing))
        written.append(p)
    p = out_dir / "report.json"
    p.write_text(res.report.to_json())
    written.append(p)
    p = out_dir / "report.csv"
    write_report_csv([res.report], p)
    written.append(p)
    p = out_dir / "report_long.csv"
    write_long_csv([res.report], p)
    written.append(p)
    p = out_dir / "envelope_lead.csv"
    p.write_text("t_ms,lead_tokens\n" + "".join(f"{t:g},{v}\n" for t, v in res.lead_series()))
    written.append(p)
    return written


COMPARE_FIELDS = ("effective_rps", "slo_violation_rate", "n_good", "n_rejected",
                  "n_ttft_violations", "n_tpot_violations", "envelope_misses")


def compare_reports(a: dict, b: dict) -> list[tuple[str, float | None, float | None, float | None]]:
    """(metric, a, b, b - a) rows over headline counts and the percentile tables."""
    rows = []

    def add(key, va, vb):
        delta = vb - va if isinstance(va, (int, float)) and isinstance(vb, (int, float)) else None
        rows.append((key, va, vb, delta))

    for k in COMPARE_FIELDS:
        add(k, a.get(k), b.get(k))
    for table in ("ttft_pct", "tpot_pct"):
        ta, tb = a.get(table) or {}, b.get(table) or {}
        for p in dict.fromkeys(list(ta) + list(tb)):
            add(f"{table[:4]}_{p}", ta.get(p), tb.get(p))
    return rows


def format_compare(rows) -> str:
    def f(v):
        return "-" if v is None else f"{v:.4g}"

    lines = [f"{'metric':<22}{'a':>14}{'b':>14}{'delta':>14}"]
    lines += [f"{k:<22}{f(va):>14}{f(vb):>14}{f(d):>14}" for k, va, vb, d in rows]
    return "\n".join(lines) + "\n"
