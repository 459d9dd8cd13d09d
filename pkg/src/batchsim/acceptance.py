"""Phenomenon-level checks on the pinned scenarios.

Each check returns a CheckResult with the measured quantities. Every log a
check generates is also passed through replay_check; the violation count is
reported in ``metrics["replay_violations"]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from batchsim.experiments import RunResult, peak_by_policy, run_scenario, sweep, tune_sarathi
from batchsim.metrics import collect
from batchsim.presets import (
    CLUSTER_SCALES,
    CLUSTER_STALE_LATENCY_MS,
    SARATHI_BUDGETS,
    SHAPE_SCALES,
    TRACE_SHAPES,
    bursty_unfairness,
    cluster8,
    medium_load,
    stall_free_budget,
    trace_shape,
)
from batchsim.replay import replay_check
from batchsim.workload import scale_trace


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _replay_violations(res: RunResult) -> int:
    return sum(len(replay_check(lg).violations) for lg in res.logs)


def decode_envelope_misses(res: RunResult) -> int:
    """Output tokens after the first that were emitted past their envelope deadline."""
    n = 0
    for r in collect(res.logs).values():
        if r.rejected:
            continue
        n += sum(1 for j, t in enumerate(r.emits) if j >= 1 and t > r.deadline_us(j))
    return n


def lead_during_ttft_miss(res: RunResult) -> int:
    """Sample instants where aggregate decode lead is positive while some request is past its TTFT target unserved."""
    recs = [r for r in collect(res.logs).values() if not r.rejected]
    hits = 0
    for t_ms, lead in res.lead_series():
        if lead <= 0:
            continue
        t = int(round(t_ms * 1000))
        if any(r.arrival_us + r.ttft_slo_us < t and (not r.emits or r.emits[0] > t) for r in recs):
            hits += 1
    return hits


def check_unfairness() -> CheckResult:
    scn = bursty_unfairness()
    trace = scn.build_trace()
    budget = stall_free_budget(scn.cost_model, scn.slo.tpot_slo)
    sar = run_scenario(scn.with_policy("sarathi", budget), trace)
    fb = run_scenario(scn.with_policy("fairbatch"), trace)
    s_ttft, f_ttft = sar.report.n_ttft_violations, fb.report.n_ttft_violations
    s_miss, f_miss = decode_envelope_misses(sar), decode_envelope_misses(fb)
    concurrent = lead_during_ttft_miss(sar)
    reduction = 1 - f_ttft / s_ttft if s_ttft else 0.0
    passed = concurrent >= 1 and s_ttft >= 1 and f_ttft <= 0.5 * s_ttft and f_miss <= s_miss
    m = {
        "sarathi_budget": budget,
        "sarathi_ttft_violations": s_ttft,
        "fairbatch_ttft_violations": f_ttft,
        "ttft_violation_reduction": reduction,
        "sarathi_decode_envelope_misses": s_miss,
        "fairbatch_decode_envelope_misses": f_miss,
        "sarathi_max_lead": max(v for _, v in sar.lead_series()),
        "lead_with_ttft_miss_samples": concurrent,
        "replay_violations": _replay_violations(sar) + _replay_violations(fb),
    }
    detail = (f"Sarathi({budget}) TTFT misses {s_ttft} -> FB {f_ttft} ({reduction:.0%} fewer, need >= 50%); "
              f"decode envelope misses Sarathi {s_miss} vs FB {f_miss}; "
              f"{concurrent} samples with positive lead during a TTFT miss")
    return CheckResult("unfairness", passed, detail, m)


def check_tail_ordering() -> CheckResult:
    scn = medium_load()
    trace = scn.build_trace()
    tpot = scn.slo.tpot_slo
    best = tune_sarathi(scn, SARATHI_BUDGETS, trace=trace).best_budget
    sar = run_scenario(scn.with_policy("sarathi", best), trace)
    fb = run_scenario(scn.with_policy("fairbatch"), trace)
    pf = run_scenario(scn.with_policy("prefill_first"), trace)
    fb_ttft, s_ttft = fb.report.ttft_pct[99], sar.report.ttft_pct[99]
    fb_tpot, pf_tpot = fb.report.tpot_pct[99], pf.report.tpot_pct[99]
    passed = fb_ttft < s_ttft and fb_tpot <= tpot and pf_tpot > tpot
    m = {
        "sarathi_budget": best,
        "p99_ttft": {"fairbatch": fb_ttft, "sarathi": s_ttft, "prefill_first": pf.report.ttft_pct[99]},
        "p99_max_tpot": {"fairbatch": fb_tpot, "sarathi": sar.report.tpot_pct[99], "prefill_first": pf_tpot},
        "replay_violations": sum(map(_replay_violations, (sar, fb, pf))),
    }
    detail = (f"P99 TTFT FB {fb_ttft:.1f} < Sarathi({best}) {s_ttft:.1f}; "
              f"P99 TPOT FB {fb_tpot:.2f} <= {tpot:g} < prefill-first {pf_tpot:.1f}")
    return CheckResult("tail_ordering", passed, detail, m)


def check_goodput_ordering(shapes=tuple(TRACE_SHAPES)) -> CheckResult:
    policies = ["prefill_first", *(f"sarathi:{b}" for b in SARATHI_BUDGETS), "fairbatch", "fairbatch_pab"]
    per_shape = {}
    ok = True
    parts = []
    replay: list[int] = []
    for shape in shapes:
        rows = sweep(trace_shape(shape), SHAPE_SCALES, policies,
                     on_result=lambda res: replay.append(_replay_violations(res)))
        pk = peak_by_policy(rows)
        sar = max(v for k, v in pk.items() if k.startswith("sarathi"))
        baseline = max(sar, pk["prefill_first"])
        fbv, fbp = pk["fairbatch"], pk["fairbatch_pab"]
        good = fbp >= fbv > baseline
        ok &= good
        per_shape[shape] = {"fairbatch_pab": fbp, "fairbatch": fbv, "sarathi": sar,
                            "prefill_first": pk["prefill_first"], "fb_margin": fbv - baseline}
        parts.append(f"{shape} {fbp:.2f}>={fbv:.2f}>{baseline:.2f}{'' if good else ' (FAILED)'}")
    return CheckResult("goodput_ordering", ok, "peak effective RPS FB-PAB>=FB>best baseline: " + "; ".join(parts),
                       {"shapes": per_shape, "replay_violations": sum(replay)})


def _cluster_peak(lb: str, latency: float, replay: list) -> float:
    scn = cluster8(lb, latency)
    base = scn.base_trace()
    best = 0.0
    for s in CLUSTER_SCALES:
        res = run_scenario(scn.with_scale(s), scale_trace(base, s))
        replay.append(_replay_violations(res))
        best = max(best, res.report.effective_rps)
    return best


def check_cluster_gap() -> CheckResult:
    replay: list[int] = []
    stale = CLUSTER_STALE_LATENCY_MS
    pab0 = _cluster_peak("pab_lb", 0.0, replay)
    cnt0 = _cluster_peak("count_lb", 0.0, replay)
    pab_s = _cluster_peak("pab_lb", stale, replay)
    cnt_s = _cluster_peak("count_lb", stale, replay)
    d_pab, d_cnt = pab0 - pab_s, cnt0 - cnt_s
    passed = pab0 >= cnt0 and d_cnt > d_pab
    m = {"peak": {"pab_lb": pab0, "count_lb": cnt0, "pab_lb_stale": pab_s, "count_lb_stale": cnt_s},
         "degradation": {"pab_lb": d_pab, "count_lb": d_cnt}, "replay_violations": sum(replay)}
    detail = (f"peak goodput PAB-LB {pab0:.2f} >= count-LB {cnt0:.2f}; with {stale:g} ms report latency "
              f"count-LB loses {d_cnt:.2f} vs PAB-LB {d_pab:.2f}")
    return CheckResult("cluster_gap", passed, detail, m)


CHECKS = {
    "unfairness": check_unfairness,
    "tail_ordering": check_tail_ordering,
    "goodput_ordering": check_goodput_ordering,
    "cluster_gap": check_cluster_gap,
}


def run_checks(names=None) -> list[CheckResult]:
    return [CHECKS[n]() for n in (names or CHECKS)]
