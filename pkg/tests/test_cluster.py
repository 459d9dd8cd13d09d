import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from batchsim.cluster import ClusterView, LbConfig, Report, report, route, run_cluster
from batchsim.costmodel import CostModel
from batchsim.engine import Node, NodeConfig, run_node
from batchsim.errors import ValidationError
from batchsim.events import ADMISSION_REJECT, ARRIVAL, BATCH_END, BATCH_START
from batchsim.experiments import run_scenario
from batchsim.metrics import collect
from batchsim.presets import minimal, trace_shape
from batchsim.replay import replay_check
from batchsim.sched import SchedulerConfig, pab
from batchsim.workload import Request, make_trace

TRUTH = CostModel(15.0, 0.1, 5e-5)


def req(prompt, rid=0):
    return Request.create(rid, 0.0, prompt, 10, 500, 50)


def view_of(pabs=None, counts=None):
    n = len(pabs or counts)
    v = ClusterView(n)
    for i in range(n):
        w, r = counts[i] if counts else (0, 0)
        v.apply(Report(i, 0, pab=pabs[i] if pabs else 0, waiting=w, running=r))
    return v


def node_cfg(policy="fairbatch", model=TRUTH):
    return NodeConfig(SchedulerConfig(policy, 8192, model, 8192), model)


def busy_intervals(log):
    out, start = [], None
    for e in log:
        if e.kind == BATCH_START:
            start = e.t_us
        elif e.kind == BATCH_END:
            out.append((start, e.t_us))
    return out


def idle_within(intervals, lo, hi):
    t = lo
    for s, e in sorted(iv for iv in intervals if iv[1] > lo and iv[0] < hi):
        if s > t:
            return True
        t = max(t, e)
    return t < hi


# -- routing rules -----------------------------------------------------------

def test_pab_route_prefers_largest_budget_and_decrements():
    v = view_of(pabs=[1000, 500])
    assert route(v, req(800), LbConfig("pab_lb")) == 0
    assert v.nodes[0].effective_pab() == 200


def test_count_route_picks_smallest_weighted_count():
    v = view_of(counts=[(3, 10), (0, 12)])
    assert route(v, req(10), LbConfig("count_lb")) == 1
    assert v.nodes[1].effective_waiting() == 1


def test_count_route_weights():
    v = view_of(counts=[(3, 10), (0, 12)])
    assert route(v, req(10), LbConfig("count_lb", w_waiting=0.0)) == 0


def test_pab_route_best_effort_when_nothing_fits():
    assert route(view_of(pabs=[100, 90]), req(800), LbConfig("pab_lb")) == 0


def test_pab_route_prefers_a_node_that_fits():
    # the larger budget fits; a smaller one that also fits is not preferred
    assert route(view_of(pabs=[900, 5000]), req(800), LbConfig("pab_lb")) == 1


def test_equal_budgets_go_to_less_loaded_node():
    v = ClusterView(2)
    v.apply(Report(0, 0, pab=4000, waiting=0, running=3))
    v.apply(Report(1, 0, pab=4000, waiting=0, running=1))
    assert route(v, req(100), LbConfig("pab_lb")) == 1


def test_stale_report_dropped_and_local_view_kept():
    v = ClusterView(1)
    v.apply(Report(0, 100, pab=5000))
    route(v, req(1000), LbConfig("pab_lb"), t_us=150)
    route(v, req(700), LbConfig("pab_lb"), t_us=300)
    assert v.nodes[0].effective_pab() == 3300
    # an older report is ignored
    assert not v.apply(Report(0, 50, pab=9999))
    # a report generated at 200 already accounts for the first dispatch only
    assert v.apply(Report(0, 200, pab=4200))
    assert v.nodes[0].effective_pab() == 3500


def test_empty_node_reports_closed_form():
    cfg = node_cfg("fairbatch_pab")
    n = Node(cfg)
    rep = report(n, LbConfig("pab_lb"), 0)
    assert rep.pab == pab([], cfg.scheduler.model, cfg.global_slos)


def test_invalid_lb_config():
    with pytest.raises(ValidationError):
        LbConfig("random")
    with pytest.raises(ValidationError):
        LbConfig(report_latency=-1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-2000, 10000), min_size=1, max_size=8), st.integers(1, 5000))
def test_pab_route_property(pabs, prompt):
    v = view_of(pabs=pabs)
    chosen = route(v, req(prompt), LbConfig("pab_lb"))
    fits = [p for p in pabs if p >= prompt]
    assert pabs[chosen] == max(fits or pabs)
    assert v.nodes[chosen].effective_pab() == pabs[chosen] - prompt


# -- cluster runs ------------------------------------------------------------

def test_single_node_cluster_equals_node():
    scn = minimal()
    tr = scn.build_trace()
    nc = scn.node_config()
    for policy in ("pab_lb", "count_lb"):
        res = run_cluster(tr, [nc], LbConfig(policy))
        assert res.logs[0].dumps() == run_node(tr, nc).dumps()
        assert res.complete


def test_cluster_deterministic_and_valid():
    scn = minimal().with_cluster(nodes=3, lb_policy="pab_lb", report_latency_ms=50.0).with_policy("fairbatch_pab")
    a, b = run_scenario(scn), run_scenario(scn)
    assert [lg.dumps() for lg in a.logs] == [lg.dumps() for lg in b.logs]
    assert a.routing == b.routing
    assert all(replay_check(lg).ok for lg in a.logs)
    assert {r["req_id"] for r in a.routing} == set(range(len(a.trace)))


def test_zero_latency_view_matches_node_at_boundaries(monkeypatch):
    """With instant reports after every step, each routing decision sees the node's
    budget at its last step boundary minus the prompts routed to it since."""
    import batchsim.cluster as cl

    reports = []
    real = cl.report

    def spy(node, cfg, now_us):
        rep = real(node, cfg, now_us)
        assert rep.pab == node.current_pab(now_us)
        reports.append(rep)
        return rep

    monkeypatch.setattr(cl, "report", spy)
    tr = minimal().with_scale(3.0).build_trace()
    prompts = {r.id: r.prompt_len for r in tr}
    res = cl.run_cluster(tr, [node_cfg("fairbatch_pab")] * 2, LbConfig("pab_lb"))
    for rec in res.routing:
        t = round(rec["t_ms"] * 1000)
        for n in range(2):
            last = max((r for r in reports if r.node == n and r.generated_us <= t), key=lambda r: r.generated_us)
            sent = sum(prompts[x["req_id"]] for x in res.routing
                       if x["node"] == n and last.generated_us < round(x["t_ms"] * 1000) <= t and x is not rec
                       and res.routing.index(x) < res.routing.index(rec))
            assert rec["view_snapshot"][n] == last.pab - sent


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_two_nodes_balance_admitted_tokens(seed):
    scn = trace_shape("burstgpt")
    t = dataclasses.replace(scn.trace, base_rate=8.0, burst_rate=8.0, seed=seed, duration_ms=300000.0)
    scn = dataclasses.replace(scn, trace=t).with_cluster(nodes=2, lb_policy="pab_lb")
    totals = []
    for lg in run_scenario(scn).logs:
        rejected = {e.req_id for e in lg.of_kind(ADMISSION_REJECT)}
        totals.append(sum(e.data["prompt_len"] for e in lg.of_kind(ARRIVAL) if e.req_id not in rejected))
    assert abs(totals[0] - totals[1]) <= 0.1 * max(totals)


def test_stale_counts_overload_one_node_while_sibling_idles():
    # alternating long and short prompts: counts cannot tell them apart
    reqs = [Request.create(i, i * 100.0, 4000 if i % 2 == 0 else 50, 20, 500, 50) for i in range(30)]
    res = run_cluster(make_trace(reqs), [node_cfg()] * 2, LbConfig("count_lb", report_latency=15000.0))
    busy = [busy_intervals(lg) for lg in res.logs]
    found = False
    for i, lg in enumerate(res.logs):
        for r in collect(lg).values():
            if r.emits and r.emits[0] - r.arrival_us > r.ttft_slo_us:
                lo, hi = r.arrival_us, r.arrival_us + r.ttft_slo_us
                found |= any(idle_within(busy[j], lo, hi) for j in range(len(busy)) if j != i)
    assert found


def test_reroute_on_reject():
    reqs = [Request.create(i, 0.0, 4000, 10, 500, 50) for i in range(6)]
    tr = make_trace(reqs)
    cfg = node_cfg("fairbatch_pab")
    plain = run_cluster(tr, [cfg] * 3, LbConfig("count_lb", report_latency=1000.0))
    retry = run_cluster(tr, [cfg] * 3, LbConfig("count_lb", report_latency=1000.0, reroute_on_reject=True))
    assert len(retry.rejected) <= len(plain.rejected)
    assert len(retry.routing) >= len(plain.routing)
    assert all(replay_check(lg).ok for lg in retry.logs)


def test_routing_log_written(tmp_path):
    res = run_cluster(minimal().build_trace(), [node_cfg()] * 2, LbConfig("count_lb"))
    res.write_routing(tmp_path / "routing.jsonl")
    lines = (tmp_path / "routing.jsonl").read_text().splitlines()
    assert len(lines) == len(res.routing)
    assert '"policy":"count_lb"' in lines[0]
