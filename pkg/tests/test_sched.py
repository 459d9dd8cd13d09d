import math
import random

import pytest
from hypothesis import assume, given, settings, strategies as st

from batchsim.costmodel import CostModel
from batchsim.errors import UsageError, ValidationError
from batchsim.sched import (
    DECODE,
    PREFILL,
    SchedulerConfig,
    TaskView,
    form_batch,
    form_batch_fairbatching,
    form_batch_prefill_first,
    form_batch_sarathi,
    init_time_budget,
)

from oracles import RawReq, random_instance, reference_batch, to_views

M = CostModel(5.0, 0.01, 0.0001)
EPS = 1e-9
seeds = st.integers(0, 2**32 - 1)


def dec(rid, slack, ctx=1000, seq=None, tpot=50.0):
    return TaskView(rid, DECODE, slack, 1, ctx, rid if seq is None else seq, tpot)


def pre(rid, slack, tokens, ctx=0, seq=None, tpot=50.0):
    return TaskView(rid, PREFILL, slack, tokens, ctx, rid if seq is None else seq, tpot)


def cfg(policy="fairbatch", budget=8192, chunk=None, model=M):
    return SchedulerConfig(policy, budget, model, budget if chunk is None else chunk)


def _instance(seed, max_tasks=32):
    reqs, now, model, budget = random_instance(random.Random(seed), max_tasks)
    return reqs, now, model, budget, to_views(reqs, now), cfg(budget=budget, model=model)


# -- time budget ---------------------------------------------------------------

@pytest.mark.parametrize("slacks,expected", [([30, 80], 50), ([120], 120), ([-20], 50)])
def test_init_time_budget_examples(slacks, expected):
    assert init_time_budget([dec(i, s) for i, s in enumerate(slacks)]) == expected


def test_init_time_budget_counts_prefill_slack():
    assert init_time_budget([pre(0, 400, 100, tpot=40)]) == 400
    assert init_time_budget([pre(0, 10, 100, tpot=40), dec(1, 300)]) == 40


def test_init_time_budget_needs_tasks():
    with pytest.raises(UsageError):
        init_time_budget([])


# -- fair batching examples ----------------------------------------------------

def test_single_urgent_decode():
    plan = form_batch_fairbatching([dec(7, 40, ctx=1000)], cfg())
    assert plan.entries == ((7, 1),)
    assert plan.init_time_budget == 50
    assert plan.predicted_time == pytest.approx(5.11)


def test_prefill_before_relaxed_decode():
    tasks = [dec(0, 400, ctx=2000), pre(1, 30, 30000)]
    plan = form_batch_fairbatching(tasks, cfg())
    assert plan.init_time_budget == 50
    # time budget 50 - 5 = 45 ms buys 4500 prefill tokens and leaves nothing for the decode
    assert plan.entries == ((1, 4500),)
    # same instance as raw request state: decode at token 1 with slack 400, prefill with slack 30
    raw = [RawReq(0, -150, 500, 50, 1, False, 1, 2000), RawReq(1, -470, 500, 50, 0, True, 30000, 0)]
    want, init, _ = reference_batch(raw, 0, M, 8192)
    assert list(plan.entries) == want and init == 50
    assert plan.predicted_time <= plan.init_time_budget + EPS


def test_prefill_chunk_capped_by_token_budget():
    plan = form_batch_fairbatching([dec(0, 400, ctx=2000), pre(1, 30, 30000)], cfg(budget=2048))
    # the chunk takes every token, so the decode is out despite spare time
    assert plan.entries == ((1, 2048),)
    # a prompt taken whole leaves one token and enough time for the decode
    plan = form_batch_fairbatching([dec(0, 400, ctx=2000), pre(1, 30, 2000)], cfg(budget=2001))
    assert plan.entries == ((1, 2000), (0, 1))


def test_two_urgent_decodes_then_prefill():
    tasks = [pre(0, 45, 30000), dec(1, 20), dec(2, 10), dec(3, 300)]
    plan = form_batch_fairbatching(tasks, cfg())
    ids = [rid for rid, _ in plan.entries]
    assert ids[:2] == [2, 1]
    assert ids[2] == 0
    assert 3 not in ids
    left = 50 - 5 - 2 * (0.01 + 0.1)
    assert plan.as_dict()[0] == math.floor(left / 0.01)


def test_equal_slack_keeps_arrival_order():
    tasks = [dec(5, 10, seq=2), dec(6, 10, seq=0), dec(7, 10, seq=1)]
    plan = form_batch_fairbatching(tasks, cfg())
    assert [rid for rid, _ in plan.entries] == [6, 7, 5]


def test_empty_task_list_gives_empty_plan():
    assert form_batch_fairbatching([], cfg()).is_empty


def test_nothing_fits_gives_empty_plan():
    # step overhead alone exceeds the budget
    plan = form_batch_fairbatching([pre(0, 10, 100)], cfg(model=CostModel(80.0, 0.01, 0.0)))
    assert plan.is_empty


def test_skip_keeps_probing_later_tasks():
    # the first prefill's context alone exceeds the budget; the second still gets a chunk
    tasks = [pre(0, 10, 10, ctx=10**6), pre(1, 20, 100)]
    plan = form_batch_fairbatching(tasks, cfg())
    assert plan.entries == ((1, 100),)


def test_fairbatch_pab_uses_same_batching():
    tasks = [pre(0, 45, 30000), dec(1, 20), dec(2, 10), dec(3, 300)]
    assert form_batch(tasks, cfg("fairbatch_pab")).entries == form_batch(tasks, cfg()).entries


# -- baselines -----------------------------------------------------------------

def test_sarathi_decodes_then_prefill_chunk():
    tasks = [dec(i, 100) for i in range(48)] + [pre(48, 400, 2000)]
    plan = form_batch_sarathi(tasks, cfg("sarathi", 512))
    d = plan.as_dict()
    assert all(d[i] == 1 for i in range(48))
    assert d[48] == 464
    assert len(plan) == 49


def test_sarathi_decodes_only():
    plan = form_batch_sarathi([dec(i, 100) for i in range(10)], cfg("sarathi", 512))
    assert plan.entries == tuple((i, 1) for i in range(10))
    assert plan.token_budget_used == 10


def test_sarathi_prefill_only():
    assert form_batch_sarathi([pre(0, 400, 3000)], cfg("sarathi", 2048, 1024)).entries == ((0, 1024),)
    assert form_batch_sarathi([pre(0, 400, 300)], cfg("sarathi", 2048, 1024)).entries == ((0, 300),)


def test_prefill_first_stalls_decodes():
    tasks = [pre(0, 400, 5000, seq=0)] + [dec(i, 10, seq=i) for i in range(1, 11)]
    plan = form_batch_prefill_first(tasks, cfg("prefill_first", 4096))
    assert plan.entries == ((0, 4096),)


def test_prefill_first_decodes_arrived_first():
    tasks = [dec(i, 10, seq=i) for i in range(3)] + [pre(3, 400, 5000, seq=3)]
    plan = form_batch_prefill_first(tasks, cfg("prefill_first", 4096))
    assert plan.entries == ((0, 1), (1, 1), (2, 1), (3, 4093))


def test_prefill_first_no_prefills():
    plan = form_batch_prefill_first([dec(i, 10) for i in range(4)], cfg("prefill_first", 4096))
    assert plan.entries == tuple((i, 1) for i in range(4))


def test_config_invariant():
    with pytest.raises(ValidationError):
        SchedulerConfig("sarathi", 512, M, 1024)
    with pytest.raises(ValidationError):
        SchedulerConfig("edf", 512, M, 512)


# -- properties over fuzzed instances --------------------------------------------

@settings(max_examples=300, deadline=None)
@given(seeds)
def test_matches_reference(seed):
    reqs, now, model, budget, views, c = _instance(seed)
    want, init, _ = reference_batch(reqs, now, model, budget)
    plan = form_batch_fairbatching(views, c)
    assert list(plan.entries) == want
    assert plan.init_time_budget == pytest.approx(init)


@settings(max_examples=300, deadline=None)
@given(seeds)
def test_budget_safety(seed):
    *_, views, c = _instance(seed)
    plan = form_batch_fairbatching(views, c)
    if plan.is_empty:
        return
    assert plan.predicted_time <= plan.init_time_budget + 1e-6
    assert plan.token_budget_used <= c.token_budget
    by_id = {t.req_id: t for t in views}
    for rid, n in plan.entries:
        t = by_id[rid]
        assert 1 <= n <= t.new_tokens


@settings(max_examples=300, deadline=None)
@given(seeds)
def test_urgent_decodes_admitted_when_they_fit(seed):
    reqs, now, model, budget, views, c = _instance(seed)
    _, init, (ud, _, _) = reference_batch(reqs, now, model, budget)
    cost = sum(model.b * r.new_tokens + model.c * r.context for r in ud)
    assume(cost <= init - model.a and len(ud) <= budget)
    got = form_batch_fairbatching(views, c).as_dict()
    assert all(got.get(r.rid) == 1 for r in ud)


@settings(max_examples=300, deadline=None)
@given(seeds)
def test_priority_soundness(seed):
    """Every skipped or truncated task was out of budget given only the entries ahead of it."""
    reqs, now, model, budget, views, c = _instance(seed)
    _, init, groups = reference_batch(reqs, now, model, budget)
    got = form_batch_fairbatching(views, c).as_dict()
    time_left, tok_left = init - model.a, budget
    for r in (*groups[0], *groups[1], *groups[2]):
        ctx_cost = model.c * r.context
        n = got.get(r.rid, 0)
        if n < r.new_tokens:
            # one more token would break the time or token budget
            more = n + 1
            assert more > tok_left or model.b * more + ctx_cost > time_left + 1e-9
        if n:
            time_left -= model.b * n + ctx_cost
            tok_left -= n


@settings(max_examples=200, deadline=None)
@given(seeds, st.sampled_from([16, 64, 512, 4096]))
def test_sarathi_includes_every_decode(seed, budget):
    *_, views, _ = _instance(seed)
    plan = form_batch_sarathi(views, cfg("sarathi", budget))
    got = plan.as_dict()
    assert all(got.get(t.req_id) == 1 for t in views if t.is_decode)
    n_dec = sum(t.is_decode for t in views)
    assert plan.token_budget_used <= max(budget, n_dec)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-200, 90), st.integers(1, 20000)), min_size=1, max_size=32))
def test_all_urgent_decodes_fall_back_to_stall_free(items):
    tasks = [dec(i, s, ctx=ctx) for i, (s, ctx) in enumerate(items)]
    budget = init_time_budget(tasks)
    assume(all(t.slack < budget + 50 for t in tasks))
    assume(sum(0.01 + 0.0001 * t.context for t in tasks) <= budget - 5)
    fb = {rid for rid, _ in form_batch_fairbatching(tasks, cfg()).entries}
    sar = {rid for rid, _ in form_batch_sarathi(tasks, cfg("sarathi", 512)).entries}
    assert fb == sar


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_policies_are_pure(seed):
    *_, views, c = _instance(seed)
    for policy in ("fairbatch", "sarathi", "prefill_first"):
        k = SchedulerConfig(policy, c.token_budget, c.model, c.max_chunk)
        assert form_batch(views, k) == form_batch(views, k)
