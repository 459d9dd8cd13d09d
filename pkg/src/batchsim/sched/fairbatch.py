"""Three-group fair batch formation under an adaptive time budget."""

from __future__ import annotations

import math
from typing import Sequence

from batchsim.errors import UsageError
from batchsim.sched.types import BatchPlan, SchedulerConfig, TaskView, make_plan


def _key(t: TaskView):
    return (t.slack, t.seq)


def init_time_budget(tasks: Sequence[TaskView]) -> float:
    """max(smallest slack, smallest TPOT SLO) over the active tasks, in ms."""
    if not tasks:
        raise UsageError("time budget needs at least one active task")
    return max(min(t.slack for t in tasks), min(t.tpot_slo for t in tasks))


def group_tasks(tasks: Sequence[TaskView], budget: float):
    """Split into (urgent decode, prefill, other decode), each sorted by slack."""
    min_tpot = min(t.tpot_slo for t in tasks)
    threshold = budget + min_tpot
    urgent, prefill, relaxed = [], [], []
    for t in tasks:
        if t.is_decode and t.slack < threshold:
            urgent.append(t)
        elif t.is_prefill:
            prefill.append(t)
        else:
            relaxed.append(t)
    return sorted(urgent, key=_key), sorted(prefill, key=_key), sorted(relaxed, key=_key)


def form_batch_fairbatching(tasks: Sequence[TaskView], cfg: SchedulerConfig, now=None) -> BatchPlan:
    """Fill one step from urgent decodes, then prefills, then the remaining decodes.

    A task is taken whole when its cost fits both the time and token budgets;
    otherwise it gets the largest whole-token chunk that still fits. Tasks that
    cannot get even one token are skipped and later tasks are still probed.
    """
    if not tasks:
        return BatchPlan((), 0.0)
    m = cfg.model
    budget = init_time_budget(tasks)
    urgent, prefill, relaxed = group_tasks(tasks, budget)

    time_budget = budget - m.a
    token_budget = cfg.token_budget
    entries: list[tuple[int, int]] = []
    for t in (*urgent, *prefill, *relaxed):
        ctx_cost = m.c * t.context
        cost = m.b * t.new_tokens + ctx_cost
        if cost <= time_budget and t.new_tokens <= token_budget:
            entries.append((t.req_id, t.new_tokens))
            time_budget -= cost
            token_budget -= t.new_tokens
        elif token_budget > 0 and ctx_cost <= time_budget:
            chunk = math.floor(min(token_budget, (time_budget - ctx_cost) / m.b))
            if chunk >= 1:
                entries.append((t.req_id, chunk))
                time_budget -= m.b * chunk + ctx_cost
                token_budget -= chunk

    by_id = {t.req_id: t for t in tasks}
    plan = make_plan(entries, by_id, m, init_time_budget=budget,
                     time_budget_used=budget - m.a - time_budget)
    return plan
