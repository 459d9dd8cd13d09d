"""Baseline step schedulers: stall-free (decode-first) and FIFO prefill-first."""

from __future__ import annotations

from typing import Sequence

from batchsim.sched.types import BatchPlan, SchedulerConfig, TaskView, make_plan


def form_batch_sarathi(tasks: Sequence[TaskView], cfg: SchedulerConfig, now=None) -> BatchPlan:
    """Every decode task, then FIFO prefill chunks in the leftover token budget."""
    if not tasks:
        return BatchPlan((), 0.0)
    ordered = sorted(tasks, key=lambda t: t.seq)
    entries = [(t.req_id, 1) for t in ordered if t.is_decode]
    left = cfg.token_budget - len(entries)
    for t in ordered:
        if left <= 0:
            break
        if t.is_prefill:
            n = min(t.new_tokens, left, cfg.max_chunk)
            entries.append((t.req_id, n))
            left -= n
    return make_plan(entries, {t.req_id: t for t in tasks}, cfg.model)


def form_batch_prefill_first(tasks: Sequence[TaskView], cfg: SchedulerConfig, now=None) -> BatchPlan:
    """Arrival-order FIFO over all tasks with a large token budget.

    A long prompt can use the whole budget (up to ``max_chunk`` per chunk)
    and stall every decode queued behind it.
    """
    if not tasks:
        return BatchPlan((), 0.0)
    left = cfg.token_budget
    entries = []
    for t in sorted(tasks, key=lambda t: t.seq):
        if left <= 0:
            break
        n = 1 if t.is_decode else min(t.new_tokens, left, cfg.max_chunk)
        entries.append((t.req_id, n))
        left -= n
    return make_plan(entries, {t.req_id: t for t in tasks}, cfg.model)
