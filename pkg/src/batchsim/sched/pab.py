"""Prefill admission budget: spare prefill tokens a node can absorb within the TTFT SLO.

Worst-case relaxation: every task is assumed to be deferred until its slack
runs out and then served once per TPOT window. Whatever step time remains
inside one TTFT window is available to prefill at ``b + c`` ms per token.
"""

from __future__ import annotations

import enum
import math
from typing import Sequence

from batchsim.costmodel import CostModel
from batchsim.sched.types import TaskView
from batchsim.slo import SloTargets


class Admission(str, enum.Enum):
    ADMIT = "admit"
    REJECT = "reject"


def pab_terms(tasks: Sequence[TaskView], model: CostModel, slos: SloTargets) -> dict:
    """Intermediate quantities of the budget, for reporting and tests."""
    ttft_slo, tpot_slo = slos.ttft_slo, slos.tpot_slo
    if tasks:
        min_slack = min(t.slack for t in tasks)
        reserved_steps = max(0.0, ttft_slo - min_slack) / tpot_slo + 1.0
    else:
        reserved_steps = 1.0
    overhead_ms = reserved_steps * model.a
    task_ms = 0.0
    for t in tasks:
        steps = max(0.0, (ttft_slo - t.slack) / tpot_slo)
        task_ms += steps * (model.b + t.context * model.c)
    prefill_ms = ttft_slo - overhead_ms - task_ms
    capacity = prefill_ms / (model.b + model.c)
    queued = sum(t.new_tokens for t in tasks if t.is_prefill)
    return {
        "reserved_steps": reserved_steps,
        "overhead_ms": overhead_ms,
        "task_ms": task_ms,
        "prefill_ms": prefill_ms,
        "prefill_capacity": capacity,
        "queued_prefill": queued,
        "pab": capacity - queued,
    }


def pab(tasks: Sequence[TaskView], model: CostModel, slos: SloTargets) -> int:
    """Admission budget in tokens, floored; negative means no spare capacity."""
    return math.floor(pab_terms(tasks, model, slos)["pab"])


def admit(pab_now: float, incoming_prompt: int) -> Admission:
    return Admission.ADMIT if incoming_prompt <= pab_now else Admission.REJECT
