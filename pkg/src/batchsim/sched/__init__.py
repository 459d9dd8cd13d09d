"""Pluggable step schedulers.

Every policy is a pure function ``(tasks, cfg, now) -> BatchPlan``.
"""

from batchsim.sched.baselines import form_batch_prefill_first, form_batch_sarathi
from batchsim.sched.fairbatch import form_batch_fairbatching, group_tasks, init_time_budget
from batchsim.sched.pab import Admission, admit, pab, pab_terms
from batchsim.sched.types import (
    DECODE,
    POLICIES,
    PREFILL,
    BatchPlan,
    SchedulerConfig,
    TaskView,
    make_plan,
)

_POLICY_FNS = {
    "prefill_first": form_batch_prefill_first,
    "sarathi": form_batch_sarathi,
    "fairbatch": form_batch_fairbatching,
    "fairbatch_pab": form_batch_fairbatching,
}


def form_batch(tasks, cfg: SchedulerConfig, now=None) -> BatchPlan:
    return _POLICY_FNS[cfg.policy](tasks, cfg, now)


__all__ = [
    "Admission",
    "BatchPlan",
    "DECODE",
    "POLICIES",
    "PREFILL",
    "SchedulerConfig",
    "TaskView",
    "admit",
    "form_batch",
    "form_batch_fairbatching",
    "form_batch_prefill_first",
    "form_batch_sarathi",
    "group_tasks",
    "init_time_budget",
    "make_plan",
    "pab",
    "pab_terms",
]
