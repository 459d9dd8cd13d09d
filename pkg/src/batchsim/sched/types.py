from __future__ import annotations

from dataclasses import dataclass, field

from batchsim.costmodel import CostModel
from batchsim.errors import ValidationError

PREFILL = "prefill"
DECODE = "decode"

POLICIES = ("prefill_first", "sarathi", "fairbatch", "fairbatch_pab")


@dataclass(slots=True)
class TaskView:
    """What a step scheduler sees of one unfinished request.

    ``slack`` and ``tpot_slo`` are in ms. ``new_tokens`` is the remaining
    prompt for a prefill task and always 1 for a decode task. ``seq`` is the
    arrival order and breaks slack ties.
    """

    req_id: int
    phase: str
    slack: float
    new_tokens: int
    context: int
    seq: int
    tpot_slo: float

    @property
    def is_decode(self) -> bool:
        return self.phase == DECODE

    @property
    def is_prefill(self) -> bool:
        return self.phase == PREFILL


@dataclass(frozen=True)
class BatchPlan:
    entries: tuple[tuple[int, int], ...]
    predicted_time: float
    time_budget_used: float = 0.0
    token_budget_used: int = 0
    total_new_tokens: int = 0
    total_context: int = 0
    init_time_budget: float | None = None

    def __post_init__(self):
        for rid, n in self.entries:
            if n < 1:
                raise ValidationError(f"entry for request {rid} schedules {n} tokens")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def is_empty(self) -> bool:
        return not self.entries

    def as_dict(self) -> dict[int, int]:
        return dict(self.entries)


@dataclass(frozen=True)
class SchedulerConfig:
    policy: str = "fairbatch"
    token_budget: int = 8192
    model: CostModel = field(default_factory=lambda: CostModel(5.0, 0.01, 0.0001))
    max_chunk: int = 8192

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValidationError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if not self.token_budget >= self.max_chunk >= 1:
            raise ValidationError("scheduler config needs token_budget >= max_chunk >= 1")


def make_plan(entries, tasks_by_id, model: CostModel, **extra) -> BatchPlan:
    new = 0
    ctx = 0
    for rid, n in entries:
        new += n
        ctx += tasks_by_id[rid].context
    predicted = model.a + model.b * new + model.c * ctx if entries else 0.0
    return BatchPlan(tuple(entries), predicted, total_new_tokens=new, total_context=ctx,
                     token_budget_used=new, **extra)
