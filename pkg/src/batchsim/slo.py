"""Envelope deadlines: per-token deadline, the request's current deadline, slack.

A token's deadline depends only on the request's arrival and SLO targets, never
on when earlier tokens were emitted, so emitting any token earlier can only help.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from batchsim.errors import UsageError, ValidationError
from batchsim.workload import US_PER_MS, Request


@dataclass(frozen=True)
class SloTargets:
    ttft_slo: float  # ms
    tpot_slo: float  # ms

    def __post_init__(self):
        if self.ttft_slo <= 0 or self.tpot_slo <= 0:
            raise ValidationError("SLO targets must be positive")


@dataclass
class RequestProgress:
    """Runtime progress of one request.

    ``next_output_idx`` is the index of the next token to emit; 0 means the
    prompt has not finished prefilling. ``emitted`` holds (index, time_us).
    """

    prefilled_tokens: int = 0
    emitted: list[tuple[int, int]] = field(default_factory=list)

    @property
    def next_output_idx(self) -> int:
        return len(self.emitted)

    def emit(self, t_us: int) -> int:
        if self.emitted and t_us <= self.emitted[-1][1]:
            raise UsageError("emission timestamps must be strictly increasing")
        idx = len(self.emitted)
        self.emitted.append((idx, t_us))
        return idx


def token_deadline_us(req: Request, j: int) -> int:
    return req.arrival_us + req.ttft_slo_us + req.tpot_slo_us * j


def token_deadline(req: Request, j: int) -> float:
    """Deadline in ms of output token ``j`` (0 is the first token)."""
    if j < 0:
        raise UsageError("token index must be >= 0")
    return token_deadline_us(req, j) / US_PER_MS


def request_deadline(req: Request, prog: RequestProgress) -> float:
    idx = prog.next_output_idx
    if idx >= req.output_len:
        raise UsageError(f"request {req.id} is finished")
    return token_deadline(req, idx)


def slack(req: Request, prog: RequestProgress, now: float) -> float:
    """Current deadline minus ``now`` (ms); negative when the next token is late."""
    return request_deadline(req, prog) - now


def slack_us(req: Request, next_idx: int, now_us: int) -> int:
    return token_deadline_us(req, next_idx) - now_us
