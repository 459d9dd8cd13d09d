"""Single-node discrete-event simulator.

Scheduling happens only at step boundaries: the policy sees every admitted,
unfinished request, the step runs for the ground-truth duration, and progress
(prefill chunks, emitted tokens, completions) lands at the step's end.
Arrivals during a step are queued and become visible at the next boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from batchsim.costmodel import CostModel, NoiseSpec, ground_truth_step_time
from batchsim.events import (
    ADMISSION_REJECT,
    ARRIVAL,
    BATCH_END,
    BATCH_START,
    REQUEST_DONE,
    TOKEN_EMIT,
    Event,
    EventLog,
)
from batchsim.sched import (
    DECODE,
    PREFILL,
    BatchPlan,
    SchedulerConfig,
    TaskView,
    admit,
    form_batch,
    make_plan,
    pab,
)
from batchsim.sched.pab import Admission
from batchsim.slo import SloTargets
from batchsim.workload import Request, Trace, ms_to_us

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodeConfig:
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    truth_model: CostModel = field(default_factory=lambda: CostModel(5.0, 0.01, 0.0001))
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    # SLOs used by the admission budget; per-request targets drive slack
    global_slos: SloTargets = field(default_factory=lambda: SloTargets(500.0, 50.0))
    # bounds simulation memory only; not a KV-cache model
    max_active: int | None = None


class _Live:
    __slots__ = ("req", "prefilled", "next_idx", "seq")

    def __init__(self, req: Request, seq: int):
        self.req = req
        self.prefilled = 0
        self.next_idx = 0
        self.seq = seq


class Node:
    """Mutable state of one inference engine plus its event log."""

    def __init__(self, cfg: NodeConfig, node_id: int = 0):
        self.cfg = cfg
        self.node_id = node_id
        self.clock = 0
        self.waiting: dict[int, _Live] = {}
        self.active: dict[int, _Live] = {}
        self.done: set[int] = set()
        self.rejected: set[int] = set()
        self.step_no = 0
        self.busy_until: int | None = None
        self.log = EventLog(node_id=node_id)
        self._plan: BatchPlan | None = None
        self._dt = 0
        self._seq = 0

    # -- state queries --------------------------------------------------

    @property
    def busy(self) -> bool:
        return self.busy_until is not None

    @property
    def has_work(self) -> bool:
        return bool(self.waiting or self.active)

    def _visible(self) -> list[_Live]:
        live = list(self.active.values())
        cap = self.cfg.max_active
        for lv in self.waiting.values():
            if cap is not None and len(live) >= cap:
                break
            live.append(lv)
        return live

    def task_views(self, now_us: int, include_all: bool = False) -> list[TaskView]:
        views = []
        src = list(self.active.values()) + list(self.waiting.values()) if include_all else self._visible()
        for lv in src:
            r = lv.req
            deadline = r.arrival_us + r.ttft_slo_us + r.tpot_slo_us * lv.next_idx
            slack = (deadline - now_us) / 1000
            if lv.prefilled < r.prompt_len:
                views.append(TaskView(r.id, PREFILL, slack, r.prompt_len - lv.prefilled,
                                      lv.prefilled, lv.seq, r.tpot_slo_us / 1000))
            else:
                views.append(TaskView(r.id, DECODE, slack, 1, r.prompt_len + lv.next_idx,
                                      lv.seq, r.tpot_slo_us / 1000))
        return views

    def current_pab(self, now_us: int) -> int:
        return pab(self.task_views(now_us, include_all=True), self.cfg.scheduler.model,
                   self.cfg.global_slos)

    def counts(self) -> tuple[int, int]:
        return len(self.waiting), len(self.active)

    # -- transitions ------------------------------------------------------

    def offer(self, req: Request, t_us: int) -> bool:
        """Deliver an arrival at ``t_us``; returns False if admission control rejects it."""
        self.clock = max(self.clock, t_us)
        self.log.append(Event(t_us, ARRIVAL, req.id, {
            "prompt_len": req.prompt_len,
            "output_len": req.output_len,
            "ttft_slo_ms": req.ttft_slo,
            "tpot_slo_ms": req.tpot_slo,
        }))
        if self.cfg.scheduler.policy == "fairbatch_pab":
            budget = self.current_pab(t_us)
            if admit(budget, req.prompt_len) is Admission.REJECT:
                self.rejected.add(req.id)
                self.log.append(Event(t_us, ADMISSION_REJECT, req.id, {"pab": budget}))
                return False
        self.waiting[req.id] = _Live(req, self._seq)
        self._seq += 1
        return True

    def _forced_plan(self, tasks: list[TaskView]) -> BatchPlan:
        # nothing fits the budget: run one token of the most urgent task so time advances
        t = min(tasks, key=lambda t: (t.slack, t.seq))
        return make_plan([(t.req_id, 1)], {t.req_id: t}, self.cfg.scheduler.model)

    def start_step(self, now_us: int) -> int | None:
        """Plan and launch a step at ``now_us``; returns its end time, or None if idle."""
        assert not self.busy
        self.clock = max(self.clock, now_us)
        tasks = self.task_views(self.clock)
        if not tasks:
            return None
        plan = form_batch(tasks, self.cfg.scheduler, self.clock / 1000)
        forced = plan.is_empty
        if forced:
            plan = self._forced_plan(tasks)
        for rid, _ in plan.entries:
            lv = self.waiting.pop(rid, None)
            if lv is not None:
                self.active[rid] = lv
        actual = ground_truth_step_time(self.cfg.truth_model, plan, self.cfg.noise,
                                        self.cfg.seed, self.step_no)
        dt = max(1, ms_to_us(actual))
        data = {
            "step": self.step_no,
            "n_entries": len(plan.entries),
            "new_tokens": plan.total_new_tokens,
            "context": plan.total_context,
            "predicted_ms": round(plan.predicted_time, 6),
        }
        if forced:
            data["forced"] = True
        self.log.append(Event(self.clock, BATCH_START, None, data))
        self._plan = plan
        self._dt = dt
        self.busy_until = self.clock + dt
        return self.busy_until

    def finish_step(self) -> list[tuple[int, int]]:
        """Apply the in-flight step's progress at its end time; returns emitted (req, idx)."""
        assert self.busy and self._plan is not None
        t = self.busy_until
        plan = self._plan
        self.clock = t
        self.log.append(Event(t, BATCH_END, None, {"step": self.step_no, "actual_ms": self._dt / 1000}))
        emitted = []
        finished = []
        for rid, n in plan.entries:
            lv = self.active[rid]
            r = lv.req
            if lv.prefilled < r.prompt_len:
                lv.prefilled += n
                if lv.prefilled < r.prompt_len:
                    continue
            idx = lv.next_idx
            lv.next_idx += 1
            self.log.append(Event(t, TOKEN_EMIT, rid, {"idx": idx}))
            emitted.append((rid, idx))
            if lv.next_idx >= r.output_len:
                finished.append(rid)
        for rid in finished:
            del self.active[rid]
            self.done.add(rid)
            self.log.append(Event(t, REQUEST_DONE, rid))
        self.step_no += 1
        self.busy_until = None
        self._plan = None
        return emitted


def run_node(trace: Trace, cfg: NodeConfig, horizon: float | None = None, node_id: int = 0) -> EventLog:
    """Simulate one node serving ``trace``; ``horizon`` (ms) caps simulated time.

    The log is flagged incomplete if the horizon cut the run short while
    requests were still live or arrivals were still pending.
    """
    node = Node(cfg, node_id)
    reqs = trace.requests
    n = len(reqs)
    i = 0
    limit = None if horizon is None else ms_to_us(horizon)
    complete = True
    while True:
        if node.busy:
            t_end = node.busy_until
            while i < n and reqs[i].arrival_us < t_end:
                if limit is not None and reqs[i].arrival_us > limit:
                    break
                node.offer(reqs[i], reqs[i].arrival_us)
                i += 1
            if limit is not None and t_end > limit:
                complete = False
                break
            node.finish_step()
            while i < n and reqs[i].arrival_us == t_end:
                node.offer(reqs[i], t_end)
                i += 1
        elif node.has_work:
            node.start_step(node.clock)
        elif i < n:
            t = reqs[i].arrival_us
            if limit is not None and t > limit:
                complete = False
                break
            while i < n and reqs[i].arrival_us == t:
                node.offer(reqs[i], t)
                i += 1
        else:
            break
    node.log.complete = complete and not node.has_work
    return node.log
