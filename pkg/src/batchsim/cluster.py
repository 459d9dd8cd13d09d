"""Data-parallel cluster: N nodes behind a load balancer with a stale, locally patched view.

Nodes report a load metric at step boundaries; reports reach the balancer
after ``report_latency``. Between reports the balancer patches its view with
its own dispatches (PAB decrements or waiting-count increments), so a delayed
report never forgets requests dispatched after the report was taken.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from batchsim.engine import Node, NodeConfig
from batchsim.errors import ValidationError
from batchsim.events import EventLog
from batchsim.workload import Request, Trace, ms_to_us

LB_POLICIES = ("count_lb", "pab_lb")


@dataclass(frozen=True)
class LbConfig:
    policy: str = "pab_lb"
    report_every_steps: int = 1
    report_latency: float = 0.0  # ms
    w_waiting: float = 1.0
    w_running: float = 1.0
    reroute_on_reject: bool = False

    def __post_init__(self):
        if self.policy not in LB_POLICIES:
            raise ValidationError(f"unknown load-balancer policy {self.policy!r}")
        if self.report_latency < 0:
            raise ValidationError("report_latency must be >= 0")
        if self.report_every_steps < 1:
            raise ValidationError("report_every_steps must be >= 1")


@dataclass
class Report:
    node: int
    generated_us: int
    pab: int = 0
    waiting: int = 0
    running: int = 0


@dataclass
class NodeView:
    pab: int = 0
    waiting: int = 0
    running: int = 0
    report_us: int = -1
    # (dispatch time, prompt tokens) of requests routed since the last report was generated
    local: list[tuple[int, int]] = field(default_factory=list)

    def effective_pab(self) -> int:
        return self.pab - sum(a for _, a in self.local)

    def effective_waiting(self) -> int:
        return self.waiting + len(self.local)

    def load(self) -> int:
        return self.effective_waiting() + self.running


class ClusterView:
    def __init__(self, n_nodes: int):
        self.nodes = [NodeView() for _ in range(n_nodes)]

    def __len__(self) -> int:
        return len(self.nodes)

    def apply(self, rep: Report) -> bool:
        """Install a delivered report; stale reports (older than the current one) are dropped."""
        v = self.nodes[rep.node]
        if rep.generated_us < v.report_us:
            return False
        v.pab, v.waiting, v.running = rep.pab, rep.waiting, rep.running
        v.report_us = rep.generated_us
        v.local = [(t, a) for t, a in v.local if t > rep.generated_us]
        return True

    def snapshot(self, policy: str) -> list:
        if policy == "pab_lb":
            return [v.effective_pab() for v in self.nodes]
        return [[v.effective_waiting(), v.running] for v in self.nodes]


def route(view: ClusterView, req: Request, cfg: LbConfig, t_us: int = 0,
          exclude: Sequence[int] = ()) -> int:
    """Pick a node for ``req`` and record the dispatch in the local view.

    pab_lb: largest effective budget among nodes that can hold the prompt,
    else the largest budget overall; equal budgets go to the node with fewer
    requests. count_lb: smallest weighted waiting+running count. Remaining
    ties go to the lowest node id.
    """
    cands = [i for i in range(len(view)) if i not in exclude] or list(range(len(view)))
    if cfg.policy == "pab_lb":
        pabs = {i: view.nodes[i].effective_pab() for i in cands}
        fit = [i for i in cands if pabs[i] >= req.prompt_len]
        pool = fit or cands
        best = max(pool, key=lambda i: (pabs[i], -view.nodes[i].load(), -i))
    else:
        def score(i):
            v = view.nodes[i]
            return cfg.w_waiting * v.effective_waiting() + cfg.w_running * v.running

        best = min(cands, key=lambda i: (score(i), i))
    view.nodes[best].local.append((t_us, req.prompt_len))
    return best


def report(node: Node, cfg: LbConfig, now_us: int) -> Report:
    """The node's load at ``now_us``; the budget is only computed for pab_lb."""
    waiting, running = node.counts()
    budget = node.current_pab(now_us) if cfg.policy == "pab_lb" else 0
    return Report(node.node_id, now_us, pab=budget, waiting=waiting, running=running)


@dataclass
class ClusterResult:
    logs: list[EventLog]
    routing: list[dict]
    rejected: set[int]
    complete: bool

    def routing_jsonl(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.routing)

    def write_routing(self, path) -> None:
        Path(path).write_text(self.routing_jsonl())


# event priorities at equal timestamps: finish steps, then deliver reports, then arrivals
_STEP_END, _DELIVER, _ARRIVE = 0, 1, 2


def run_cluster(trace: Trace, nodes: Sequence[NodeConfig], cfg: LbConfig,
                horizon: float | None = None) -> ClusterResult:
    """One global clock over arrivals (routed on arrival), node steps and report deliveries."""
    if not nodes:
        raise ValidationError("cluster needs at least one node")
    sims = [Node(nc, i) for i, nc in enumerate(nodes)]
    view = ClusterView(len(sims))
    latency = ms_to_us(cfg.report_latency)
    limit = None if horizon is None else ms_to_us(horizon)
    heap: list = []
    seq = 0

    def push(t, prio, kind, payload):
        nonlocal seq
        heapq.heappush(heap, (t, prio, seq, kind, payload))
        seq += 1

    for s in sims:
        view.apply(report(s, cfg, 0))
    for r in trace.requests:
        push(r.arrival_us, _ARRIVE, "arrive", r)

    routing: list[dict] = []
    rejected: set[int] = set()
    complete = True
    steps_since_report = [0] * len(sims)

    while heap:
        t = heap[0][0]
        if limit is not None and t > limit:
            complete = False
            break
        while heap and heap[0][0] == t:
            _, _, _, kind, payload = heapq.heappop(heap)
            if kind == "end":
                node = sims[payload]
                node.finish_step()
                steps_since_report[payload] += 1
                if steps_since_report[payload] >= cfg.report_every_steps:
                    steps_since_report[payload] = 0
                    rep = report(node, cfg, t)
                    if latency == 0:
                        view.apply(rep)
                    else:
                        push(t + latency, _DELIVER, "deliver", rep)
            elif kind == "deliver":
                view.apply(payload)
            else:
                req = payload
                tried: list[int] = []
                while True:
                    snap = view.snapshot(cfg.policy)
                    nid = route(view, req, cfg, t, exclude=tried)
                    ok = sims[nid].offer(req, t)
                    routing.append({"t_ms": t / 1000, "req_id": req.id, "node": nid,
                                    "policy": cfg.policy, "view_snapshot": snap})
                    if ok:
                        rejected.discard(req.id)
                        break
                    rejected.add(req.id)
                    tried.append(nid)
                    if not cfg.reroute_on_reject or len(tried) > 1 or len(tried) >= len(sims):
                        break
        for i, s in enumerate(sims):
            if not s.busy and s.has_work:
                end = s.start_step(t)
                if end is not None:
                    push(end, _STEP_END, "end", i)

    logs = []
    for s in sims:
        s.log.complete = complete and not s.has_work and not s.busy
        logs.append(s.log)
    return ClusterResult(logs, routing, rejected, complete and all(lg.complete for lg in logs))
