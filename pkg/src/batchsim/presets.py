"""Pinned scenarios behind the phenomenon-level checks.

All share a truth cost model sized like a mid-size model on one accelerator:
15 ms per step, 0.1 ms per new token, 5e-5 ms per context token. The
example coefficients used elsewhere (5, 0.01, 1e-4) make prefill so cheap
that no policy ever misses an SLO, so contention never appears.
"""

from __future__ import annotations

import math

from batchsim.scenario import (
    ClusterSpec,
    CostModelSpec,
    LengthSpec,
    RunSpec,
    Scenario,
    SchedulerSpec,
    TraceSpec,
)
from batchsim.slo import SloTargets

TRUTH = CostModelSpec(a_ms=15.0, b_ms_per_token=0.1, c_ms_per_context_token=5e-5)

# (prompt mean, p90), (output mean, p90), (TTFT SLO, TPOT SLO) per public trace shape
TRACE_SHAPES = {
    "burstgpt": ((688.0, 1599.0), (237.0, 470.0), (500.0, 50.0)),
    "qwen": ((892.0, 1776.0), (377.0, 742.0), (500.0, 50.0)),
    "azure": ((1604.0, 3561.0), (114.0, 392.0), (2000.0, 50.0)),
}

PROMPT_CAP = 4096
OUTPUT_CAP = 2048

SARATHI_BUDGETS = (256, 512, 1024, 2048)


def _shape_trace(shape: str, **kw) -> tuple[TraceSpec, SloTargets]:
    (pm, pp), (om, op), (ttft, tpot) = TRACE_SHAPES[shape]
    t = TraceSpec(prompt_len=LengthSpec(pm, pp, PROMPT_CAP), output_len=LengthSpec(om, op, OUTPUT_CAP), **kw)
    return t, SloTargets(ttft, tpot)


def stall_free_budget(cost: CostModelSpec, tpot_slo_ms: float) -> int:
    """Largest token budget whose context-free step time fits one TPOT interval."""
    return max(1, math.floor((tpot_slo_ms - cost.a_ms) / cost.b_ms_per_token))


def bursty_unfairness() -> Scenario:
    """Bursty medium load where decode-first chunking lets decodes run far ahead while prefills queue."""
    t, slo = _shape_trace("qwen", base_rate=1.0, burst_rate=4.0, burst_duration_ms=3000.0,
                          idle_duration_ms=5000.0, duration_ms=300000.0, seed=3, scale=0.8)
    return Scenario(t, slo, SchedulerSpec("fairbatch"), TRUTH, ClusterSpec(), RunSpec(name="bursty_unfairness"))


def medium_load() -> Scenario:
    """Stationary Poisson arrivals at moderate utilisation."""
    t, slo = _shape_trace("burstgpt", base_rate=2.0, burst_rate=2.0, burst_duration_ms=3000.0,
                          idle_duration_ms=5000.0, duration_ms=300000.0, seed=1, scale=0.6)
    return Scenario(t, slo, SchedulerSpec("fairbatch"), TRUTH, ClusterSpec(), RunSpec(name="medium_load"))


def trace_shape(shape: str) -> Scenario:
    """Bursty arrivals with one public trace's length and SLO shape."""
    if shape not in TRACE_SHAPES:
        raise KeyError(shape)
    t, slo = _shape_trace(shape, base_rate=1.0, burst_rate=4.0, burst_duration_ms=3000.0,
                          idle_duration_ms=5000.0, duration_ms=120000.0, seed=2)
    return Scenario(t, slo, SchedulerSpec("fairbatch"), TRUTH, ClusterSpec(), RunSpec(name=f"shape_{shape}"))


SHAPE_SCALES = (0.5, 1.0, 1.5, 2.0, 3.0)


def cluster8(lb_policy: str = "pab_lb", report_latency_ms: float = 0.0) -> Scenario:
    """Eight identical nodes behind one balancer, bursty aggregate load."""
    t, slo = _shape_trace("burstgpt", base_rate=8.0, burst_rate=32.0, burst_duration_ms=3000.0,
                          idle_duration_ms=5000.0, duration_ms=60000.0, seed=1)
    policy = "fairbatch_pab" if lb_policy == "pab_lb" else "fairbatch"
    return Scenario(t, slo, SchedulerSpec(policy), TRUTH,
                    ClusterSpec(nodes=8, lb_policy=lb_policy, report_latency_ms=report_latency_ms),
                    RunSpec(name=f"cluster8_{lb_policy}"))


CLUSTER_SCALES = (2.0, 3.0, 4.0, 5.0)
# stale-view latency: five times the burst width
CLUSTER_STALE_LATENCY_MS = 15000.0


def minimal() -> Scenario:
    """Small single-node scenario for smoke tests and the quick-start."""
    t, slo = _shape_trace("burstgpt", duration_ms=10000.0, seed=0)
    return Scenario(t, slo, SchedulerSpec("fairbatch"), TRUTH, ClusterSpec(), RunSpec(name="minimal"))


PRESETS = {
    "bursty_unfairness": bursty_unfairness,
    "medium_load": medium_load,
    "shape_burstgpt": lambda: trace_shape("burstgpt"),
    "shape_qwen": lambda: trace_shape("qwen"),
    "shape_azure": lambda: trace_shape("azure"),
    "cluster8": cluster8,
    "minimal": minimal,
}


def preset(name: str) -> Scenario:
    return PRESETS[name]()


__all__ = ["PRESETS", "TRUTH", "preset", "minimal", "bursty_unfairness", "medium_load", "trace_shape", "cluster8",
           "stall_free_budget", "TRACE_SHAPES", "SARATHI_BUDGETS", "SHAPE_SCALES", "CLUSTER_SCALES", "CLUSTER_STALE_LATENCY_MS"]
