"""Discrete-event simulator and step schedulers for continuous-batching LLM serving."""

from batchsim.costmodel import CostModel, NoiseSpec
from batchsim.sched import BatchPlan, SchedulerConfig, TaskView
from batchsim.slo import RequestProgress, SloTargets
from batchsim.workload import BurstProfile, LengthDist, Request, Trace

__all__ = [
    "BatchPlan",
    "BurstProfile",
    "CostModel",
    "LengthDist",
    "NoiseSpec",
    "Request",
    "RequestProgress",
    "SchedulerConfig",
    "SloTargets",
    "TaskView",
    "Trace",
]

__version__ = "0.1.0"
