"""Scenario configuration: a YAML document with sections trace, slo, scheduler,
cost_model, cluster and run. Every key is documented in README.md.

Parsing validates each field and raises ConfigError naming the dotted key.
``to_dict`` emits every key explicitly, so parse -> serialize -> parse is the
identity.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from batchsim.cluster import LB_POLICIES, LbConfig
from batchsim.costmodel import NOISE_KINDS, CostModel, NoiseSpec
from batchsim.engine import NodeConfig
from batchsim.errors import ConfigError, ValidationError
from batchsim.metrics import TPOT_MODES
from batchsim.sched import POLICIES, SchedulerConfig
from batchsim.slo import SloTargets
from batchsim.workload import (
    BurstProfile,
    LengthDist,
    Trace,
    generate_bursty,
    load_trace,
    scale_trace,
)

TRACE_SOURCES = ("bursty", "file")


@dataclass(frozen=True)
class LengthSpec:
    mean: float
    p90: float
    cap: int | None = None

    def dist(self) -> LengthDist:
        return LengthDist(self.mean, self.p90, self.cap)


@dataclass(frozen=True)
class TraceSpec:
    source: str = "bursty"
    path: str | None = None
    base_rate: float = 1.0  # req/s between bursts
    burst_rate: float = 4.0  # req/s during bursts
    burst_duration_ms: float = 3000.0
    idle_duration_ms: float = 5000.0
    duration_ms: float = 60000.0
    prompt_len: LengthSpec = field(default_factory=lambda: LengthSpec(688.0, 1599.0, 4096))
    output_len: LengthSpec = field(default_factory=lambda: LengthSpec(237.0, 470.0, 2048))
    seed: int = 0
    scale: float = 1.0  # arrival-rate multiplier
    max_requests: int | None = None  # keep only the first N requests


@dataclass(frozen=True)
class SchedulerSpec:
    policy: str = "fairbatch"
    token_budget: int = 8192
    max_chunk: int | None = None  # defaults to token_budget
    # coefficients the scheduler predicts with; None means "same as cost_model"
    model: CostModel | None = None


@dataclass(frozen=True)
class CostModelSpec:
    a_ms: float = 15.0
    b_ms_per_token: float = 0.1
    c_ms_per_context_token: float = 5e-5
    noise_kind: str = "none"
    noise_magnitude: float = 0.0
    noise_seed: int = 0

    def model(self) -> CostModel:
        return CostModel(self.a_ms, self.b_ms_per_token, self.c_ms_per_context_token)

    def noise(self) -> NoiseSpec:
        return NoiseSpec(self.noise_kind, self.noise_magnitude)


@dataclass(frozen=True)
class ClusterSpec:
    nodes: int = 1
    lb_policy: str = "pab_lb"
    report_every_steps: int = 1
    report_latency_ms: float = 0.0
    w_waiting: float = 1.0
    w_running: float = 1.0
    reroute_on_reject: bool = False

    def lb(self) -> LbConfig:
        return LbConfig(self.lb_policy, self.report_every_steps, self.report_latency_ms,
                        self.w_waiting, self.w_running, self.reroute_on_reject)


@dataclass(frozen=True)
class RunSpec:
    name: str = "scenario"
    horizon_ms: float | None = None  # simulated-time cap; None runs to completion
    output_dir: str = "out"
    tpot_mode: str = "envelope"
    lead_bucket_ms: float = 1000.0


@dataclass(frozen=True)
class Scenario:
    trace: TraceSpec = field(default_factory=TraceSpec)
    slo: SloTargets = field(default_factory=lambda: SloTargets(500.0, 50.0))
    scheduler: SchedulerSpec = field(default_factory=SchedulerSpec)
    cost_model: CostModelSpec = field(default_factory=CostModelSpec)
    cluster: ClusterSpec = field(default_factory=ClusterSpec)
    run: RunSpec = field(default_factory=RunSpec)

    # -- derived objects ---------------------------------------------------

    def scheduler_config(self) -> SchedulerConfig:
        s = self.scheduler
        model = s.model or self.cost_model.model()
        chunk = s.token_budget if s.max_chunk is None else s.max_chunk
        return SchedulerConfig(s.policy, s.token_budget, model, chunk)

    def node_config(self) -> NodeConfig:
        cm = self.cost_model
        return NodeConfig(self.scheduler_config(), cm.model(), cm.noise(), cm.noise_seed, self.slo)

    def base_trace(self, base_dir: Path | None = None) -> Trace:
        t = self.trace
        if t.source == "file":
            p = Path(t.path)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            tr = load_trace(p, defaults=self.slo, name=self.run.name)
        else:
            prof = BurstProfile(t.base_rate, t.burst_rate, t.burst_duration_ms, t.idle_duration_ms,
                                t.prompt_len.dist(), t.output_len.dist(), t.seed,
                                self.slo.ttft_slo, self.slo.tpot_slo)
            tr = generate_bursty(prof, t.duration_ms, name=self.run.name)
        return tr if t.max_requests is None else tr.head(t.max_requests)

    def build_trace(self, base_dir: Path | None = None) -> Trace:
        return scale_trace(self.base_trace(base_dir), self.trace.scale)

    # -- variants ------------------------------------------------------------

    def with_policy(self, policy: str, token_budget: int | None = None) -> "Scenario":
        s = replace(self.scheduler, policy=policy)
        if token_budget is not None:
            s = replace(s, token_budget=token_budget, max_chunk=token_budget)
        return replace(self, scheduler=s)

    def with_scale(self, scale: float) -> "Scenario":
        return replace(self, trace=replace(self.trace, scale=scale))

    def with_max_requests(self, n: int | None) -> "Scenario":
        return replace(self, trace=replace(self.trace, max_requests=n))

    def with_cluster(self, **kw) -> "Scenario":
        return replace(self, cluster=replace(self.cluster, **kw))

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        t, s, cm, c, r = self.trace, self.scheduler, self.cost_model, self.cluster, self.run
        return {
            "trace": {
                "source": t.source,
                "path": t.path,
                "base_rate": t.base_rate,
                "burst_rate": t.burst_rate,
                "burst_duration_ms": t.burst_duration_ms,
                "idle_duration_ms": t.idle_duration_ms,
                "duration_ms": t.duration_ms,
                "prompt_len": _length_dict(t.prompt_len),
                "output_len": _length_dict(t.output_len),
                "seed": t.seed,
                "scale": t.scale,
                "max_requests": t.max_requests,
            },
            "slo": {"ttft_ms": self.slo.ttft_slo, "tpot_ms": self.slo.tpot_slo},
            "scheduler": {
                "policy": s.policy,
                "token_budget": s.token_budget,
                "max_chunk": s.max_chunk,
                "model": None if s.model is None else s.model.to_dict(),
            },
            "cost_model": {
                "a_ms": cm.a_ms,
                "b_ms_per_token": cm.b_ms_per_token,
                "c_ms_per_context_token": cm.c_ms_per_context_token,
                "noise": {"kind": cm.noise_kind, "magnitude": cm.noise_magnitude, "seed": cm.noise_seed},
            },
            "cluster": {
                "nodes": c.nodes,
                "lb_policy": c.lb_policy,
                "report_every_steps": c.report_every_steps,
                "report_latency_ms": c.report_latency_ms,
                "w_waiting": c.w_waiting,
                "w_running": c.w_running,
                "reroute_on_reject": c.reroute_on_reject,
            },
            "run": {
                "name": r.name,
                "horizon_ms": r.horizon_ms,
                "output_dir": r.output_dir,
                "tpot_mode": r.tpot_mode,
                "lead_bucket_ms": r.lead_bucket_ms,
            },
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def _length_dict(ls: LengthSpec) -> dict:
    return {"mean": ls.mean, "p90": ls.p90, "cap": ls.cap}


# -- parsing ----------------------------------------------------------------------

class _Section:
    """Typed accessor over one mapping that reports errors by dotted key and rejects unknown keys."""

    def __init__(self, data, prefix: str):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(prefix, "expected a mapping")
        self.data = data
        self.prefix = prefix
        self.used: set[str] = set()

    def key(self, k: str) -> str:
        return f"{self.prefix}.{k}" if self.prefix else k

    def raw(self, k, default):
        self.used.add(k)
        return self.data.get(k, default)

    def num(self, k, default, *, integer=False, minimum=None, strict=False, optional=False):
        v = self.raw(k, default)
        if v is None and optional:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(self.key(k), f"expected a number, got {v!r}")
        if integer:
            if float(v) != int(v):
                raise ConfigError(self.key(k), f"expected an integer, got {v!r}")
            v = int(v)
        else:
            v = float(v)
        if minimum is not None and (v <= minimum if strict else v < minimum):
            op = ">" if strict else ">="
            raise ConfigError(self.key(k), f"must be {op} {minimum}, got {v}")
        return v

    def choice(self, k, default, options):
        v = self.raw(k, default)
        if v not in options:
            raise ConfigError(self.key(k), f"unknown value {v!r}; expected one of {', '.join(options)}")
        return v

    def boolean(self, k, default):
        v = self.raw(k, default)
        if not isinstance(v, bool):
            raise ConfigError(self.key(k), f"expected true/false, got {v!r}")
        return v

    def text(self, k, default, optional=False):
        v = self.raw(k, default)
        if v is None and optional:
            return None
        if not isinstance(v, str) or not v:
            raise ConfigError(self.key(k), f"expected a non-empty string, got {v!r}")
        return v

    def sub(self, k) -> "_Section":
        return _Section(self.raw(k, None), self.key(k))

    def done(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(self.key(extra[0]), "unknown key")


def _length(sec: _Section, default: LengthSpec) -> LengthSpec:
    mean = sec.num("mean", default.mean, minimum=0, strict=True)
    p90 = sec.num("p90", default.p90, minimum=0, strict=True)
    cap = sec.num("cap", default.cap, integer=True, minimum=1, optional=True)
    sec.done()
    try:
        LengthDist(mean, p90, cap)
    except ValidationError as e:
        raise ConfigError(sec.prefix, str(e)) from None
    return LengthSpec(mean, p90, cap)


def parse_scenario(data, base_dir: Path | None = None) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "scenario must be a mapping")
    d = Scenario()
    root = _Section(data, "")

    t = root.sub("trace")
    dt = d.trace
    source = t.choice("source", dt.source, TRACE_SOURCES)
    path = t.text("path", dt.path, optional=True)
    if source == "file":
        if path is None:
            raise ConfigError("trace.path", "required when trace.source is 'file'")
        p = Path(path)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            raise ConfigError("trace.path", f"file not found: {path}")
    trace = TraceSpec(
        source=source,
        path=path,
        base_rate=t.num("base_rate", dt.base_rate, minimum=0),
        burst_rate=t.num("burst_rate", dt.burst_rate, minimum=0),
        burst_duration_ms=t.num("burst_duration_ms", dt.burst_duration_ms, minimum=0),
        idle_duration_ms=t.num("idle_duration_ms", dt.idle_duration_ms, minimum=0),
        duration_ms=t.num("duration_ms", dt.duration_ms, minimum=0, strict=True),
        prompt_len=_length(t.sub("prompt_len"), dt.prompt_len),
        output_len=_length(t.sub("output_len"), dt.output_len),
        seed=t.num("seed", dt.seed, integer=True, minimum=0),
        scale=t.num("scale", dt.scale, minimum=0, strict=True),
        max_requests=t.num("max_requests", dt.max_requests, integer=True, minimum=1, optional=True),
    )
    if source == "bursty" and trace.burst_duration_ms + trace.idle_duration_ms <= 0:
        raise ConfigError("trace.burst_duration_ms", "burst and idle durations cannot both be 0")
    t.done()

    s = root.sub("slo")
    slo = SloTargets(s.num("ttft_ms", d.slo.ttft_slo, minimum=0, strict=True),
                     s.num("tpot_ms", d.slo.tpot_slo, minimum=0, strict=True))
    s.done()

    cm = root.sub("cost_model")
    noise = cm.sub("noise")
    dc = d.cost_model
    cost = CostModelSpec(
        a_ms=cm.num("a_ms", dc.a_ms, minimum=0),
        b_ms_per_token=cm.num("b_ms_per_token", dc.b_ms_per_token, minimum=0, strict=True),
        c_ms_per_context_token=cm.num("c_ms_per_context_token", dc.c_ms_per_context_token, minimum=0),
        noise_kind=noise.choice("kind", dc.noise_kind, NOISE_KINDS),
        noise_magnitude=noise.num("magnitude", dc.noise_magnitude, minimum=0),
        noise_seed=noise.num("seed", dc.noise_seed, integer=True, minimum=0),
    )
    noise.done()
    cm.done()
    try:
        cost.noise()
    except ValidationError as e:
        raise ConfigError("cost_model.noise.magnitude", str(e)) from None

    sc = root.sub("scheduler")
    ds = d.scheduler
    budget = sc.num("token_budget", ds.token_budget, integer=True, minimum=1)
    chunk = sc.num("max_chunk", ds.max_chunk, integer=True, minimum=1, optional=True)
    if chunk is not None and chunk > budget:
        raise ConfigError("scheduler.max_chunk", f"must be <= token_budget ({budget}), got {chunk}")
    mraw = sc.raw("model", None)
    smodel = None
    if mraw is not None:
        ms = _Section(mraw, "scheduler.model")
        smodel = CostModel(ms.num("a_ms", None, minimum=0),
                           ms.num("b_ms_per_token", None, minimum=0, strict=True),
                           ms.num("c_ms_per_context_token", None, minimum=0))
        ms.done()
    sched = SchedulerSpec(sc.choice("policy", ds.policy, POLICIES), budget, chunk, smodel)
    sc.done()

    cl = root.sub("cluster")
    dcl = d.cluster
    cluster = ClusterSpec(
        nodes=cl.num("nodes", dcl.nodes, integer=True, minimum=1),
        lb_policy=cl.choice("lb_policy", dcl.lb_policy, LB_POLICIES),
        report_every_steps=cl.num("report_every_steps", dcl.report_every_steps, integer=True, minimum=1),
        report_latency_ms=cl.num("report_latency_ms", dcl.report_latency_ms, minimum=0),
        w_waiting=cl.num("w_waiting", dcl.w_waiting, minimum=0),
        w_running=cl.num("w_running", dcl.w_running, minimum=0),
        reroute_on_reject=cl.boolean("reroute_on_reject", dcl.reroute_on_reject),
    )
    cl.done()

    r = root.sub("run")
    dr = d.run
    run = RunSpec(
        name=r.text("name", dr.name),
        horizon_ms=r.num("horizon_ms", dr.horizon_ms, minimum=0, strict=True, optional=True),
        output_dir=r.text("output_dir", dr.output_dir),
        tpot_mode=r.choice("tpot_mode", dr.tpot_mode, TPOT_MODES),
        lead_bucket_ms=r.num("lead_bucket_ms", dr.lead_bucket_ms, minimum=0, strict=True),
    )
    r.done()
    root.done()
    return Scenario(trace, slo, sched, cost, cluster, run)


def loads_scenario(text: str, base_dir: Path | None = None) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError("<root>", f"not valid YAML: {e}") from None
    return parse_scenario(copy.deepcopy(data) if data is not None else {}, base_dir)


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError("<file>", f"cannot read {p}: {e.strerror}") from None
    return loads_scenario(text, p.parent)
