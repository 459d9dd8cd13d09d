"""Latency and goodput metrics computed from event logs."""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from batchsim.events import ADMISSION_REJECT, ARRIVAL, TOKEN_EMIT, EventLog

TPOT_MODES = ("first_token", "envelope", "paper_literal")
PERCENTILES = (50, 95, 99)


@dataclass
class RequestRecord:
    req_id: int
    arrival_us: int
    prompt_len: int
    output_len: int
    ttft_slo_us: int
    tpot_slo_us: int
    emits: list[int] = field(default_factory=list)  # emission times (us) by token index
    rejected: bool = False

    def deadline_us(self, j: int) -> int:
        return self.arrival_us + self.ttft_slo_us + self.tpot_slo_us * j


def collect(logs) -> dict[int, RequestRecord]:
    """Per-request records from one log or an iterable of logs.

    A request rerouted after a rejection arrives at several nodes; it keeps its
    first arrival time and counts as rejected only if every node rejected it.
    """
    if isinstance(logs, EventLog):
        logs = [logs]
    recs: dict[int, RequestRecord] = {}
    offers: dict[int, int] = {}
    for lg in logs:
        for ev in lg:
            if ev.kind == TOKEN_EMIT:
                recs[ev.req_id].emits.append(ev.t_us)
            elif ev.kind == ARRIVAL:
                d = ev.data
                offers[ev.req_id] = offers.get(ev.req_id, 0) + 1
                rec = recs.get(ev.req_id)
                if rec is not None:
                    rec.arrival_us = min(rec.arrival_us, ev.t_us)
                    continue
                recs[ev.req_id] = RequestRecord(
                    ev.req_id, ev.t_us, d["prompt_len"], d["output_len"],
                    int(round(d["ttft_slo_ms"] * 1000)), int(round(d["tpot_slo_ms"] * 1000)),
                )
            elif ev.kind == ADMISSION_REJECT:
                offers[ev.req_id] -= 1
    for rid, rec in recs.items():
        rec.rejected = offers[rid] <= 0
    return recs


def ttft(rec: RequestRecord) -> float | None:
    """First-token latency in ms; None when rejected or never started."""
    if rec.rejected or not rec.emits:
        return None
    return (rec.emits[0] - rec.arrival_us) / 1000


def tbt(emits_ms: Sequence[float]) -> list[float]:
    return [b - a for a, b in zip(emits_ms, emits_ms[1:])]


def max_tpot(emits_ms: Sequence[float]) -> float | None:
    """max over j >= 1 of (emit_j - emit_0) / j; None with fewer than two tokens."""
    if len(emits_ms) < 2:
        return None
    e0 = emits_ms[0]
    return max((emits_ms[j] - e0) / j for j in range(1, len(emits_ms)))


def max_tpot_envelope(arrival_ms: float, ttft_slo_ms: float, emits_ms: Sequence[float]) -> float | None:
    """max over j >= 1 of (emit_j - arrival - ttft_slo) / j.

    Staying at or under the TPOT SLO is the same as meeting every per-token
    envelope deadline from token 1 on.
    """
    if len(emits_ms) < 2:
        return None
    base = arrival_ms + ttft_slo_ms
    return max((emits_ms[j] - base) / j for j in range(1, len(emits_ms)))


def max_tpot_paper_literal(arrival_ms: float, emits_ms: Sequence[float]) -> float | None:
    """max over 0-based k >= 2 of (emit_k - emit_0) / (k - 1); the literal variant with denominator k - 1."""
    if len(emits_ms) < 3:
        return None
    rel = [e - arrival_ms for e in emits_ms]
    first = rel[0]
    return max((rel[j] - first) / (j - 1) for j in range(2, len(rel)))


@dataclass
class RequestReport:
    req_id: int
    ttft: float | None
    tbt_series: list[float]
    max_tpot: float | None
    met_ttft: bool
    met_tpot: bool
    rejected: bool
    finished: bool

    @property
    def good(self) -> bool:
        return self.met_ttft and self.met_tpot and not self.rejected


def request_report(rec: RequestRecord, tpot_mode: str = "envelope") -> RequestReport:
    emits_ms = [e / 1000 for e in rec.emits]
    arrival = rec.arrival_us / 1000
    if tpot_mode == "first_token":
        tp = max_tpot(emits_ms)
    elif tpot_mode == "envelope":
        tp = max_tpot_envelope(arrival, rec.ttft_slo_us / 1000, emits_ms)
    elif tpot_mode == "paper_literal":
        tp = max_tpot_paper_literal(arrival, emits_ms)
    else:
        raise ValueError(f"unknown tpot mode {tpot_mode!r}")
    tt = ttft(rec)
    finished = not rec.rejected and len(rec.emits) >= rec.output_len
    met_ttft = tt is not None and tt * 1000 <= rec.ttft_slo_us
    met_tpot = finished and (tp is None or tp * 1000 <= rec.tpot_slo_us + 1e-6)
    return RequestReport(rec.req_id, tt, tbt(emits_ms), tp, met_ttft and not rec.rejected,
                         met_tpot and not rec.rejected, rec.rejected, finished)


def nearest_rank(values: Sequence[float], pct: float) -> float | None:
    if not values:
        return None
    ordered = sorted(values)
    k = max(1, math.ceil(pct / 100 * len(ordered)))
    return ordered[k - 1]


def envelope_misses(recs: Iterable[RequestRecord]) -> int:
    """Tokens emitted after their envelope deadline, over admitted requests."""
    n = 0
    for r in recs:
        if r.rejected:
            continue
        for j, t in enumerate(r.emits):
            if t > r.deadline_us(j):
                n += 1
    return n


@dataclass
class ScenarioReport:
    name: str
    n_requests: int
    n_good: int
    n_rejected: int
    n_ttft_violations: int
    n_tpot_violations: int
    envelope_misses: int
    slo_violation_rate: float
    offered_rps: float
    effective_rps: float
    ttft_pct: dict[int, float | None]
    tpot_pct: dict[int, float | None]
    tpot_mode: str = "envelope"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ttft_pct"] = {f"p{k}": v for k, v in self.ttft_pct.items()}
        d["tpot_pct"] = {f"p{k}": v for k, v in self.tpot_pct.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def table_row(self) -> dict:
        """One row shaped like a latency-detail table: TTFT and TPOT P50/P95/P99 (ms)."""
        row = {"system": self.name}
        for k in PERCENTILES:
            row[f"ttft_p{k}"] = self.ttft_pct[k]
        for k in PERCENTILES:
            row[f"tpot_p{k}"] = self.tpot_pct[k]
        row["slo_violation_rate"] = self.slo_violation_rate
        row["effective_rps"] = self.effective_rps
        return row

    def long_rows(self) -> list[dict]:
        rows = []
        for metric, table in (("ttft_ms", self.ttft_pct), ("max_tpot_ms", self.tpot_pct)):
            for k, v in table.items():
                rows.append({"scenario": self.name, "metric": metric, "percentile": k, "value": v})
        for metric in ("slo_violation_rate", "effective_rps", "offered_rps"):
            rows.append({"scenario": self.name, "metric": metric, "percentile": "", "value": getattr(self, metric)})
        return rows


def scenario_report(logs, offered_rps: float, name: str = "scenario",
                    tpot_mode: str = "envelope", extra_rejected: Iterable[int] = ()) -> ScenarioReport:
    """Aggregate per-request SLO outcomes.

    A request counts toward goodput when it was not rejected, met its TTFT SLO
    and its max TPOT stayed within the TPOT SLO. ``extra_rejected`` marks
    requests rejected outside the logs (e.g. by a load balancer).
    """
    recs = collect(logs)
    for rid in extra_rejected:
        recs[rid].rejected = True
    reports = [request_report(r, tpot_mode) for r in recs.values()]
    n = len(reports)
    good = sum(r.good for r in reports)
    rej = sum(r.rejected for r in reports)
    ttfts = [r.ttft for r in reports if r.ttft is not None]
    tpots = [r.max_tpot for r in reports if r.max_tpot is not None and not r.rejected]
    return ScenarioReport(
        name=name,
        n_requests=n,
        n_good=good,
        n_rejected=rej,
        n_ttft_violations=sum(1 for r in reports if not r.rejected and not r.met_ttft),
        n_tpot_violations=sum(1 for r in reports if not r.rejected and not r.met_tpot),
        envelope_misses=envelope_misses(recs.values()),
        slo_violation_rate=(n - good) / n if n else 0.0,
        offered_rps=offered_rps,
        effective_rps=offered_rps * good / n if n else 0.0,
        ttft_pct={k: nearest_rank(ttfts, k) for k in PERCENTILES},
        tpot_pct={k: nearest_rank(tpots, k) for k in PERCENTILES},
        tpot_mode=tpot_mode,
    )


def envelope_lead_series(logs, bucket: float = 1000.0, end: float | None = None) -> list[tuple[float, int]]:
    """Aggregate decode lead over the TPOT envelope, sampled at bucket ends.

    At each sample time t, sums over requests that have emitted token 0 but not
    their last token: (tokens emitted by t) - (tokens whose envelope deadline
    is <= t). Returns [(t_ms, lead)].
    """
    recs = [r for r in collect(logs).values() if r.emits and not r.rejected]
    if not recs:
        return []
    step = int(round(bucket * 1000))
    horizon = int(round(end * 1000)) if end is not None else max(r.emits[-1] for r in recs)
    out = []
    t = step
    while t <= horizon + step - 1:
        lead = 0
        for r in recs:
            if r.emits[0] > t or r.emits[-1] <= t:
                continue
            emitted = bisect.bisect_right(r.emits, t)
            due_span = t - r.arrival_us - r.ttft_slo_us
            required = min(r.output_len, due_span // r.tpot_slo_us + 1) if due_span >= 0 else 0
            lead += emitted - required
        out.append((t / 1000, lead))
        t += step
    return out


def write_report_csv(reports: Sequence[ScenarioReport], path=None) -> str:
    buf = io.StringIO()
    rows = [r.table_row() for r in reports]
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def write_long_csv(reports: Sequence[ScenarioReport], path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["scenario", "metric", "percentile", "value"])
    w.writeheader()
    for r in reports:
        w.writerows(r.long_rows())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
