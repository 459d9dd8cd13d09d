"""Requests, traces, trace files and synthetic bursty workloads.

Timestamps are integer microseconds internally. Everything that crosses a
file or CLI boundary is in (possibly fractional) milliseconds.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from batchsim.errors import TraceParseError, ValidationError

US_PER_MS = 1000

# z-score of the 90th percentile of a standard normal
_Z90 = 1.2815515655446004

TRACE_FIELDS = ("arrival_ms", "prompt_tokens", "output_tokens", "ttft_slo_ms", "tpot_slo_ms")


def ms_to_us(ms: float) -> int:
    return int(round(ms * US_PER_MS))


def us_to_ms(us: int) -> float:
    return us / US_PER_MS


@dataclass(frozen=True, slots=True)
class Request:
    id: int
    arrival_us: int
    prompt_len: int
    output_len: int
    ttft_slo_us: int
    tpot_slo_us: int

    def __post_init__(self):
        if self.prompt_len < 1 or self.output_len < 1:
            raise ValidationError(
                f"request {self.id}: prompt_len and output_len must be >= 1 "
                f"(got {self.prompt_len}, {self.output_len})"
            )
        if self.ttft_slo_us <= 0 or self.tpot_slo_us <= 0:
            raise ValidationError(f"request {self.id}: SLO targets must be positive")

    @classmethod
    def create(
        cls,
        id: int,
        arrival_ms: float,
        prompt_len: int,
        output_len: int,
        ttft_slo_ms: float,
        tpot_slo_ms: float,
    ) -> "Request":
        return cls(
            id=id,
            arrival_us=ms_to_us(arrival_ms),
            prompt_len=int(prompt_len),
            output_len=int(output_len),
            ttft_slo_us=ms_to_us(ttft_slo_ms),
            tpot_slo_us=ms_to_us(tpot_slo_ms),
        )

    @property
    def arrival_ms(self) -> float:
        return self.arrival_us / US_PER_MS

    @property
    def ttft_slo(self) -> float:
        return self.ttft_slo_us / US_PER_MS

    @property
    def tpot_slo(self) -> float:
        return self.tpot_slo_us / US_PER_MS


@dataclass(frozen=True)
class Trace:
    requests: tuple[Request, ...]
    name: str = "trace"

    def __post_init__(self):
        object.__setattr__(self, "requests", tuple(self.requests))
        seen = set()
        prev = None
        for r in self.requests:
            if prev is not None and r.arrival_us < prev:
                raise ValidationError(f"trace {self.name!r}: arrivals must be non-decreasing")
            if r.id in seen:
                raise ValidationError(f"trace {self.name!r}: duplicate request id {r.id}")
            seen.add(r.id)
            prev = r.arrival_us

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)

    @property
    def span_ms(self) -> float:
        if len(self.requests) < 2:
            return 0.0
        return (self.requests[-1].arrival_us - self.requests[0].arrival_us) / US_PER_MS

    @property
    def offered_rps(self) -> float:
        """Mean arrival rate over the trace span (0 for fewer than two requests)."""
        span = self.span_ms
        if span <= 0:
            return 0.0
        return len(self.requests) / (span / 1000.0)

    def head(self, n: int) -> "Trace":
        return Trace(self.requests[:n], self.name)


def make_trace(requests: Iterable[Request], name: str = "trace") -> Trace:
    """Sort by arrival (stable) and renumber ids in arrival order."""
    ordered = sorted(requests, key=lambda r: r.arrival_us)
    return Trace(tuple(replace(r, id=i) for i, r in enumerate(ordered)), name)


@dataclass(frozen=True)
class LengthDist:
    """Log-normal token-length distribution given by its mean and 90th percentile.

    A log-normal cannot have p90/mean above exp(z90**2 / 2) ~= 2.27. Past that
    the shape parameter is pinned at z90, which keeps the mean exact and puts
    the realised p90 below the requested one.
    """

    mean: float
    p90: float
    cap: int | None = None

    def __post_init__(self):
        if self.mean < 1 or self.p90 <= 0:
            raise ValidationError(f"length distribution needs mean >= 1 and p90 > 0: {self}")

    def params(self) -> tuple[float, float]:
        """Return (mu, sigma) of the underlying normal."""
        gap = math.log(self.p90) - math.log(self.mean)
        disc = _Z90 * _Z90 - 2.0 * gap
        sigma = _Z90 - math.sqrt(disc) if disc > 0 else _Z90
        sigma = max(sigma, 0.0)
        mu = math.log(self.mean) - sigma * sigma / 2.0
        return mu, sigma

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        mu, sigma = self.params()
        x = np.rint(rng.lognormal(mu, sigma, size=n)).astype(np.int64)
        x = np.maximum(x, 1)
        if self.cap is not None:
            x = np.minimum(x, self.cap)
        return x


@dataclass(frozen=True)
class BurstProfile:
    base_rate: float
    burst_rate: float
    burst_duration: float
    idle_duration: float
    prompt_len_dist: LengthDist
    output_len_dist: LengthDist
    seed: int = 0
    ttft_slo_ms: float = 500.0
    tpot_slo_ms: float = 50.0

    def __post_init__(self):
        if not self.burst_rate >= self.base_rate >= 0:
            raise ValidationError("burst profile needs burst_rate >= base_rate >= 0")
        if self.burst_duration <= 0 or self.idle_duration < 0:
            raise ValidationError("burst_duration must be > 0 and idle_duration >= 0")


def generate_bursty(profile: BurstProfile, horizon: float, name: str = "bursty") -> Trace:
    """Alternate idle (base_rate) and burst (burst_rate) phases over ``horizon`` ms.

    Each cycle starts with the idle phase. Within a phase the arrivals are a
    homogeneous Poisson process. Arrivals and lengths come from independent
    streams derived from ``profile.seed``.
    """
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    arr_rng = np.random.default_rng([profile.seed, 0])
    len_rng = np.random.default_rng([profile.seed, 1])

    arrivals: list[np.ndarray] = []
    t = 0.0
    phases = [(profile.idle_duration, profile.base_rate), (profile.burst_duration, profile.burst_rate)]
    k = 0
    while t < horizon:
        dur, rate = phases[k % 2]
        k += 1
        end = min(t + dur, horizon)
        if dur > 0 and rate > 0 and end > t:
            n = arr_rng.poisson(rate * (end - t) / 1000.0)
            arrivals.append(np.sort(arr_rng.uniform(t, end, size=n)))
        t += dur
    times = np.concatenate(arrivals) if arrivals else np.zeros(0)
    n = len(times)
    prompts = profile.prompt_len_dist.sample(len_rng, n)
    outputs = profile.output_len_dist.sample(len_rng, n)
    reqs = [
        Request.create(i, float(times[i]), int(prompts[i]), int(outputs[i]),
                       profile.ttft_slo_ms, profile.tpot_slo_ms)
        for i in range(n)
    ]
    return Trace(tuple(reqs), name)


def generate_poisson(
    rate: float,
    horizon: float,
    prompt_len_dist: LengthDist,
    output_len_dist: LengthDist,
    seed: int,
    ttft_slo_ms: float = 500.0,
    tpot_slo_ms: float = 50.0,
    name: str = "poisson",
) -> Trace:
    """Stationary Poisson arrivals; a bursty profile with equal phase rates."""
    profile = BurstProfile(rate, rate, horizon, 0.0, prompt_len_dist, output_len_dist,
                           seed, ttft_slo_ms, tpot_slo_ms)
    return generate_bursty(profile, horizon, name)


def scale_trace(trace: Trace, factor: float) -> Trace:
    """Divide every arrival by ``factor``; a factor above 1 raises the offered load."""
    if not factor > 0:
        raise ValidationError(f"scale factor must be positive, got {factor}")
    if factor == 1:
        return trace
    reqs = tuple(replace(r, arrival_us=int(round(r.arrival_us / factor))) for r in trace.requests)
    return Trace(reqs, trace.name)


def _coerce_record(rec: dict, defaults, path, line: int) -> tuple[float, int, int, float, float]:
    try:
        arrival = float(rec["arrival_ms"])
        prompt = rec["prompt_tokens"]
        output = rec["output_tokens"]
    except KeyError as e:
        raise TraceParseError(path, line, f"missing field {e.args[0]!r}") from None
    except (TypeError, ValueError):
        raise TraceParseError(path, line, "arrival_ms is not a number") from None
    try:
        prompt_f, output_f = float(prompt), float(output)
    except (TypeError, ValueError):
        raise TraceParseError(path, line, "token counts must be integers") from None
    if not (prompt_f.is_integer() and output_f.is_integer()) or not math.isfinite(arrival):
        raise TraceParseError(path, line, "token counts must be integers")

    def slo(key, default):
        v = rec.get(key)
        if v is None or v == "":
            return default
        try:
            return float(v)
        except (TypeError, ValueError):
            raise TraceParseError(path, line, f"{key} is not a number") from None

    return (arrival, int(prompt_f), int(output_f),
            slo("ttft_slo_ms", defaults.ttft_slo), slo("tpot_slo_ms", defaults.tpot_slo))


def load_trace(path, format: str | None = None, defaults=None, name: str | None = None) -> Trace:
    """Read a JSONL or CSV trace and return it sorted by arrival.

    Records without SLO fields get ``defaults`` (a :class:`~batchsim.slo.SloTargets`,
    500/50 ms if omitted). Malformed records raise :class:`TraceParseError`
    with the 1-based line number; non-positive lengths raise
    :class:`ValidationError`.
    """
    from batchsim.slo import SloTargets

    path = Path(path)
    defaults = defaults or SloTargets(500.0, 50.0)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    rows: list[tuple[int, dict]] = []
    with path.open(newline="") as fh:
        if fmt == "jsonl":
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    rec = json.loads(raw)
                except json.JSONDecodeError as e:
                    raise TraceParseError(path, lineno, f"invalid JSON: {e.msg}") from None
                if not isinstance(rec, dict):
                    raise TraceParseError(path, lineno, "record is not an object")
                rows.append((lineno, rec))
        elif fmt == "csv":
            reader = csv.DictReader(fh)
            for rec in reader:
                rows.append((reader.line_num, rec))
        else:
            raise ValidationError(f"unknown trace format {fmt!r}")

    reqs = []
    for i, (lineno, rec) in enumerate(rows):
        arrival, prompt, output, ttft, tpot = _coerce_record(rec, defaults, path, lineno)
        if prompt < 1 or output < 1:
            raise ValidationError(f"{path}:{lineno}: prompt_tokens and output_tokens must be >= 1")
        if ttft <= 0 or tpot <= 0:
            raise ValidationError(f"{path}:{lineno}: SLO values must be positive")
        reqs.append(Request.create(i, arrival, prompt, output, ttft, tpot))
    return make_trace(reqs, name or path.stem)


def save_trace(trace: Trace, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    rows = [
        {
            "arrival_ms": r.arrival_ms,
            "prompt_tokens": r.prompt_len,
            "output_tokens": r.output_len,
            "ttft_slo_ms": r.ttft_slo,
            "tpot_slo_ms": r.tpot_slo,
        }
        for r in trace.requests
    ]
    with path.open("w", newline="") as fh:
        if fmt == "csv":
            w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
            w.writeheader()
            w.writerows(rows)
        else:
            for row in rows:
                fh.write(json.dumps(row) + "\n")

