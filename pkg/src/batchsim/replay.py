"""Independent re-validation of an event log."""

from __future__ import annotations

from dataclasses import dataclass, field

from batchsim.events import (
    ADMISSION_REJECT,
    ARRIVAL,
    BATCH_END,
    BATCH_START,
    REQUEST_DONE,
    TOKEN_EMIT,
    EventLog,
)


@dataclass(frozen=True)
class Violation:
    index: int  # position of the offending event in the log
    rule: str
    detail: str


@dataclass
class ReplayReport:
    violations: list[Violation] = field(default_factory=list)
    timelines: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    n_events: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self, max_show: int | None = None) -> str:
        if self.ok:
            return f"ok: {self.n_events} events, {len(self.timelines)} requests"
        shown = self.violations if max_show is None else self.violations[:max_show]
        lines = [f"{len(self.violations)} violation(s):"]
        lines += [f"  event {v.index}: [{v.rule}] {v.detail}" for v in shown]
        if len(shown) < len(self.violations):
            lines.append(f"  ... {len(self.violations) - len(shown)} more")
        return "\n".join(lines)


def replay_check(log) -> ReplayReport:
    """Re-derive the log's invariants from scratch and list every breach.

    Checks global time order, step pairing, one arrival per request, emission
    only at step ends with indices 0, 1, 2, ... and completion exactly at
    ``output_len`` tokens. A complete log must also leave no admitted request
    unfinished.
    """
    events = log.events if isinstance(log, EventLog) else list(log)
    complete = getattr(log, "complete", True)
    rep = ReplayReport(n_events=len(events))
    bad = rep.violations.append

    out_len: dict[int, int] = {}
    rejected: set[int] = set()
    done: set[int] = set()
    expected: dict[int, int] = {}
    last_emit_t: dict[int, int] = {}
    prev_t = None
    open_step = None
    next_step = 0
    last_end_t = None

    for i, ev in enumerate(events):
        t, kind, rid, data = ev.t_us, ev.kind, ev.req_id, ev.data or {}
        if prev_t is not None and t < prev_t:
            bad(Violation(i, "ordering", f"t={t}us precedes previous event at {prev_t}us"))
        prev_t = t if prev_t is None else max(prev_t, t)

        if kind == ARRIVAL:
            if rid in out_len:
                bad(Violation(i, "arrival", f"request {rid} arrived twice"))
                continue
            out_len[rid] = data.get("output_len", 0)
            expected[rid] = 0
            rep.timelines[rid] = []
        elif kind == ADMISSION_REJECT:
            if rid not in out_len or expected.get(rid, 0) > 0:
                bad(Violation(i, "reject", f"request {rid} rejected without a fresh arrival"))
            rejected.add(rid)
        elif kind == BATCH_START:
            if open_step is not None:
                bad(Violation(i, "step", f"step {data.get('step')} starts while step {open_step} runs"))
            if data.get("step") != next_step:
                bad(Violation(i, "step", f"expected step {next_step}, got {data.get('step')}"))
            open_step = data.get("step")
            next_step = (open_step if open_step is not None else next_step) + 1
        elif kind == BATCH_END:
            if open_step is None or data.get("step") != open_step:
                bad(Violation(i, "step", f"end of step {data.get('step')} without matching start"))
            open_step = None
            last_end_t = t
        elif kind == TOKEN_EMIT:
            idx = data.get("idx")
            if rid not in out_len:
                bad(Violation(i, "emit", f"token for unknown request {rid}"))
                continue
            if rid in rejected:
                bad(Violation(i, "emit", f"token for rejected request {rid}"))
                continue
            if rid in done:
                bad(Violation(i, "emit", f"token for finished request {rid}"))
                continue
            exp = expected[rid]
            if idx < exp:
                bad(Violation(i, "duplicate", f"request {rid} token {idx} emitted again"))
                continue
            if idx > exp:
                bad(Violation(i, "gap", f"request {rid} expected token {exp}, got {idx}"))
            if last_end_t != t:
                bad(Violation(i, "emit", f"request {rid} token {idx} not at a step end"))
            if rid in last_emit_t and t <= last_emit_t[rid]:
                bad(Violation(i, "emit-order", f"request {rid} token {idx} not after previous token"))
            expected[rid] = idx + 1
            last_emit_t[rid] = t
            rep.timelines[rid].append((idx, t))
        elif kind == REQUEST_DONE:
            if rid not in out_len or rid in done:
                bad(Violation(i, "done", f"request {rid} finished twice or never arrived"))
                continue
            if expected[rid] != out_len[rid]:
                bad(Violation(i, "done", f"request {rid} done after {expected[rid]} of {out_len[rid]} tokens"))
            done.add(rid)
        else:
            bad(Violation(i, "kind", f"unknown event kind {kind!r}"))

    if complete:
        if open_step is not None:
            bad(Violation(len(events), "step", f"step {open_step} never ends"))
        for rid in out_len:
            if rid not in done and rid not in rejected:
                bad(Violation(len(events), "unfinished", f"request {rid} never finished"))
    return rep
