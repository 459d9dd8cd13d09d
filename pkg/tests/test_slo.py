import pytest
from hypothesis import given, strategies as st

from batchsim.errors import UsageError, ValidationError
from batchsim.slo import RequestProgress, SloTargets, request_deadline, slack, token_deadline
from batchsim.workload import Request


def _req(arrival=0, ttft=500, tpot=50, output=10):
    return Request.create(0, arrival, 100, output, ttft, tpot)


@pytest.mark.parametrize("arrival,ttft,tpot,j,expected", [
    (0, 500, 50, 0, 500),
    (0, 500, 50, 3, 650),
    (1000, 2000, 50, 10, 3500),
])
def test_token_deadline_examples(arrival, ttft, tpot, j, expected):
    assert token_deadline(_req(arrival, ttft, tpot), j) == expected


def test_token_deadline_rejects_negative_index():
    with pytest.raises(UsageError):
        token_deadline(_req(), -1)


def test_request_deadline_fresh_is_ttft_deadline():
    r = _req(arrival=123)
    assert request_deadline(r, RequestProgress()) == 623


def test_request_deadline_index_four():
    prog = RequestProgress()
    for t in range(4):
        prog.emit(t + 1)
    assert request_deadline(_req(), prog) == 700


def test_slow_prefill_leaves_negative_slack():
    prog = RequestProgress()
    prog.emit(900_000)
    assert request_deadline(_req(), prog) == 550
    assert slack(_req(), prog, 900) == -350


def test_finished_request_is_usage_error():
    prog = RequestProgress()
    prog.emit(1)
    with pytest.raises(UsageError):
        request_deadline(_req(output=1), prog)


@pytest.mark.parametrize("now,expected", [(600, 50), (650, 0)])
def test_slack_examples(now, expected):
    prog = RequestProgress()
    for t in range(3):
        prog.emit(t + 1)
    assert slack(_req(), prog, now) == expected


def test_emit_must_increase():
    prog = RequestProgress()
    prog.emit(5)
    with pytest.raises(UsageError):
        prog.emit(5)


def test_targets_must_be_positive():
    with pytest.raises(ValidationError):
        SloTargets(0, 50)


@given(st.integers(0, 10**6), st.integers(1, 10**5), st.integers(1, 10**4), st.integers(0, 1000))
def test_deadline_strictly_increasing_in_index(arrival, ttft, tpot, j):
    r = Request(0, arrival, 1, j + 2, ttft, tpot)
    assert token_deadline(r, j + 1) > token_deadline(r, j)


@given(st.integers(0, 10**6), st.integers(0, 50), st.floats(0, 1e4), st.floats(0, 1e4))
def test_slack_decreases_with_time(arrival, j, t1, dt):
    r = Request(0, arrival, 1, 100, 500_000, 50_000)
    prog = RequestProgress(emitted=[(i, i + 1) for i in range(j)])
    assert slack(r, prog, t1 + dt) <= slack(r, prog, t1)
