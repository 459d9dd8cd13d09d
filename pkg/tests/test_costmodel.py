import warnings

import pytest
from hypothesis import given, strategies as st

from batchsim.costmodel import (
    CalibrationSample,
    CalibrationWarning,
    CostModel,
    NoiseSpec,
    fit,
    fit_token_only,
    generate_samples,
    ground_truth_step_time,
    load_model,
    load_samples,
    mape,
    predict_step_time,
    save_model,
    save_samples,
)
from batchsim.errors import CalibrationError, TraceParseError, ValidationError
from batchsim.sched import BatchPlan

M = CostModel(5.0, 0.01, 0.0001)


def _plan(new, ctx):
    return BatchPlan(((0, new),) if new else (), 0.0, total_new_tokens=new, total_context=ctx)


@pytest.mark.parametrize("new,ctx,expected", [
    (512, 10000, 11.12),
    (0, 0, 5.0),
    (1, 1, 5.0 + 0.01 + 0.0001),
])
def test_predict_examples(new, ctx, expected):
    assert predict_step_time(M, new, ctx) == pytest.approx(expected, rel=1e-12)


def test_predict_rejects_negative_counts():
    with pytest.raises(ValidationError):
        predict_step_time(M, -1, 0)


@given(st.integers(0, 10**5), st.integers(0, 10**6), st.integers(0, 10**5), st.integers(0, 10**6))
def test_predict_is_affine(n1, c1, n2, c2):
    lhs = predict_step_time(M, n1 + n2, c1 + c2)
    rhs = predict_step_time(M, n1, c1) + predict_step_time(M, n2, c2) - M.a
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_noiseless_fit_is_exact():
    got = fit(generate_samples(M, 200, seed=0))
    for g, t in ((got.a, M.a), (got.b, M.b), (got.c, M.c)):
        assert abs(g - t) / t <= 1e-9


def test_two_samples_underdetermined():
    with pytest.raises(CalibrationError):
        fit([CalibrationSample(1, 10, 6.0), CalibrationSample(2, 20, 7.0)])


def test_collinear_design_rejected():
    samples = [CalibrationSample(n, 10 * n, 5 + 0.011 * n) for n in range(1, 50)]
    with pytest.raises(CalibrationError):
        fit(samples)


def test_negative_b_clamped_with_warning():
    # time falls as new tokens grow
    samples = [CalibrationSample(n, c, 50.0 - 0.01 * n + 0.001 * c) for n in (1, 500, 1000) for c in (0, 5000)]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        m = fit(samples)
    assert m.b > 0
    assert any(issubclass(w.category, CalibrationWarning) for w in caught)


def test_noisy_fit_within_tolerance():
    samples = generate_samples(M, 500, seed=4, noise_sigma=0.02, noise="uniform")
    m = fit(samples)
    for g, t in ((m.a, M.a), (m.b, M.b), (m.c, M.c)):
        assert abs(g - t) / t <= 0.05
    held = generate_samples(M, 500, seed=1004, noise_sigma=0.02, noise="uniform")
    assert mape(m, held) <= 0.015
    assert mape(fit_token_only(samples), held) >= 0.03


def test_samples_file_round_trip(tmp_path):
    s = generate_samples(M, 20, seed=2, noise_sigma=0.02)
    save_samples(s, tmp_path / "s.csv")
    assert load_samples(tmp_path / "s.csv") == s


def test_samples_file_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("total_new_tokens,total_context\n1,2\n")
    with pytest.raises(TraceParseError):
        load_samples(p)
    p.write_text("total_new_tokens,total_context,observed_time_ms\n1,2,3\n1,x,3\n")
    with pytest.raises(TraceParseError) as e:
        load_samples(p)
    assert e.value.line == 3


def test_model_file_round_trip(tmp_path):
    save_model(M, tmp_path / "m.yaml")
    assert load_model(tmp_path / "m.yaml") == M


def test_noise_disabled_equals_prediction():
    plan = _plan(300, 7000)
    assert ground_truth_step_time(M, plan, NoiseSpec(), 0, 0) == M.predict(300, 7000)


@given(st.integers(0, 2**31), st.integers(0, 10**6))
def test_uniform_noise_bounded(seed, step):
    plan = _plan(300, 7000)
    base = M.predict(300, 7000)
    t = ground_truth_step_time(M, plan, NoiseSpec("uniform", 0.052), seed, step)
    assert 0.948 * base <= t <= 1.052 * base


def test_noise_deterministic_per_seed_and_step():
    plan = _plan(64, 100)
    ns = NoiseSpec("gaussian", 0.05)
    assert ground_truth_step_time(M, plan, ns, 3, 17) == ground_truth_step_time(M, plan, ns, 3, 17)
    assert ground_truth_step_time(M, plan, ns, 3, 17) != ground_truth_step_time(M, plan, ns, 3, 18)


@pytest.mark.parametrize("kw", [dict(a=-1, b=0.1, c=0), dict(a=1, b=0, c=0), dict(a=1, b=0.1, c=-1e-5)])
def test_invalid_model(kw):
    with pytest.raises(ValidationError):
        CostModel(**kw)


def test_invalid_noise():
    with pytest.raises(ValidationError):
        NoiseSpec("laplace", 0.1)
    with pytest.raises(ValidationError):
        NoiseSpec("uniform", 1.5)
