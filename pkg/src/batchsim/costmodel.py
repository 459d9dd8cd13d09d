"""Linear step-time model ``a + b*new_tokens + c*context`` and its calibration."""

from __future__ import annotations

import csv
import logging
import random
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from batchsim.errors import CalibrationError, TraceParseError, ValidationError

log = logging.getLogger(__name__)

SAMPLE_FIELDS = ("total_new_tokens", "total_context", "observed_time_ms")
MIN_B = 1e-9
NOISE_KINDS = ("none", "uniform", "gaussian")


class CalibrationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CostModel:
    a: float  # ms per step
    b: float  # ms per new token
    c: float  # ms per context token

    def __post_init__(self):
        if self.a < 0 or self.b <= 0 or self.c < 0:
            raise ValidationError(f"cost model needs a >= 0, b > 0, c >= 0: {self}")

    def predict(self, total_new_tokens: float, total_context: float) -> float:
        return self.a + self.b * total_new_tokens + self.c * total_context

    def to_dict(self) -> dict:
        return {"a_ms": float(self.a), "b_ms_per_token": float(self.b), "c_ms_per_context_token": float(self.c)}

    @classmethod
    def from_dict(cls, d: dict) -> "CostModel":
        return cls(float(d["a_ms"]), float(d["b_ms_per_token"]), float(d["c_ms_per_context_token"]))


def predict_step_time(model: CostModel, total_new_tokens: float, total_context: float) -> float:
    if total_new_tokens < 0 or total_context < 0:
        raise ValidationError("token counts must be non-negative")
    return model.predict(total_new_tokens, total_context)


@dataclass(frozen=True)
class CalibrationSample:
    total_new_tokens: int
    total_context: int
    observed_time: float  # ms

    def __post_init__(self):
        if not self.observed_time > 0:
            raise ValidationError("observed_time must be positive")


def _design(samples: Sequence[CalibrationSample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([[1.0, s.total_new_tokens, s.total_context] for s in samples], dtype=float)
    y = np.array([s.observed_time for s in samples], dtype=float)
    return X.reshape(-1, 3), y


def _ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    n, k = X.shape
    if n < k:
        raise CalibrationError(f"need at least {k} samples, got {n}")
    scale = np.abs(X).max(axis=0)
    if np.any(scale == 0):
        raise CalibrationError("design matrix has an all-zero column")
    Xs = X / scale
    gram = Xs.T @ Xs
    if np.linalg.matrix_rank(Xs) < k or np.linalg.cond(gram) > 1e12:
        raise CalibrationError("rank-deficient design: columns are collinear")
    # LAPACK gesv: LU with partial pivoting
    beta = np.linalg.solve(gram, Xs.T @ y)
    return beta / scale


def fit(samples: Sequence[CalibrationSample]) -> CostModel:
    """Ordinary least squares over (1, new_tokens, context).

    Negative fitted coefficients are clamped (b to a tiny positive value, a and
    c to zero) with a :class:`CalibrationWarning`.
    """
    X, y = _design(samples)
    a, b, c = (float(v) for v in _ols(X, y))
    if b <= 0:
        warnings.warn(f"fitted b={b:.3g} is not positive; clamped to {MIN_B}", CalibrationWarning, 2)
        b = MIN_B
    if a < 0:
        warnings.warn(f"fitted a={a:.3g} is negative; clamped to 0", CalibrationWarning, 2)
        a = 0.0
    if c < 0:
        warnings.warn(f"fitted c={c:.3g} is negative; clamped to 0", CalibrationWarning, 2)
        c = 0.0
    return CostModel(a, b, c)


def fit_token_only(samples: Sequence[CalibrationSample]) -> CostModel:
    """Baseline estimator that ignores context: least squares over (1, new_tokens)."""
    X, y = _design(samples)
    a, b = (float(v) for v in _ols(X[:, :2], y))
    return CostModel(max(a, 0.0), max(b, MIN_B), 0.0)


def mape(model: CostModel, samples: Sequence[CalibrationSample]) -> float:
    """Mean absolute percentage error of ``model`` against observed times (a fraction)."""
    if not samples:
        return 0.0
    X, y = _design(samples)
    pred = X @ np.array([model.a, model.b, model.c])
    return float(np.mean(np.abs(pred - y) / y))


def generate_samples(
    model: CostModel,
    n: int,
    seed: int,
    noise_sigma: float = 0.0,
    noise: str = "gaussian",
    max_new: int = 2048,
    max_context: int = 100_000,
) -> list[CalibrationSample]:
    """Synthetic profiling data: random batch shapes timed by ``model``.

    ``noise_sigma`` is relative: gaussian noise has that standard deviation,
    uniform noise has support +/- ``noise_sigma``.
    """
    rng = np.random.default_rng([seed, 3])
    new = rng.integers(1, max_new + 1, size=n)
    ctx = rng.integers(0, max_context + 1, size=n)
    t = model.a + model.b * new + model.c * ctx
    if noise_sigma > 0:
        if noise == "gaussian":
            t = t * (1.0 + rng.normal(0.0, noise_sigma, size=n))
        elif noise == "uniform":
            t = t * rng.uniform(1.0 - noise_sigma, 1.0 + noise_sigma, size=n)
        else:
            raise ValidationError(f"unknown noise kind {noise!r}")
    t = np.maximum(t, 1e-6)
    return [CalibrationSample(int(a), int(b), float(c)) for a, b, c in zip(new, ctx, t)]


def load_samples(path) -> list[CalibrationSample]:
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SAMPLE_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise TraceParseError(path, 1, f"missing columns {sorted(missing)}")
        for rec in reader:
            try:
                s = CalibrationSample(
                    int(rec["total_new_tokens"]),
                    int(rec["total_context"]),
                    float(rec["observed_time_ms"]),
                )
            except (TypeError, ValueError) as e:
                raise TraceParseError(path, reader.line_num, str(e)) from None
            out.append(s)
    return out


def save_samples(samples: Sequence[CalibrationSample], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SAMPLE_FIELDS)
        for s in samples:
            w.writerow([s.total_new_tokens, s.total_context, repr(s.observed_time)])


def save_model(model: CostModel, path) -> None:
    Path(path).write_text(yaml.safe_dump(model.to_dict(), sort_keys=False))


def load_model(path) -> CostModel:
    return CostModel.from_dict(yaml.safe_load(Path(path).read_text()))


@dataclass(frozen=True)
class NoiseSpec:
    """Multiplicative step-time noise with mean 1.

    ``kind`` is ``none``, ``uniform`` (factor in [1-m, 1+m]) or ``gaussian``
    (factor 1 + N(0, m), floored at 0.05).
    """

    kind: str = "none"
    magnitude: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValidationError(f"unknown noise kind {self.kind!r}")
        if self.magnitude < 0 or (self.kind == "uniform" and self.magnitude >= 1):
            raise ValidationError("noise magnitude out of range")

    def factor(self, seed: int, step: int) -> float:
        if self.kind == "none" or self.magnitude == 0:
            return 1.0
        rng = random.Random(f"truth-noise:{seed}:{step}")
        if self.kind == "uniform":
            return rng.uniform(1.0 - self.magnitude, 1.0 + self.magnitude)
        return max(0.05, 1.0 + rng.gauss(0.0, self.magnitude))


def ground_truth_step_time(model: CostModel, batch, noise: NoiseSpec, seed: int, step: int) -> float:
    """True duration (ms) of executing ``batch`` as the ``step``-th step of a run."""
    base = model.predict(batch.total_new_tokens, batch.total_context)
    return base * noise.factor(seed, step)
