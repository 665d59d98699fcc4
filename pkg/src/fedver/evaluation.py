"""Verification scoring, equal error rate, distribution summaries and Welch's t-test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import Autoencoder, MlpVerifier, forward_verifier


@dataclass(frozen=True)
class TrialScore:
    score: float
    genuine: bool


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    n_genuine: int
    n_impostor: int

    @property
    def eer_percent(self) -> float:
        return 100.0 * self.eer


@dataclass(frozen=True)
class DistributionSummary:
    min: float
    lower_quartile: float
    median: float
    upper_quartile: float
    max: float
    mean: float
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    significant_at_0_05: bool

    def to_dict(self) -> dict:
        return {
            "t_statistic": self.t_statistic,
            "degrees_of_freedom": self.degrees_of_freedom,
            "p_value": self.p_value,
            "significant_at_0_05": self.significant_at_0_05,
        }


def score_supervised(model: MlpVerifier, x: np.ndarray) -> float:
    return forward_verifier(model, x)


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b)
    out = np.zeros(a.shape[0])
    ok = (na > 0) & (nb > 0)
    out[ok] = (a[ok] @ b) / (na[ok] * nb)
    return out


def unsupervised_scores(encoder: Autoencoder, enrollment: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """Cosine similarity of each probe embedding to the mean enrollment embedding."""
    enrollment = np.atleast_2d(np.asarray(enrollment, dtype=np.float64))
    if enrollment.shape[0] == 0:
        raise ValueError("enrollment set is empty")
    template = encoder.embed(enrollment).mean(axis=0)
    return _cosine_rows(encoder.embed(np.atleast_2d(probes)), template)


def score_unsupervised(encoder: Autoencoder, enrollment: np.ndarray, probe: np.ndarray) -> float:
    probe = np.asarray(probe, dtype=np.float64)
    if probe.ndim != 1:
        raise ValueError("score_unsupervised scores a single probe vector")
    return float(unsupervised_scores(encoder, enrollment, probe[None, :])[0])


def compute_eer(genuine: Sequence[float], impostor: Sequence[float]) -> EerResult:
    """Equal error rate over the thresholds at every distinct score, plus +inf.

    A trial is accepted when ``score >= threshold``.  The operating point
    minimizes ``|FAR - FRR|`` (lowest threshold on ties) and the EER is
    ``(FAR + FRR) / 2`` there.
    """
    gen = np.sort(np.asarray(genuine, dtype=np.float64))
    imp = np.sort(np.asarray(impostor, dtype=np.float64))
    if gen.size == 0 or imp.size == 0:
        raise ValueError("EER needs at least one genuine and one impostor trial")
    if not (np.all(np.isfinite(gen)) and np.all(np.isfinite(imp))):
        raise ValueError("scores must be finite")
    thresholds = np.append(np.unique(np.concatenate([gen, imp])), np.inf)
    far = (imp.size - np.searchsorted(imp, thresholds, side="left")) / imp.size
    frr = np.searchsorted(gen, thresholds, side="left") / gen.size
    best = int(np.argmin(np.abs(far - frr)))
    return EerResult(float((far[best] + frr[best]) / 2), float(thresholds[best]), int(gen.size), int(imp.size))


def compute_eer_trials(trials: Sequence[TrialScore]) -> EerResult:
    return compute_eer([t.score for t in trials if t.genuine], [t.score for t in trials if not t.genuine])


def summarize(values: Sequence[float], n_bins: int = 10) -> DistributionSummary:
    """Five-number summary (linear-interpolated quartiles), mean and an equal-width histogram."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot summarize an empty sample")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    counts, edges = np.histogram(arr, bins=n_bins, range=(arr.min(), arr.max()))
    return DistributionSummary(
        float(arr.min()), float(q1), float(med), float(q3), float(arr.max()), float(arr.mean()),
        tuple(float(e) for e in edges), tuple(int(c) for c in counts),
    )


def _betacf(a: float, b: float, x: float, tol: float = 1e-15, max_iter: int = 10_000) -> float:
    # Continued fraction for the incomplete beta function (modified Lentz).
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """``I_x(a, b)`` for ``a, b > 0`` and ``0 <= x <= 1``."""
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if t == 0.0:
        return 1.0
    p = regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
    return min(1.0, max(0.0, p))


def t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> TTestResult:
    """Welch's unequal-variance two-sample, two-sided t-test."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    for name, s in (("sample_a", a), ("sample_b", b)):
        if s.size < 2:
            raise ValueError(f"{name} needs at least 2 values")
        if not np.all(np.isfinite(s)):
            raise ValueError(f"{name} contains non-finite values")
    va = float(np.var(a, ddof=1))
    vb = float(np.var(b, ddof=1))
    if va == 0.0 or vb == 0.0:
        raise ValueError("t-test undefined: a sample has zero variance")
    sa, sb = va / a.size, vb / b.size
    se2 = sa + sb
    t = (float(np.mean(a)) - float(np.mean(b))) / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (a.size - 1) + sb * sb / (b.size - 1))
    p = student_t_two_sided_p(t, df)
    return TTestResult(t, df, p, p < 0.05)
