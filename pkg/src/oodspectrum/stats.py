"""Scalar statistics: logit transform, Glass's delta, hypothesis tests and corrections."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special
from scipy import stats as sps

from .errors import (
    DegenerateReference,
    DegenerateSample,
    DomainError,
    EmptySample,
    SampleTooSmall,
)
from .ingest import Condition

TWO_SIDED = "two_sided"
GREATER = "greater"
LESS = "less"


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    effect_size: float | None = None
    details: dict = field(default_factory=dict, compare=False)

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if not (0.0 <= self.p_value <= 1.0):
            raise DomainError(f"p-value {self.p_value} outside [0, 1]")


# ---------------------------------------------------------------------------
# logit and Glass's delta


def empirical_logit(a, n):
    """Logit of an accuracy after adding half a success and half a failure.

    ``a' = (a*n + 0.5) / (n + 1)`` keeps the transform finite at 0 and 1.
    Works elementwise on arrays.
    """
    a = np.asarray(a, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any((a < 0) | (a > 1)) or np.any(np.isnan(a)):
        raise DomainError("accuracy must lie in [0, 1]")
    if np.any(n < 1):
        raise DomainError("trial count must be >= 1")
    adj = (a * n + 0.5) / (n + 1.0)
    out = np.log(adj) - np.log1p(-adj)
    return float(out) if out.ndim == 0 else out


def logit(a):
    a = np.asarray(a, dtype=float)
    if np.any((a <= 0) | (a >= 1)):
        raise DomainError("plain logit needs accuracies strictly inside (0, 1)")
    out = np.log(a) - np.log1p(-a)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class AccuracySample:
    """Accuracies and their logits; the empirical logit is used when trial counts are known."""

    values: tuple[float, ...]
    n_trials_per_value: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.n_trials_per_value is not None:
            counts = tuple(int(n) for n in self.n_trials_per_value)
            if len(counts) != len(self.values):
                raise DomainError("values and n_trials_per_value differ in length")
            object.__setattr__(self, "n_trials_per_value", counts)

    @classmethod
    def from_counts(cls, correct: Sequence[int], totals: Sequence[int]) -> "AccuracySample":
        return cls(tuple(c / t for c, t in zip(correct, totals)), tuple(totals))

    @property
    def logits(self) -> np.ndarray:
        if not self.values:
            return np.empty(0)
        if self.n_trials_per_value is None:
            return np.atleast_1d(logit(self.values))
        return np.atleast_1d(empirical_logit(self.values, self.n_trials_per_value))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class OODScore:
    condition: Condition | None
    delta: float
    mean_logit_distorted: float
    reference_mean: float
    reference_sd: float


def glass_delta(distorted: AccuracySample, reference: AccuracySample,
                condition: Condition | None = None) -> OODScore:
    """Standardised mean difference of logits using only the reference spread (ddof=1)."""
    ref = reference.logits
    dist = distorted.logits
    if len(dist) == 0:
        raise EmptySample("distorted sample is empty")
    if len(ref) < 2:
        raise DegenerateReference("reference needs at least two values")
    sd = float(np.std(ref, ddof=1))
    if not sd > 0:
        raise DegenerateReference("reference logits have zero standard deviation")
    ref_mean = float(np.mean(ref))
    d_mean = float(np.mean(dist))
    return OODScore(condition, (d_mean - ref_mean) / sd, d_mean, ref_mean, sd)


# ---------------------------------------------------------------------------
# Mann-Whitney U


def _exact_u_pmf(n1: int, n2: int) -> np.ndarray:
    """Null distribution of U for untied samples by the usual counting recursion."""
    # f[i][j][u]: number of arrangements of i x's and j y's with statistic u
    size = n1 * n2 + 1
    prev = [np.zeros(size) for _ in range(n2 + 1)]
    for j in range(n2 + 1):
        prev[j][0] = 1.0
    for i in range(1, n1 + 1):
        cur = [np.zeros(size) for _ in range(n2 + 1)]
        cur[0][0] = 1.0
        for j in range(1, n2 + 1):
            # last element is an x (contributes j) or a y (contributes 0)
            shifted = np.zeros(size)
            shifted[j:] = prev[j][: size - j]
            cur[j] = shifted + cur[j - 1]
        prev = cur
    counts = prev[n2]
    return counts / counts.sum()


def mann_whitney_u(x: Sequence[float], y: Sequence[float], alternative: str = TWO_SIDED,
                   exact: bool = False) -> TestResult:
    """Rank-sum test of ``x`` against ``y``.

    The statistic is U for ``x`` (number of (x, y) pairs with x > y, ties
    counting one half). By default the p-value uses the normal approximation
    with tie-corrected variance and a 0.5 continuity correction. ``exact=True``
    enumerates the null distribution; it is only valid without ties.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise EmptySample("both samples must be non-empty")
    if alternative not in (TWO_SIDED, GREATER, LESS):
        raise DomainError(f"unknown alternative {alternative!r}")
    n1, n2 = x.size, y.size
    ranks = sps.rankdata(np.concatenate([x, y]))
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    mu = n1 * n2 / 2.0
    effect = u / (n1 * n2)

    if exact:
        if np.unique(np.concatenate([x, y])).size != n1 + n2:
            raise DomainError("exact Mann-Whitney p-values need untied samples")
        pmf = _exact_u_pmf(n1, n2)
        k = int(round(u))
        upper = float(pmf[k:].sum())
        lower = float(pmf[: k + 1].sum())
        if alternative == GREATER:
            p = upper
        elif alternative == LESS:
            p = lower
        else:
            p = min(1.0, 2.0 * min(upper, lower))
        return TestResult(u, p, "mann_whitney_u_exact", effect, {"n1": n1, "n2": n2})

    n = n1 + n2
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        # every value tied: no evidence either way
        return TestResult(u, 1.0, "mann_whitney_u", effect, {"n1": n1, "n2": n2, "z": 0.0})
    sd = math.sqrt(var)
    if alternative == TWO_SIDED:
        z = (abs(u - mu) - 0.5) / sd
        p = min(1.0, 2.0 * float(sps.norm.sf(z)))
    elif alternative == GREATER:
        z = (u - mu - 0.5) / sd
        p = float(sps.norm.sf(z))
    else:
        z = (u - mu + 0.5) / sd
        p = float(sps.norm.cdf(z))
    return TestResult(u, p, "mann_whitney_u", effect, {"n1": n1, "n2": n2, "z": z})


# ---------------------------------------------------------------------------
# binomial test against chance


def binomial_above_chance(k: int, n: int, p0: float) -> TestResult:
    """One-tailed exact test: ``P(X >= k)`` for ``X ~ Binomial(n, p0)``.

    The tail is summed in log space so that tiny p-values underflow gracefully.
    """
    if not (isinstance(k, (int, np.integer)) and isinstance(n, (int, np.integer))):
        raise DomainError("k and n must be integers")
    if n < 0 or not (0 <= k <= n):
        raise DomainError("need 0 <= k <= n")
    if not (0.0 < p0 < 1.0):
        raise DomainError("chance probability must lie in (0, 1)")
    k, n = int(k), int(n)
    effect = (k / n - p0) if n else 0.0
    if k == 0:
        return TestResult(float(k), 1.0, "binomial_one_tailed", effect, {"n": n, "p0": p0, "log_p": 0.0})
    if k == n:
        return TestResult(float(k), p0 ** n, "binomial_one_tailed", effect,
                          {"n": n, "p0": p0, "log_p": n * math.log(p0)})
    i = np.arange(k, n + 1, dtype=float)
    log_terms = (special.gammaln(n + 1) - special.gammaln(i + 1) - special.gammaln(n - i + 1)
                 + i * math.log(p0) + (n - i) * math.log1p(-p0))
    log_p = float(special.logsumexp(log_terms))
    p = min(1.0, math.exp(log_p))
    return TestResult(float(k), p, "binomial_one_tailed", effect, {"n": n, "p0": p0, "log_p": log_p})


# ---------------------------------------------------------------------------
# multiple comparisons, effect size


def bh_adjust(p_values: Sequence[float]) -> list[float]:
    """Benjamini-Hochberg step-up adjusted p-values, returned in input order."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return []
    if np.any(np.isnan(p)) or np.any((p < 0) | (p > 1)):
        raise DomainError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    adjusted = np.minimum(adjusted, 1.0)
    out = np.empty(m)
    out[order] = adjusted
    return out.tolist()


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """(mean_a - mean_b) over the (n-1)-weighted pooled standard deviation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise DegenerateSample("both samples need at least two values")
    pooled = ((a.size - 1) * np.var(a, ddof=1) + (b.size - 1) * np.var(b, ddof=1)) / (a.size + b.size - 2)
    if not pooled > 0:
        raise DegenerateSample("pooled standard deviation is zero")
    return float((a.mean() - b.mean()) / math.sqrt(pooled))


# ---------------------------------------------------------------------------
# normality


def _lilliefors_stat(z: np.ndarray) -> np.ndarray:
    """KS distance to N(mean, sd) fitted from each row (ddof=1). ``z`` is (reps, n), sorted."""
    n = z.shape[-1]
    mean = z.mean(axis=-1, keepdims=True)
    sd = z.std(axis=-1, ddof=1, keepdims=True)
    cdf = special.ndtr((z - mean) / sd)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - cdf, axis=-1)
    d_minus = np.max(cdf - (i - 1) / n, axis=-1)
    return np.maximum(d_plus, d_minus)


def lilliefors(x: Sequence[float], n_sim: int = 10_000, seed: int = 0) -> TestResult:
    """KS test against a normal with estimated parameters; Monte Carlo null."""
    x = np.sort(np.asarray(x, dtype=float))
    if x.size < 4:
        raise SampleTooSmall("Lilliefors needs at least 4 values")
    if not np.std(x) > 0:
        raise DegenerateSample("constant sample")
    d = float(_lilliefors_stat(x[None, :])[0])
    rng = np.random.default_rng(seed)
    null = np.empty(n_sim)
    chunk = 2000
    for start in range(0, n_sim, chunk):
        stop = min(n_sim, start + chunk)
        sims = np.sort(rng.standard_normal((stop - start, x.size)), axis=1)
        null[start:stop] = _lilliefors_stat(sims)
    p = (1 + int(np.count_nonzero(null >= d))) / (n_sim + 1)
    return TestResult(d, p, "lilliefors", None, {"n_sim": n_sim, "seed": seed})


def normality_tests(x: Sequence[float], seed: int = 0, n_sim: int = 10_000) -> list[TestResult]:
    """Shapiro-Wilk, D'Agostino-Pearson and Lilliefors p-values for one sample."""
    x = np.asarray(x, dtype=float)
    if x.size < 8:
        raise SampleTooSmall("normality tests need at least 8 values")
    if not np.std(x) > 0:
        raise DegenerateSample("constant sample")
    sw = sps.shapiro(x)
    with warnings.catch_warnings():
        # kurtosis test warns below n=20 but still returns a usable value
        warnings.simplefilter("ignore")
        dp = sps.normaltest(x)
    return [
        TestResult(float(sw.statistic), float(sw.pvalue), "shapiro_wilk"),
        TestResult(float(dp.statistic), float(dp.pvalue), "dagostino_pearson"),
        lilliefors(x, n_sim=n_sim, seed=seed),
    ]
