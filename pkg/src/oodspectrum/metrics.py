"""Pairwise error-alignment metrics between two classification systems.

Error Consistency (EC) is Cohen's kappa on trial-level correctness.
Misclassification Agreement (MA) is multiclass kappa on the labels two systems
give to the trials both got wrong. Class-Level Error Divergence (CLED) is an
error-weighted Jensen-Shannon divergence between Dirichlet-smoothed per-class
error distributions, and needs no trial-level correspondence.

A metric that is mathematically undefined for the given data (e.g. both
systems perfect) comes back with ``value is None`` and a ``reason``; it is
never coerced to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .ingest import ResponseSet

DEGENERATE_EXPECTATION = "degenerate_expectation"
NO_JOINT_ERRORS = "no_joint_errors"
NO_ERRORS = "no_errors"


@dataclass(frozen=True)
class EcBreakdown:
    n: int
    n_c: int
    n_e: int
    p_a: float
    p_b: float
    p_obs: float
    p_exp: float
    ec: float | None
    reason: str | None = None

    @property
    def defined(self) -> bool:
        return self.ec is not None

    @property
    def value(self) -> float | None:
        return self.ec


@dataclass(frozen=True)
class MaBreakdown:
    n_err: int
    agreement_matrix: np.ndarray
    p_o_tilde: float | None
    p_e_tilde: float | None
    ma: float | None
    reason: str | None = None

    @property
    def defined(self) -> bool:
        return self.ma is not None

    @property
    def value(self) -> float | None:
        return self.ma


@dataclass(frozen=True)
class ErrorConfusion:
    """Counts of errors with true class i (row) and predicted class j (column)."""

    matrix: np.ndarray
    categories: tuple[str, ...]

    @property
    def per_class_errors(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @property
    def n_errors(self) -> int:
        return int(self.matrix.sum())

    def __add__(self, other: "ErrorConfusion") -> "ErrorConfusion":
        if self.categories != other.categories:
            raise DomainError("error confusion matrices use different category sets")
        return ErrorConfusion(self.matrix + other.matrix, self.categories)


@dataclass(frozen=True)
class CledResult:
    cled: float | None
    per_class_jsd: np.ndarray
    weights: np.ndarray
    alpha: float
    reason: str | None = None

    @property
    def defined(self) -> bool:
        return self.cled is not None

    @property
    def value(self) -> float | None:
        return self.cled


def error_consistency(a: ResponseSet, b: ResponseSet) -> EcBreakdown:
    a.check_comparable(b)
    ca = a.truth_idx == a.pred_idx
    cb = b.truth_idx == b.pred_idx
    n = a.n
    n_c = int(np.count_nonzero(ca & cb))
    n_e = int(np.count_nonzero(~ca & ~cb))
    k_a = int(np.count_nonzero(ca))
    k_b = int(np.count_nonzero(cb))
    p_a = k_a / n
    p_b = k_b / n
    p_obs = (n_c + n_e) / n
    p_exp = p_a * p_b + (1 - p_a) * (1 - p_b)
    # p_exp == 1 exactly when both systems are all-correct or both all-wrong
    if (k_a == n and k_b == n) or (k_a == 0 and k_b == 0):
        return EcBreakdown(n, n_c, n_e, p_a, p_b, p_obs, 1.0, None, DEGENERATE_EXPECTATION)
    ec = (p_obs - p_exp) / (1 - p_exp)
    return EcBreakdown(n, n_c, n_e, p_a, p_b, p_obs, p_exp, ec)


def misclassification_agreement(a: ResponseSet, b: ResponseSet) -> MaBreakdown:
    a.check_comparable(b)
    c = len(a.categories)
    joint = (a.truth_idx != a.pred_idx) & (b.truth_idx != b.pred_idx)
    ya = a.pred_idx[joint]
    yb = b.pred_idx[joint]
    mat = np.bincount(ya * c + yb, minlength=c * c).reshape(c, c)
    n_err = int(joint.sum())
    if n_err == 0:
        return MaBreakdown(0, mat, None, None, None, NO_JOINT_ERRORS)
    rows = mat.sum(axis=1)
    cols = mat.sum(axis=0)
    trace = int(np.trace(mat))
    p_o = trace / n_err
    # integer check so that an exactly-degenerate expectation is caught before rounding
    expected_num = int(np.dot(rows, cols))
    if expected_num == n_err * n_err:
        return MaBreakdown(n_err, mat, p_o, 1.0, None, DEGENERATE_EXPECTATION)
    p_e = float(np.dot(rows / n_err, cols / n_err))
    return MaBreakdown(n_err, mat, p_o, p_e, (p_o - p_e) / (1 - p_e))


def error_confusion(a: ResponseSet) -> ErrorConfusion:
    c = len(a.categories)
    wrong = a.truth_idx != a.pred_idx
    mat = np.bincount(a.truth_idx[wrong] * c + a.pred_idx[wrong], minlength=c * c).reshape(c, c)
    return ErrorConfusion(mat, a.categories)


def _jsd_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise Jensen-Shannon divergence with base-2 logs."""
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_p = np.where(p > 0, p * np.log2(p / m), 0.0).sum(axis=1)
        kl_q = np.where(q > 0, q * np.log2(q / m), 0.0).sum(axis=1)
    return np.clip(0.5 * kl_p + 0.5 * kl_q, 0.0, 1.0)


def cled(a: ErrorConfusion, b: ErrorConfusion, alpha: float = 0.5) -> CledResult:
    if a.categories != b.categories:
        raise DomainError("CLED needs both systems on the same category set")
    if not alpha > 0:
        raise DomainError("Dirichlet concentration must be positive")
    fa = a.matrix.astype(float)
    fb = b.matrix.astype(float)
    n_a = fa.sum(axis=1)
    n_b = fb.sum(axis=1)
    total = n_a.sum() + n_b.sum()
    c = fa.shape[0]
    if total == 0:
        return CledResult(None, np.zeros(c), np.zeros(c), alpha, NO_ERRORS)
    pa = (fa + alpha) / (fa + alpha).sum(axis=1, keepdims=True)
    pb = (fb + alpha) / (fb + alpha).sum(axis=1, keepdims=True)
    jsd = _jsd_rows(pa, pb)
    weights = (n_a + n_b) / total
    # classes without errors in either system carry zero weight
    value = float(np.sum(weights * jsd))
    return CledResult(value, jsd, weights, alpha)


def cled_sets(a: ResponseSet, b: ResponseSet, alpha: float = 0.5) -> CledResult:
    return cled(error_confusion(a), error_confusion(b), alpha)
