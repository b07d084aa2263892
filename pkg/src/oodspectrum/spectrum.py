"""OOD spectrum: score conditions against the undistorted human baseline and
group them into perceptual regimes with a one-dimensional Gaussian mixture."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize, special

from .errors import DegenerateReference, DomainError, MissingReference, NonFinite, TooFewPoints
from .ingest import HUMAN, Condition, ResponseSet, StudyConfig
from .stats import AccuracySample, OODScore, glass_delta

log = logging.getLogger(__name__)

REGIME_LABELS_4 = ("reference", "near-OOD", "far-OOD", "extreme-OOD")
TOL = 1e-8
MAX_ITER = 500
LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class GmmFit:
    """A fitted 1-D mixture in canonical form (components sorted by descending mean)."""

    k: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    n_iterations: int
    converged: bool
    n: int
    variance_floor: float
    ll_history: tuple[float, ...] = field(default=(), repr=False)
    restart: int = 0

    @property
    def n_params(self) -> int:
        return 3 * self.k - 1

    def component_log_density(self, x) -> np.ndarray:
        """log(w_j * N(x | m_j, v_j)) with shape (len(x), k)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))[:, None]
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw - 0.5 * (LOG_2PI + np.log(self.variances)) - (x - self.means) ** 2 / (2 * self.variances)

    def responsibilities(self, x) -> np.ndarray:
        lp = self.component_log_density(x)
        return np.exp(lp - special.logsumexp(lp, axis=1, keepdims=True))

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "weights": [float(v) for v in self.weights],
            "means": [float(v) for v in self.means],
            "variances": [float(v) for v in self.variances],
            "log_likelihood": float(self.log_likelihood),
            "n_iterations": self.n_iterations,
            "converged": self.converged,
            "restart": self.restart,
            "variance_floor": self.variance_floor,
        }


def _check_data(data) -> np.ndarray:
    x = np.asarray(data, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise NonFinite("mixture data must be finite")
    return x


def _variance_floor(x: np.ndarray) -> float:
    rng = float(x.max() - x.min())
    return max(1e-6 * rng * rng, 1e-12 * max(1.0, float(np.mean(x * x))))


def run_em(x: np.ndarray, weights: np.ndarray, means: np.ndarray, variances: np.ndarray,
           floor: float, tol: float = TOL, max_iter: int = MAX_ITER):
    """EM for a batch of independent starts.

    ``weights``, ``means`` and ``variances`` have shape (starts, k). Each start
    stops on its own once the log-likelihood gains less than ``tol``.
    Returns the final parameters, per-start log-likelihood histories,
    iteration counts and convergence flags.
    """
    w = np.array(weights, dtype=float, copy=True)
    m = np.array(means, dtype=float, copy=True)
    v = np.maximum(np.array(variances, dtype=float, copy=True), floor)
    starts, k = w.shape
    xs = x[None, None, :]

    def e_step(w, m, v):
        with np.errstate(divide="ignore"):
            logw = np.log(w)
        lp = (logw[:, :, None] - 0.5 * (LOG_2PI + np.log(v[:, :, None]))
              - (xs - m[:, :, None]) ** 2 / (2 * v[:, :, None]))
        top = lp.max(axis=1, keepdims=True)
        shifted = np.exp(lp - top)
        total = shifted.sum(axis=1, keepdims=True)
        norm = np.log(total) + top
        return shifted / total, norm[:, 0, :].sum(axis=1)

    resp, ll = e_step(w, m, v)
    history = [[float(val)] for val in ll]
    active = np.ones(starts, dtype=bool)
    iters = np.zeros(starts, dtype=int)
    converged = np.zeros(starts, dtype=bool)
    n = x.size
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        r = resp[idx]
        nk = r.sum(axis=2)
        safe = np.where(nk > 0, nk, 1.0)
        new_w = nk / n
        new_m = np.where(nk > 0, (r * x).sum(axis=2) / safe, m[idx])
        new_v = np.where(nk > 0, (r * (x - new_m[:, :, None]) ** 2).sum(axis=2) / safe, v[idx])
        new_v = np.maximum(new_v, floor)
        w[idx], m[idx], v[idx] = new_w, new_m, new_v
        new_resp, new_ll = e_step(w[idx], m[idx], v[idx])
        resp[idx] = new_resp
        gain = new_ll - ll[idx]
        ll[idx] = new_ll
        iters[idx] += 1
        for j, s in enumerate(idx):
            history[s].append(float(new_ll[j]))
        done = gain < tol
        converged[idx[done]] = True
        active[idx[done]] = False
    return w, m, v, ll, history, iters, converged


def _initial_params(x: np.ndarray, k: int, restarts: int, seed: int):
    var0 = float(np.var(x))
    w0 = np.full((restarts, k), 1.0 / k)
    m0 = np.empty((restarts, k))
    v0 = np.full((restarts, k), var0 if var0 > 0 else 1.0)
    base = np.quantile(x, (np.arange(k) + 0.5) / k)
    m0[0] = base
    # jitter scale: a quarter of the typical spacing between quantile means
    spread = math.sqrt(var0) if var0 > 0 else 1.0
    scale = 0.25 * spread * 2.0 / k
    for r in range(1, restarts):
        rng = np.random.default_rng([seed, r])
        m0[r] = np.sort(base + rng.normal(0.0, scale, size=k))
    return w0, m0, v0


def _canonical(k, w, m, v, ll, history, iters, conv, n, floor, restart) -> GmmFit:
    order = np.argsort(-m, kind="mergesort")
    w = w[order] / w.sum()
    return GmmFit(k, w, m[order].copy(), v[order].copy(), float(ll), int(iters), bool(conv), n, floor,
                  tuple(history), restart)


def fit_gmm_1d(data: Sequence[float], k: int, seed: int = 0, restarts: int = 10,
               tol: float = TOL, max_iter: int = MAX_ITER) -> GmmFit:
    """Best-of-restarts EM fit of a ``k``-component mixture to 1-D data.

    The first start places means at evenly spaced sample quantiles with equal
    weights and the pooled variance; the others jitter those quantile means
    with seeded Gaussian noise. The winner is the start with the highest final log-likelihood,
    ties going to the lower start index.
    """
    x = _check_data(data)
    if k < 1 or restarts < 1:
        raise DomainError("k and restarts must be >= 1")
    if x.size < k:
        raise TooFewPoints(f"{x.size} points cannot support {k} components")
    floor = _variance_floor(x)
    w0, m0, v0 = _initial_params(x, k, restarts, seed)
    w, m, v, ll, hist, iters, conv = run_em(x, w0, m0, v0, floor, tol, max_iter)
    best = int(np.argmax(ll))  # first maximum wins ties
    return _canonical(k, w[best], m[best], v[best], ll[best], hist[best], iters[best], conv[best],
                      x.size, floor, best)


def fit_from_init(data: Sequence[float], weights, means, variances,
                  tol: float = TOL, max_iter: int = MAX_ITER) -> GmmFit:
    """Run EM from one explicit start; mainly useful for checking equivariance."""
    x = _check_data(data)
    floor = _variance_floor(x)
    w, m, v, ll, hist, iters, conv = run_em(
        x, np.atleast_2d(weights), np.atleast_2d(means), np.atleast_2d(variances), floor, tol, max_iter)
    return _canonical(len(means), w[0], m[0], v[0], ll[0], hist[0], iters[0], conv[0], x.size, floor, 0)


# ---------------------------------------------------------------------------
# model selection


def bic(log_likelihood: float, n_params: int, n: int) -> float:
    return n_params * math.log(n) - 2.0 * log_likelihood


def aicc(log_likelihood: float, n_params: int, n: int) -> float | None:
    if n <= n_params + 1:
        return None
    return 2.0 * n_params - 2.0 * log_likelihood + 2.0 * n_params * (n_params + 1) / (n - n_params - 1)


@dataclass(frozen=True)
class Candidate:
    k: int
    fit: GmmFit
    bic: float
    aicc: float | None


@dataclass(frozen=True)
class ModelSelection:
    candidates: tuple[Candidate, ...]
    best_bic_k: int
    best_aicc_k: int | None

    @property
    def best_k(self) -> int:
        return self.best_bic_k

    def fit_for(self, k: int) -> GmmFit:
        for c in self.candidates:
            if c.k == k:
                return c.fit
        raise KeyError(k)

    @property
    def best_fit(self) -> GmmFit:
        return self.fit_for(self.best_k)

    def criterion_table(self) -> list[dict]:
        return [{"k": c.k, "n_params": c.fit.n_params, "log_likelihood": c.fit.log_likelihood,
                 "bic": c.bic, "aicc": c.aicc} for c in self.candidates]


def select_model(data: Sequence[float], k_range: Iterable[int] = range(1, 7), seed: int = 0,
                 restarts: int = 10) -> ModelSelection:
    """Fit every k in ``k_range`` and pick the component count minimising BIC (and AICc).

    When the two criteria disagree BIC decides and a warning is issued.
    """
    x = _check_data(data)
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 1 or ks[-1] > 8:
        raise DomainError("k_range must lie within [1, 8]")
    if x.size <= ks[-1]:
        raise TooFewPoints(f"{x.size} points are too few for k up to {ks[-1]}")
    cands = []
    for k in ks:
        fit = fit_gmm_1d(x, k, seed=seed, restarts=restarts)
        a = aicc(fit.log_likelihood, fit.n_params, x.size)
        if a is None:
            warnings.warn(f"AICc undefined for k={k} with n={x.size}; k skipped for AICc", stacklevel=2)
        cands.append(Candidate(k, fit, bic(fit.log_likelihood, fit.n_params, x.size), a))
    best_bic = min(cands, key=lambda c: (c.bic, c.k)).k
    defined = [c for c in cands if c.aicc is not None]
    best_aicc = min(defined, key=lambda c: (c.aicc, c.k)).k if defined else None
    if best_aicc is not None and best_aicc != best_bic:
        warnings.warn(f"BIC prefers k={best_bic} but AICc prefers k={best_aicc}; using BIC", stacklevel=2)
    return ModelSelection(tuple(cands), best_bic, best_aicc)


# ---------------------------------------------------------------------------
# regimes


def regime_labels(k: int) -> tuple[str, ...]:
    if k == 4:
        return REGIME_LABELS_4
    return tuple(f"regime_{i + 1}" for i in range(k))


def _crossover(fit: GmmFit, j: int) -> float:
    """Point between components j and j+1 where their weighted densities are equal."""
    w1, m1, v1 = fit.weights[j], fit.means[j], fit.variances[j]
    w2, m2, v2 = fit.weights[j + 1], fit.means[j + 1], fit.variances[j + 1]

    def g(x):
        lp = fit.component_log_density([x])[0]
        return lp[j] - lp[j + 1]

    lo, hi = m2, m1
    if g(lo) < 0 < g(hi):
        return float(optimize.brentq(g, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500))
    # no bracket between the means: take the quadratic root nearest the midpoint
    a = 1 / (2 * v2) - 1 / (2 * v1)
    b = m1 / v1 - m2 / v2
    c = (math.log(w1) - 0.5 * math.log(v1) - m1 ** 2 / (2 * v1)) - (math.log(w2) - 0.5 * math.log(v2) - m2 ** 2 / (2 * v2))
    roots = np.roots([a, b, c]) if abs(a) > 1e-300 else np.array([-c / b])
    roots = roots[np.isreal(roots)].real
    mid = 0.5 * (m1 + m2)
    if roots.size == 0:
        return float(mid)
    return float(roots[np.argmin(np.abs(roots - mid))])


@dataclass(frozen=True)
class RegimeAssignment:
    regimes: tuple[str, ...]
    assignment: dict[str, str]
    responsibilities: dict[str, list[float]]
    boundaries: tuple[float, ...]
    means: tuple[float, ...]

    def component_index(self, regime: str) -> int:
        return self.regimes.index(regime)

    def members(self, regime: str) -> list[str]:
        return sorted(c for c, r in self.assignment.items() if r == regime)


def _score_items(scores) -> list[tuple[str, float]]:
    if isinstance(scores, Mapping):
        return [(str(k), float(v)) for k, v in scores.items()]
    items = []
    for s in scores:
        cid = s.condition.condition_id if s.condition is not None else str(len(items))
        items.append((cid, float(s.delta)))
    return items


def assign_regimes(fit: GmmFit, scores) -> RegimeAssignment:
    """Posterior responsibilities and arg-max regime for each scored condition.

    ``scores`` is a sequence of :class:`OODScore` or a mapping condition id -> delta.
    """
    labels = regime_labels(fit.k)
    items = _score_items(scores)
    deltas = np.array([d for _, d in items])
    resp = fit.responsibilities(deltas) if items else np.zeros((0, fit.k))
    assignment = {}
    post = {}
    for (cid, _), row in zip(items, resp):
        assignment[cid] = labels[int(np.argmax(row))]
        post[cid] = [float(p) for p in row]
    bounds = tuple(_crossover(fit, j) for j in range(fit.k - 1))
    return RegimeAssignment(labels, assignment, post, bounds, tuple(float(m) for m in fit.means))


# ---------------------------------------------------------------------------
# full pipeline


@dataclass(frozen=True)
class ConditionAccuracy:
    condition: Condition
    is_reference: bool
    systems: tuple[str, ...]
    correct: tuple[int, ...]
    totals: tuple[int, ...]

    @property
    def sample(self) -> AccuracySample:
        return AccuracySample.from_counts(self.correct, self.totals)

    @property
    def accuracies(self) -> list[float]:
        return [c / t for c, t in zip(self.correct, self.totals)]


@dataclass(frozen=True)
class Spectrum:
    scores: tuple[OODScore, ...]
    accuracies: tuple[ConditionAccuracy, ...]
    reference: AccuracySample
    selection: ModelSelection
    fit: GmmFit
    assignment: RegimeAssignment

    def delta(self, condition_id: str) -> float:
        for s in self.scores:
            if s.condition.condition_id == condition_id:
                return s.delta
        raise KeyError(condition_id)

    def to_dict(self) -> dict:
        acc = {a.condition.condition_id: a for a in self.accuracies}
        conds = []
        for s in self.scores:
            cid = s.condition.condition_id
            conds.append({
                "condition_id": cid,
                "distortion_type": s.condition.distortion_type,
                "distortion_level": s.condition.distortion_level,
                "is_reference": acc[cid].is_reference,
                "n_humans": len(acc[cid].systems),
                "mean_accuracy": float(np.mean(acc[cid].accuracies)),
                "mean_logit": s.mean_logit_distorted,
                "delta": s.delta,
                "regime": self.assignment.assignment[cid],
                "posterior": self.assignment.responsibilities[cid],
            })
        return {
            "reference": {
                "n_values": len(self.reference),
                "mean_logit": self.scores[0].reference_mean if self.scores else None,
                "sd_logit": self.scores[0].reference_sd if self.scores else None,
            },
            "conditions": conds,
            "fit": self.fit.to_dict(),
            "regimes": list(self.assignment.regimes),
            "boundaries": list(self.assignment.boundaries),
            "criteria": self.selection.criterion_table(),
            "best_bic_k": self.selection.best_bic_k,
            "best_aicc_k": self.selection.best_aicc_k,
            "method": {
                "logit": "empirical (half pseudo-counts)",
                "init": "quantile means, uniform weights, pooled variance + jittered restarts",
                "assignment": "argmax posterior",
                "selection": "BIC (AICc reported)",
            },
        }


def human_accuracies(sets: Iterable[ResponseSet], config: StudyConfig) -> list[ConditionAccuracy]:
    by_cond: dict[Condition, list[ResponseSet]] = {}
    for rs in sets:
        if rs.system_kind != HUMAN:
            continue
        by_cond.setdefault(rs.condition, []).append(rs)
    out = []
    for cond in sorted(by_cond):
        group = sorted(by_cond[cond], key=lambda r: r.system_id)
        out.append(ConditionAccuracy(
            cond, config.is_reference(cond), tuple(r.system_id for r in group),
            tuple(r.n_correct for r in group), tuple(r.n for r in group)))
    return out


def pooled_reference(accs: Sequence[ConditionAccuracy]) -> AccuracySample:
    correct, totals = [], []
    for a in accs:
        if a.is_reference:
            correct.extend(a.correct)
            totals.extend(a.totals)
    if not correct:
        raise MissingReference("missing reference condition: no human data in any declared reference level")
    if len(correct) < 2:
        raise DegenerateReference("the pooled reference needs at least two accuracy values")
    return AccuracySample.from_counts(correct, totals)


def ood_scores(sets: Iterable[ResponseSet], config: StudyConfig):
    accs = human_accuracies(sets, config)
    ref = pooled_reference(accs)
    scores = tuple(glass_delta(a.sample, ref, a.condition) for a in accs)
    return scores, tuple(accs), ref


def build_spectrum(sets: Iterable[ResponseSet], config: StudyConfig, k_range: Iterable[int] = range(1, 7),
                   seed: int = 0, restarts: int = 10) -> Spectrum:
    """Score every condition against the pooled human baseline and fit the regimes.

    Reference conditions are part of the fitted data.
    """
    scores, accs, ref = ood_scores(sets, config)
    deltas = [s.delta for s in scores]
    ks = [k for k in k_range if k < len(deltas)]
    if not ks:
        raise TooFewPoints(f"{len(deltas)} conditions are too few for the requested k range")
    sel = select_model(deltas, ks, seed=seed, restarts=restarts)
    fit = sel.best_fit
    assignment = assign_regimes(fit, scores)
    log.info("spectrum: %d conditions, k=%d", len(scores), fit.k)
    return Spectrum(scores, accs, ref, sel, fit, assignment)
