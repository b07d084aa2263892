"""Aggregate metric cells into baselines, alignment ratios, rankings and
permutation-based family / regime structure tests."""

from __future__ import annotations

import itertools
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DomainError,
    EmptyRoster,
    FamilyTooSmall,
    ModelMissingRegimeData,
    NoDefinedCells,
    NonComparable,
    NoWithinPairs,
    ZeroHumanBaseline,
)
from .ingest import HUMAN, ResponseSet
from .metrics import cled, cled_sets, error_confusion, error_consistency, misclassification_agreement
from .spectrum import RegimeAssignment
from .stats import TestResult, cohens_d, mann_whitney_u

HUMAN_HUMAN = "human-human"
HUMAN_MODEL = "human-model"
MODEL_MODEL = "model-model"
METRICS = ("ec", "ma")
DEFAULT_N_PERM = 2000


@dataclass(frozen=True)
class AlignmentRecord:
    condition_id: str
    system_a: str
    system_b: str
    kind: str
    ec: float | None
    ma: float | None
    cled: float | None = None
    n: int = 0
    n_err: int = 0
    n_errors_total: int = 0

    def value(self, metric: str) -> float | None:
        if metric == "combined":
            if self.ec is None or self.ma is None:
                return None
            return (self.ec + self.ma) / 2.0
        return getattr(self, metric)

    def partner_of(self, system_id: str) -> str | None:
        if self.system_a == system_id:
            return self.system_b
        if self.system_b == system_id:
            return self.system_a
        return None


@dataclass
class PairwiseAlignment:
    records: list[AlignmentRecord]
    undefined: list[AlignmentRecord] = field(default_factory=list)
    non_comparable: list[tuple[str, str]] = field(default_factory=list)


def _kind(a: ResponseSet, b: ResponseSet) -> str:
    humans = (a.system_kind == HUMAN) + (b.system_kind == HUMAN)
    return {2: HUMAN_HUMAN, 1: HUMAN_MODEL, 0: MODEL_MODEL}[humans]


def pairwise_alignment(sets: Sequence[ResponseSet], alpha: float = 0.5) -> PairwiseAlignment:
    """EC, MA and CLED for every unordered pair of systems in one condition."""
    sets = sorted(sets, key=lambda r: r.system_id)
    conds = {rs.condition for rs in sets}
    if len(conds) > 1:
        raise DomainError("pairwise_alignment works on one condition at a time")
    out = PairwiseAlignment([])
    for a, b in itertools.combinations(sets, 2):
        if not a.comparable_with(b):
            out.non_comparable.append((a.system_id, b.system_id))
            continue
        ec = error_consistency(a, b)
        ma = misclassification_agreement(a, b)
        cl = cled_sets(a, b, alpha)
        rec = AlignmentRecord(a.condition.condition_id, a.system_id, b.system_id, _kind(a, b),
                              ec.ec, ma.ma, cl.cled, ec.n, ma.n_err,
                              int(error_confusion(a).n_errors + error_confusion(b).n_errors))
        if rec.ec is None and rec.ma is None:
            out.undefined.append(rec)
        else:
            out.records.append(rec)
    return out


def human_baseline(records: Iterable[AlignmentRecord], metric: str = "combined") -> dict[str, dict]:
    """Per condition mean and sd of a metric over human-human pairs (undefined cells excluded)."""
    vals: dict[str, list[float]] = defaultdict(list)
    excluded: dict[str, int] = defaultdict(int)
    for r in records:
        if r.kind != HUMAN_HUMAN:
            continue
        v = r.value(metric)
        if v is None:
            excluded[r.condition_id] += 1
        else:
            vals[r.condition_id].append(v)
    out = {}
    for cid in sorted(set(vals) | set(excluded)):
        v = vals.get(cid, [])
        out[cid] = {
            "mean": float(np.mean(v)) if v else None,
            "sd": float(np.std(v, ddof=1)) if len(v) > 1 else (0.0 if v else None),
            "n_pairs": len(v),
            "n_excluded": excluded.get(cid, 0),
        }
    return out


# ---------------------------------------------------------------------------
# alignment ratios and rankings


@dataclass(frozen=True)
class AlignmentRatio:
    model_id: str
    condition_id: str
    rho: float
    a_model: float
    a_human: float
    metric: str = "combined"
    n_model_cells: int = 0
    n_human_cells: int = 0
    excluded_model_cells: int = 0
    excluded_human_cells: int = 0


def _defined_mean(records: Iterable[AlignmentRecord], metric: str) -> tuple[float | None, int, int]:
    vals, excluded = [], 0
    for r in records:
        v = r.value(metric)
        if v is None:
            excluded += 1
        else:
            vals.append(v)
    return (float(np.mean(vals)) if vals else None), len(vals), excluded


def alignment_ratio(model_records: Sequence[AlignmentRecord], human_records: Sequence[AlignmentRecord],
                    condition: str, metric: str = "combined", model_id: str | None = None) -> AlignmentRatio:
    """Model-human alignment divided by the human-human alignment of the same condition.

    With ``metric="combined"`` each pair contributes (EC + MA) / 2 and pairs with
    either value undefined are excluded; ``"ec"`` and ``"ma"`` give per-metric ratios.
    """
    model_records = [r for r in model_records if r.condition_id == condition]
    human_records = [r for r in human_records if r.condition_id == condition and r.kind == HUMAN_HUMAN]
    if model_id is None:
        ids = {r.system_a for r in model_records} | {r.system_b for r in model_records}
        humans = {s for r in human_records for s in (r.system_a, r.system_b)}
        candidates = sorted(ids - humans)
        if len(candidates) != 1:
            raise DomainError(f"cannot infer a single model id from records: {candidates}")
        model_id = candidates[0]
    a_model, n_m, ex_m = _defined_mean(model_records, metric)
    a_human, n_h, ex_h = _defined_mean(human_records, metric)
    if a_model is None or a_human is None:
        raise NoDefinedCells(f"no defined {metric} cells for {model_id} in {condition}")
    if a_human == 0:
        raise ZeroHumanBaseline(f"human baseline is zero in {condition}")
    return AlignmentRatio(model_id, condition, a_model / a_human, a_model, a_human, metric,
                          n_m, n_h, ex_m, ex_h)


def model_human_records(records: Iterable[AlignmentRecord], model_id: str,
                        condition: str | None = None) -> list[AlignmentRecord]:
    return [r for r in records if r.kind == HUMAN_MODEL and model_id in (r.system_a, r.system_b)
            and (condition is None or r.condition_id == condition)]


def alignment_ratios(records: Sequence[AlignmentRecord], model_ids: Iterable[str], conditions: Iterable[str],
                     metric: str = "combined") -> tuple[list[AlignmentRatio], list[tuple[str, str, str]]]:
    """Ratios for every (model, condition); failures are returned as (model, condition, reason)."""
    by_cond: dict[str, list[AlignmentRecord]] = defaultdict(list)
    for r in records:
        by_cond[r.condition_id].append(r)
    ratios, failed = [], []
    for cid in sorted(set(conditions)):
        recs = by_cond.get(cid, [])
        humans = [r for r in recs if r.kind == HUMAN_HUMAN]
        for mid in sorted(model_ids):
            mrecs = model_human_records(recs, mid)
            try:
                ratios.append(alignment_ratio(mrecs, humans, cid, metric, model_id=mid))
            except (NoDefinedCells, ZeroHumanBaseline) as exc:
                failed.append((mid, cid, exc.code))
    return ratios, failed


@dataclass(frozen=True)
class RankEntry:
    model_id: str
    mean_rho: float
    sd_rho: float
    n_conditions: int
    rank: int
    tied: bool = False


@dataclass(frozen=True)
class Ranking:
    regime: str
    entries: tuple[RankEntry, ...]
    conditions: tuple[str, ...]
    missing: tuple[str, ...] = ()

    def order(self) -> list[str]:
        return [e.model_id for e in self.entries]


def rank_models(ratios: Sequence[AlignmentRatio], assignment: RegimeAssignment,
                representatives: Mapping[tuple[str, str], str], regimes: Sequence[str] | None = None,
                models: Iterable[str] | None = None, strict: bool = True) -> dict[str, Ranking]:
    """Rank models per regime by their ratio averaged over the regime's representative conditions.

    Ties in the mean ratio are broken by model id and flagged. Models without
    any defined ratio in a regime raise :class:`ModelMissingRegimeData` when
    ``strict``; otherwise they are listed in ``Ranking.missing``.
    """
    regimes = list(regimes) if regimes is not None else list(assignment.regimes)
    all_models = sorted(set(models) if models is not None else {r.model_id for r in ratios})
    out = {}
    missing_all = []
    for regime in regimes:
        conds = sorted(cid for (_, reg), cid in representatives.items() if reg == regime)
        per_model: dict[str, list[float]] = defaultdict(list)
        for r in ratios:
            if r.condition_id in conds:
                per_model[r.model_id].append(r.rho)
        missing = [m for m in all_models if not per_model.get(m)]
        missing_all.extend((m, regime) for m in missing)
        rows = []
        for m in all_models:
            vals = per_model.get(m)
            if not vals:
                continue
            sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            rows.append((m, float(np.mean(vals)), sd, len(vals)))
        rows.sort(key=lambda t: (-t[1], t[0]))
        counts = defaultdict(int)
        for row in rows:
            counts[row[1]] += 1
        entries = tuple(RankEntry(m, mu, sd, n, i + 1, counts[mu] > 1) for i, (m, mu, sd, n) in enumerate(rows))
        out[regime] = Ranking(regime, entries, tuple(conds), tuple(missing))
    if strict and missing_all:
        raise ModelMissingRegimeData(
            "models without ratios: " + ", ".join(f"{m} ({r})" for m, r in missing_all), missing_all)
    return out


@dataclass(frozen=True)
class FamilyComparison:
    higher: str
    lower: str
    relation: str
    test: TestResult
    median_higher: float
    median_lower: float


def superfamily_rank_test(ratios_by_family: Mapping[str, Sequence[float]], regime: str = "",
                          alpha: float = 0.01) -> list[FamilyComparison]:
    """Two-sided rank-sum test for every pair of families on per-model mean ratios.

    The family with the higher median is listed first; the relation is ``">"``
    when p < ``alpha`` and ``"≥"`` otherwise.
    """
    usable = {f: list(v) for f, v in ratios_by_family.items() if len(v) >= 2}
    if len(usable) < 2:
        raise FamilyTooSmall(f"{regime}: need two families with at least two models each")
    out = []
    for fa, fb in itertools.combinations(sorted(usable), 2):
        ma_, mb_ = float(np.median(usable[fa])), float(np.median(usable[fb]))
        hi, lo = (fa, fb) if (ma_, fb) >= (mb_, fa) else (fb, fa)
        test = mann_whitney_u(usable[hi], usable[lo], "two_sided")
        rel = ">" if test.p_value < alpha and np.median(usable[hi]) > np.median(usable[lo]) else "≥"
        out.append(FamilyComparison(hi, lo, rel, test, float(np.median(usable[hi])), float(np.median(usable[lo]))))
    return out


# ---------------------------------------------------------------------------
# representatives


def _level_key(level: str):
    try:
        return (0, float(level), level)
    except ValueError:
        m = re.match(r"^([^\d.]*)([\d.]+)$", level)
        if m:
            try:
                return (1, m.group(1), float(m.group(2)), level)
            except ValueError:
                pass
        return (2, level)


@dataclass(frozen=True)
class Representatives:
    chosen: dict[tuple[str, str], str]
    ties: list[tuple[str, str, tuple[str, ...]]]
    absent: list[tuple[str, str]]

    def for_regime(self, regime: str) -> dict[str, str]:
        return {dt: cid for (dt, reg), cid in sorted(self.chosen.items()) if reg == regime}


def select_representatives(assignment: RegimeAssignment, ood_scores) -> Representatives:
    """Per (distortion type, regime) pick the condition whose delta is nearest the regime's component mean.

    Equidistant candidates resolve to the level token that sorts first
    (numeric tokens numerically); the tie is recorded.
    """
    comps = {label: assignment.means[i] for i, label in enumerate(assignment.regimes)}
    cells: dict[tuple[str, str], list[tuple[float, str, str]]] = defaultdict(list)
    for s in ood_scores:
        cid = s.condition.condition_id
        regime = assignment.assignment[cid]
        cells[(s.condition.distortion_type, regime)].append(
            (abs(s.delta - comps[regime]), s.condition.distortion_level, cid))
    chosen, ties = {}, []
    for key in sorted(cells):
        cands = cells[key]
        best = min(d for d, _, _ in cands)
        tied = [c for c in cands if c[0] == best]
        tied.sort(key=lambda c: _level_key(c[1]))
        chosen[key] = tied[0][2]
        if len(tied) > 1:
            ties.append((key[0], key[1], tuple(c[2] for c in tied)))
    types = sorted({k[0] for k in cells})
    absent = [(dt, reg) for dt in types for reg in assignment.regimes if (dt, reg) not in cells]
    return Representatives(chosen, ties, absent)


# ---------------------------------------------------------------------------
# distances and permutation tests


@dataclass(frozen=True)
class DistanceMatrix:
    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = len(self.labels)
        if v.shape != (n, n):
            raise DomainError("distance matrix shape does not match labels")
        finite = np.where(np.isnan(v), 0.0, v)
        if not np.allclose(finite, finite.T, rtol=0, atol=1e-12):
            raise DomainError("distance matrix must be symmetric")
        if np.any(np.diag(v) != 0):
            raise DomainError("distance matrix must have a zero diagonal")
        if np.any(finite < 0):
            raise DomainError("distances must be non-negative")
        object.__setattr__(self, "values", v)

    def subset(self, labels: Sequence[str]) -> "DistanceMatrix":
        idx = [self.labels.index(lab) for lab in labels]
        return DistanceMatrix(tuple(labels), self.values[np.ix_(idx, idx)])


@dataclass(frozen=True)
class AlignmentVectors:
    labels: tuple[str, ...]
    columns: tuple[tuple[str, str], ...]
    matrix: np.ndarray
    imputed: int

    def vector(self, model_id: str) -> np.ndarray:
        return self.matrix[self.labels.index(model_id)]

    def distances(self) -> DistanceMatrix:
        diff = self.matrix[:, None, :] - self.matrix[None, :, :]
        d = np.sqrt((diff ** 2).sum(axis=2))
        np.fill_diagonal(d, 0.0)
        return DistanceMatrix(self.labels, np.maximum(d, d.T))


def alignment_vectors(records: Sequence[AlignmentRecord], model_ids: Sequence[str],
                      roster: Sequence[str], metrics: Sequence[str] = METRICS) -> AlignmentVectors:
    """Per model, concatenated mean-over-human-partners metric values over a fixed condition roster.

    Entries with no defined value are imputed with the roster column mean
    across models (0 when the whole column is undefined, which adds nothing
    to distances).
    """
    if not roster:
        raise EmptyRoster("alignment vectors need at least one condition")
    columns = tuple((cid, m) for cid in roster for m in metrics)
    mat = np.full((len(model_ids), len(columns)), np.nan)
    index = {mid: i for i, mid in enumerate(model_ids)}
    acc: dict[tuple[int, int], list[float]] = defaultdict(list)
    col_index = {c: j for j, c in enumerate(columns)}
    for r in records:
        if r.kind != HUMAN_MODEL:
            continue
        for mid in (r.system_a, r.system_b):
            if mid in index:
                for m in metrics:
                    v = r.value(m)
                    j = col_index.get((r.condition_id, m))
                    if v is not None and j is not None:
                        acc[(index[mid], j)].append(v)
    for (i, j), vals in acc.items():
        mat[i, j] = float(np.mean(vals))
    missing = np.isnan(mat)
    imputed = int(missing.sum())
    if imputed:
        with np.errstate(all="ignore"):
            col_mean = np.nanmean(np.where(missing, np.nan, mat), axis=0) if mat.size else mat
        col_mean = np.where(np.isnan(col_mean), 0.0, col_mean)
        mat = np.where(missing, col_mean[None, :], mat)
    return AlignmentVectors(tuple(model_ids), columns, mat, imputed)


def alignment_vector(model_id: str, records: Sequence[AlignmentRecord], roster: Sequence[str],
                     model_ids: Sequence[str] | None = None) -> np.ndarray:
    if model_ids is None:
        model_ids = sorted({s for r in records if r.kind == HUMAN_MODEL for s in (r.system_a, r.system_b)}
                           - _humans(records))
    return alignment_vectors(records, list(model_ids), roster).vector(model_id)


def _humans(records: Iterable[AlignmentRecord]) -> set[str]:
    out = set()
    for r in records:
        if r.kind == HUMAN_HUMAN:
            out.update((r.system_a, r.system_b))
    return out


@dataclass(frozen=True)
class PermutationResult:
    observed: float
    null_mean: float
    null_sd: float
    p_value: float
    effect_size: float | None
    n_permutations: int
    seed: int
    n_within: int = 0
    n_across: int = 0
    alternative: str = "greater"


def _pair_data(dm: DistanceMatrix, grouping: Mapping[str, str]):
    labels = [lab for lab in dm.labels if lab in grouping]
    sub = dm.subset(labels)
    groups = sorted({grouping[lab] for lab in labels})
    codes = np.array([groups.index(grouping[lab]) for lab in labels])
    i, j = np.triu_indices(len(labels), k=1)
    vals = sub.values[i, j]
    keep = ~np.isnan(vals)
    return codes, i[keep], j[keep], vals[keep], int((~keep).sum())


def _label_permutations(codes: np.ndarray, start: int, count: int, seed: int) -> np.ndarray:
    # each block of permutations has its own substream, so results do not depend on chunking order
    rng = np.random.default_rng([seed, start])
    return rng.permuted(np.tile(codes, (count, 1)), axis=1)


def _mean_gap(same: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """mean(across) - mean(within) per row of a same-group mask."""
    n_w = same.sum(axis=-1)
    n_a = same.shape[-1] - n_w
    s_w = (same * vals).sum(axis=-1)
    s_a = vals.sum() - s_w
    with np.errstate(invalid="ignore", divide="ignore"):
        return s_a / n_a - s_w / n_w


def _cohens_d_rows(same: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Cohen's d of within- minus between-group values per row of a same-group mask."""
    n_w = same.sum(axis=-1).astype(float)
    n_b = same.shape[-1] - n_w
    s_w = (same * vals).sum(axis=-1)
    q_w = (same * vals * vals).sum(axis=-1)
    s_b = vals.sum() - s_w
    q_b = (vals * vals).sum() - q_w
    with np.errstate(invalid="ignore", divide="ignore"):
        m_w, m_b = s_w / n_w, s_b / n_b
        ss_w = q_w - n_w * m_w ** 2
        ss_b = q_b - n_b * m_b ** 2
        pooled = (ss_w + ss_b) / (n_w + n_b - 2)
        return (m_w - m_b) / np.sqrt(pooled)


def _null_stats(codes, i, j, vals, n_perm, seed, stat_fn, chunk=500):
    out = np.empty(n_perm)
    for start in range(0, n_perm, chunk):
        block = _label_permutations(codes, start, min(chunk, n_perm - start), seed)
        same = block[:, i] == block[:, j]
        out[start:start + chunk] = stat_fn(same, vals)
    return out


def _summarise(observed, null, n_perm, seed, direction, n_within, n_across) -> PermutationResult:
    eps = 1e-12 * max(1.0, abs(observed))
    if direction == "greater":
        hits = int(np.count_nonzero(null >= observed - eps))
    else:
        hits = int(np.count_nonzero(null <= observed + eps))
    p = (1 + hits) / (n_perm + 1)
    mean = float(np.mean(null))
    sd = float(np.std(null, ddof=1)) if n_perm > 1 else 0.0
    effect = (observed - mean) / sd if sd > 0 else None
    return PermutationResult(float(observed), mean, sd, p, effect, n_perm, seed, n_within, n_across, direction)


def family_permutation_test(distances: DistanceMatrix, grouping: Mapping[str, str],
                            n_perm: int = DEFAULT_N_PERM, seed: int = 0,
                            level: str = "within_vs_across") -> PermutationResult:
    """Are members of a group closer to each other than to other groups?

    Statistic: mean across-group distance minus mean within-group distance.
    The null shuffles group labels over members (group sizes kept). One-tailed,
    add-one p-value; effect size is the null-standardised statistic.
    Singleton groups take part in across-group pairs only.
    """
    if level != "within_vs_across":
        raise DomainError(f"unsupported comparison level {level!r}")
    if n_perm < 1:
        raise DomainError("n_perm must be positive")
    codes, i, j, vals, _ = _pair_data(distances, grouping)
    same = codes[i] == codes[j]
    if not same.any():
        raise NoWithinPairs("no group has two members")
    if same.all():
        raise NoWithinPairs("need at least two groups")
    observed = float(_mean_gap(same[None, :], vals)[0])
    null = _null_stats(codes, i, j, vals, n_perm, seed, _mean_gap)
    return _summarise(observed, null, n_perm, seed, "greater", int(same.sum()), int((~same).sum()))


def cled_group_separability(cled_matrix: DistanceMatrix, grouping: Mapping[str, str],
                            n_perm: int = DEFAULT_N_PERM, seed: int = 0) -> tuple[float, PermutationResult]:
    """Cohen's d of within-group versus between-group CLED values, with a label-shuffling test.

    Negative d means groups are internally more similar. Undefined (NaN) cells
    are left out.
    """
    if n_perm < 1:
        raise DomainError("n_perm must be positive")
    codes, i, j, vals, _ = _pair_data(cled_matrix, grouping)
    same = codes[i] == codes[j]
    if same.sum() < 2:
        raise NoWithinPairs("no group contributes within-group pairs")
    if (~same).sum() < 2:
        raise NoWithinPairs("need between-group pairs")
    d = cohens_d(vals[same], vals[~same])
    observed = float(_cohens_d_rows(same[None, :], vals)[0])
    null = _null_stats(codes, i, j, vals, n_perm, seed, _cohens_d_rows)
    null = np.where(np.isnan(null), 0.0, null)
    return d, _summarise(observed, null, n_perm, seed, "less", int(same.sum()), int((~same).sum()))


def condition_cled_matrix(sets: Iterable[ResponseSet], alpha: float = 0.5,
                          kind: str | None = HUMAN) -> DistanceMatrix:
    """CLED between conditions, each condition pooling the error confusions of its systems."""
    pooled: dict[str, object] = {}
    for rs in sorted(sets, key=lambda r: (r.condition.condition_id, r.system_id)):
        if kind is not None and rs.system_kind != kind:
            continue
        ec = error_confusion(rs)
        cid = rs.condition.condition_id
        pooled[cid] = pooled[cid] + ec if cid in pooled else ec
    labels = tuple(sorted(pooled))
    n = len(labels)
    mat = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            res = cled(pooled[labels[a]], pooled[labels[b]], alpha)
            v = res.cled if res.defined else math.nan
            mat[a, b] = mat[b, a] = v
    return DistanceMatrix(labels, mat)


def radar_rows(records: Sequence[AlignmentRecord], representatives: Representatives,
               families: Mapping[str, str]) -> list[dict]:
    """Mean and sd of model-human (per family) and human-human alignment at each representative condition."""
    rows = []
    by_cond: dict[str, list[AlignmentRecord]] = defaultdict(list)
    for r in records:
        by_cond[r.condition_id].append(r)
    for (dtype, regime), cid in sorted(representatives.chosen.items()):
        recs = by_cond.get(cid, [])
        for metric in METRICS:
            hh = [r.value(metric) for r in recs if r.kind == HUMAN_HUMAN and r.value(metric) is not None]
            groups: dict[str, list[float]] = defaultdict(list)
            for mid, fam in families.items():
                vals = [r.value(metric) for r in model_human_records(recs, mid) if r.value(metric) is not None]
                if vals:
                    groups[fam].append(float(np.mean(vals)))
            series = [("human", hh)] + sorted(groups.items())
            for group, vals in series:
                rows.append({
                    "regime": regime, "distortion_type": dtype, "condition_id": cid, "group": group,
                    "metric": metric,
                    "mean": float(np.mean(vals)) if vals else None,
                    "sd": float(np.std(vals, ddof=1)) if len(vals) > 1 else (0.0 if vals else None),
                    "n": len(vals),
                })
    return rows
