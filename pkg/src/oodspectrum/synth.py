"""Synthetic observers and brute-force metric oracles.

Each simulated trial is either *stimulus-driven* (probability ``coupling``) or
*observer-driven*. Stimulus-driven trials read a per-image latent difficulty
and a per-image latent error draw that every observer in the condition
shares; observer-driven trials use private draws. Correctness is
``latent < accuracy`` and the error label is an inverse-CDF draw from the
observer's confusion kernel row, so marginal accuracy is exactly the target
while pairwise agreement grows with both observers' coupling.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import yaml

from .errors import DomainError, InvalidKernel
from .ingest import DEFAULT_CATEGORIES, HUMAN, MODEL, Condition, ResponseSet, TrialRecord, TrialTable


@dataclass(frozen=True)
class ObserverSpec:
    system_id: str
    accuracy: float = 0.8
    confusion_kernel: np.ndarray | None = None
    coupling: float = 0.0
    seed: int | None = None
    kind: str = HUMAN
    family: str | None = None
    subfamily: str | None = None
    accuracy_by_condition: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.coupling <= 1.0:
            raise DomainError(f"{self.system_id}: coupling must lie in [0, 1]")
        if not 0.0 <= self.accuracy <= 1.0:
            raise DomainError(f"{self.system_id}: accuracy must lie in [0, 1]")
        if self.kind not in (HUMAN, MODEL):
            raise DomainError(f"{self.system_id}: kind must be human or model")


@dataclass(frozen=True)
class ScenarioCondition:
    distortion_type: str
    distortion_level: str
    accuracy: float | None = None

    @property
    def condition_id(self) -> str:
        return f"{self.distortion_type}_{self.distortion_level}"


@dataclass(frozen=True)
class ScenarioSpec:
    conditions: tuple[ScenarioCondition, ...]
    observers: tuple[ObserverSpec, ...]
    categories: tuple[str, ...] = DEFAULT_CATEGORIES
    images_per_condition: int = 160
    stimulus_categories: tuple[str, ...] | None = None
    references: Mapping[str, str | None] = field(default_factory=dict)

    def __post_init__(self):
        cats = set(self.categories)
        for cat in self.stimulus_categories or ():
            if cat not in cats:
                raise DomainError(f"stimulus category {cat!r} is not declared")
        ids = [o.system_id for o in self.observers]
        if len(set(ids)) != len(ids):
            raise DomainError("observer ids must be unique")
        if self.images_per_condition < 1:
            raise DomainError("need at least one image per condition")


def normalize_kernel(kernel, n_categories: int) -> np.ndarray:
    """Validate a C x C error kernel and renormalise rows over their off-diagonal entries."""
    if kernel is None:
        k = np.ones((n_categories, n_categories))
    else:
        k = np.array(kernel, dtype=float)
    if k.shape != (n_categories, n_categories):
        raise InvalidKernel(f"kernel must be {n_categories}x{n_categories}, got {k.shape}")
    if np.any(~np.isfinite(k)) or np.any(k < 0):
        raise InvalidKernel("kernel entries must be finite and non-negative")
    k = k.copy()
    np.fill_diagonal(k, 0.0)
    rows = k.sum(axis=1)
    if np.any(rows <= 0):
        raise InvalidKernel("every kernel row needs off-diagonal mass")
    return k / rows[:, None]


def _stream(*parts) -> np.random.Generator:
    key = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return np.random.default_rng(key)


def _draws(spec: ScenarioSpec, seed: int):
    """Yield (condition, image ids, truth indices, observer, predicted indices) for every cell."""
    cats = spec.categories
    c = len(cats)
    stim = spec.stimulus_categories or cats
    index = {name: i for i, name in enumerate(cats)}
    stim_idx = np.array([index[s] for s in stim])
    n_img = spec.images_per_condition
    width = max(4, len(str(n_img - 1)))
    kernels = {o.system_id: np.cumsum(normalize_kernel(o.confusion_kernel, c), axis=1) for o in spec.observers}

    for cond in spec.conditions:
        shared = _stream(seed, "shared", cond.condition_id)
        difficulty = shared.random(n_img)
        lead = shared.random(n_img)
        truth = stim_idx[np.arange(n_img) % stim_idx.size]
        image_ids = tuple(f"{cond.condition_id}-{j:0{width}d}" for j in range(n_img))
        for obs in spec.observers:
            own_seed = obs.seed if obs.seed is not None else obs.system_id
            rng = _stream(seed, "observer", own_seed, cond.condition_id)
            acc = obs.accuracy_by_condition.get(cond.condition_id)
            if acc is None:
                acc = cond.accuracy if cond.accuracy is not None else obs.accuracy
            stimulus_driven = rng.random(n_img) < obs.coupling
            own_difficulty = rng.random(n_img)
            own_lead = rng.random(n_img)
            latent = np.where(stimulus_driven, difficulty, own_difficulty)
            draw = np.where(stimulus_driven, lead, own_lead)
            correct = latent < acc
            cdf = kernels[obs.system_id][truth]
            wrong_label = np.minimum((cdf < draw[:, None]).sum(axis=1), c - 1)
            yield cond, image_ids, truth, obs, np.where(correct, truth, wrong_label)


def simulate_observers(spec: ScenarioSpec, seed: int = 0) -> TrialTable:
    """Generate one response per (observer, condition, image); deterministic per seed."""
    cats = spec.categories
    records: list[TrialRecord] = []
    for cond, image_ids, truth, obs, pred in _draws(spec, seed):
        for j, image_id in enumerate(image_ids):
            records.append(TrialRecord(
                system_id=obs.system_id, system_kind=obs.kind,
                family=obs.family, subfamily=obs.subfamily,
                distortion_type=cond.distortion_type, distortion_level=cond.distortion_level,
                image_id=image_id, true_category=cats[truth[j]],
                response_category=cats[pred[j]], session_id="1", trial_index=j,
            ))
    return TrialTable(records, cats)


def simulate_response_sets(spec: ScenarioSpec, seed: int = 0) -> dict[tuple[str, str], ResponseSet]:
    """Same draws as :func:`simulate_observers`, grouped straight into response sets (no trial table)."""
    cats = spec.categories
    names = np.array(cats, dtype=object)
    out = {}
    for cond, image_ids, truth, obs, pred in _draws(spec, seed):
        out[(obs.system_id, cond.condition_id)] = ResponseSet(
            obs.system_id, Condition(cond.distortion_type, cond.distortion_level), image_ids,
            tuple(names[truth]), tuple(names[pred]), cats, obs.kind, obs.family, obs.subfamily)
    return dict(sorted(out.items()))


# ---------------------------------------------------------------------------
# scenario files


def _kernel_from_config(value, categories) -> np.ndarray | None:
    if value is None or value == "uniform":
        return None
    if isinstance(value, Mapping) and "lead_offset" in value:
        return lead_kernel(len(categories), int(value["lead_offset"]), float(value.get("lead_weight", 0.5)))
    return np.array(value, dtype=float)


def scenario_from_mapping(data: Mapping) -> ScenarioSpec:
    cats = tuple(data.get("categories") or DEFAULT_CATEGORIES)
    conds = tuple(ScenarioCondition(str(cd["distortion_type"]), str(cd["distortion_level"]), cd.get("accuracy"))
                  for cd in data["conditions"])
    observers = []
    for od in data["observers"]:
        observers.append(ObserverSpec(
            system_id=str(od["system_id"]),
            accuracy=float(od.get("accuracy", 0.8)),
            confusion_kernel=_kernel_from_config(od.get("kernel"), cats),
            coupling=float(od.get("coupling", 0.0)),
            seed=od.get("seed"),
            kind=od.get("kind", HUMAN),
            family=od.get("family"),
            subfamily=od.get("subfamily"),
            accuracy_by_condition=dict(od.get("accuracy_by_condition") or {}),
        ))
    stim = data.get("stimulus_categories")
    return ScenarioSpec(conds, tuple(observers), cats, int(data.get("images_per_condition", 160)),
                        tuple(stim) if stim else None, dict(data.get("references") or {}))


def load_scenario(path) -> ScenarioSpec:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return scenario_from_mapping(data.get("scenario", data))


def lead_kernel(n_categories: int, offset: int = 1, weight: float = 0.5) -> np.ndarray:
    """Kernel with one favoured wrong answer per class (``(i + offset) mod C``), rest uniform."""
    k = np.ones((n_categories, n_categories)) * (1 - weight) / max(1, n_categories - 2)
    for i in range(n_categories):
        k[i, (i + offset) % n_categories] = weight
    np.fill_diagonal(k, 0.0)
    return k


# ---------------------------------------------------------------------------
# bundled scenarios

CHANCE = 1 / 16

# distortion type -> (reference level, [(level, accuracy), ...])
_PIPELINE_LEVELS = {
    "contrast": ("c100", [("c30", 0.84), ("c10", 0.80), ("c05", 0.52), ("c03", 0.45), ("c01", CHANCE)]),
    "high-pass": ("inf", [("3", 0.83), ("1", 0.79), ("0.7", 0.50), ("0.45", CHANCE)]),
    "low-pass": ("0", [("3", 0.85), ("7", 0.81), ("10", 0.55), ("15", 0.47), ("40", CHANCE)]),
    "uniform-noise": ("0.00", [("0.10", 0.82), ("0.20", 0.78), ("0.35", 0.51), ("0.90", CHANCE)]),
    "phase-scrambling": ("0", [("60", 0.84), ("90", 0.80), ("120", 0.48), ("180", CHANCE)]),
    "power-equalisation": ("0", [("pow", 0.82)]),
    "rotation": ("0", [("90", 0.83), ("180", 0.79)]),
}
_REFERENCE_ACCURACY = {"contrast": 0.96, "high-pass": 0.95, "low-pass": 0.96, "uniform-noise": 0.95,
                       "phase-scrambling": 0.96, "power-equalisation": 0.95, "rotation": 0.96}

# subfamily -> (superfamily, coupling with the shared latents, lead offset of its kernel)
PIPELINE_MODELS = {
    "clip-vit": ("VLM", 0.75, 1),
    "clip-rn": ("VLM", 0.65, 1),
    "vgg": ("CNN", 0.50, 2),
    "resnet": ("CNN", 0.40, 1),
    "vit": ("ViT", 0.25, 3),
    "swin": ("ViT", 0.15, 4),
}


def pipeline_references() -> dict[str, str]:
    return {dtype: ref for dtype, (ref, _) in _PIPELINE_LEVELS.items()}


def pipeline_scenario(images_per_condition: int = 160) -> ScenarioSpec:
    """Four humans and twelve models over 7 distortion types spanning four difficulty regimes.

    Planted structure: conditions at chance accuracy form the hardest regime;
    models inherit a coupling gradient VLM > CNN > ViT, and models of one
    subfamily share coupling and error kernel.
    """
    conds = []
    for dtype, (ref, levels) in _PIPELINE_LEVELS.items():
        conds.append(ScenarioCondition(dtype, ref, _REFERENCE_ACCURACY[dtype]))
        conds.extend(ScenarioCondition(dtype, lvl, acc) for lvl, acc in levels)
    c = len(DEFAULT_CATEGORIES)
    human_kernel = lead_kernel(c, 1, 0.6)
    observers = [ObserverSpec(f"subject-{i:02d}", coupling=0.85, confusion_kernel=human_kernel, kind=HUMAN)
                 for i in range(1, 5)]
    for sub, (fam, coupling, offset) in PIPELINE_MODELS.items():
        for variant in ("a", "b"):
            observers.append(ObserverSpec(
                f"{sub}-{variant}", coupling=coupling, confusion_kernel=lead_kernel(c, offset, 0.6),
                kind=MODEL, family=fam, subfamily=sub))
    return ScenarioSpec(tuple(conds), tuple(observers), DEFAULT_CATEGORIES, images_per_condition,
                        references=pipeline_references())


def small_scenario() -> ScenarioSpec:
    """Four observers, two conditions, 160 images each."""
    conds = (ScenarioCondition("contrast", "c100", 0.95), ScenarioCondition("contrast", "c10", 0.6))
    observers = tuple(ObserverSpec(f"subject-{i:02d}", accuracy=0.8, coupling=0.5) for i in range(1, 5))
    return ScenarioSpec(conds, observers, references={"contrast": "c100"})


def scenario_to_mapping(spec: ScenarioSpec) -> dict:
    def kernel(k):
        return None if k is None else np.asarray(k).tolist()

    return {
        "categories": list(spec.categories),
        "images_per_condition": spec.images_per_condition,
        "stimulus_categories": list(spec.stimulus_categories) if spec.stimulus_categories else None,
        "references": dict(spec.references),
        "conditions": [{"distortion_type": cd.distortion_type, "distortion_level": cd.distortion_level,
                        "accuracy": cd.accuracy} for cd in spec.conditions],
        "observers": [{"system_id": o.system_id, "accuracy": o.accuracy, "coupling": o.coupling,
                       "kind": o.kind, "family": o.family, "subfamily": o.subfamily, "seed": o.seed,
                       "kernel": kernel(o.confusion_kernel),
                       "accuracy_by_condition": dict(o.accuracy_by_condition)} for o in spec.observers],
    }


# ---------------------------------------------------------------------------
# brute-force oracles, written straight from the metric definitions


def oracle_metrics(a: ResponseSet, b: ResponseSet, alpha: float = 0.5):
    """Naive loop implementations of EC, MA and CLED; ``None`` marks an undefined value."""
    if list(zip(a.image_ids, a.truths)) != list(zip(b.image_ids, b.truths)):
        raise DomainError("oracle needs comparable response sets")
    cats = list(a.categories)
    N = len(a.truths)
    t = list(a.truths)
    ya = list(a.responses)
    yb = list(b.responses)

    # error consistency
    n_c = sum(1 for i in range(N) if t[i] == ya[i] and t[i] == yb[i])
    n_e = sum(1 for i in range(N) if ya[i] != t[i] and yb[i] != t[i])
    pA = sum(1 for i in range(N) if ya[i] == t[i]) / N
    pB = sum(1 for i in range(N) if yb[i] == t[i]) / N
    p_obs = (n_c + n_e) / N
    p_exp = pA * pB + (1 - pA) * (1 - pB)
    ec = None if p_exp == 1 else (p_obs - p_exp) / (1 - p_exp)

    # misclassification agreement
    joint = [i for i in range(N) if ya[i] != t[i] and yb[i] != t[i]]
    n_err = len(joint)
    if n_err == 0:
        ma = None
    else:
        M = {(ci, cj): 0 for ci in cats for cj in cats}
        for i in joint:
            M[(ya[i], yb[i])] += 1
        p_o = sum(M[(ci, ci)] for ci in cats) / n_err
        p_e = 0.0
        for ci in cats:
            row = sum(M[(ci, cj)] for cj in cats) / n_err
            col = sum(M[(cj, ci)] for cj in cats) / n_err
            p_e += row * col
        ma = None if abs(p_e - 1) < 1e-15 else (p_o - p_e) / (1 - p_e)

    # class-level error divergence
    def confusion(y):
        F = {(ci, cj): 0 for ci in cats for cj in cats}
        for i in range(N):
            if y[i] != t[i]:
                F[(t[i], y[i])] += 1
        return F

    FA, FB = confusion(ya), confusion(yb)
    nA = {ci: sum(FA[(ci, cj)] for cj in cats) for ci in cats}
    nB = {ci: sum(FB[(ci, cj)] for cj in cats) for ci in cats}
    total = sum(nA.values()) + sum(nB.values())
    if total == 0:
        cl = None
    else:
        cl = 0.0
        for ci in cats:
            w = (nA[ci] + nB[ci]) / total
            sa = sum(FA[(ci, cj)] + alpha for cj in cats)
            sb = sum(FB[(ci, cj)] + alpha for cj in cats)
            P = [(FA[(ci, cj)] + alpha) / sa for cj in cats]
            Q = [(FB[(ci, cj)] + alpha) / sb for cj in cats]
            Mx = [(p + q) / 2 for p, q in zip(P, Q)]
            kl_p = sum(p * math.log2(p / m) for p, m in zip(P, Mx) if p > 0)
            kl_q = sum(q * math.log2(q / m) for q, m in zip(Q, Mx) if q > 0)
            cl += w * (0.5 * kl_p + 0.5 * kl_q)
    return ec, ma, cl


def response_set(truth: Sequence[str], pred: Sequence[str], categories: Sequence[str],
                 system_id: str = "sys", image_ids: Sequence[str] | None = None, **meta) -> ResponseSet:
    """Build a response set straight from label lists (image ids default to positions)."""
    ids = list(image_ids) if image_ids is not None else [f"img{i:05d}" for i in range(len(truth))]
    cond = meta.pop("condition", Condition("synthetic", "0"))
    return ResponseSet.from_pairs(system_id, cond, zip(ids, truth, pred), categories, **meta)
