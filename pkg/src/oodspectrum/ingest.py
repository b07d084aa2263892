"""Trial data model, file parsing and grouping into per-condition response sets.

Two on-disk layouts are understood:

* ``canonical``: the toolkit's own CSV with the columns in :data:`CANONICAL_COLUMNS`.
* ``modelvshuman_raw``: the raw-trial CSVs of the public *model-vs-human*
  benchmark (``subj,session,trial,rt,object_response,category,condition,imagename``).
"""

from __future__ import annotations

import csv
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import yaml

from .errors import (
    DuplicateTrial,
    EmptyFile,
    InputError,
    MissingColumn,
    NonComparable,
    UnknownCategory,
)

CANONICAL_COLUMNS = (
    "system_id",
    "system_kind",
    "family",
    "subfamily",
    "distortion_type",
    "distortion_level",
    "image_id",
    "true_category",
    "response_category",
    "session_id",
    "trial_index",
)

RAW_COLUMNS = ("subj", "session", "trial", "object_response", "category", "condition", "imagename")

DEFAULT_CATEGORIES = (
    "airplane", "bear", "bicycle", "bird", "boat", "bottle", "car", "cat",
    "chair", "clock", "dog", "elephant", "keyboard", "knife", "oven", "truck",
)

HUMAN = "human"
MODEL = "model"


@dataclass(frozen=True, order=True)
class Condition:
    distortion_type: str
    distortion_level: str

    @property
    def condition_id(self) -> str:
        return f"{self.distortion_type}_{self.distortion_level}"

    def __str__(self) -> str:
        return self.condition_id


@dataclass(frozen=True)
class TrialRecord:
    system_id: str
    system_kind: str
    distortion_type: str
    distortion_level: str
    image_id: str
    true_category: str
    response_category: str
    family: str | None = None
    subfamily: str | None = None
    session_id: str | None = None
    trial_index: int | None = None

    @property
    def condition(self) -> Condition:
        return Condition(self.distortion_type, self.distortion_level)

    @property
    def key(self) -> tuple:
        return (self.system_id, self.distortion_type, self.distortion_level,
                self.image_id, self.session_id, self.trial_index)


class TrialTable:
    """An immutable, validated collection of trial records over a closed category set."""

    def __init__(self, records: Iterable[TrialRecord], categories: Sequence[str] = DEFAULT_CATEGORIES):
        self.categories = tuple(categories)
        self.records = tuple(records)
        allowed = set(self.categories)
        seen = set()
        for i, rec in enumerate(self.records):
            if rec.system_kind not in (HUMAN, MODEL):
                raise InputError(f"row {i}: system_kind must be 'human' or 'model', got {rec.system_kind!r}")
            for label in (rec.true_category, rec.response_category):
                if label not in allowed:
                    raise UnknownCategory(f"row {i}: label {label!r} is not in the declared category set")
            if rec.key in seen:
                raise DuplicateTrial(f"row {i}: duplicate trial {rec.key}")
            seen.add(rec.key)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TrialRecord]:
        return iter(self.records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrialTable):
            return NotImplemented
        return self.categories == other.categories and self.records == other.records

    def systems(self) -> list[str]:
        return sorted({r.system_id for r in self.records})

    def conditions(self) -> list[Condition]:
        return sorted({r.condition for r in self.records})

    def concat(self, other: "TrialTable") -> "TrialTable":
        if other.categories != self.categories:
            raise InputError("cannot concatenate tables with different category sets")
        return TrialTable(self.records + other.records, self.categories)


@dataclass(frozen=True)
class StudyConfig:
    """Declared category set, reference levels and family taxonomy.

    ``references`` maps each distortion type to its undistorted level, or to
    ``None`` when the type has no in-type baseline and is scored against the
    pooled baseline only.
    """

    categories: tuple[str, ...] = DEFAULT_CATEGORIES
    references: Mapping[str, str | None] = field(default_factory=dict)
    taxonomy: Mapping[str, Mapping[str, str]] = field(default_factory=dict)

    def is_reference(self, condition: Condition) -> bool:
        level = self.references.get(condition.distortion_type)
        return level is not None and str(level) == condition.distortion_level

    def family_of(self, system_id: str) -> tuple[str | None, str | None]:
        entry = self.taxonomy.get(system_id, {})
        return entry.get("family"), entry.get("subfamily")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "StudyConfig":
        cats = tuple(data.get("categories") or DEFAULT_CATEGORIES)
        refs = {}
        for dtype, level in (data.get("references") or {}).items():
            refs[str(dtype)] = None if level is None else str(level)
        taxonomy = {str(k): dict(v) for k, v in (data.get("taxonomy") or {}).items()}
        return cls(categories=cats, references=refs, taxonomy=taxonomy)


def load_config(path: str | os.PathLike) -> StudyConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return StudyConfig.from_mapping(data.get("study", data))


def benchmark_config() -> StudyConfig:
    """Config for the public benchmark: 16 categories and its undistorted levels."""
    text = resources.files("oodspectrum").joinpath("data/modelvshuman.yaml").read_text()
    return StudyConfig.from_mapping(yaml.safe_load(text))


# ---------------------------------------------------------------------------
# parsing


def _opt(value: str | None) -> str | None:
    return value if value not in (None, "") else None


def _read_rows(path: Path, required: Sequence[str]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyFile(f"{path}: no header row")
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in required if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        reader.fieldnames = header
        rows = list(reader)
    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    return rows


def split_condition_token(token: str, default_type: str | None = None) -> tuple[str, str]:
    """Split ``"contrast_c50"`` into ``("contrast", "c50")``.

    Distortion-type names use hyphens, so the first underscore separates type
    from level. Tokens without an underscore are levels of ``default_type``.
    """
    token = token.strip()
    if "_" in token:
        dtype, level = token.split("_", 1)
        return dtype, level
    if default_type is None:
        raise InputError(f"condition token {token!r} carries no distortion type")
    return default_type, token


def parse_trials(path: str | os.PathLike, format: str = "canonical", *,
                 config: StudyConfig | None = None,
                 distortion_type: str | None = None) -> TrialTable:
    """Read one trial file into a validated :class:`TrialTable`."""
    config = config or StudyConfig()
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    if format == "canonical":
        rows = _read_rows(path, CANONICAL_COLUMNS)
        records = []
        for row in rows:
            ti = _opt(row["trial_index"])
            records.append(TrialRecord(
                system_id=row["system_id"],
                system_kind=row["system_kind"],
                family=_opt(row["family"]),
                subfamily=_opt(row["subfamily"]),
                distortion_type=row["distortion_type"],
                distortion_level=row["distortion_level"],
                image_id=row["image_id"],
                true_category=row["true_category"],
                response_category=row["response_category"],
                session_id=_opt(row["session_id"]),
                trial_index=int(ti) if ti is not None else None,
            ))
        return TrialTable(records, config.categories)
    if format in ("modelvshuman_raw", "modelvshuman"):
        rows = _read_rows(path, RAW_COLUMNS)
        default_type = distortion_type or path.stem.split("_")[0]
        records = []
        for row in rows:
            subj = row["subj"].strip()
            kind = HUMAN if subj.startswith("subject") else MODEL
            family, subfamily = config.family_of(subj)
            dtype, level = split_condition_token(row["condition"], default_type)
            ti = _opt(row["trial"].strip())
            records.append(TrialRecord(
                system_id=subj,
                system_kind=kind,
                family=family,
                subfamily=subfamily,
                distortion_type=dtype,
                distortion_level=level,
                image_id=row["imagename"].strip(),
                true_category=row["category"].strip(),
                response_category=row["object_response"].strip(),
                session_id=_opt(row["session"].strip()),
                trial_index=int(float(ti)) if ti is not None else None,
            ))
        return TrialTable(records, config.categories)
    raise InputError(f"unknown input format {format!r}")


def load_trials(paths: Iterable[str | os.PathLike], format: str = "canonical", *,
                config: StudyConfig | None = None) -> TrialTable:
    """Parse and concatenate many files; directories are searched for ``*.csv``."""
    config = config or StudyConfig()
    files: list[Path] = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.rglob("*.csv")))
        else:
            files.append(p)
    if not files:
        raise InputError("no input files")
    records: list[TrialRecord] = []
    for f in files:
        records.extend(parse_trials(f, format, config=config).records)
    return TrialTable(records, config.categories)


def write_trials(table: TrialTable, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CANONICAL_COLUMNS)
        for r in table:
            writer.writerow([
                r.system_id, r.system_kind, r.family or "", r.subfamily or "",
                r.distortion_type, r.distortion_level, r.image_id,
                r.true_category, r.response_category, r.session_id or "",
                "" if r.trial_index is None else r.trial_index,
            ])


# ---------------------------------------------------------------------------
# response sets


@dataclass(frozen=True, eq=False)
class ResponseSet:
    """All trials of one system under one condition, sorted by image id."""

    system_id: str
    condition: Condition
    image_ids: tuple[str, ...]
    truths: tuple[str, ...]
    responses: tuple[str, ...]
    categories: tuple[str, ...] = DEFAULT_CATEGORIES
    system_kind: str = HUMAN
    family: str | None = None
    subfamily: str | None = None

    def __post_init__(self):
        if not (len(self.image_ids) == len(self.truths) == len(self.responses)):
            raise ValueError("image_ids, truths and responses must have equal length")
        if not self.image_ids:
            raise ValueError("a response set needs at least one trial")
        index = {c: i for i, c in enumerate(self.categories)}
        try:
            t = np.array([index[x] for x in self.truths], dtype=np.intp)
            y = np.array([index[x] for x in self.responses], dtype=np.intp)
        except KeyError as exc:
            raise UnknownCategory(f"label {exc.args[0]!r} is not in the category set") from None
        t.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "truth_idx", t)
        object.__setattr__(self, "pred_idx", y)

    @classmethod
    def from_pairs(cls, system_id: str, condition: Condition, pairs: Iterable[tuple[str, str, str]],
                   categories: Sequence[str] = DEFAULT_CATEGORIES, **meta) -> "ResponseSet":
        pairs = sorted(pairs)
        return cls(system_id, condition,
                   tuple(p[0] for p in pairs), tuple(p[1] for p in pairs), tuple(p[2] for p in pairs),
                   tuple(categories), **meta)

    @property
    def n(self) -> int:
        return len(self.image_ids)

    @property
    def pairs(self) -> list[tuple[str, str, str]]:
        return list(zip(self.image_ids, self.truths, self.responses))

    @property
    def n_correct(self) -> int:
        return int(np.count_nonzero(self.truth_idx == self.pred_idx))

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n

    def stimuli(self) -> tuple[tuple[str, str], ...]:
        return tuple(zip(self.image_ids, self.truths))

    def comparable_with(self, other: "ResponseSet") -> bool:
        # pairs are kept sorted, so equal multisets give equal sequences
        return (self.categories == other.categories
                and self.image_ids == other.image_ids
                and self.truths == other.truths)

    def check_comparable(self, other: "ResponseSet") -> None:
        if not self.comparable_with(other):
            raise NonComparable(
                f"{self.system_id} and {other.system_id} saw different stimuli in {self.condition}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ResponseSet):
            return NotImplemented
        return (self.system_id, self.condition, self.pairs, self.categories) == \
               (other.system_id, other.condition, other.pairs, other.categories)

    def __repr__(self) -> str:
        return f"ResponseSet({self.system_id!r}, {self.condition.condition_id!r}, n={self.n}, acc={self.accuracy:.3f})"


def build_response_sets(table: TrialTable) -> dict[tuple[str, str], ResponseSet]:
    """Group trials by (system, condition); sessions of one system are pooled."""
    groups: dict[tuple[str, Condition], list[TrialRecord]] = defaultdict(list)
    for rec in table:
        groups[(rec.system_id, rec.condition)].append(rec)
    out = {}
    for (system_id, cond) in sorted(groups):
        recs = groups[(system_id, cond)]
        first = recs[0]
        out[(system_id, cond.condition_id)] = ResponseSet.from_pairs(
            system_id, cond,
            [(r.image_id, r.true_category, r.response_category) for r in recs],
            table.categories,
            system_kind=first.system_kind, family=first.family, subfamily=first.subfamily,
        )
    return out


def sets_by_condition(sets: Mapping[tuple[str, str], ResponseSet]) -> dict[str, list[ResponseSet]]:
    out: dict[str, list[ResponseSet]] = defaultdict(list)
    for (_, cid), rs in sorted(sets.items()):
        out[cid].append(rs)
    return dict(out)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "warning" | "info"
    code: str
    message: str
    condition_id: str | None = None


@dataclass
class ValidationReport:
    findings: list[Finding]
    systems_per_condition: dict[str, list[str]]
    trial_counts: dict[str, int]
    reference_coverage: dict[str, str | None]

    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def ok(self) -> bool:
        return not self.errors()

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "findings": [f.__dict__ for f in self.findings],
            "systems_per_condition": self.systems_per_condition,
            "trial_counts": self.trial_counts,
            "reference_coverage": self.reference_coverage,
        }


def validate(table: TrialTable, config: StudyConfig | None = None) -> ValidationReport:
    """Report coverage and consistency problems without raising."""
    config = config or StudyConfig(categories=table.categories)
    findings: list[Finding] = []
    sets = build_response_sets(table)
    by_cond = sets_by_condition(sets)

    systems = {cid: [rs.system_id for rs in group] for cid, group in by_cond.items()}
    counts = Counter()
    for rec in table:
        counts[rec.condition.condition_id] += 1

    for cid, group in by_cond.items():
        humans = [rs for rs in group if rs.system_kind == HUMAN]
        if not humans:
            findings.append(Finding("warning", "no_human_data", f"no human responses in {cid}", cid))
        anchor = group[0]
        odd = [rs.system_id for rs in group[1:] if not rs.comparable_with(anchor)]
        if odd:
            findings.append(Finding(
                "warning", "non_comparable_stimulus_sets",
                f"non-comparable stimulus sets in {cid}: {', '.join(odd)} differ from {anchor.system_id}",
                cid))

    coverage: dict[str, str | None] = {}
    present = {c.distortion_type: set() for c in table.conditions()}
    for c in table.conditions():
        present[c.distortion_type].add(c.distortion_level)
    for dtype in sorted(present):
        if dtype not in config.references:
            coverage[dtype] = None
            findings.append(Finding(
                "error", "missing_reference_condition",
                f"missing reference condition: distortion type {dtype!r} has no declared reference",
            ))
            continue
        level = config.references[dtype]
        if level is None:
            coverage[dtype] = "pooled"
            findings.append(Finding("info", "pooled_baseline",
                                    f"{dtype} is scored against the pooled baseline only"))
        elif level not in present[dtype]:
            coverage[dtype] = None
            findings.append(Finding(
                "error", "missing_reference_condition",
                f"missing reference condition: declared level {dtype}_{level} has no trials",
            ))
        else:
            coverage[dtype] = f"{dtype}_{level}"
    if present and not any(v not in (None, "pooled") for v in coverage.values()):
        findings.append(Finding("error", "missing_reference_condition",
                                "missing reference condition: no reference level present in the data"))
    return ValidationReport(findings, systems, dict(sorted(counts.items())), coverage)
