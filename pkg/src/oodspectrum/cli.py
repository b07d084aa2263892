"""Command-line entry point: ``oodspectrum <command> [options]``.

Commands share an output directory. ``simulate`` writes ``trials.csv`` and
``study.yaml`` there, and later commands fall back to those files when no
input or study config is given. ``rank`` and ``permtest`` read the products
of ``spectrum`` and ``align`` from the same directory.

Exit codes: 0 success, 1 internal error, 2 invalid input or configuration.
Failures print ``{"error": {...}}`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import sys
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__
from .analysis import (
    HUMAN_HUMAN,
    HUMAN_MODEL,
    MODEL_MODEL,
    AlignmentRecord,
    DistanceMatrix,
    alignment_ratios,
    alignment_vectors,
    cled_group_separability,
    condition_cled_matrix,
    family_permutation_test,
    human_baseline,
    pairwise_alignment,
    radar_rows,
    rank_models,
    select_representatives,
    superfamily_rank_test,
)
from .errors import DomainError, FamilyTooSmall, InputError, MissingReference, NoWithinPairs, OODSpectrumError
from .ingest import (
    HUMAN,
    Condition,
    StudyConfig,
    TrialTable,
    benchmark_config,
    build_response_sets,
    load_trials,
    sets_by_condition,
    validate,
    write_trials,
)
from .report import OutputDir, csv_text, dumps, ranking_svg, spectrum_svg
from .spectrum import RegimeAssignment, build_spectrum, human_accuracies
from .stats import OODScore, bh_adjust, binomial_above_chance, empirical_logit, mann_whitney_u, normality_tests
from .synth import pipeline_scenario, scenario_from_mapping, simulate_observers

log = logging.getLogger("oodspectrum")

COMMANDS = ("validate", "simulate", "spectrum", "align", "rank", "permtest", "stats")
FORMATS = ("canonical", "modelvshuman")


@dataclass
class RunConfig:
    inputs: list[str] = field(default_factory=list)
    format: str = "canonical"
    study: dict | None = None
    seed: int = 0
    n_perm: int = 2000
    alpha: float = 0.5
    k_range: tuple[int, int] = (1, 6)
    restarts: int = 10
    significance: float = 0.01
    out: str = "results"
    scenario: dict | None = None

    def __post_init__(self):
        if self.format not in FORMATS:
            raise InputError(f"format must be one of {FORMATS}, got {self.format!r}")
        if self.seed < 0:
            raise InputError("seed must be non-negative")
        if self.n_perm < 1:
            raise InputError("n_perm must be positive")
        if not self.alpha > 0:
            raise InputError("alpha prior must be positive")
        lo, hi = self.k_range
        if not 1 <= lo <= hi:
            raise InputError(f"invalid k range {lo}..{hi}")
        for p in self.inputs:
            if not Path(p).exists():
                raise InputError(f"input path does not exist: {p}")

    def hashable(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "out"}
        d["k_range"] = list(self.k_range)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(dumps(self.hashable()).encode()).hexdigest()


def parse_k_range(text) -> tuple[int, int]:
    if isinstance(text, (list, tuple)):
        lo, hi = text
        return int(lo), int(hi)
    s = str(text)
    try:
        if ".." in s:
            lo, hi = s.split("..", 1)
            return int(lo), int(hi)
        return 1, int(s)
    except ValueError as exc:
        raise InputError(f"k range must look like '1..6', got {s!r}") from exc


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"config file does not exist: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise InputError(f"config file is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise InputError("config file must hold a mapping")
        base = path.parent
        data["inputs"] = [str(p if Path(p).is_absolute() else base / p) for p in data.get("inputs") or []]
    known = set(RunConfig.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    for name in ("seed", "n_perm", "format", "out", "restarts", "alpha"):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if args.input:
        data["inputs"] = list(args.input)
    if args.k_range is not None:
        data["k_range"] = args.k_range
    if "k_range" in data:
        data["k_range"] = parse_k_range(data["k_range"])
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise InputError(f"invalid config: {exc}") from exc


# ---------------------------------------------------------------------------
# shared loading


def study_config(cfg: RunConfig) -> StudyConfig:
    base = benchmark_config() if cfg.format == "modelvshuman" else StudyConfig()
    if cfg.study is not None:
        # keys left out of the run config keep the defaults of the input format
        return StudyConfig.from_mapping({"categories": base.categories, "references": base.references,
                                         "taxonomy": base.taxonomy, **cfg.study})
    local = Path(cfg.out) / "study.yaml"
    if local.exists():
        data = yaml.safe_load(local.read_text()) or {}
        return StudyConfig.from_mapping(data.get("study", data))
    return base


def load_table(cfg: RunConfig, study: StudyConfig) -> TrialTable:
    inputs = cfg.inputs
    if not inputs:
        local = Path(cfg.out) / "trials.csv"
        if not local.exists():
            raise InputError("no input files given and no trials.csv in the output directory")
        inputs = [str(local)]
    return load_trials(inputs, cfg.format, config=study)


def require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise InputError(f"{path.name} not found in {path.parent}; run '{producer}' first")
    return path


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text())


def _condition(cid: str, conditions: dict) -> Condition:
    c = conditions[cid]
    return Condition(c["distortion_type"], c["distortion_level"])


def load_spectrum_report(path: Path) -> tuple[RegimeAssignment, list[OODScore], dict]:
    rep = _read_json(path)
    conds = {c["condition_id"]: c for c in rep["conditions"]}
    assignment = RegimeAssignment(
        tuple(rep["regimes"]),
        {cid: c["regime"] for cid, c in conds.items()},
        {cid: c["posterior"] for cid, c in conds.items()},
        tuple(rep["boundaries"]),
        tuple(rep["fit"]["means"]),
    )
    ref = rep["reference"]
    scores = [OODScore(_condition(cid, conds), c["delta"], c["mean_logit"], ref["mean_logit"], ref["sd_logit"])
              for cid, c in sorted(conds.items())]
    return assignment, scores, rep


def load_cells(out: Path) -> tuple[list[AlignmentRecord], dict]:
    meta = _read_json(require(out / "alignment.json", "align"))
    systems = meta["systems"]
    cells: dict[tuple[str, str, str], dict] = defaultdict(dict)
    with open(require(out / "cells.csv", "align"), newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["condition_id"], row["system_a"], row["system_b"])
            cells[key][row["metric"]] = (float(row["value"]) if row["defined"] == "true" else None,
                                         int(row["n_basis"]))
    records = []
    for (cid, a, b), m in sorted(cells.items()):
        humans = (systems[a]["kind"] == HUMAN) + (systems[b]["kind"] == HUMAN)
        kind = {2: HUMAN_HUMAN, 1: HUMAN_MODEL, 0: MODEL_MODEL}[humans]
        ec, n = m.get("ec", (None, 0))
        ma, n_err = m.get("ma", (None, 0))
        cl, n_tot = m.get("cled", (None, 0))
        records.append(AlignmentRecord(cid, a, b, kind, ec, ma, cl, n, n_err, n_tot))
    return records, meta


def _matrix_rows(dm: DistanceMatrix):
    for i, lab in enumerate(dm.labels):
        yield [lab] + [None if np.isnan(v) else float(v) for v in dm.values[i]]


def load_matrix(path: Path) -> DistanceMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    labels = tuple(rows[0][1:])
    values = np.array([[float(v) if v != "" else np.nan for v in r[1:]] for r in rows[1:]])
    return DistanceMatrix(labels, values)


# ---------------------------------------------------------------------------
# commands; each returns the files it produced (name -> text) via OutputDir


def cmd_validate(cfg: RunConfig, out: OutputDir) -> None:
    study = study_config(cfg)
    table = load_table(cfg, study)
    rep = validate(table, study)
    out.json("validation.json", rep.to_dict(), "validation")
    errors = rep.errors()
    if errors:
        out.commit()
        first = errors[0]
        raise (MissingReference if first.code == "missing_reference_condition" else InputError)(first.message)


def cmd_simulate(cfg: RunConfig, out: OutputDir) -> None:
    spec = scenario_from_mapping(cfg.scenario) if cfg.scenario else pipeline_scenario()
    table = simulate_observers(spec, cfg.seed)
    tmp = Path(out.path)
    tmp.mkdir(parents=True, exist_ok=True)
    write_trials(table, tmp / "trials.csv")
    out.files["trials.csv"] = (tmp / "trials.csv").read_text()
    taxonomy = {o.system_id: {"family": o.family, "subfamily": o.subfamily}
                for o in spec.observers if o.family or o.subfamily}
    study = {"categories": list(spec.categories), "references": dict(spec.references), "taxonomy": taxonomy}
    out.text("study.yaml", yaml.safe_dump({"study": study}, sort_keys=True))


def _checked_sets(cfg: RunConfig):
    study = study_config(cfg)
    table = load_table(cfg, study)
    rep = validate(table, study)
    errs = rep.errors()
    if errs:
        raise (MissingReference if errs[0].code == "missing_reference_condition" else InputError)(errs[0].message)
    return study, table, build_response_sets(table)


def cmd_spectrum(cfg: RunConfig, out: OutputDir) -> None:
    study, _, sets = _checked_sets(cfg)
    lo, hi = cfg.k_range
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sp = build_spectrum(sets.values(), study, range(lo, hi + 1), seed=cfg.seed, restarts=cfg.restarts)
    report = sp.to_dict()
    report["k_range"] = [lo, hi]
    report["warnings"] = sorted({str(w.message) for w in caught})
    out.json("spectrum.json", report, "spectrum")
    out.csv("criteria.csv", ["k", "n_params", "log_likelihood", "bic", "aicc"],
            ([c["k"], c["n_params"], c["log_likelihood"], c["bic"], c["aicc"]] for c in report["criteria"]),
            "criteria")
    out.text("spectrum.svg", spectrum_svg(report["conditions"], report["regimes"], report["boundaries"]))


def cmd_align(cfg: RunConfig, out: OutputDir) -> None:
    study, table, sets = _checked_sets(cfg)
    by_cond = sets_by_condition(sets)
    records, undefined, skipped = [], [], []
    for cid in sorted(by_cond):
        pa = pairwise_alignment(by_cond[cid], cfg.alpha)
        records.extend(pa.records)
        undefined.extend(pa.undefined)
        skipped.extend({"condition_id": cid, "system_a": a, "system_b": b} for a, b in pa.non_comparable)
    rows = []
    for r in sorted(records + undefined, key=lambda r: (r.condition_id, r.system_a, r.system_b)):
        for metric, value, n in (("ec", r.ec, r.n), ("ma", r.ma, r.n_err), ("cled", r.cled, r.n_errors_total)):
            rows.append([r.condition_id, r.system_a, r.system_b, metric, value, value is not None, n])
    out.csv("cells.csv", ["condition_id", "system_a", "system_b", "metric", "value", "defined", "n_basis"],
            rows, "cells")
    systems = {}
    for rs in sets.values():
        fam, sub = study.family_of(rs.system_id)
        systems[rs.system_id] = {"kind": rs.system_kind, "family": fam or rs.family,
                                 "subfamily": sub or rs.subfamily}
    baseline = {m: human_baseline(records, m) for m in ("combined", "ec", "ma")}
    meta = {
        "systems": dict(sorted(systems.items())),
        "human_baseline": baseline,
        "counts": {"records": len(records), "undefined": len(undefined), "non_comparable": len(skipped)},
        "non_comparable": skipped,
        "alpha": cfg.alpha,
    }
    out.json("alignment.json", meta, "alignment")
    cm = condition_cled_matrix(sets.values(), cfg.alpha)
    out.csv("cled_matrix.csv", ["condition_id", *cm.labels], _matrix_rows(cm), None)


def _model_info(meta: dict) -> dict[str, dict]:
    return {sid: info for sid, info in meta["systems"].items() if info["kind"] != HUMAN}


def cmd_rank(cfg: RunConfig, out: OutputDir) -> None:
    path = Path(cfg.out)
    records, meta = load_cells(path)
    assignment, scores, _ = load_spectrum_report(require(path / "spectrum.json", "spectrum"))
    models = _model_info(meta)
    if not models:
        raise InputError("no model systems in the alignment cells")
    reps = select_representatives(assignment, scores)
    conds = sorted({r.condition_id for r in records})
    families = {m: info.get("family") or "" for m, info in models.items()}
    rankings, missing, failed = {}, [], {}
    table_rows = []
    for metric in ("combined", "ec", "ma"):
        ratios, fails = alignment_ratios(records, models, conds, metric)
        failed[metric] = [{"model_id": m, "condition_id": c, "reason": why} for m, c, why in fails]
        ranked = rank_models(ratios, assignment, reps.chosen, models=models, strict=False)
        rankings[metric] = {}
        for regime, rk in ranked.items():
            rankings[metric][regime] = [e.__dict__ for e in rk.entries]
            missing.extend({"metric": metric, "regime": regime, "model_id": m} for m in rk.missing)
            for e in rk.entries:
                info = models[e.model_id]
                table_rows.append([metric, regime, e.rank, e.model_id, info.get("family") or "",
                                   info.get("subfamily") or "", e.mean_rho, e.sd_rho, e.n_conditions, e.tied])
    tests = []
    for regime, entries in rankings["combined"].items():
        by_fam: dict[str, list[float]] = defaultdict(list)
        for e in entries:
            if families.get(e["model_id"]):
                by_fam[families[e["model_id"]]].append(e["mean_rho"])
        try:
            for comp in superfamily_rank_test(by_fam, regime, cfg.significance):
                tests.append({"regime": regime, "higher": comp.higher, "lower": comp.lower,
                              "relation": comp.relation, "p_value": comp.test.p_value,
                              "u": comp.test.statistic, "median_higher": comp.median_higher,
                              "median_lower": comp.median_lower})
        except FamilyTooSmall as exc:
            tests.append({"regime": regime, "skipped": exc.code, "message": str(exc)})
    report = {
        "metric": "combined",
        "rankings": rankings["combined"],
        "rankings_by_metric": {m: rankings[m] for m in ("ec", "ma")},
        "representatives": [{"distortion_type": dt, "regime": reg, "condition_id": cid}
                            for (dt, reg), cid in sorted(reps.chosen.items())],
        "representative_ties": [{"distortion_type": dt, "regime": reg, "candidates": list(c)}
                                for dt, reg, c in reps.ties],
        "absent_cells": [{"distortion_type": dt, "regime": reg} for dt, reg in reps.absent],
        "family_tests": tests,
        "missing": missing,
        "failed_ratios": failed,
    }
    out.json("ranking.json", report, "ranking")
    out.csv("ranking.csv", ["metric", "regime", "rank", "model_id", "family", "subfamily", "mean_rho", "sd_rho",
                            "n_conditions", "tied"], table_rows, "ranking")
    out.text("ranking.svg", ranking_svg(rankings["combined"], families))
    radar = radar_rows(records, reps, families)
    out.csv("radar.csv", ["regime", "distortion_type", "condition_id", "group", "metric", "mean", "sd", "n"],
            ([r["regime"], r["distortion_type"], r["condition_id"], r["group"], r["metric"], r["mean"], r["sd"],
              r["n"]] for r in radar), "radar")


def _perm_summary(res) -> dict:
    return {"observed": res.observed, "null_mean": res.null_mean, "null_sd": res.null_sd,
            "p_value": res.p_value, "effect_size": res.effect_size, "n_permutations": res.n_permutations,
            "seed": res.seed, "n_within": res.n_within, "n_across": res.n_across,
            "alternative": res.alternative}


def cmd_permtest(cfg: RunConfig, out: OutputDir) -> None:
    path = Path(cfg.out)
    records, meta = load_cells(path)
    assignment, scores, _ = load_spectrum_report(require(path / "spectrum.json", "spectrum"))
    models = _model_info(meta)
    reps = select_representatives(assignment, scores)
    family_tests = []
    for regime in assignment.regimes:
        roster = sorted(reps.for_regime(regime).values())
        if not roster or not models:
            continue
        vecs = alignment_vectors(records, sorted(models), roster)
        dm = vecs.distances()
        out.csv(f"distances_{regime}.csv", ["model_id", *dm.labels], _matrix_rows(dm), None)
        header = ["model_id"] + [f"{c}:{m}" for c, m in vecs.columns]
        out.text(f"vectors_{regime}.csv", csv_text(header, ([lab, *row] for lab, row in
                                                               zip(vecs.labels, vecs.matrix.tolist()))))
        groupings = [("superfamily", None, {m: i["family"] for m, i in models.items() if i.get("family")})]
        for fam in sorted({i["family"] for i in models.values() if i.get("family")}):
            sub = {m: i["subfamily"] for m, i in models.items() if i.get("family") == fam and i.get("subfamily")}
            groupings.append(("subfamily", fam, sub))
        for level, within, grouping in groupings:
            entry = {"regime": regime, "level": level, "within": within, "roster": roster,
                     "imputed": vecs.imputed, "n_models": len(grouping)}
            try:
                res = family_permutation_test(dm, grouping, cfg.n_perm, cfg.seed)
                entry.update(_perm_summary(res))
            except NoWithinPairs as exc:
                entry.update({"skipped": exc.code, "message": str(exc)})
            family_tests.append(entry)
    separability = []
    cm = load_matrix(require(path / "cled_matrix.csv", "align"))
    conds = {s.condition.condition_id: s.condition for s in scores}
    by_type = {cid: conds[cid].distortion_type for cid in cm.labels if cid in conds}
    by_regime = {cid: assignment.assignment[cid] for cid in cm.labels if cid in assignment.assignment}
    for name, grouping in (("distortion_type", by_type), ("ood_level", by_regime)):
        entry = {"grouping": name, "n_conditions": len(grouping)}
        try:
            d, res = cled_group_separability(cm, grouping, cfg.n_perm, cfg.seed)
            entry.update({"cohens_d": d, **_perm_summary(res)})
        except (NoWithinPairs, DomainError) as exc:
            entry.update({"skipped": exc.code, "message": str(exc)})
        separability.append(entry)
    out.json("permtest.json", {"n_perm": cfg.n_perm, "seed": cfg.seed, "family_tests": family_tests,
                               "separability": separability}, "permtest")


def cmd_stats(cfg: RunConfig, out: OutputDir) -> None:
    study, table, sets = _checked_sets(cfg)
    accs = human_accuracies(sets.values(), study)
    ref_acc = [c / t for a in accs if a.is_reference for c, t in zip(a.correct, a.totals)]
    ref_n = [t for a in accs if a.is_reference for t in a.totals]
    targets = [a for a in accs if not a.is_reference]
    if not ref_acc:
        raise MissingReference("missing reference condition: no human data in any declared reference level")
    shift = []
    for a in targets:
        res = mann_whitney_u(a.accuracies, ref_acc, "two_sided")
        shift.append({"condition_id": a.condition.condition_id, "n_condition": len(a.accuracies),
                      "n_reference": len(ref_acc), "u": res.statistic, "p_raw": res.p_value})
    chance_p = 1.0 / len(study.categories)
    above = []
    for a in targets:
        res = binomial_above_chance(sum(a.correct), sum(a.totals), chance_p)
        above.append({"condition_id": a.condition.condition_id, "k": sum(a.correct), "n": sum(a.totals),
                      "chance": chance_p, "p_raw": res.p_value, "log_p": res.details["log_p"]})
    for rows in (shift, above):
        if rows:
            adj = bh_adjust([r["p_raw"] for r in rows])
            for r, p in zip(rows, adj):
                r["p_adjusted"] = float(p)
                r["reject"] = bool(p < cfg.significance)
    normality = []
    samples = (("accuracy", np.array(ref_acc)), ("logit", empirical_logit(np.array(ref_acc), np.array(ref_n))))
    for name, x in samples:
        try:
            for res in normality_tests(x, seed=cfg.seed):
                normality.append({"sample": name, "test": res.method, "statistic": res.statistic,
                                  "p_value": res.p_value})
        except DomainError as exc:
            normality.append({"sample": name, "skipped": exc.code, "message": str(exc)})
    report = {
        "alpha": cfg.significance,
        "n_reference_values": len(ref_acc),
        "distribution_shift": shift,
        "above_chance": above,
        "normality": normality,
        "counts": {
            "conditions": len(targets),
            "shift_not_significant": sum(not r["reject"] for r in shift),
            "above_chance": sum(r["reject"] for r in above),
        },
    }
    out.json("stats.json", report, "stats")
    out.csv("distribution_shift.csv", ["condition_id", "n_condition", "n_reference", "u", "p_raw", "p_adjusted",
                                       "reject"],
            ([r["condition_id"], r["n_condition"], r["n_reference"], r["u"], r["p_raw"], r["p_adjusted"],
              r["reject"]] for r in shift), "distribution_shift")
    out.csv("above_chance.csv", ["condition_id", "k", "n", "chance", "p_raw", "p_adjusted", "reject"],
            ([r["condition_id"], r["k"], r["n"], r["chance"], r["p_raw"], r["p_adjusted"], r["reject"]]
             for r in above), "above_chance")
    out.csv("normality.csv", ["sample", "test", "statistic", "p_value"],
            ([r["sample"], r["test"], r["statistic"], r["p_value"]] for r in normality if "test" in r),
            "normality")


COMMAND_HELP = {
    "validate": "check trial files and write validation.json",
    "simulate": "write a seeded synthetic study (trials.csv, study.yaml)",
    "spectrum": "score conditions and fit the OOD regime mixture",
    "align": "pairwise EC, MA and CLED for every condition",
    "rank": "alignment ratios, per-regime ranking and family rank tests",
    "permtest": "family clustering and CLED separability permutation tests",
    "stats": "distribution-shift, above-chance and normality tests",
}

HANDLERS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "spectrum": cmd_spectrum,
    "align": cmd_align,
    "rank": cmd_rank,
    "permtest": cmd_permtest,
    "stats": cmd_stats,
}


def write_manifest(cfg: RunConfig, command: str, hashes: dict[str, str]) -> None:
    path = Path(cfg.out) / "manifest.json"
    manifest = {"commands": {}}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError:
            pass
    manifest.setdefault("commands", {})[command] = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "n_perm": cfg.n_perm,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "outputs": hashes,
    }
    out = OutputDir(cfg.out)
    out.json("manifest.json", manifest, "manifest")
    out.commit()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oodspectrum", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMAND_HELP[name])
        p.add_argument("--config", help="run configuration (YAML)")
        p.add_argument("--seed", type=int)
        p.add_argument("--n-perm", dest="n_perm", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=FORMATS)
        p.add_argument("--input", action="append", help="trial file or directory (repeatable)")
        p.add_argument("--k-range", dest="k_range", help="component counts to scan, e.g. 1..6")
        p.add_argument("--restarts", type=int)
        p.add_argument("--alpha", type=float, help="Dirichlet prior for CLED")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(code: str, message: str, kind: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": {"code": code, "message": message, "type": kind}}, sort_keys=True) + "\n")
    return status


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        out = OutputDir(cfg.out)
        HANDLERS[args.command](cfg, out)
        hashes = out.commit()
        write_manifest(cfg, args.command, hashes)
    except (InputError, DomainError) as exc:
        return _fail(exc.code, str(exc), type(exc).__name__, 2)
    except OODSpectrumError as exc:
        return _fail(exc.code, str(exc), type(exc).__name__, 1)
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        log.debug("internal error", exc_info=True)
        return _fail("internal_error", f"{type(exc).__name__}: {exc}", type(exc).__name__, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
