"""Deterministic writers for JSON/CSV/SVG reports and their schemas."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import jsonschema

from .errors import OODSpectrumError


class SchemaViolation(OODSpectrumError):
    code = "schema_violation"


def clean(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, Mapping):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if hasattr(obj, "tolist"):
        return clean(obj.tolist())
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ""
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# schemas

_NUM = {"type": ["number", "null"]}
_STR = {"type": "string"}

JSON_SCHEMAS: dict[str, dict] = {
    "validation": {
        "type": "object",
        "required": ["ok", "findings", "systems_per_condition", "trial_counts", "reference_coverage"],
        "properties": {
            "ok": {"type": "boolean"},
            "findings": {"type": "array", "items": {
                "type": "object", "required": ["severity", "code", "message"],
                "properties": {"severity": {"enum": ["error", "warning", "info"]}}}},
        },
    },
    "spectrum": {
        "type": "object",
        "required": ["conditions", "fit", "regimes", "boundaries", "criteria", "best_bic_k", "best_aicc_k",
                     "method", "reference"],
        "properties": {
            "conditions": {"type": "array", "items": {
                "type": "object",
                "required": ["condition_id", "distortion_type", "distortion_level", "delta", "regime", "posterior"],
                "properties": {"delta": {"type": "number"}, "regime": _STR,
                               "posterior": {"type": "array", "items": {"type": "number"}}}}},
            "regimes": {"type": "array", "items": _STR, "minItems": 1},
            "best_bic_k": {"type": "integer", "minimum": 1},
            "best_aicc_k": {"type": ["integer", "null"]},
            "criteria": {"type": "array", "items": {
                "type": "object", "required": ["k", "log_likelihood", "bic", "aicc"]}},
        },
    },
    "alignment": {
        "type": "object",
        "required": ["systems", "human_baseline", "counts", "non_comparable"],
        "properties": {
            "systems": {"type": "object", "additionalProperties": {
                "type": "object", "required": ["kind"],
                "properties": {"kind": {"enum": ["human", "model"]}}}},
            "counts": {"type": "object", "required": ["records", "undefined", "non_comparable"]},
        },
    },
    "ranking": {
        "type": "object",
        "required": ["metric", "rankings", "representatives", "family_tests", "missing"],
        "properties": {
            "rankings": {"type": "object", "additionalProperties": {"type": "array", "items": {
                "type": "object", "required": ["model_id", "rank", "mean_rho", "sd_rho", "n_conditions", "tied"],
                "properties": {"rank": {"type": "integer", "minimum": 1}, "mean_rho": {"type": "number"},
                               "tied": {"type": "boolean"}}}}},
        },
    },
    "permtest": {
        "type": "object",
        "required": ["n_perm", "seed", "family_tests", "separability"],
        "properties": {
            "n_perm": {"type": "integer", "minimum": 1},
            "family_tests": {"type": "array", "items": {"type": "object", "required": ["regime", "level"]}},
            "separability": {"type": "array", "items": {"type": "object", "required": ["grouping"]}},
        },
    },
    "stats": {
        "type": "object",
        "required": ["alpha", "distribution_shift", "above_chance", "normality"],
        "properties": {
            "distribution_shift": {"type": "array", "items": {
                "type": "object", "required": ["condition_id", "p_raw", "p_adjusted", "reject"],
                "properties": {"p_raw": {"type": "number", "minimum": 0, "maximum": 1},
                               "p_adjusted": {"type": "number", "minimum": 0, "maximum": 1},
                               "reject": {"type": "boolean"}}}},
            "above_chance": {"type": "array", "items": {
                "type": "object", "required": ["condition_id", "k", "n", "p_raw", "p_adjusted", "reject"]}},
        },
    },
    "manifest": {
        "type": "object",
        "required": ["commands"],
        "properties": {"commands": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["config_hash", "seed", "timestamp", "outputs", "version"]}}},
    },
}

# CSV schemas: column name -> kind ("str", "num", "opt_num", "int", "bool")
CSV_SCHEMAS: dict[str, dict[str, str]] = {
    "trials": {c: "str" for c in (
        "system_id", "system_kind", "family", "subfamily", "distortion_type", "distortion_level",
        "image_id", "true_category", "response_category", "session_id", "trial_index")},
    "cells": {"condition_id": "str", "system_a": "str", "system_b": "str", "metric": "str",
              "value": "opt_num", "defined": "bool", "n_basis": "int"},
    "criteria": {"k": "int", "n_params": "int", "log_likelihood": "num", "bic": "num", "aicc": "opt_num"},
    "ranking": {"metric": "str", "regime": "str", "rank": "int", "model_id": "str", "family": "str",
                "subfamily": "str", "mean_rho": "num", "sd_rho": "num", "n_conditions": "int", "tied": "bool"},
    "radar": {"regime": "str", "distortion_type": "str", "condition_id": "str", "group": "str", "metric": "str",
              "mean": "opt_num", "sd": "opt_num", "n": "int"},
    "distribution_shift": {"condition_id": "str", "n_condition": "int", "n_reference": "int", "u": "num",
                           "p_raw": "num", "p_adjusted": "num", "reject": "bool"},
    "above_chance": {"condition_id": "str", "k": "int", "n": "int", "chance": "num", "p_raw": "num",
                     "p_adjusted": "num", "reject": "bool"},
    "normality": {"sample": "str", "test": "str", "statistic": "num", "p_value": "num"},
}


def _check_cell(kind: str, value: str) -> bool:
    if kind == "str":
        return True
    if kind == "bool":
        return value in ("true", "false")
    if kind == "int":
        return value.lstrip("-").isdigit()
    if value == "":
        return kind == "opt_num"
    try:
        float(value)
    except ValueError:
        return False
    return True


def validate_csv(text: str, schema: Mapping[str, str] | None, name: str) -> None:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaViolation(f"{name}: empty CSV")
    header = rows[0]
    if schema is None:
        # square matrix: first column holds labels, remaining columns optional numbers
        labels = header[1:]
        if len(rows) - 1 != len(labels):
            raise SchemaViolation(f"{name}: matrix is not square")
        for row in rows[1:]:
            if len(row) != len(header) or not all(_check_cell("opt_num", v) for v in row[1:]):
                raise SchemaViolation(f"{name}: malformed matrix row {row[:1]}")
        return
    if header != list(schema):
        raise SchemaViolation(f"{name}: header {header} does not match {list(schema)}")
    kinds = list(schema.values())
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(kinds) or not all(_check_cell(k, v) for k, v in zip(kinds, row)):
            raise SchemaViolation(f"{name}: line {i} does not match the schema")


class OutputDir:
    """Collects output files, validates them, and writes them at once."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.files: dict[str, str] = {}

    def json(self, name: str, obj, schema: str) -> None:
        text = dumps(obj)
        try:
            jsonschema.validate(json.loads(text), JSON_SCHEMAS[schema])
        except jsonschema.ValidationError as exc:
            raise SchemaViolation(f"{name}: {exc.message}") from exc
        self.files[name] = text

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence], schema: str | None) -> None:
        text = csv_text(header, rows)
        validate_csv(text, CSV_SCHEMAS[schema] if schema else None, name)
        self.files[name] = text

    def text(self, name: str, text: str) -> None:
        if name.endswith(".svg") and not (text.startswith("<svg") and text.rstrip().endswith("</svg>")):
            raise SchemaViolation(f"{name}: not an SVG document")
        self.files[name] = text

    def commit(self) -> dict[str, str]:
        self.path.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (self.path / name).write_text(text)
        return {name: sha256(text) for name, text in sorted(self.files.items())}


# ---------------------------------------------------------------------------
# SVG plots

_PALETTE = ("#4c72b0", "#55a868", "#dd8452", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c")


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def _f(x: float) -> str:
    return f"{x:.2f}"


def spectrum_svg(conditions: Sequence[Mapping], regimes: Sequence[str], boundaries: Sequence[float]) -> str:
    """Strip plot: one row per distortion type, conditions placed along the delta axis, colored by regime."""
    types = sorted({c["distortion_type"] for c in conditions})
    deltas = [c["delta"] for c in conditions]
    lo, hi = min(deltas + [0.0]), max(deltas + [0.0])
    pad = 0.05 * (hi - lo or 1.0)
    lo, hi = lo - pad, hi + pad
    left, right, top, row_h = 160, 30, 40, 26
    width = 800
    height = top + row_h * len(types) + 70
    plot_w = width - left - right

    def x(v):
        return left + (v - lo) / (hi - lo) * plot_w

    colors = {r: _PALETTE[i % len(_PALETTE)] for i, r in enumerate(regimes)}
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<text x="{left}" y="20" font-size="13">OOD score per condition</text>']
    axis_y = top + row_h * len(types)
    for b in boundaries:
        if lo <= b <= hi:
            out.append(f'<line x1="{_f(x(b))}" y1="{top}" x2="{_f(x(b))}" y2="{axis_y}" '
                       f'stroke="#999" stroke-dasharray="4,3"/>')
    for i, t in enumerate(types):
        y = top + row_h * i + row_h / 2
        out.append(f'<text x="{left - 8}" y="{_f(y + 4)}" text-anchor="end">{_esc(t)}</text>')
        out.append(f'<line x1="{left}" y1="{_f(y)}" x2="{width - right}" y2="{_f(y)}" stroke="#eee"/>')
        for c in sorted((c for c in conditions if c["distortion_type"] == t), key=lambda c: c["condition_id"]):
            out.append(f'<circle cx="{_f(x(c["delta"]))}" cy="{_f(y)}" r="5" fill="{colors[c["regime"]]}" '
                       f'fill-opacity="0.85"><title>{_esc(c["condition_id"])}: {c["delta"]:.3f}</title></circle>')
    out.append(f'<line x1="{left}" y1="{axis_y}" x2="{width - right}" y2="{axis_y}" stroke="#000"/>')
    step = _nice_step(hi - lo)
    tick = math.ceil(lo / step) * step
    while tick <= hi:
        out.append(f'<line x1="{_f(x(tick))}" y1="{axis_y}" x2="{_f(x(tick))}" y2="{axis_y + 5}" stroke="#000"/>')
        out.append(f'<text x="{_f(x(tick))}" y="{axis_y + 18}" text-anchor="middle">{tick:g}</text>')
        tick += step
    out.append(f'<text x="{left + plot_w / 2:.2f}" y="{axis_y + 34}" text-anchor="middle">delta</text>')
    lx = left
    for r in regimes:
        out.append(f'<circle cx="{lx}" cy="{axis_y + 52}" r="5" fill="{colors[r]}"/>')
        out.append(f'<text x="{lx + 9}" y="{axis_y + 56}">{_esc(r)}</text>')
        lx += 20 + 7 * len(r)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _nice_step(span: float) -> float:
    raw = span / 8 if span > 0 else 1.0
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 5, 10):
        if raw <= m * mag:
            return m * mag
    return 10 * mag


def ranking_svg(rankings: Mapping[str, Sequence[Mapping]], families: Mapping[str, str]) -> str:
    """Dot plot of mean alignment ratio (with sd bars) per model, one panel per regime."""
    regimes = list(rankings)
    models = sorted({e["model_id"] for entries in rankings.values() for e in entries})
    fams = sorted({families.get(m, "") for m in models})
    colors = {f: _PALETTE[i % len(_PALETTE)] for i, f in enumerate(fams)}
    vals = [v for entries in rankings.values() for e in entries
            for v in (e["mean_rho"] - e["sd_rho"], e["mean_rho"] + e["sd_rho"])]
    lo, hi = min(vals + [0.0]), max(vals + [1.0])
    panel_w, left, top, row_h = 220, 110, 40, 18
    width = left + panel_w * max(1, len(regimes)) + 20
    n_rows = max((len(v) for v in rankings.values()), default=0)
    height = top + row_h * n_rows + 60

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="10">']
    for p, regime in enumerate(regimes):
        x0 = left + p * panel_w
        inner = panel_w - 30

        def x(v, x0=x0, inner=inner):
            return x0 + (v - lo) / (hi - lo) * inner

        out.append(f'<text x="{x0 + inner / 2:.2f}" y="20" text-anchor="middle" font-size="12">{_esc(regime)}</text>')
        out.append(f'<line x1="{_f(x(1.0))}" y1="{top - 8}" x2="{_f(x(1.0))}" y2="{top + row_h * n_rows}" '
                   f'stroke="#999" stroke-dasharray="3,3"/>')
        for i, e in enumerate(rankings[regime]):
            y = top + row_h * i + row_h / 2
            c = colors[families.get(e["model_id"], "")]
            label = f'{e["rank"]}. {e["model_id"]}' + (" *" if e["tied"] else "")
            out.append(f'<text x="{x0 - 4}" y="{_f(y + 3)}" text-anchor="end">{_esc(label)}</text>')
            out.append(f'<line x1="{_f(x(e["mean_rho"] - e["sd_rho"]))}" y1="{_f(y)}" '
                       f'x2="{_f(x(e["mean_rho"] + e["sd_rho"]))}" y2="{_f(y)}" stroke="{c}"/>')
            out.append(f'<circle cx="{_f(x(e["mean_rho"]))}" cy="{_f(y)}" r="4" fill="{c}"/>')
        axis_y = top + row_h * n_rows + 4
        out.append(f'<line x1="{x0}" y1="{axis_y}" x2="{x0 + inner}" y2="{axis_y}" stroke="#000"/>')
        for v in (lo, 1.0, hi):
            out.append(f'<text x="{_f(x(v))}" y="{axis_y + 14}" text-anchor="middle">{v:.2f}</text>')
    lx = left
    for f in fams:
        out.append(f'<circle cx="{lx}" cy="{height - 14}" r="4" fill="{colors[f]}"/>')
        out.append(f'<text x="{lx + 8}" y="{height - 10}">{_esc(f or "unassigned")}</text>')
        lx += 30 + 7 * len(f or "unassigned")
    out.append("</svg>")
    return "\n".join(out) + "\n"
