"""CSV/JSON ingestion and report emission.

Rectangular data travels as CSV, summaries and configs as JSON. Loaders
fail with typed errors naming the offending cell; nothing is imputed or
silently dropped. Emitters build the full output in memory first, so no
partial files are left behind on error.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .basis import BasisSpec, SourceSample, parse_term
from .errors import ValidationError
from .estimators import EstimateReport
from .oracle import AsymptoticReport
from .simulation import GridResult, ScenarioConfig, builtin_grid

__all__ = [
    "ColumnSchema",
    "load_source_csv",
    "write_source_csv",
    "load_target_summary",
    "load_basis_json",
    "load_scenarios_json",
    "write_weights_csv",
    "emit_report",
]


@dataclasses.dataclass(frozen=True)
class ColumnSchema:
    """Column roles for a source CSV."""

    treatment: str
    outcome: str
    covariates: tuple[str, ...]
    categorical: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "categorical", tuple(self.categorical))
        bad = [c for c in self.categorical if c not in self.covariates]
        if bad:
            raise ValidationError(f"categorical columns {bad} not among covariates")


def _parse_float(text: str, line: int, column: str) -> float:
    text = text.strip()
    if not text:
        raise ValidationError(
            f"empty cell at line {line}, column {column!r}", code="NON_FINITE_CELL"
        )
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(
            f"non-numeric value {text!r} at line {line}, column {column!r}",
            code="NON_FINITE_CELL",
        ) from None
    if not math.isfinite(value):
        raise ValidationError(
            f"non-finite value {text!r} at line {line}, column {column!r}",
            code="NON_FINITE_CELL",
        )
    return value


def load_source_csv(path, schema: ColumnSchema):
    """Read a source sample; returns (SourceSample, metadata).

    Metadata records the covariate column order and, for categorical
    columns, the label-to-code mapping used to build the numeric matrix.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    needed = (schema.treatment, schema.outcome, *schema.covariates)
    missing = [c for c in needed if c not in header]
    if missing:
        raise ValidationError(
            f"{path}: missing column(s) {missing}; header has {header}",
            code="MISSING_COLUMN",
        )
    idx = {c: header.index(c) for c in needed}
    raw_cov: dict[str, list] = {c: [] for c in schema.covariates}
    treatment: list[int] = []
    outcome: list[float] = []
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ValidationError(
                f"line {line} has {len(row)} cells, header has {len(header)}"
            )
        a = _parse_float(row[idx[schema.treatment]], line, schema.treatment)
        if a not in (0.0, 1.0):
            raise ValidationError(
                f"non-binary treatment value {a:g} at line {line}, "
                f"column {schema.treatment!r}",
                code="NON_BINARY_TREATMENT",
            )
        treatment.append(int(a))
        outcome.append(_parse_float(row[idx[schema.outcome]], line, schema.outcome))
        for c in schema.covariates:
            cell = row[idx[c]]
            if c in schema.categorical:
                label = cell.strip()
                if not label:
                    raise ValidationError(
                        f"empty cell at line {line}, column {c!r}", code="NON_FINITE_CELL"
                    )
                raw_cov[c].append(label)
            else:
                raw_cov[c].append(_parse_float(cell, line, c))
    if not treatment:
        raise ValidationError(f"{path}: no data rows")
    codes = {}
    columns = []
    for c in schema.covariates:
        if c in schema.categorical:
            labels = sorted(set(raw_cov[c]))
            mapping = {label: float(code) for code, label in enumerate(labels)}
            codes[c] = mapping
            columns.append([mapping[v] for v in raw_cov[c]])
        else:
            columns.append(raw_cov[c])
    X = np.array(columns, dtype=float).T
    sample = SourceSample(X, np.array(treatment), np.array(outcome))
    return sample, {"columns": list(schema.covariates), "category_codes": codes}


def write_source_csv(path, sample: SourceSample, schema: ColumnSchema) -> None:
    """Write a source sample; floats use shortest round-trip repr."""
    if len(schema.covariates) != sample.p:
        raise ValidationError("schema covariate count does not match the sample")
    lines = [",".join((schema.treatment, schema.outcome, *schema.covariates))]
    for i in range(sample.n_s):
        cells = [str(int(sample.A[i])), repr(float(sample.Y[i]))]
        cells += [repr(float(v)) for v in sample.X[i]]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def load_target_summary(path, spec: BasisSpec):
    """Read target H-term means from JSON; returns (raw vector, n_t).

    Keys are matched to the basis term names order-independently; the
    optional ``n_t`` entry carries the target sample size.
    """
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: target summary must be a JSON object")
    data = dict(data)
    n_t = data.pop("n_t", None)
    if n_t is not None:
        n_t = int(n_t)
    valid = spec.h_names
    unknown = sorted(set(data) - set(valid))
    if unknown:
        raise ValidationError(
            f"unknown term(s) {unknown}; valid terms: {list(valid)}",
            code="UNKNOWN_TERM",
        )
    missing = sorted(set(valid) - set(data))
    if missing:
        raise ValidationError(
            f"missing term(s) {missing} in target summary", code="MISSING_TERM"
        )
    values = []
    for name in valid:
        v = data[name]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise ValidationError(
                f"target summary entry {name!r} must be a finite number",
                code="NON_FINITE_CELL",
            )
        values.append(float(v))
    if values[0] != 1.0:
        raise ValidationError(
            "constant entry of the target summary must be exactly 1",
            code="BAD_CONSTANT",
        )
    return np.array(values), n_t


def load_basis_json(path) -> BasisSpec:
    """Read a basis file: {"h": [term names], "g": [term names]}."""
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "h" not in data:
        raise ValidationError(f"{path}: basis file needs an 'h' term list")
    h = data["h"]
    g = data.get("g", [])
    terms = [parse_term(t, "h") for t in h] + [parse_term(t, "g") for t in g]
    return BasisSpec(tuple(terms))


def load_scenarios_json(path) -> list[ScenarioConfig]:
    """Read a scenario file.

    Either {"scenarios": [cell, ...]} with explicit cells (model tags or
    inline models), or {"builtin_grid": {overrides}} to expand the built-in
    12-cell grid.
    """
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: scenario file must be a JSON object")
    if "builtin_grid" in data:
        overrides = data["builtin_grid"] or {}
        allowed = {"n", "replicates", "seed", "noise_sd"}
        bad = sorted(set(overrides) - allowed)
        if bad:
            raise ValidationError(f"builtin_grid overrides {bad} not supported")
        return list(builtin_grid(**overrides))
    if "scenarios" in data:
        cells = data["scenarios"]
        if not isinstance(cells, list) or not cells:
            raise ValidationError(f"{path}: 'scenarios' must be a non-empty list")
        return [ScenarioConfig.from_dict(c) for c in cells]
    raise ValidationError(f"{path}: expected 'scenarios' or 'builtin_grid'")


def write_weights_csv(path, sample: SourceSample, weights) -> None:
    """Emit per-row weights with arm and provenance columns."""
    lines = ["row,treatment,weight,method"]
    for i in range(sample.n_s):
        lines.append(
            f"{i},{int(sample.A[i])},{repr(float(weights.w[i]))},{weights.method.value}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


_EST_COLUMNS = ("method", "tau_hat", "weight_min", "weight_max", "ess_treated", "ess_control")


def _estimates_dict(reports):
    return {
        "schema": "genbal/report/1",
        "kind": "estimates",
        "estimates": [dataclasses.asdict(r) for r in reports],
    }


def _estimates_human(reports):
    rows = [_EST_COLUMNS]
    for r in reports:
        rows.append((
            r.method,
            f"{r.tau_hat:.6f}",
            f"{r.weight_min:.4g}",
            f"{r.weight_max:.4g}",
            f"{r.ess_treated:.1f}",
            f"{r.ess_control:.1f}",
        ))
    return _table(rows)


def _estimates_csv(reports):
    lines = [",".join(_EST_COLUMNS)]
    for r in reports:
        lines.append(",".join([
            r.method,
            repr(r.tau_hat),
            repr(r.weight_min),
            repr(r.weight_max),
            repr(r.ess_treated),
            repr(r.ess_control),
        ]))
    return "\n".join(lines) + "\n"


_GRID_COLUMNS = ("scenario", "method", "bias", "sd", "rmse", "failures")


def _grid_rows(result: GridResult, scale: float):
    rows = []
    for s in result.scenarios:
        for method, agg in s.methods.items():
            rows.append((
                s.name,
                method,
                agg.bias * scale,
                agg.sd * scale,
                agg.rmse * scale,
                agg.failures,
            ))
    return rows


def _grid_human(result, scale):
    rows = [_GRID_COLUMNS]
    for name, method, bias, sd, rmse, failures in _grid_rows(result, scale):
        rows.append((name, method, f"{bias:.4f}", f"{sd:.4f}", f"{rmse:.4f}", str(failures)))
    return _table(rows)


def _grid_csv(result, scale):
    lines = [",".join(_GRID_COLUMNS)]
    for name, method, bias, sd, rmse, failures in _grid_rows(result, scale):
        lines.append(f"{name},{method},{repr(bias)},{repr(sd)},{repr(rmse)},{failures}")
    return "\n".join(lines) + "\n"


def _oracle_human(report: AsymptoticReport):
    d = report.to_dict()
    rows = [("quantity", "value")]
    for key in ("v1", "v2", "v3", "total", "efficiency_bound", "gap", "tau_star", "rho_marginal"):
        rows.append((key, f"{d[key]:.6f}"))
    return _table(rows)


def _table(rows) -> str:
    widths = [max(len(str(r[j])) for r in rows) for j in range(len(rows[0]))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def emit_report(report, fmt: str = "human", path=None, scale_100: bool = False) -> str:
    """Render a report deterministically and optionally write it to a file.

    Accepts a list of EstimateReports, a GridResult, or an
    AsymptoticReport. ``scale_100`` multiplies bias/sd/rmse by 100 in the
    human and CSV grid tables; JSON output always carries raw values.
    """
    if fmt not in ("human", "json", "csv"):
        raise ValidationError(f"unknown format {fmt!r}")
    scale = 100.0 if scale_100 else 1.0
    if isinstance(report, GridResult):
        if fmt == "json":
            text = report.to_json()
        elif fmt == "csv":
            text = _grid_csv(report, scale)
        else:
            text = _grid_human(report, scale)
    elif isinstance(report, AsymptoticReport):
        payload = {"schema": "genbal/report/1", "kind": "oracle", **report.to_dict()}
        if fmt == "json":
            text = json.dumps(payload, sort_keys=True, indent=2)
        elif fmt == "csv":
            keys = ("v1", "v2", "v3", "total", "efficiency_bound", "gap", "tau_star", "rho_marginal")
            text = ",".join(keys) + "\n" + ",".join(repr(payload[k]) for k in keys) + "\n"
        else:
            text = _oracle_human(report)
    else:
        reports = list(report)
        if not reports:
            raise ValidationError("no estimates to report")
        if not all(isinstance(r, EstimateReport) for r in reports):
            raise ValidationError("expected EstimateReport objects")
        if fmt == "json":
            text = json.dumps(_estimates_dict(reports), sort_keys=True, indent=2)
        elif fmt == "csv":
            text = _estimates_csv(reports)
        else:
            text = _estimates_human(reports)
    if path is not None:
        Path(path).write_text(text)
    return text
