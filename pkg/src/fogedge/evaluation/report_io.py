"""Serialization of metric reports: a versioned YAML document and a flat CSV."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import yaml

from ..errors import DataError
from .metrics import METRIC_NAMES, MetricReport

REPORT_SCHEMA_VERSION = 1


def plain(obj):
    """Recursively convert numpy scalars/arrays and tuples into YAML-safe builtins."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def report_document(report: MetricReport, name: str = "") -> dict:
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "name": name}
    doc.update(plain(report.to_dict()))
    return doc


def write_report_yaml(report: MetricReport, path, name: str = "") -> None:
    text = yaml.safe_dump(report_document(report, name), sort_keys=True, default_flow_style=False)
    Path(path).write_text(text, encoding="utf-8")


def read_report_yaml(path) -> MetricReport:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or doc.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise DataError(f"{path}: not a metric report of schema version {REPORT_SCHEMA_VERSION}")
    fields = {k: doc[k] for k in MetricReport.__dataclass_fields__ if k in doc}
    fields["ci95"] = {k: tuple(v) for k, v in fields.get("ci95", {}).items()}
    return MetricReport(**fields)


def write_reports_csv(reports: dict, path) -> None:
    """One row per (model, metric): value and 95% CI bounds, for bar charts."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "metric", "value", "ci_lo", "ci_hi", "n_windows"])
        for name, rep in reports.items():
            for metric in METRIC_NAMES:
                value = rep.metric(metric)
                lo, hi = rep.ci95.get(metric, (None, None))
                w.writerow([name, metric, _fmt(value), _fmt(lo), _fmt(hi), rep.n_windows])


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))
