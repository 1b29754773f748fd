"""Text, CSV and JSON renderings of an audit result.

Tables display two decimals; CSV and JSON carry full float precision
(``repr`` round-trips float64 exactly). Undefined cells render as ``NA``
in text/CSV and ``null`` in JSON.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import WamMatrix
from .inference import REPORT_COLUMNS, BootstrapReport, LinearVarianceReport
from .rates import RateMatrix

FORMATS = ("table", "csv", "json")
ANALYTIC_COLUMNS = ("act", "cf", "nu_hat", "std_error", "ci_lo", "ci_hi",
                    "term_sampling_beta", "term_sampling_A")


@dataclass
class AuditResult:
    wam: WamMatrix
    rates: RateMatrix | None = None
    analytic: list[LinearVarianceReport] | None = None
    bootstrap: BootstrapReport | None = None
    metadata: dict = field(default_factory=dict)
    warnings: dict = field(default_factory=dict)


def _num(x: float) -> float | None:
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def _full(x: float) -> str:
    return "NA" if math.isnan(x) else repr(float(x))


def _short(x: float) -> str:
    return "NA" if math.isnan(x) else f"{x:.2f}"


def _align(rows: list[list[str]], left_cols: int = 1) -> str:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = []
    for r in rows:
        cells = [r[c].ljust(widths[c]) if c < left_cols else r[c].rjust(widths[c])
                 for c in range(len(r))]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def format_matrix(labels, values: np.ndarray) -> str:
    """act x cf grid: header line plus one line per actual group."""
    rows = [[""] + [f"{lab}.cf" for lab in labels]]
    for lab, vals in zip(labels, values):
        rows.append([f"{lab}.act"] + [_short(v) for v in vals])
    return _align(rows)


def _analytic_rows(rep: LinearVarianceReport) -> list:
    return [rep.act, rep.cf, rep.nu_hat, rep.std_error, rep.ci95[0], rep.ci95[1],
            rep.term_sampling_beta, rep.term_sampling_A]


def format_bootstrap(report: BootstrapReport) -> str:
    rows = [list(REPORT_COLUMNS)]
    for r in report.rows:
        rows.append([r.act, r.cf] + [_short(getattr(r, c)) for c in REPORT_COLUMNS[2:]])
    return _align(rows, left_cols=2)


def render_table(res: AuditResult) -> str:
    md = res.metadata
    parts = [f"WaM matrix: outcome={md.get('outcome')} model={md.get('model')}",
             format_matrix(res.wam.group_labels, res.wam.values)]
    if res.rates is not None:
        parts += ["", f"Counterfactual rates: variant={res.rates.variant} "
                      f"threshold={res.rates.threshold}",
                  format_matrix(res.rates.group_labels, res.rates.values),
                  f"note: {res.rates.variant} {res.rates.note}"]
    if res.analytic:
        rows = [list(ANALYTIC_COLUMNS[:6])]
        for rep in res.analytic:
            vals = _analytic_rows(rep)
            rows.append(vals[:2] + [_short(v) for v in vals[2:6]])
        parts += ["", "Analytic standard errors (linear)", _align(rows, left_cols=2)]
    if res.bootstrap is not None:
        b = res.bootstrap
        parts += ["", f"Bootstrap: statistic={b.statistic} resamples={b.n_resamples} "
                      f"seed={b.seed}", format_bootstrap(b)]
    if res.warnings:
        parts += ["", "Warnings:"] + [f"  {k}: {v}" for k, v in sorted(res.warnings.items())]
    return "\n".join(parts) + "\n"


def _csv_matrix(w, labels, values):
    w.writerow(["act"] + [f"{lab}.cf" for lab in labels])
    for lab, vals in zip(labels, values):
        w.writerow([f"{lab}.act"] + [_full(v) for v in vals])


def render_csv(res: AuditResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    buf.write("# wam_matrix\n")
    _csv_matrix(w, res.wam.group_labels, res.wam.values)
    if res.rates is not None:
        buf.write(f"\n# rate_matrix variant={res.rates.variant} threshold={res.rates.threshold!r}\n")
        _csv_matrix(w, res.rates.group_labels, res.rates.values)
    if res.analytic:
        buf.write("\n# analytic\n")
        w.writerow(ANALYTIC_COLUMNS)
        for rep in res.analytic:
            vals = _analytic_rows(rep)
            w.writerow(vals[:2] + [_full(v) for v in vals[2:]])
    if res.bootstrap is not None:
        buf.write(f"\n# bootstrap statistic={res.bootstrap.statistic}\n")
        buf.write(res.bootstrap.to_csv())
    if res.warnings:
        buf.write("\n# warnings\n")
        w.writerow(["warning", "value"])
        for k, v in sorted(res.warnings.items()):
            w.writerow([k, v if not isinstance(v, list) else ";".join(map(str, v))])
    return buf.getvalue()


def _matrix_dict(labels, values) -> dict:
    return {"act": list(labels), "cf": list(labels),
            "values": [[_num(v) for v in row] for row in values]}


def to_dict(res: AuditResult) -> dict:
    out = {"metadata": dict(res.metadata, warnings=res.warnings),
           "wam_matrix": _matrix_dict(res.wam.group_labels, res.wam.values)}
    if res.rates is not None:
        out["rate_matrix"] = dict(_matrix_dict(res.rates.group_labels, res.rates.values),
                                  variant=res.rates.variant, threshold=res.rates.threshold,
                                  note=res.rates.note)
    if res.analytic:
        out["analytic"] = [dict(zip(ANALYTIC_COLUMNS, _analytic_rows(r))) for r in res.analytic]
    if res.bootstrap is not None:
        b = res.bootstrap.to_dict()
        b["rows"] = [{k: (_num(v) if k not in ("act", "cf") else v) for k, v in r.items()}
                     for r in b["rows"]]
        b["plugin"] = [{k: (_num(v) if k not in ("act", "cf") else v) for k, v in r.items()}
                       for r in b["plugin"]]
        out["bootstrap"] = b
    return out


def render_json(res: AuditResult) -> str:
    return json.dumps(to_dict(res), indent=2, allow_nan=False) + "\n"


def render(res: AuditResult, fmt: str = "table") -> str:
    if fmt == "table":
        return render_table(res)
    if fmt == "csv":
        return render_csv(res)
    if fmt == "json":
        return render_json(res)
    raise ValueError(f"unknown format {fmt!r}; have {FORMATS}")
