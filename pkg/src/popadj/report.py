"""Text, JSON, CSV and SVG forest-plot output, plus per-strategy diagnostics."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .analysis import ComparisonResult
from .errors import DiagnosticError, ValidationError

FORMATS = ("text", "json", "csv", "svg")
CONTRAST_ROWS = ("AB", "AC", "BC")
ABSOLUTE_ROWS = ("A", "B", "C")


def _fmt(x: float) -> str:
    return f"{x:.3f}" if math.isfinite(x) else str(x)


def _table(block: dict, rows: Sequence[str]) -> list[str]:
    head = f"{'':<6}{'Estimate':>10}{'Variance':>10}{'SE':>10}{'lower.0.95':>12}{'upper.0.95':>12}"
    out = [head]
    for r in rows:
        e = block[r]
        out.append(f"{r:<6}{_fmt(e['estimate']):>10}{_fmt(e['variance']):>10}{_fmt(e['se']):>10}"
                   f"{_fmt(e['lower']):>12}{_fmt(e['upper']):>12}")
    return out


def format_text(result: ComparisonResult) -> str:
    md = result.metadata
    roles = md["roles"]
    level = md["ci_level"]
    lines = [
        f"Population-adjusted indirect comparison ({md['strategy']})",
        "",
        f"ITC algorithm: {md['strategy'].lower()}",
        f"Model: {md['family']}",
        f"Link: {md['link']}",
        f"Scale: {md['scale']}",
        f"Common treatment: {roles['C']}",
        f"Individual patient data study: {roles['A']} vs {roles['C']}",
        f"Aggregate level data study: {roles['B']} vs {roles['C']}",
        f"Confidence interval level: {level}",
        f"Variance method: {md['var_method']}",
        "",
        "Contrasts:",
        "",
    ]
    table = _table(result.contrasts, CONTRAST_ROWS)
    table[0] = table[0].replace("0.95", f"{level:g}")
    lines += table + ["", "Absolute:", ""]
    table = _table(result.absolute, ABSOLUTE_ROWS)
    table[0] = table[0].replace("0.95", f"{level:g}")
    lines += table
    if "ess" in result.extras:
        lines += ["", f"ESS: {result.extras['ess']:.3f}"]
    if "nu" in result.extras:
        lines += ["", f"Rubin degrees of freedom: {result.extras['nu']:.3f}"]
    return "\n".join(lines) + "\n"


def format_csv(results: Sequence[ComparisonResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "block", "label", "estimate", "variance", "se", "lower", "upper", "scale"])
    for res in results:
        for block, rows in (("contrast", CONTRAST_ROWS), ("absolute", ABSOLUTE_ROWS)):
            data = res.contrasts if block == "contrast" else res.absolute
            for r in rows:
                e = data[r]
                w.writerow([res.strategy, block, r, repr(e["estimate"]), repr(e["variance"]), repr(e["se"]),
                            repr(e["lower"]), repr(e["upper"]),
                            res.metadata["scale"] if block == "contrast" else "natural"])
    return buf.getvalue()


_PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")


def format_svg(results: Sequence[ComparisonResult], width: int = 720) -> str:
    """Two-panel forest plot: contrasts (left) and absolutes (right).

    Every result contributes one ``<g class="glyph">`` (point and interval)
    per row, offset vertically so strategies sit side by side.
    """
    if not results:
        raise ValidationError("no results to plot")
    k = len(results)
    row_h = 18 * k + 16
    top, left_pad = 40, 60
    panel_w = (width - 2 * left_pad) / 2
    height = top + 3 * row_h + 60
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{int(height)}" '
             f'viewBox="0 0 {width} {int(height)}" font-family="sans-serif" font-size="11">']
    panels = (("contrast", CONTRAST_ROWS, results[0].metadata["scale"]), ("absolute", ABSOLUTE_ROWS, "natural"))
    for p, (block, rows, axis_label) in enumerate(panels):
        entries = [(res.contrasts if block == "contrast" else res.absolute)[r] for res in results for r in rows]
        vals = [v for e in entries for v in (e["lower"], e["upper"], e["estimate"]) if math.isfinite(v)]
        lo, hi = (min(vals), max(vals)) if vals else (-1.0, 1.0)
        if block == "contrast":
            lo, hi = min(lo, 0.0), max(hi, 0.0)
        pad = 0.05 * (hi - lo or 1.0)
        lo, hi = lo - pad, hi + pad
        x0 = left_pad + p * (panel_w + left_pad)

        def sx(v, x0=x0, lo=lo, hi=hi):
            return x0 + (min(max(v, lo), hi) - lo) / (hi - lo) * panel_w

        parts.append(f'<g class="panel" data-block="{block}">')
        parts.append(f'<text x="{x0 + panel_w / 2:.1f}" y="20" text-anchor="middle">{escape(block)} '
                     f'({escape(axis_label)})</text>')
        y_axis = top + 3 * row_h
        parts.append(f'<line x1="{x0:.1f}" y1="{y_axis}" x2="{x0 + panel_w:.1f}" y2="{y_axis}" stroke="black"/>')
        for t in np.linspace(lo, hi, 5):
            parts.append(f'<text x="{sx(t):.1f}" y="{y_axis + 14}" text-anchor="middle">{t:.2f}</text>')
        if block == "contrast":
            parts.append(f'<line x1="{sx(0):.1f}" y1="{top}" x2="{sx(0):.1f}" y2="{y_axis}" '
                         'stroke="#999" stroke-dasharray="3,3"/>')
        for i, r in enumerate(rows):
            y_row = top + i * row_h
            parts.append(f'<g class="row" data-row="{r}">')
            parts.append(f'<text x="{x0 - 8:.1f}" y="{y_row + row_h / 2:.1f}" text-anchor="end">{r}</text>')
            for j, res in enumerate(results):
                e = (res.contrasts if block == "contrast" else res.absolute)[r]
                y = y_row + 8 + 18 * j + 5
                col = _PALETTE[j % len(_PALETTE)]
                parts.append(
                    f'<g class="glyph" data-strategy="{escape(res.strategy)}">'
                    f'<line x1="{sx(e["lower"]):.1f}" y1="{y:.1f}" x2="{sx(e["upper"]):.1f}" y2="{y:.1f}" '
                    f'stroke="{col}" stroke-width="2"/>'
                    f'<circle cx="{sx(e["estimate"]):.1f}" cy="{y:.1f}" r="3.5" fill="{col}"/></g>')
            parts.append("</g>")
        parts.append("</g>")
    ly = height - 18
    for j, res in enumerate(results):
        col = _PALETTE[j % len(_PALETTE)]
        x = left_pad + j * 120
        parts.append(f'<rect x="{x}" y="{ly - 8}" width="10" height="10" fill="{col}"/>'
                     f'<text x="{x + 14}" y="{ly + 1}">{escape(res.strategy)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render(results, fmt: str = "text") -> str:
    results = [results] if isinstance(results, ComparisonResult) else list(results)
    if fmt not in FORMATS:
        raise ValidationError(f"unknown format {fmt!r}; expected one of {list(FORMATS)}")
    if fmt == "text":
        return "\n".join(format_text(r) for r in results)
    if fmt == "json":
        if len(results) == 1:
            return results[0].to_json() + "\n"
        return json.dumps([r.to_dict() for r in results], sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        return format_csv(results)
    return format_svg(results)


def emit_report(results, fmt: str = "text", path=None) -> str:
    """Render one or more results and optionally write them to ``path``."""
    text = render(results, fmt)
    if path is not None:
        path = Path(path)
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot write report to {path}: {exc}") from None
    return text


def diagnose(result: ComparisonResult, kind: str = "auto", bin_width: float = 0.1) -> dict:
    """Diagnostics bundle for a fitted result.

    MAIC gives a histogram of weights normalized to mean one, plus the ESS.
    Bayesian G-computation gives trace series and the acceptance rate. MIM
    gives the Rubin degrees of freedom and the between/within variance ratio.
    """
    strategy = result.strategy
    x = result.extras
    if kind == "auto":
        # strategies without their own diagnostic fall through to the weights check
        kind = {"GCOMP_BAYES": "trace", "MIM": "rubin"}.get(strategy, "weights")
    if kind == "weights":
        if "weights" not in x:
            raise DiagnosticError(f"no weights for {strategy}: weights exist only for MAIC results")
        w = np.asarray(x["weights"], dtype=float)
        w = w / w.mean()
        edges = np.arange(0.0, max(w.max(), bin_width) + bin_width, bin_width)
        counts, edges = np.histogram(w, bins=edges)
        return {"strategy": strategy, "ess": x["ess"], "n": int(w.size),
                "histogram": {"edges": edges.tolist(), "counts": counts.tolist()}}
    if kind == "trace":
        if "traces" not in x:
            raise DiagnosticError(f"no posterior traces for {strategy}")
        return {"strategy": strategy, "acceptance_rate": x["acceptance_rate"], "traces": x["traces"],
                "rhat": x["rhat"], "posterior_ess": x["posterior_ess"], "thin": x.get("trace_thin", 1)}
    if kind == "rubin":
        if "nu" not in x:
            raise DiagnosticError(f"no Rubin pooling diagnostics for {strategy}")
        return {"strategy": strategy, "nu": x["nu"], "b_over_ubar": x["b_over_ubar"], "n_imp": x["n_imp"],
                "ubar": x["ubar"], "b": x["b"]}
    raise DiagnosticError(f"unknown diagnostic {kind!r}")
