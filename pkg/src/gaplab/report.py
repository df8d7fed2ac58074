"""Result artifacts: CSV tables, SVG bar charts and a markdown report.

This module renders numbers computed upstream; it never derives new
quantities. All outputs are byte-deterministic for a given bundle: floats
are written with repr (shortest round-trip), SVG geometry with fixed
two-decimal formatting, and rows in sorted order.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .scoring import EffectRecord, EffectSummary, PatternVerdict
from .stats import AnalysisResult


class ReportError(ValueError):
    pass


@dataclass
class FitRow:
    model_id: str
    construction: str
    analysis: str
    term: str
    estimate: float
    se: float
    t: float
    p: float
    sigma_item: float
    sigma_resid: float
    converged: bool


@dataclass
class VerdictRow:
    model_id: str
    construction: str
    criterion: str
    passed: bool | None  # None renders as "not tested"
    detail: str = ""


@dataclass
class ReportBundle:
    effects: dict[str, list[EffectRecord]] = field(default_factory=dict)
    summaries: dict[str, list[EffectSummary]] = field(default_factory=dict)
    fits: list[FitRow] = field(default_factory=list)
    verdicts: list[VerdictRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    charts: dict[str, str] = field(default_factory=dict)  # name -> svg filename

    def add_analysis(self, model_id: str, result: AnalysisResult) -> None:
        fit = result.fit
        for idx, term in enumerate(fit.terms):
            self.fits.append(
                FitRow(
                    model_id,
                    result.construction,
                    result.analysis,
                    term,
                    float(fit.estimates[idx]),
                    float(fit.se[idx]),
                    float(fit.t[idx]),
                    float(fit.p[idx]),
                    fit.sigma2_item,
                    fit.sigma2_resid,
                    fit.converged,
                )
            )
        self.verdicts.append(
            VerdictRow(model_id, result.construction, result.analysis, result.verdict, result.detail)
        )

    def add_pattern_verdicts(self, model_id: str, verdicts: Sequence[PatternVerdict]) -> None:
        for v in verdicts:
            self.verdicts.append(
                VerdictRow(model_id, v.construction, "simple_pattern", v.simple_learned)
            )
            self.verdicts.append(
                VerdictRow(
                    model_id, v.construction, "island_stringent", v.island_stringent_pass
                )
            )
            self.verdicts.append(
                VerdictRow(
                    model_id, v.construction, "island_relative", v.island_relative_pass
                )
            )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


EFFECTS_HEADER = ["model_id", "construction", "item_id", "gap", "island", "filler_effect_bits"]
FITS_HEADER = [
    "model_id", "construction", "analysis", "term",
    "estimate", "se", "t", "p", "sigma_item", "sigma_resid", "converged",
]
VERDICTS_HEADER = ["model_id", "construction", "criterion", "passed", "detail"]


def emit_tables(bundle: ReportBundle, out_dir: Path | str) -> list[Path]:
    """Write effects.csv, fits.csv and verdicts.csv; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    effects_rows = []
    for model_id in sorted(bundle.effects):
        for rec in sorted(
            bundle.effects[model_id],
            key=lambda r: (r.construction, r.item_id, not r.gap, not r.island),
        ):
            effects_rows.append(
                [model_id, rec.construction, rec.item_id, rec.gap, rec.island, rec.filler_effect]
            )
    fits_rows = [
        [
            row.model_id, row.construction, row.analysis, row.term,
            row.estimate, row.se, row.t, row.p,
            row.sigma_item, row.sigma_resid, row.converged,
        ]
        for row in bundle.fits
    ]
    verdict_rows = [
        [
            row.model_id, row.construction, row.criterion,
            "not tested" if row.passed is None else _fmt(row.passed),
            row.detail,
        ]
        for row in bundle.verdicts
    ]
    paths = []
    for name, header, rows in (
        ("effects.csv", EFFECTS_HEADER, effects_rows),
        ("fits.csv", FITS_HEADER, fits_rows),
        ("verdicts.csv", VERDICTS_HEADER, verdict_rows),
    ):
        path = out / name
        _write_csv(path, header, rows)
        paths.append(path)
    return paths


def read_table(path: Path | str) -> tuple[list[str], list[list[str]]]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ReportError(f"{path}: empty table")
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# SVG chart


_PANEL_W = 300.0
_PANEL_H = 240.0
_MARGIN = 42.0
_BAR_W = 34.0
_GAP_COLOR = "#4878cf"  # +gap
_NOGAP_COLOR = "#ee854a"  # -gap


def _svg_header(width: float, height: float) -> str:
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">\n'
    )


def render_effect_chart(
    summaries: dict[str, list[EffectSummary]],
    construction: str,
    models: tuple[str, str],
) -> str:
    """Grouped bar chart comparing two models on one construction.

    One panel per model; within a panel one group per island value with a
    +gap and a -gap bar, 95% CI whiskers and a zero line. Whisker length in
    pixels is proportional to the CI half-width.
    """
    cells: dict[tuple[str, bool, bool], EffectSummary] = {}
    for model in models:
        if model not in summaries:
            raise ReportError(f"no summaries for model {model!r}")
        for s in summaries[model]:
            if s.construction == construction:
                cells[(model, s.gap, s.island)] = s
    needed = [
        (m, g, i) for m in models for g in (True, False) for i in (False, True)
    ]
    missing = [key for key in needed if key not in cells]
    if missing:
        raise ReportError(f"missing effect summaries for {construction}: {missing}")

    span = max(abs(s.mean) + s.ci_half_width for s in cells.values())
    span = max(span, 1e-9) * 1.15
    plot_h = _PANEL_H - 2 * _MARGIN
    scale = (plot_h / 2.0) / span  # pixels per bit

    def y_of(value: float) -> float:
        return _MARGIN + plot_h / 2.0 - value * scale

    width = _PANEL_W * len(models)
    parts = [_svg_header(width, _PANEL_H)]
    parts.append(f'<title>{construction}: filler effects</title>\n')
    for panel, model in enumerate(models):
        x0 = panel * _PANEL_W
        parts.append(f'<g class="panel" data-model="{model}">\n')
        parts.append(
            f'<text x="{x0 + _PANEL_W / 2:.2f}" y="{_MARGIN - 18:.2f}" '
            f'text-anchor="middle" font-size="13">{model}</text>\n'
        )
        parts.append(
            f'<line class="zero-line" x1="{x0 + 16:.2f}" y1="{y_of(0.0):.2f}" '
            f'x2="{x0 + _PANEL_W - 16:.2f}" y2="{y_of(0.0):.2f}" '
            f'stroke="#444444" stroke-width="1"/>\n'
        )
        for gi, island in enumerate((False, True)):
            group_cx = x0 + _PANEL_W * (0.30 + 0.40 * gi)
            label = "island" if island else "simple"
            parts.append(
                f'<text x="{group_cx:.2f}" y="{_PANEL_H - 14:.2f}" '
                f'text-anchor="middle" font-size="12">{label}</text>\n'
            )
            for bi, gap in enumerate((True, False)):
                s = cells[(model, gap, island)]
                x = group_cx - _BAR_W - 3 + bi * (_BAR_W + 6)
                top = y_of(max(s.mean, 0.0))
                height = abs(s.mean) * scale
                color = _GAP_COLOR if gap else _NOGAP_COLOR
                parts.append(
                    f'<rect class="bar" data-model="{model}" data-gap="{int(gap)}" '
                    f'data-island="{int(island)}" data-mean="{s.mean!r}" '
                    f'x="{x:.2f}" y="{top:.2f}" width="{_BAR_W:.2f}" '
                    f'height="{height:.2f}" fill="{color}"/>\n'
                )
                cx = x + _BAR_W / 2.0
                y_lo = y_of(s.mean - s.ci_half_width)
                y_hi = y_of(s.mean + s.ci_half_width)
                parts.append(
                    f'<line class="whisker" data-model="{model}" data-gap="{int(gap)}" '
                    f'data-island="{int(island)}" data-half-width="{s.ci_half_width!r}" '
                    f'x1="{cx:.2f}" y1="{y_hi:.2f}" x2="{cx:.2f}" y2="{y_lo:.2f}" '
                    f'stroke="#222222" stroke-width="1.5"/>\n'
                )
                for y_cap in (y_hi, y_lo):
                    parts.append(
                        f'<line class="whisker-cap" x1="{cx - 5:.2f}" y1="{y_cap:.2f}" '
                        f'x2="{cx + 5:.2f}" y2="{y_cap:.2f}" '
                        f'stroke="#222222" stroke-width="1.5"/>\n'
                    )
        parts.append("</g>\n")
    parts.append("</svg>\n")
    return "".join(parts)


# ---------------------------------------------------------------------------
# Markdown report


def render_report(bundle: ReportBundle) -> str:
    """Single human-readable document: configs, verdict matrix, chart links."""
    lines = ["# Filler-gap experiment report", ""]
    if bundle.metadata:
        lines.append("## Run configuration")
        lines.append("")
        lines.append("```json")
        lines.append(json.dumps(bundle.metadata, indent=2, sort_keys=True))
        lines.append("```")
        lines.append("")

    lines.append("## Verdicts")
    lines.append("")
    criteria = sorted({v.criterion for v in bundle.verdicts})
    by_key = {(v.model_id, v.construction, v.criterion): v for v in bundle.verdicts}
    models = sorted({v.model_id for v in bundle.verdicts})
    constructions = sorted({v.construction for v in bundle.verdicts})
    header = "| model | construction | " + " | ".join(criteria) + " |"
    sep = "|" + "---|" * (len(criteria) + 2)
    lines.append(header)
    lines.append(sep)
    for model in models:
        for construction in constructions:
            row = [model, construction]
            for criterion in criteria:
                v = by_key.get((model, construction, criterion))
                if v is None or v.passed is None:
                    row.append("not tested")
                else:
                    row.append("pass" if v.passed else "fail")
            lines.append("| " + " | ".join(row) + " |")
    lines.append("")

    if bundle.charts:
        lines.append("## Figures")
        lines.append("")
        for name in sorted(bundle.charts):
            lines.append(f"![{name}]({bundle.charts[name]})")
        lines.append("")

    if bundle.fits:
        lines.append("## Regression fits")
        lines.append("")
        lines.append("| model | construction | analysis | term | estimate | SE | t | p |")
        lines.append("|---|---|---|---|---|---|---|---|")
        for row in bundle.fits:
            lines.append(
                f"| {row.model_id} | {row.construction} | {row.analysis} | {row.term} "
                f"| {row.estimate:.4g} | {row.se:.4g} | {row.t:.4g} | {row.p:.3g} |"
            )
        lines.append("")
    return "\n".join(lines) + "\n"
