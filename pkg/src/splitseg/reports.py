"""Report emission: per-case rows plus per-configuration summary rows.

Reports carry every per-case metric so paired significance tests can be
re-run from the files alone; summaries aggregate Dice as mean and SD and
surface distance as median with quartiles, with infinite distances counted
separately rather than averaged.
"""

from __future__ import annotations

import csv
import io
import math
from typing import Sequence

import numpy as np

from .errors import EmptySample, FormatError, InvalidConfig
from .metrics import MetricsReport, summarize

CSV_COLUMNS = [
    "row_type",
    "stage",
    "gamma",
    "case_id",
    "dice_bg",
    "dice_em",
    "dice_im",
    "dice_wt",
    "assd_mm",
    "assd_vox",
    "dice_bg_sd",
    "dice_em_sd",
    "dice_im_sd",
    "dice_wt_sd",
    "assd_median",
    "assd_p25",
    "assd_p75",
    "n_inf",
]

MARKDOWN_COLUMNS = ["gamma", "BG", "EM", "IM", "WT", "ASSD-median", "p25", "p75", "n_inf"]


def _fmt(x: float) -> str:
    if x != x:  # NaN only appears for undefined aggregate slots
        return ""
    if math.isinf(x):
        return "inf"
    return format(x, ".12g")


def _mean_sd(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd


def _group_key(r: MetricsReport) -> tuple[str, float]:
    return (r.stage, r.gamma)


def _grouped(reports: Sequence[MetricsReport]) -> dict[tuple[str, float], list[MetricsReport]]:
    groups: dict[tuple[str, float], list[MetricsReport]] = {}
    for r in reports:
        groups.setdefault(_group_key(r), []).append(r)
    return groups


def _summary_cells(group: list[MetricsReport]) -> dict[str, float]:
    # class 1 is intrameatal (IM), class 2 extrameatal (EM)
    cells: dict[str, float] = {}
    for name, key in (("bg", 0), ("em", 2), ("im", 1)):
        mean, sd = _mean_sd([r.dice_per_class[key] for r in group])
        cells[f"dice_{name}"] = mean
        cells[f"dice_{name}_sd"] = sd
    mean, sd = _mean_sd([r.dice_wt for r in group])
    cells["dice_wt"], cells["dice_wt_sd"] = mean, sd
    distances = [r.assd_mm for r in group]
    try:
        s = summarize(distances)
        cells["assd_median"], cells["assd_p25"], cells["assd_p75"] = s.median, s.p25, s.p75
        cells["n_inf"] = s.n_excluded
    except EmptySample:  # every case had an empty-surface (infinite) distance
        cells["assd_median"] = cells["assd_p25"] = cells["assd_p75"] = math.inf
        cells["n_inf"] = len(distances)
    return cells


def emit_report(reports: Sequence[MetricsReport], format: str = "csv") -> str:
    """Render reports as a CSV or markdown document."""
    if not reports:
        raise EmptySample("no reports to emit")
    if format == "csv":
        return _emit_csv(reports)
    if format == "markdown":
        return _emit_markdown(reports)
    raise InvalidConfig(f"unknown report format {format!r}")


def _emit_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in reports:
        writer.writerow(
            [
                "case",
                r.stage,
                _fmt(r.gamma),
                r.case_id,
                _fmt(r.dice_per_class[0]),
                _fmt(r.dice_per_class[2]),
                _fmt(r.dice_per_class[1]),
                _fmt(r.dice_wt),
                _fmt(r.assd_mm),
                _fmt(r.assd_vox),
            ]
            + [""] * 8
        )
    for (stage, gamma), group in sorted(_grouped(reports).items()):
        cells = _summary_cells(group)
        writer.writerow(
            [
                "summary",
                stage,
                _fmt(gamma),
                "",
                _fmt(cells["dice_bg"]),
                _fmt(cells["dice_em"]),
                _fmt(cells["dice_im"]),
                _fmt(cells["dice_wt"]),
                "",
                "",
                _fmt(cells["dice_bg_sd"]),
                _fmt(cells["dice_em_sd"]),
                _fmt(cells["dice_im_sd"]),
                _fmt(cells["dice_wt_sd"]),
                _fmt(cells["assd_median"]),
                _fmt(cells["assd_p25"]),
                _fmt(cells["assd_p75"]),
                str(cells["n_inf"]),
            ]
        )
    return buf.getvalue()


def _emit_markdown(reports: Sequence[MetricsReport]) -> str:
    lines: list[str] = []
    by_stage: dict[str, list[tuple[float, list[MetricsReport]]]] = {}
    for (stage, gamma), group in sorted(_grouped(reports).items()):
        by_stage.setdefault(stage, []).append((gamma, group))
    for stage, rows in by_stage.items():
        lines.append(f"### {stage}")
        lines.append("")
        lines.append("| " + " | ".join(MARKDOWN_COLUMNS) + " |")
        lines.append("|" + "---|" * len(MARKDOWN_COLUMNS))
        for gamma, group in rows:
            cells = _summary_cells(group)
            row = [
                f"{gamma:g}",
                f"{cells['dice_bg']:.4f} ± {cells['dice_bg_sd']:.4f}",
                f"{cells['dice_em']:.4f} ± {cells['dice_em_sd']:.4f}",
                f"{cells['dice_im']:.4f} ± {cells['dice_im_sd']:.4f}",
                f"{cells['dice_wt']:.4f} ± {cells['dice_wt_sd']:.4f}",
                f"{cells['assd_median']:.4f}",
                f"{cells['assd_p25']:.4f}",
                f"{cells['assd_p75']:.4f}",
                str(cells["n_inf"]),
            ]
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")
    return "\n".join(lines)


def parse_report_csv(text: str) -> list[MetricsReport]:
    """Recover the per-case rows of a CSV report."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty report file") from None
    if header != CSV_COLUMNS:
        raise FormatError(f"unexpected report columns: {header!r}")
    out: list[MetricsReport] = []
    for row in reader:
        if not row or row[0] != "case":
            continue
        rec = dict(zip(CSV_COLUMNS, row))
        out.append(
            MetricsReport(
                case_id=rec["case_id"],
                gamma=float(rec["gamma"]),
                stage=rec["stage"],
                dice_per_class={
                    0: float(rec["dice_bg"]),
                    1: float(rec["dice_im"]),
                    2: float(rec["dice_em"]),
                },
                dice_wt=float(rec["dice_wt"]),
                assd_mm=float(rec["assd_mm"]),
                assd_vox=float(rec["assd_vox"]),
            )
        )
    if not out:
        raise FormatError("report contains no case rows")
    return out
