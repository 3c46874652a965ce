"""CSV and SVG report artifacts for evaluation results.

SVGs are generated directly (no plotting library) so identical inputs
produce byte-identical files that diff cleanly in version control.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

from .evaluation import EvalReport, PRPoint

REPORT_SCHEMA = "wildcensus-report/1"

_MARGIN = 50.0
_WIDTH = 480.0
_HEIGHT = 360.0


def write_pr_csv(path: str | Path, points: Sequence[PRPoint]) -> None:
    lines = ["confidence,recall,precision"]
    lines += [f"{p.confidence:.6f},{p.recall:.6f},{p.precision:.6f}" for p in points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_sweep_csv(path: str | Path, profile: Sequence[tuple[float, float]]) -> None:
    lines = ["tau,ap"]
    lines += [f"{tau:.6f},{ap:.6f}" for tau, ap in profile]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_confusion_csv(path: str | Path, matrix: Sequence[Sequence[int]]) -> None:
    lines = ["gt_count,pred_count,images"]
    for gt, row in enumerate(matrix):
        for pred, count in enumerate(row):
            lines.append(f"{gt},{pred},{count}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_report_json(path: str | Path, report: EvalReport, config: Mapping) -> None:
    doc = {"schema": REPORT_SCHEMA, "config": dict(config)}
    doc.update(report.to_dict())
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def _svg_header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH:.0f}" '
        f'height="{_HEIGHT:.0f}" viewBox="0 0 {_WIDTH:.0f} {_HEIGHT:.0f}">',
        f'<rect width="{_WIDTH:.0f}" height="{_HEIGHT:.0f}" fill="white"/>',
        f'<text x="{_WIDTH / 2:.0f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]


def _axes(x_label: str, y_label: str) -> list[str]:
    x0, y0 = _MARGIN, _HEIGHT - _MARGIN
    x1, y1 = _WIDTH - _MARGIN / 2, _MARGIN / 2
    parts = [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2:.0f}" y="{_HEIGHT - 10:.0f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>',
        f'<text x="14" y="{(y0 + y1) / 2:.0f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {(y0 + y1) / 2:.0f})">{y_label}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        px = x0 + frac * (x1 - x0)
        py = y0 - frac * (y0 - y1)
        parts.append(f'<text x="{px:.1f}" y="{y0 + 14:.1f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="9">{frac:g}</text>')
        parts.append(f'<text x="{x0 - 6:.1f}" y="{py + 3:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="9">{frac:g}</text>')
    return parts


def _polyline(xy: Sequence[tuple[float, float]], color: str) -> str:
    x0, y0 = _MARGIN, _HEIGHT - _MARGIN
    x1, y1 = _WIDTH - _MARGIN / 2, _MARGIN / 2
    pts = " ".join(f"{x0 + x * (x1 - x0):.2f},{y0 - y * (y0 - y1):.2f}"
                   for x, y in xy)
    return (f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"/>')


def write_pr_svg(path: str | Path, points: Sequence[PRPoint],
                 title: str = "Precision-Recall") -> None:
    parts = _svg_header(title) + _axes("recall", "precision")
    if points:
        parts.append(_polyline([(p.recall, p.precision) for p in points], "#1f6fb4"))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def write_sweep_svg(path: str | Path, profile: Sequence[tuple[float, float]],
                    title: str = "AP vs confidence threshold") -> None:
    parts = _svg_header(title) + _axes("confidence threshold", "AP")
    if profile:
        parts.append(_polyline(list(profile), "#b44a1f"))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def write_confusion_svg(path: str | Path, matrix: Sequence[Sequence[int]],
                        title: str = "Count confusion") -> None:
    parts = _svg_header(title)
    rows = len(matrix)
    cols = max((len(r) for r in matrix), default=1)
    total = max(sum(sum(r) for r in matrix), 1)
    x0, y0 = _MARGIN, _MARGIN / 2 + 20
    size = min((_WIDTH - 2 * _MARGIN) / cols, (_HEIGHT - _MARGIN - y0) / rows)
    for gt, row in enumerate(matrix):
        for pred in range(cols):
            count = row[pred] if pred < len(row) else 0
            shade = 255 - int(195 * min(1.0, (count / total) ** 0.35 if count else 0))
            x = x0 + pred * size
            y = y0 + gt * size
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{size:.1f}" '
                f'height="{size:.1f}" fill="rgb({shade},{shade},255)" '
                f'stroke="#888"/>')
            parts.append(
                f'<text x="{x + size / 2:.1f}" y="{y + size / 2 + 4:.1f}" '
                f'text-anchor="middle" font-family="sans-serif" '
                f'font-size="11">{count}</text>')
    for pred in range(cols):
        parts.append(f'<text x="{x0 + pred * size + size / 2:.1f}" '
                     f'y="{y0 + rows * size + 14:.1f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{pred}</text>')
    for gt in range(rows):
        parts.append(f'<text x="{x0 - 8:.1f}" y="{y0 + gt * size + size / 2 + 4:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{gt}</text>')
    parts.append(f'<text x="{x0 + cols * size / 2:.1f}" y="{y0 + rows * size + 30:.1f}" '
                 f'text-anchor="middle" font-family="sans-serif" font-size="11">'
                 f'predicted count</text>')
    parts.append(f'<text x="{x0 - 30:.1f}" y="{y0 + rows * size / 2:.1f}" '
                 f'text-anchor="middle" font-family="sans-serif" font-size="11" '
                 f'transform="rotate(-90 {x0 - 30:.1f} {y0 + rows * size / 2:.1f})">'
                 f'true count</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
