"""Hand-rolled SVG charts for the emitted CSVs: reward curves over GRPO
steps, Elo bars with min-max whiskers across judges, and the CPT optimizer
ablation losses. No plotting dependency; the charts are simple and static.
"""

from __future__ import annotations

import csv
from pathlib import Path

WIDTH, HEIGHT = 720, 420
MARGIN = 56

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _scale(values, lo, hi, out_lo, out_hi):
    span = (hi - lo) or 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def _svg_header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="16">{title}</text>',
    ]


def _axes(x_label: str, y_label: str, y_lo: float, y_hi: float) -> list[str]:
    parts = [
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-size="12">{x_label}</text>',
        f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {HEIGHT / 2})">{y_label}</text>',
        f'<text x="{MARGIN - 6}" y="{HEIGHT - MARGIN + 4}" text-anchor="end" '
        f'font-size="10">{y_lo:.3g}</text>',
        f'<text x="{MARGIN - 6}" y="{MARGIN + 4}" text-anchor="end" '
        f'font-size="10">{y_hi:.3g}</text>',
    ]
    return parts


def line_chart(series: dict[str, tuple[list[float], list[float]]], title: str,
               x_label: str, y_label: str, path: Path) -> None:
    """series maps a legend label to (xs, ys)."""
    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    if not all_x:
        return
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 1, y_hi + 1
    parts = _svg_header(title) + _axes(x_label, y_label, y_lo, y_hi)
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        px = _scale(xs, x_lo, x_hi, MARGIN, WIDTH - MARGIN)
        py = _scale(ys, y_lo, y_hi, HEIGHT - MARGIN, MARGIN)
        points = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(px, py))
        parts.append(f'<polyline points="{points}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * i + 10}" '
                     f'font-size="11" fill="{color}">{label}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts), encoding="utf-8")


def bar_chart_with_whiskers(rows: list[dict], title: str, path: Path) -> None:
    """rows need model, mean_elo, min_elo, max_elo keys (aggregate.csv)."""
    if not rows:
        return
    values = [float(r["mean_elo"]) for r in rows]
    lows = [float(r["min_elo"]) for r in rows]
    highs = [float(r["max_elo"]) for r in rows]
    y_lo = min(lows) - 10
    y_hi = max(highs) + 10
    parts = _svg_header(title) + _axes("model", "elo", y_lo, y_hi)
    n = len(rows)
    band = (WIDTH - 2 * MARGIN) / n
    for i, row in enumerate(rows):
        color = PALETTE[i % len(PALETTE)]
        cx = MARGIN + band * (i + 0.5)
        (top,) = _scale([values[i]], y_lo, y_hi, HEIGHT - MARGIN, MARGIN)
        (w_lo,) = _scale([lows[i]], y_lo, y_hi, HEIGHT - MARGIN, MARGIN)
        (w_hi,) = _scale([highs[i]], y_lo, y_hi, HEIGHT - MARGIN, MARGIN)
        bar_w = band * 0.5
        parts.append(f'<rect x="{cx - bar_w / 2:.1f}" y="{top:.1f}" '
                     f'width="{bar_w:.1f}" height="{HEIGHT - MARGIN - top:.1f}" '
                     f'fill="{color}" fill-opacity="0.7"/>')
        parts.append(f'<line x1="{cx:.1f}" y1="{w_lo:.1f}" x2="{cx:.1f}" '
                     f'y2="{w_hi:.1f}" stroke="black"/>')
        for wy in (w_lo, w_hi):
            parts.append(f'<line x1="{cx - 6:.1f}" y1="{wy:.1f}" '
                         f'x2="{cx + 6:.1f}" y2="{wy:.1f}" stroke="black"/>')
        parts.append(f'<text x="{cx:.1f}" y="{HEIGHT - MARGIN + 16}" '
                     f'text-anchor="middle" font-size="11">{row["model"]}</text>')
        parts.append(f'<text x="{cx:.1f}" y="{top - 4:.1f}" text-anchor="middle" '
                     f'font-size="10">{values[i]:.1f}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts), encoding="utf-8")


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def render_reports(out_dir: Path) -> list[Path]:
    """Render whichever charts have source CSVs present; returns paths."""
    written: list[Path] = []

    grpo_metrics = out_dir / "grpo" / "metrics.csv"
    if grpo_metrics.exists():
        rows = _read_csv(grpo_metrics)
        series = {}
        for column in ("mean_total", "mean_semantic", "mean_answer",
                       "mean_format", "mean_think", "mean_rouge"):
            pts = [(int(r["step"]), float(r[column]))
                   for r in rows if r.get(column)]
            if pts:
                series[column] = ([p[0] for p in pts], [p[1] for p in pts])
        if series:
            target = out_dir / "reward_curves.svg"
            line_chart(series, "Mean reward components per GRPO step",
                       "step", "reward", target)
            written.append(target)

    ablation = out_dir / "cpt_ablation.csv"
    if ablation.exists():
        rows = _read_csv(ablation)
        series = {}
        for column in ("loss_adamw", "loss_muon"):
            pts = [(int(r["step"]), float(r[column])) for r in rows if r.get(column)]
            if pts:
                series[column] = ([p[0] for p in pts], [p[1] for p in pts])
        if series:
            target = out_dir / "cpt_ablation.svg"
            line_chart(series, "CPT loss: AdamW vs Muon", "epoch", "loss", target)
            written.append(target)

    aggregate = out_dir / "aggregate.csv"
    if aggregate.exists():
        rows = _read_csv(aggregate)
        if rows:
            target = out_dir / "elo.svg"
            bar_chart_with_whiskers(
                rows, "Mean Elo with min-max range across judges", target)
            written.append(target)
    return written
