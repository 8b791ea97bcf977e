"""Attention comparison charts: ground truth against two models, per post."""

from __future__ import annotations

import csv
import io
from xml.sax.saxutils import escape

import numpy as np

CSV_COLUMNS = ("token_index", "token", "gt", "model_a", "model_b")
COLOURS = {"gt": "#2ca02c", "model_a": "#e6b800", "model_b": "#d62728"}


def attention_rows(tokens, gt, model_a, model_b) -> list[dict]:
    n = len(tokens)
    if not (len(gt) == len(model_a) == len(model_b) == n):
        raise ValueError("attention series must all have one value per token")
    return [
        {"token_index": i, "token": tokens[i], "gt": float(gt[i]), "model_a": float(model_a[i]),
         "model_b": float(model_b[i])}
        for i in range(n)
    ]


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({**r, **{k: repr(r[k]) for k in ("gt", "model_a", "model_b")}})
    return buf.getvalue()


def rows_to_svg(rows: list[dict], title: str = "", labels=("ground truth", "model A", "model B"),
                width: int = 900, height: int = 380) -> str:
    """Render a standalone SVG line chart with token labels on the x axis."""
    left, right, top, bottom = 60, 20, 40, 110
    pw, ph = width - left - right, height - top - bottom
    n = len(rows)
    ymax = max(max(r[k] for r in rows for k in ("gt", "model_a", "model_b")), 1e-12) * 1.1

    def x(i):
        return left + (pw * (i + 0.5) / n)

    def y(v):
        return top + ph * (1.0 - v / ymax)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]
    for v in np.linspace(0, ymax, 5):
        out.append(f'<text x="{left - 6}" y="{y(v) + 4:.1f}" text-anchor="end">{v:.3f}</text>')
        out.append(f'<line x1="{left - 3}" y1="{y(v):.1f}" x2="{left}" y2="{y(v):.1f}" stroke="black"/>')
    for i, r in enumerate(rows):
        tx, ty = x(i), top + ph + 8
        out.append(f'<text x="{tx:.1f}" y="{ty:.1f}" text-anchor="end" '
                   f'transform="rotate(-60 {tx:.1f} {ty:.1f})">{escape(str(r["token"]))}</text>')
    for key in ("gt", "model_a", "model_b"):
        pts = " ".join(f"{x(i):.1f},{y(r[key]):.1f}" for i, r in enumerate(rows))
        out.append(f'<polyline fill="none" stroke="{COLOURS[key]}" stroke-width="2" points="{pts}"/>')
    for j, (key, label) in enumerate(zip(("gt", "model_a", "model_b"), labels)):
        lx, ly = left + pw - 170, top + 8 + 16 * j
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{COLOURS[key]}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
