"""CSV and SVG report emission from a run directory's logs."""

from __future__ import annotations

import csv
import math
from typing import Sequence

from .flops import FlopsReport
from .proxy import SearchMemory


def write_loss_csv(trace: Sequence[tuple[int, float]], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        writer.writerows(trace)


def write_ablation_csv(rows: Sequence[dict], path: str) -> None:
    """One row per (strategy, budget) with the three correlation columns."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["strategy", "budget", "spearman", "pearson", "kendall"])
        writer.writeheader()
        writer.writerows(rows)


def write_flops_csv(report: FlopsReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "macs"])
        writer.writerow(["stem_head", report.stem_head])
        for i, s in enumerate(report.per_stage):
            writer.writerow([f"stage_{i}", s])
        writer.writerow(["total", report.total])
        writer.writerow(["params", report.params])


def write_memory_csv(memory: SearchMemory, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "flops", "rfid", "accepted", "rejection_reason"])
        for r in memory.records:
            writer.writerow([r.round, r.flops,
                             r.rfid if math.isfinite(r.rfid) else "",
                             int(r.accepted), r.rejection_reason or ""])


def write_rfid_svg(memory: SearchMemory, path: str,
                   width: int = 640, height: int = 400) -> None:
    """Line chart of per-round RFID with the best-so-far envelope."""
    points = [(r.round, r.rfid) for r in memory.records if math.isfinite(r.rfid)]
    margin = 50
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width // 2}" y="20" text-anchor="middle" '
             'font-family="sans-serif" font-size="14">RFID per search round</text>']
    if points:
        rounds = [p[0] for p in points]
        values = [p[1] for p in points]
        r_lo, r_hi = min(rounds), max(max(rounds), min(rounds) + 1)
        v_lo, v_hi = min(values), max(max(values), min(values) + 1e-9)
        pad = 0.05 * (v_hi - v_lo) or 1.0

        def sx(r):
            return margin + (r - r_lo) / (r_hi - r_lo) * (width - 2 * margin)

        def sy(v):
            return height - margin - (v - (v_lo - pad)) / ((v_hi + pad) - (v_lo - pad)) \
                * (height - 2 * margin)

        best = []
        cur = math.inf
        for r, v in points:
            cur = min(cur, v)
            best.append((r, cur))
        for series, color in ((points, "#1f77b4"), (best, "#d62728")):
            pts = " ".join(f"{sx(r):.1f},{sy(v):.1f}" for r, v in series)
            lines.append(f'<polyline points="{pts}" fill="none" '
                         f'stroke="{color}" stroke-width="2"/>')
        for r, v in points:
            lines.append(f'<circle cx="{sx(r):.1f}" cy="{sy(v):.1f}" r="3" '
                         'fill="#1f77b4"/>')
        lines.append(f'<text x="{margin}" y="{height - 10}" font-family="sans-serif" '
                     f'font-size="11">rounds {r_lo}..{max(rounds)}, '
                     f'RFID {v_lo:.4f}..{v_hi:.4f} (red = best so far)</text>')
    else:
        lines.append(f'<text x="{width // 2}" y="{height // 2}" text-anchor="middle" '
                     'font-family="sans-serif" font-size="12">no finite RFID records'
                     '</text>')
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
