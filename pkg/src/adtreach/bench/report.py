"""Error-map grids and report emission (CSV tables, SVG figures, manifest)."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .metrics import BoxStats, box_stats

log = logging.getLogger(__name__)


@dataclass
class ErrorMap:
    """Grid of BoxStats; ``None`` marks a cell with no result."""
    name: str
    row_label: str
    rows: list[int]
    col_label: str
    cols: list[int]
    cells: list[list[BoxStats | None]]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.cols)

    def median_grid(self) -> np.ndarray:
        return np.array([[np.nan if c is None else c.median for c in r] for r in self.cells])

    def q3_grid(self) -> np.ndarray:
        return np.array([[np.nan if c is None else c.q3 for c in r] for r in self.cells])


def error_map(adapt_fn, row_budgets, col_budgets, evaluate, name="errormap",
              row_label="sim", col_label="real") -> ErrorMap:
    """One adapted module per (row, col) cell, scored by ``evaluate(module) -> errors``.

    A cell whose training or evaluation raises is recorded as no result.
    """
    rows, cols = list(row_budgets), list(col_budgets)
    if not rows or not cols:
        raise ValueError("budget lists must be nonempty")
    cells = []
    for r in rows:
        line = []
        for c in cols:
            try:
                line.append(box_stats(evaluate(adapt_fn(r, c))))
            except Exception as exc:  # noqa: BLE001 - a failed cell is data, not a crash
                log.warning("error-map cell (%s=%s, %s=%s) failed: %s", row_label, r, col_label, c, exc)
                line.append(None)
        cells.append(line)
    return ErrorMap(name, row_label, rows, col_label, cols, cells)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NaN"
    if isinstance(x, float):
        return f"{x:.4f}"
    return str(x)


def errormap_csv(em: ErrorMap, stat: str = "median") -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow([f"{em.row_label}\\{em.col_label}"] + [str(c) for c in em.cols])
    grid = em.median_grid() if stat == "median" else em.q3_grid()
    for r, line in zip(em.rows, grid):
        wr.writerow([str(r)] + [_fmt(float(v)) for v in line])
    return buf.getvalue()


def _columns(rows: list[dict]) -> list[str]:
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    return cols


def metrics_csv(rows: list[dict]) -> str:
    cols = _columns(rows)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(cols)
    for r in rows:
        wr.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


# -- SVG ------------------------------------------------------------------------

def _svg(width, height, body: list[str]) -> str:
    head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n')
    return head + "\n".join(body) + "\n</svg>\n"


def _text(x, y, s, size=11, anchor="middle"):
    return (f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" font-family="sans-serif" '
            f'text-anchor="{anchor}">{escape(str(s))}</text>')


def boxplot_svg(title: str, boxes: dict[str, BoxStats], unit: str = "cm") -> str:
    names = list(boxes)
    W, H, L, B, T = 80 + 70 * max(len(names), 1), 320, 55, 45, 30
    finite = [v for b in boxes.values() for v in (b.q1, b.q3, b.median, *b.outliers)]
    top = max(finite) * 1.1 if finite and max(finite) > 0 else 1.0
    ys = lambda v: T + (H - T - B) * (1 - v / top)  # noqa: E731
    body = [_text(W / 2, 18, title, 13)]
    body.append(f'<line x1="{L}" y1="{T}" x2="{L}" y2="{H - B}" stroke="black"/>')
    for k in range(6):
        v = top * k / 5
        body.append(_text(L - 6, ys(v) + 4, f"{v:.1f}", 9, "end"))
    body.append(_text(14, (H - B + T) / 2, unit, 10))
    for i, name in enumerate(names):
        b = boxes[name]
        cx = L + 40 + 70 * i
        iqr = b.q3 - b.q1
        inliers = [b.q1, b.q3]
        lo = max(b.q1 - 1.5 * iqr, 0.0)
        hi = b.q3 + 1.5 * iqr
        body.append(f'<rect x="{cx - 18}" y="{ys(b.q3):.1f}" width="36" '
                    f'height="{max(ys(b.q1) - ys(b.q3), 0.5):.1f}" fill="#9ecae1" stroke="black"/>')
        body.append(f'<line x1="{cx - 18}" y1="{ys(b.median):.1f}" x2="{cx + 18}" '
                    f'y2="{ys(b.median):.1f}" stroke="#d62728" stroke-width="2"/>')
        for a, z in ((inliers[1], min(hi, top)), (inliers[0], lo)):
            body.append(f'<line x1="{cx}" y1="{ys(a):.1f}" x2="{cx}" y2="{ys(z):.1f}" '
                        f'stroke="black" stroke-dasharray="3,2"/>')
        for o in b.outliers:
            y = ys(o)
            body.append(f'<path d="M{cx - 4},{y - 4:.1f} L{cx + 4},{y + 4:.1f} M{cx - 4},'
                        f'{y + 4:.1f} L{cx + 4},{y - 4:.1f}" stroke="black"/>')
        body.append(_text(cx, H - B + 16, name, 10))
    return _svg(W, H, body)


def heatmap_svg(em: ErrorMap, stat: str = "median") -> str:
    grid = em.median_grid() if stat == "median" else em.q3_grid()
    nr, nc = grid.shape
    cw, ch, L, T = 64, 40, 70, 40
    W, H = L + cw * nc + 20, T + ch * nr + 50
    finite = grid[np.isfinite(grid)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    body = [_text(W / 2, 18, f"{em.name} ({stat}, cm)", 13)]
    for i in range(nr):
        r = nr - 1 - i  # first row at the bottom, as in the paper's maps
        for j in range(nc):
            v = grid[r, j]
            x, y = L + cw * j, T + ch * i
            if np.isfinite(v):
                f = 0.0 if hi == lo else (v - lo) / (hi - lo)
                col = f"rgb({int(255 * f)},{int(80 + 100 * (1 - f))},{int(255 * (1 - f))})"
                label = f"{v:.1f}"
            else:
                col, label = "#dddddd", "NaN"
            body.append(f'<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{col}" stroke="white"/>')
            body.append(_text(x + cw / 2, y + ch / 2 + 4, label, 11))
        body.append(_text(L - 8, T + ch * i + ch / 2 + 4, em.rows[r], 10, "end"))
    for j, c in enumerate(em.cols):
        body.append(_text(L + cw * j + cw / 2, T + ch * nr + 16, c, 10))
    body.append(_text(L + cw * nc / 2, T + ch * nr + 36, em.col_label, 11))
    body.append(_text(16, T + ch * nr / 2, em.row_label, 11))
    return _svg(W, H, body)


# -- emission -------------------------------------------------------------------

@dataclass
class ReportBundle:
    config: dict
    metrics: list[dict] = field(default_factory=list)
    error_maps: list[ErrorMap] = field(default_factory=list)
    boxes: dict[str, dict[str, BoxStats]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            # column order survives the sorted-key JSON encoding
            "metrics": {"columns": (cols := _columns(self.metrics)),
                        "rows": [[r.get(c) for c in cols] for r in self.metrics]},
            "error_maps": [{"name": e.name, "row_label": e.row_label, "rows": e.rows,
                            "col_label": e.col_label, "cols": e.cols,
                            "cells": [[None if c is None else c.to_dict() for c in r] for r in e.cells]}
                           for e in self.error_maps],
            "boxes": {k: {n: b.to_dict() for n, b in v.items()} for k, v in self.boxes.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReportBundle":
        def bs(x):
            return None if x is None else BoxStats(x["median"], x["q1"], x["q3"],
                                                    tuple(x["outliers"]), x["n"])
        ems = [ErrorMap(e["name"], e["row_label"], e["rows"], e["col_label"], e["cols"],
                        [[bs(c) for c in r] for r in e["cells"]]) for e in d.get("error_maps", [])]
        boxes = {k: {n: bs(b) for n, b in v.items()} for k, v in d.get("boxes", {}).items()}
        m = d.get("metrics") or {"columns": [], "rows": []}
        metrics = [dict(zip(m["columns"], row)) for row in m["rows"]]
        return cls(d.get("config", {}), metrics, ems, boxes)


def emit_report(bundle: ReportBundle, path) -> list[Path]:
    """Write the bundle under ``path``; identical bundles give byte-identical files."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    files: dict[str, str] = {"metrics.csv": metrics_csv(bundle.metrics)}
    for em in bundle.error_maps:
        files[f"errormap_{em.name}.csv"] = errormap_csv(em, "median")
        files[f"errormap_{em.name}_q3.csv"] = errormap_csv(em, "q3")
        files[f"heatmap_{em.name}.svg"] = heatmap_svg(em, "median")
    for name, boxes in bundle.boxes.items():
        files[f"boxplot_{name}.svg"] = boxplot_svg(name, boxes)
    files["results.json"] = json.dumps(bundle.to_dict(), indent=2, sort_keys=True) + "\n"
    files["manifest.json"] = json.dumps({"config": bundle.config, "files": sorted(files)},
                                        indent=2, sort_keys=True) + "\n"
    written = []
    for name in sorted(files):
        p = out / name
        try:
            p.write_text(files[name])
        except OSError as exc:
            raise OSError(f"cannot write report file {p}: {exc}") from exc
        written.append(p)
    return written
