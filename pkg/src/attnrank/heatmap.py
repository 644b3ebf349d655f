"""Binned accuracy heatmaps (layer rank bound x database rank bound) and a
small dependency-free SVG renderer."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LAYER_BIN = 5
DB_BIN = 10


def bin_edge(x: float, width: int) -> int:
    """Right edge of the half-open bin (edge - width, edge] holding ``x``."""
    return int(math.ceil(x / width) * width)


@dataclass
class HeatmapGrid:
    layer_edges: list[int]     # row labels i: layer bound in (i-5, i]
    db_edges: list[int]        # column labels j: database bound in (j-10, j]
    mean: np.ndarray           # (rows, cols), NaN where empty
    count: np.ndarray          # (rows, cols) ints
    column: str = ""
    layer_bin: int = LAYER_BIN
    db_bin: int = DB_BIN

    def cell(self, i: int, j: int) -> tuple[float, int]:
        r, c = self.layer_edges.index(i), self.db_edges.index(j)
        return float(self.mean[r, c]), int(self.count[r, c])

    def is_empty(self, i: int, j: int) -> bool:
        return self.cell(i, j)[1] == 0


def bin_heatmap(results: list[dict], accuracy_column: str,
                layer_key: str = "layer_lb", db_key: str = "db_rank_ub",
                layer_bin: int = LAYER_BIN, db_bin: int = DB_BIN) -> HeatmapGrid:
    """Average ``accuracy_column`` over records in each (layer bin, db bin) cell.

    Rows whose status is not ``"ok"`` are skipped.
    """
    rows = [r for r in results if r.get("status", "ok") == "ok"]
    if not rows:
        raise ValueError("no results to bin")
    if accuracy_column not in rows[0]:
        raise KeyError(f"unknown column {accuracy_column!r}")
    li = [bin_edge(r[layer_key], layer_bin) for r in rows]
    dj = [bin_edge(r[db_key], db_bin) for r in rows]
    layer_edges = list(range(min(li), max(li) + 1, layer_bin))
    db_edges = list(range(min(dj), max(dj) + 1, db_bin))
    total = np.zeros((len(layer_edges), len(db_edges)))
    count = np.zeros_like(total, dtype=int)
    for r, i, j in zip(rows, li, dj):
        a, b = layer_edges.index(i), db_edges.index(j)
        total[a, b] += float(r[accuracy_column])
        count[a, b] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return HeatmapGrid(layer_edges, db_edges, mean, count, accuracy_column, layer_bin, db_bin)


def _color(x: float) -> str:
    # linear ramp from white-ish yellow (0) to dark blue (1)
    lo = np.array([255, 247, 188])
    hi = np.array([8, 48, 107])
    c = lo + (hi - lo) * min(max(x, 0.0), 1.0)
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in c)


def render_heatmap(grid: HeatmapGrid, path, title: str | None = None, cell: int = 36) -> None:
    """Write ``grid`` as a standalone SVG.

    Rows are layer bins (largest at the top), columns database bins; empty
    cells are hatched. The output depends only on the grid, so identical grids
    give identical bytes.
    """
    nr, nc = grid.mean.shape
    if nr == 0 or nc == 0 or int(grid.count.sum()) == 0:
        raise ValueError("nothing to render: grid has no populated cells")
    left, top, right, bottom = 70, 40, 90, 60
    W = left + nc * cell + right
    H = top + nr * cell + bottom
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="10">',
        "<defs>",
        '<pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" '
        'patternTransform="rotate(45)"><rect width="6" height="6" fill="#ffffff"/>'
        '<line x1="0" y1="0" x2="0" y2="6" stroke="#bbbbbb" stroke-width="2"/></pattern>',
        '<linearGradient id="scale" x1="0" y1="1" x2="0" y2="0">'
        f'<stop offset="0" stop-color="{_color(0.0)}"/><stop offset="1" stop-color="{_color(1.0)}"/>'
        "</linearGradient>",
        "</defs>",
        f'<rect width="{W}" height="{H}" fill="#ffffff"/>',
    ]
    if title is None:
        title = f"mean {grid.column}" if grid.column else "mean accuracy"
    out.append(f'<text x="{left + nc * cell / 2:g}" y="20" text-anchor="middle" font-size="12">{_esc(title)}</text>')
    for r in range(nr):
        y = top + (nr - 1 - r) * cell
        for c in range(nc):
            x = left + c * cell
            n = int(grid.count[r, c])
            if n == 0:
                out.append(f'<rect class="cell empty" x="{x}" y="{y}" width="{cell}" height="{cell}" '
                           'fill="url(#hatch)" stroke="#ffffff"/>')
                continue
            m = float(grid.mean[r, c])
            out.append(f'<rect class="cell" x="{x}" y="{y}" width="{cell}" height="{cell}" '
                       f'fill="{_color(m)}" stroke="#ffffff"><title>{m:.3f} (n={n})</title></rect>')
            ink = "#ffffff" if m > 0.55 else "#000000"
            out.append(f'<text x="{x + cell / 2:g}" y="{y + cell / 2 + 3:g}" text-anchor="middle" '
                       f'fill="{ink}">{m:.2f}</text>')
        out.append(f'<text x="{left - 6}" y="{y + cell / 2 + 3:g}" text-anchor="end">{grid.layer_edges[r]}</text>')
    for c in range(nc):
        x = left + c * cell + cell / 2
        out.append(f'<text x="{x:g}" y="{top + nr * cell + 14}" text-anchor="middle">{grid.db_edges[c]}</text>')
    out.append(f'<text x="{left + nc * cell / 2:g}" y="{H - 15}" text-anchor="middle">'
               f"database rank bound (bin width {grid.db_bin})</text>")
    out.append(f'<text x="15" y="{top + nr * cell / 2:g}" text-anchor="middle" '
               f'transform="rotate(-90 15 {top + nr * cell / 2:g})">layer rank bound (bin width {grid.layer_bin})</text>')
    sx = left + nc * cell + 30
    sh = nr * cell
    out.append(f'<rect x="{sx}" y="{top}" width="14" height="{sh}" fill="url(#scale)" stroke="#888888"/>')
    out.append(f'<text x="{sx + 20}" y="{top + 4}">1</text>')
    out.append(f'<text x="{sx + 20}" y="{top + sh + 3}">0</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
