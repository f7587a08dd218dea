"""Byte-stable SVG heatmaps of the design space.

Figures are emitted as plain SVG strings (rects and text, no plotting
dependency) so identical inputs always produce identical bytes.  Two
views exist per lattice size: the predictability map, colored by
Lyapunov time on a fixed logarithmic ramp and labeled with the
Lyapunov time and the chaotic fraction, and the winner map, colored
per winning model.
"""

from __future__ import annotations

import math
from typing import Sequence

from .comparison import RegimeCell

CELL_W = 92
CELL_H = 56
MARGIN_LEFT = 72
MARGIN_TOP = 56
MARGIN_BOTTOM = 24

# Fixed blue->yellow ramp over log10(T_L) clamped to [0.3, 30] map steps.
_RAMP_DOMAIN = (0.3, 30.0)
_RAMP_STOPS = (
    (0.00, (38, 18, 84)),
    (0.25, (59, 82, 139)),
    (0.50, (33, 145, 140)),
    (0.75, (94, 201, 98)),
    (1.00, (253, 231, 37)),
)

# Categorical palette for winner maps, assigned to models in sorted order.
_WINNER_COLORS = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee",
                  "#aa3377", "#bbbbbb", "#222255", "#225522", "#552222")


def _ramp_color(t_l: float) -> str:
    lo, hi = _RAMP_DOMAIN
    if math.isinf(t_l) or t_l >= hi:
        t = 1.0
    else:
        clamped = min(max(t_l, lo), hi)
        t = (math.log10(clamped) - math.log10(lo)) / (math.log10(hi) - math.log10(lo))
    for (t0, c0), (t1, c1) in zip(_RAMP_STOPS, _RAMP_STOPS[1:]):
        if t <= t1:
            f = (t - t0) / (t1 - t0)
            rgb = tuple(round(a + f * (b - a)) for a, b in zip(c0, c1))
            return "#{:02x}{:02x}{:02x}".format(*rgb)
    return "#{:02x}{:02x}{:02x}".format(*_RAMP_STOPS[-1][1])


def _fmt(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return f"{value:.3g}"


def _svg_header(width: int, height: int, title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" font-family="Helvetica, Arial, sans-serif">',
        f'<text x="{MARGIN_LEFT}" y="24" font-size="15">{title}</text>',
    ]


def _grid_geometry(cells: Sequence[RegimeCell]):
    k_values = sorted({c.K for c in cells})
    rho_values = sorted({c.rho for c in cells})
    width = MARGIN_LEFT + CELL_W * len(rho_values) + 16
    height = MARGIN_TOP + CELL_H * len(k_values) + MARGIN_BOTTOM
    return k_values, rho_values, width, height


def _axes(parts: list[str], k_values, rho_values):
    for col, rho in enumerate(rho_values):
        x = MARGIN_LEFT + col * CELL_W + CELL_W // 2
        parts.append(f'<text x="{x}" y="{MARGIN_TOP - 10}" font-size="11" '
                     f'text-anchor="middle">rho={rho!r}</text>')
    for row, k in enumerate(k_values):
        y = MARGIN_TOP + row * CELL_H + CELL_H // 2 + 4
        parts.append(f'<text x="{MARGIN_LEFT - 8}" y="{y}" font-size="11" '
                     f'text-anchor="end">K={k!r}</text>')


def design_space_svg(cells: Sequence[RegimeCell], n_value: int) -> str:
    """Predictability heatmap for one lattice size.

    Each cell is colored by its Lyapunov time and labeled with the
    Lyapunov time and the chaotic fraction.
    """
    cells = [c for c in cells if c.N == n_value]
    if not cells:
        raise ValueError(f"no cells for N={n_value}")
    k_values, rho_values, width, height = _grid_geometry(cells)
    parts = _svg_header(width, height,
                        f"Design space at N={n_value}: Lyapunov time / chaotic fraction")
    _axes(parts, k_values, rho_values)
    index = {(c.K, c.rho): c for c in cells}
    for row, k in enumerate(k_values):
        for col, rho in enumerate(rho_values):
            cell = index.get((k, rho))
            if cell is None:
                continue
            x = MARGIN_LEFT + col * CELL_W
            y = MARGIN_TOP + row * CELL_H
            color = _ramp_color(cell.lyapunov_time)
            parts.append(f'<rect x="{x}" y="{y}" width="{CELL_W}" '
                         f'height="{CELL_H}" fill="{color}" stroke="#ffffff"/>')
            label_fill = "#000000" if cell.lyapunov_time >= 2.0 else "#ffffff"
            parts.append(
                f'<text x="{x + CELL_W // 2}" y="{y + CELL_H // 2 - 2}" '
                f'font-size="11" text-anchor="middle" fill="{label_fill}">'
                f'T_L={_fmt(cell.lyapunov_time)}</text>')
            parts.append(
                f'<text x="{x + CELL_W // 2}" y="{y + CELL_H // 2 + 13}" '
                f'font-size="11" text-anchor="middle" fill="{label_fill}">'
                f'{cell.chaos_fraction * 100:.0f}% chaotic</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def winner_map_svg(cells: Sequence[RegimeCell], n_value: int) -> str:
    """Per-cell winning model for one lattice size.

    Cells without a winner (fewer than one valid model) stay gray;
    colors are assigned to model names in sorted order.
    """
    cells = [c for c in cells if c.N == n_value]
    if not cells:
        raise ValueError(f"no cells for N={n_value}")
    k_values, rho_values, width, height = _grid_geometry(cells)
    models = sorted({c.winner for c in cells if c.winner})
    colors = {m: _WINNER_COLORS[i % len(_WINNER_COLORS)]
              for i, m in enumerate(models)}
    parts = _svg_header(width, height, f"Winner map at N={n_value}")
    _axes(parts, k_values, rho_values)
    index = {(c.K, c.rho): c for c in cells}
    for row, k in enumerate(k_values):
        for col, rho in enumerate(rho_values):
            cell = index.get((k, rho))
            if cell is None:
                continue
            x = MARGIN_LEFT + col * CELL_W
            y = MARGIN_TOP + row * CELL_H
            fill = colors.get(cell.winner, "#dddddd")
            parts.append(f'<rect x="{x}" y="{y}" width="{CELL_W}" '
                         f'height="{CELL_H}" fill="{fill}" stroke="#ffffff"/>')
            name = cell.winner or "-"
            parts.append(
                f'<text x="{x + CELL_W // 2}" y="{y + CELL_H // 2 - 2}" '
                f'font-size="11" text-anchor="middle" fill="#ffffff">{name}</text>')
            if cell.winner:
                parts.append(
                    f'<text x="{x + CELL_W // 2}" y="{y + CELL_H // 2 + 13}" '
                    f'font-size="10" text-anchor="middle" fill="#ffffff">'
                    f'+{_fmt(cell.margin)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
