"""Plain SVG plots and the recovered-vs-hidden parameter table.

Output is fully determined by the inputs (no timestamps), so repeated
reports are byte-identical.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from simgap.actuator import PARAM_NAMES, ActuatorParams
from simgap.cmaes import GenerationRecord

HW_COLOR = "#1f77b4"
SIM_COLOR = "#d62728"


def _svg(width: int, height: int, body: list[str]) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n"
    )


def _f(v: float) -> str:
    return f"{v:.2f}"


def history_svg(history: Sequence[GenerationRecord], width: int = 640, height: int = 400) -> str:
    """Best-so-far and generation-mean fitness against generation, log-scaled y."""
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    gens = [r.generation for r in history]
    series = {
        "best": [r.best for r in history],
        "generation mean": [r.mean for r in history],
    }
    finite = [v for vals in series.values() for v in vals if math.isfinite(v) and v > 0]
    lo = math.log10(min(finite)) if finite else -1.0
    hi = math.log10(max(finite)) if finite else 0.0
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    g_max = max(gens[-1], 1) if gens else 1

    def xy(g: float, v: float) -> tuple[float, float]:
        x = left + pw * g / g_max
        y = top + ph * (1 - (math.log10(v) - lo) / (hi - lo))
        return x, y

    body = [
        f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">Calibration fitness history</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(int(math.floor(lo)), int(math.ceil(hi)) + 1):
        if lo <= k <= hi:
            _, y = xy(0, 10.0**k)
            body.append(f'<line x1="{left}" y1="{_f(y)}" x2="{left + pw}" y2="{_f(y)}" stroke="#ddd"/>')
            body.append(f'<text x="{left - 6}" y="{_f(y + 4)}" text-anchor="end">1e{k}</text>')
    for g in np.linspace(0, g_max, 6):
        x, _ = xy(g, 10.0**lo)
        body.append(f'<text x="{_f(x)}" y="{top + ph + 16}" text-anchor="middle">{int(round(g))}</text>')
    body.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">generation</text>')
    for (name, vals), color in zip(series.items(), (SIM_COLOR, "#888")):
        pts = [xy(g, v) for g, v in zip(gens, vals) if math.isfinite(v) and v > 0]
        if pts:
            path = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
            body.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
    body.append(f'<text x="{left + 10}" y="{top + 16}" fill="{SIM_COLOR}">best so far</text>')
    body.append(f'<text x="{left + 10}" y="{top + 30}" fill="#888">generation mean</text>')
    return _svg(width, height, body)


def histogram_svg(
    hardware: np.ndarray,
    simulated: np.ndarray,
    names: Sequence[str],
    bins: int = 50,
    columns: int = 6,
) -> str:
    """Grid of per-feature histogram overlays (hardware vs simulated, density-normalized)."""
    if hardware.shape[1] != simulated.shape[1] or len(names) != hardware.shape[1]:
        raise ValueError("feature column mismatch")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    cell_w, cell_h, pad = 170, 110, 18
    n = hardware.shape[1]
    rows = -(-n // columns)
    width, height = columns * cell_w, rows * cell_h + 30
    body = [
        f'<text x="10" y="18" font-size="13">Feature histograms: '
        f'<tspan fill="{HW_COLOR}">hardware</tspan> vs <tspan fill="{SIM_COLOR}">simulated</tspan></text>'
    ]
    for j in range(n):
        x0 = (j % columns) * cell_w
        y0 = 30 + (j // columns) * cell_h
        both = np.concatenate([hardware[:, j], simulated[:, j]])
        lo, hi = float(both.min()), float(both.max())
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, bins + 1)
        h_hw, _ = np.histogram(hardware[:, j], edges, density=True)
        h_sim, _ = np.histogram(simulated[:, j], edges, density=True)
        peak = max(h_hw.max(), h_sim.max(), 1e-12)
        pw, ph = cell_w - 2 * pad, cell_h - 2 * pad
        body.append(f'<text x="{x0 + pad}" y="{y0 + 12}">{escape(names[j])}</text>')
        body.append(
            f'<rect x="{x0 + pad}" y="{y0 + pad}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>'
        )
        for counts, color in ((h_hw, HW_COLOR), (h_sim, SIM_COLOR)):
            pts = []
            for k, c in enumerate(counts):
                xa = x0 + pad + pw * k / bins
                xb = x0 + pad + pw * (k + 1) / bins
                y = y0 + pad + ph * (1 - c / peak)
                pts += [f"{_f(xa)},{_f(y)}", f"{_f(xb)},{_f(y)}"]
            body.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" stroke-width="1"/>')
    return _svg(width, height, body)


def recovery_table(recovered: ActuatorParams, hidden: ActuatorParams | None) -> str:
    """Fixed-width table of recovered parameters, with errors when the hidden truth is supplied."""
    lines = ["# ORACLE OUTPUT: compares calibration results against the sealed hidden parameters."]
    if hidden is None:
        lines = ["# no hidden parameter file given; recovered values only"]
        lines.append(f"{'parameter':<15} {'recovered':>12}")
        lines += [f"{n:<15} {getattr(recovered, n):>12.5f}" for n in PARAM_NAMES]
        return "\n".join(lines) + "\n"
    lines.append(f"{'parameter':<15} {'recovered':>12} {'hidden':>12} {'abs_err':>10} {'rel_err':>8}")
    for n in PARAM_NAMES:
        r, h = float(getattr(recovered, n)), float(getattr(hidden, n))
        rel = abs(r - h) / abs(h) if h != 0 else math.inf
        lines.append(f"{n:<15} {r:>12.5f} {h:>12.5f} {abs(r - h):>10.5f} {rel:>8.3f}")
    return "\n".join(lines) + "\n"


def write_text(path: Path, text: str) -> Path:
    path.write_text(text)
    return path
