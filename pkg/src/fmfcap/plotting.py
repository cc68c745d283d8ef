"""Result CSV to gnuplot data blocks and a bare-bones SVG line chart."""

from __future__ import annotations

import math
import os
from collections import defaultdict

from .experiments import read_rows

# fixed palette, assigned in sorted-series order
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]


class PlotDataError(ValueError):
    pass


def _num(s):
    return float(s) if s not in ("", "nan", "-") else math.nan


def collect_series(rows) -> dict:
    """``{name: [(x, y), ...]}``; x is XT when the file sweeps XT, else SNR."""
    rows = [r for r in rows if r["kind"] != "crossing" and r["status"] in ("ok", "max_iter")]
    xts = {r["xt2_db"] for r in rows}
    use_xt = len(xts - {"nan"}) > 1
    series = defaultdict(list)
    for r in rows:
        name = f"{r['method']}:{r['kind']}:M{r['m']}:s{r['seed']}"
        x = _num(r["xt2_db"] if use_xt else r["snr_db"])
        series[name].append((x, _num(r["bits"])))
    return {k: sorted(v) for k, v in sorted(series.items())}


def write_dat(series: dict, path) -> None:
    with open(path, "w") as f:
        for i, (name, pts) in enumerate(series.items()):
            if i:
                f.write("\n\n")
            f.write(f"# {name}\n")
            for x, y in pts:
                f.write(f"{x:.6g} {y:.6f}\n")


def read_dat(path) -> dict:
    out = {}
    name = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line.startswith("# "):
                name = line[2:]
                out[name] = []
            elif line:
                x, y = line.split()
                out[name].append((float(x), float(y)))
    return out


def write_svg(series: dict, path, width=640, height=400, xlabel="", ylabel="bits/symbol") -> None:
    pts = [p for v in series.values() for p in v if math.isfinite(p[0]) and math.isfinite(p[1])]
    if not pts:
        raise PlotDataError("no finite points to draw")
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(0.0, min(p[1] for p in pts)), max(p[1] for p in pts)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    ml, mr, mt, mb = 60, 180, 20, 45
    sx = (width - ml - mr) / (x1 - x0)
    sy = (height - mt - mb) / (y1 - y0)

    def px(x, y):
        return f"{ml + (x - x0) * sx:.2f},{height - mb - (y - y0) * sy:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{ml}" y="{mt}" width="{width - ml - mr}" height="{height - mt - mb}" fill="none" stroke="#000"/>',
        f'<text x="{ml}" y="{height - mb + 15}">{x0:.3g}</text>',
        f'<text x="{width - mr}" y="{height - mb + 15}" text-anchor="end">{x1:.3g}</text>',
        f'<text x="{ml - 5}" y="{height - mb}" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{ml - 5}" y="{mt + 10}" text-anchor="end">{y1:.3g}</text>',
        f'<text x="{(width - mr + ml) / 2:.0f}" y="{height - 8}" text-anchor="middle">{xlabel}</text>',
        f'<text x="14" y="{(height - mb + mt) / 2:.0f}" transform="rotate(-90 14 {(height - mb + mt) / 2:.0f})" '
        f'text-anchor="middle">{ylabel}</text>',
    ]
    for i, (name, v) in enumerate(series.items()):
        c = COLORS[i % len(COLORS)]
        good = [p for p in v if math.isfinite(p[0]) and math.isfinite(p[1])]
        if good:
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="'
                       + " ".join(px(x, y) for x, y in good) + '"/>')
        out.append(f'<text x="{width - mr + 8}" y="{mt + 12 + 14 * i}" fill="{c}">{name}</text>')
    out.append("</svg>\n")
    with open(path, "w") as f:
        f.write("\n".join(out))


def emit_plot_data(csv_path, out_dir=None, svg=True) -> list:
    """Write ``<stem>.dat`` (one gnuplot index per series) and optionally ``<stem>.svg``."""
    rows = read_rows(csv_path)
    series = collect_series(rows)
    if not series:
        raise PlotDataError(f"{csv_path}: no plottable rows")
    out_dir = out_dir or os.path.dirname(os.path.abspath(csv_path))
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(csv_path))[0]
    dat = os.path.join(out_dir, stem + ".dat")
    write_dat(series, dat)
    written = [dat]
    if svg:
        xs = {r["xt2_db"] for r in rows} - {"nan"}
        path = os.path.join(out_dir, stem + ".svg")
        write_svg(series, path, xlabel="DEMUX XT2 (dB)" if len(xs) > 1 else "SNR (dB)")
        written.append(path)
    return written
