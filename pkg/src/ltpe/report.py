"""CSV and SVG writers.

Every CSV starts with one comment line holding the resolved configuration
as sorted JSON, which is enough to regenerate the file. Floats are written
with ``repr`` so output bytes depend only on the computed values.
"""
from __future__ import annotations

import io
import json
import math

WEAK_ERROR_COLUMNS = ("model", "theta", "phi", "h", "h_ref", "T", "M", "seed", "error", "half_width")
DENSITY_COLUMNS = ("model", "theta", "h", "T", "M", "seed", "bin_left", "bin_right", "height")
MOMENT_COLUMNS = ("model", "theta", "h", "p", "step", "t", "mean_norm_2p")
VERIFY_COLUMNS = ("check", "model", "theta", "h", "param_p", "verdict", "fitted_value", "r2", "seed")
SAMPLE_COLUMNS = ("model", "theta", "h", "T", "seed", "path", "component", "value")


def header_line(config):
    return "# ltpe " + json.dumps(config, sort_keys=True, separators=(",", ":")) + "\n"


def read_header(path):
    """Parse the resolved configuration back out of a CSV header."""
    with open(path) as fh:
        line = fh.readline()
    if not line.startswith("# ltpe "):
        raise ValueError(f"{path} has no ltpe header")
    return json.loads(line[len("# ltpe "):])


def _fmt(value):
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(config, columns, rows):
    buf = io.StringIO()
    buf.write(header_line(config))
    buf.write(",".join(columns) + "\n")
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} fields, schema has {len(columns)}")
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def write_csv(path, config, columns, rows):
    text = render_csv(config, columns, rows)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return text


def loglog_svg(series, title="", width=640, height=480):
    """Log2-log2 plot of ``{label: [(h, error), ...]}`` with dashed slope-0.5/1 guides."""
    pts = [(h, e) for s in series.values() for h, e in s if h > 0 and e > 0]
    if not pts:
        raise ValueError("nothing to plot")
    lx = [math.log2(h) for h, _ in pts]
    ly = [math.log2(e) for _, e in pts]
    x0, x1 = min(lx) - 0.5, max(lx) + 0.5
    y0, y1 = min(ly) - 1.0, max(ly) + 1.0
    ml, mr, mt, mb = 70, 150, 40, 50

    def px(v):
        return ml + (v - x0) / (x1 - x0) * (width - ml - mr)

    def py(v):
        return height - mb - (v - y0) / (y1 - y0) * (height - mt - mb)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle">{title}</text>',
        f'<line x1="{ml}" y1="{py(y0):.2f}" x2="{px(x1):.2f}" y2="{py(y0):.2f}" stroke="black"/>',
        f'<line x1="{ml}" y1="{py(y0):.2f}" x2="{ml}" y2="{py(y1):.2f}" stroke="black"/>',
        f'<text x="{(ml + px(x1)) / 2:.1f}" y="{height - 12}" text-anchor="middle">log2 h</text>',
        f'<text x="16" y="{height / 2:.1f}" transform="rotate(-90 16 {height / 2:.1f})" '
        f'text-anchor="middle">log2 weak error</text>',
    ]
    for k in range(math.ceil(x0), math.floor(x1) + 1):
        out.append(f'<text x="{px(k):.2f}" y="{py(y0) + 16:.2f}" text-anchor="middle">{k}</text>')
    for k in range(math.ceil(y0), math.floor(y1) + 1, 2):
        out.append(f'<text x="{ml - 6}" y="{py(k) + 4:.2f}" text-anchor="end">{k}</text>')
    # reference slopes anchored at the top-right data point
    ax, ay = max(lx), max(ly)
    for slope, dash in ((0.5, "6,4"), (1.0, "2,3")):
        xa, xb = x0 + 0.5, ax
        out.append(
            f'<line x1="{px(xa):.2f}" y1="{py(ay - slope * (ax - xa)):.2f}" x2="{px(xb):.2f}" '
            f'y2="{py(ay):.2f}" stroke="gray" stroke-dasharray="{dash}"/>'
        )
    legend_y = mt + 10
    for i, (label, s) in enumerate(series.items()):
        c = colors[i % len(colors)]
        good = [(math.log2(h), math.log2(e)) for h, e in s if h > 0 and e > 0]
        path = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in good)
        out.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        for a, b in good:
            out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{c}"/>')
        ly_ = legend_y + 18 * i
        out.append(f'<line x1="{width - mr + 10}" y1="{ly_}" x2="{width - mr + 30}" y2="{ly_}" '
                   f'stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{width - mr + 35}" y="{ly_ + 4}">{label}</text>')
    base = legend_y + 18 * len(series)
    out.append(f'<text x="{width - mr + 10}" y="{base + 4}">slope 0.5 (dashed)</text>')
    out.append(f'<text x="{width - mr + 10}" y="{base + 22}">slope 1 (dotted)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
