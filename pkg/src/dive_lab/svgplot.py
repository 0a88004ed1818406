"""Minimal static SVG charts (bar groups and error-bar lines), no plotting dependency."""

from __future__ import annotations

from xml.sax.saxutils import escape

PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb", "#222222")

W, H = 720, 400
LEFT, RIGHT, TOP, BOTTOM = 60, 150, 30, 45


def _num(v: float) -> str:
    return f"{v:.2f}"


def _frame(title: str, ymax: float, xlabel: str, ylabel: str) -> list:
    ph = H - TOP - BOTTOM
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="11">',
        f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<text x="{(LEFT + W - RIGHT) / 2}" y="{H - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{TOP + ph / 2}" text-anchor="middle" transform="rotate(-90 14 {TOP + ph / 2})">'
        f"{escape(ylabel)}</text>",
    ]
    for i in range(5):
        v = ymax * i / 4
        y = H - BOTTOM - ph * i / 4
        out.append(f'<text x="{LEFT - 4}" y="{_num(y + 4)}" text-anchor="end">{v:.3g}</text>')
        out.append(f'<line x1="{LEFT - 3}" y1="{_num(y)}" x2="{LEFT}" y2="{_num(y)}" stroke="black"/>')
    return out


def _legend(names) -> list:
    out = []
    for i, name in enumerate(names):
        y = TOP + 14 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{W - RIGHT + 10}" y="{y}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{W - RIGHT + 24}" y="{y + 9}">{escape(str(name))}</text>')
    return out


def bar_chart(series: dict, title="", xlabel="class id", ylabel="examples") -> str:
    """Grouped bars: one group per category index, one bar per named series."""
    names = list(series)
    ncat = max(len(v) for v in series.values())
    ymax = max(max(v) for v in series.values()) or 1.0
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    group = pw / ncat
    bw = group * 0.8 / len(names)
    out = _frame(title, ymax, xlabel, ylabel)
    for s, name in enumerate(names):
        color = PALETTE[s % len(PALETTE)]
        for k, v in enumerate(series[name]):
            h = ph * float(v) / ymax
            x = LEFT + k * group + group * 0.1 + s * bw
            out.append(
                f'<rect x="{_num(x)}" y="{_num(H - BOTTOM - h)}" width="{_num(bw)}" height="{_num(h)}" fill="{color}"/>'
            )
    step = max(1, ncat // 20)
    for k in range(0, ncat, step):
        out.append(f'<text x="{_num(LEFT + (k + 0.5) * group)}" y="{H - BOTTOM + 14}" text-anchor="middle">{k}</text>')
    out += _legend(names)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_chart(x, series: dict, errors: dict | None = None, title="", xlabel="", ylabel="") -> str:
    """Lines over shared x values with optional symmetric error bars."""
    errors = errors or {}
    names = list(series)
    ymax = max(max(float(v) + float(e) for v, e in zip(series[n], errors.get(n, [0] * len(x)))) for n in names)
    ymax = ymax or 1.0
    xmin, xmax = min(x), max(x)
    span = (xmax - xmin) or 1.0
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(v):
        return LEFT + pw * 0.05 + pw * 0.9 * (v - xmin) / span

    def py(v):
        return H - BOTTOM - ph * v / ymax

    out = _frame(title, ymax, xlabel, ylabel)
    for s, name in enumerate(names):
        color = PALETTE[s % len(PALETTE)]
        pts = " ".join(f"{_num(px(a))},{_num(py(b))}" for a, b in zip(x, series[name]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for a, b, e in zip(x, series[name], errors.get(name, [0] * len(x))):
            out.append(f'<circle cx="{_num(px(a))}" cy="{_num(py(b))}" r="3" fill="{color}"/>')
            if e:
                out.append(
                    f'<line x1="{_num(px(a))}" y1="{_num(py(b - e))}" x2="{_num(px(a))}" y2="{_num(py(b + e))}" '
                    f'stroke="{color}"/>'
                )
    for a in x:
        out.append(f'<text x="{_num(px(a))}" y="{H - BOTTOM + 14}" text-anchor="middle">{a:g}</text>')
    out += _legend(names)
    out.append("</svg>")
    return "\n".join(out) + "\n"
