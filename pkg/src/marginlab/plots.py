"""Standalone SVG figures written by hand so the output is plain, diffable text."""

from __future__ import annotations

from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 320
PAD_L, PAD_R, PAD_T, PAD_B = 56, 16, 32, 44
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, xlim, ylim):
        self.x0, self.x1 = _pad_range(*xlim)
        self.y0, self.y1 = _pad_range(*ylim)
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
            f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" text-anchor="middle">{escape(xlabel)}</text>',
            f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" '
            f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
        ]
        self._axes()

    def sx(self, x: float) -> float:
        return PAD_L + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - PAD_L - PAD_R)

    def sy(self, y: float) -> float:
        return HEIGHT - PAD_B - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - PAD_T - PAD_B)

    def _axes(self):
        bx, by = PAD_L, HEIGHT - PAD_B
        self.parts.append(f'<path d="M{bx} {PAD_T}V{by}H{WIDTH - PAD_R}" fill="none" stroke="black"/>')
        for i in range(5):
            xv = self.x0 + i * (self.x1 - self.x0) / 4
            yv = self.y0 + i * (self.y1 - self.y0) / 4
            self.parts.append(f'<text x="{_f(self.sx(xv))}" y="{by + 14}" text-anchor="middle">{xv:.3g}</text>')
            self.parts.append(f'<text x="{bx - 4}" y="{_f(self.sy(yv) + 4)}" text-anchor="end">{yv:.3g}</text>')

    def add(self, element: str):
        self.parts.append(element)

    def legend(self, names):
        for i, name in enumerate(names):
            y = PAD_T + 6 + 14 * i
            c = PALETTE[i % len(PALETTE)]
            self.parts.append(f'<rect x="{WIDTH - PAD_R - 110}" y="{y - 8}" width="10" height="10" fill="{c}"/>')
            self.parts.append(f'<text x="{WIDTH - PAD_R - 96}" y="{y + 1}">{escape(str(name))}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _pad_range(lo: float, hi: float):
    lo, hi = float(lo), float(hi)
    if hi <= lo:
        return lo - 0.5, hi + 0.5
    return lo, hi


def histogram_svg(hist: dict, title: str, xlabel: str = "value") -> str:
    edges, counts = hist["edges"], hist["counts"]
    c = _Canvas(title, xlabel, "count", (edges[0], edges[-1]), (0, max(max(counts), 1)))
    for lo, hi, n in zip(edges[:-1], edges[1:], counts):
        if n:
            x, w = c.sx(lo), c.sx(hi) - c.sx(lo)
            y = c.sy(n)
            c.add(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(c.sy(0) - y)}" '
                  f'fill="{PALETTE[0]}" stroke="white" stroke-width="0.5"/>')
    return c.render()


def _polyline(c: _Canvas, xs, ys, colour: str, step: bool = False) -> str:
    pts, prev = [], None
    for x, y in zip(xs, ys):
        if step and prev is not None:
            pts.append(f"{_f(c.sx(x))},{_f(c.sy(prev))}")
        pts.append(f"{_f(c.sx(x))},{_f(c.sy(y))}")
        prev = y
    return f'<polyline points="{" ".join(pts)}" fill="none" stroke="{colour}" stroke-width="1.5"/>'


def cdf_svg(series: dict, title: str, xlabel: str = "margin") -> str:
    """``series`` maps a name to ``{"x": [...], "p": [...]}``."""
    xs = [v for s in series.values() for v in s["x"]]
    c = _Canvas(title, xlabel, "cumulative fraction", (min(xs, default=0), max(xs, default=1)), (0, 1))
    for i, s in enumerate(series.values()):
        c.add(_polyline(c, [s["x"][0]] + s["x"], [0.0] + s["p"], PALETTE[i % len(PALETTE)], step=True)
              if s["x"] else "")
    c.legend(series.keys())
    return c.render()


def bars_svg(values: dict, title: str, ylabel: str = "accuracy", errors: dict | None = None) -> str:
    names = list(values)
    top = max([values[k] + (errors or {}).get(k, 0.0) for k in names] + [1e-12])
    c = _Canvas(title, "", ylabel, (0, max(len(names), 1)), (0, max(top, 1.0)))
    for i, k in enumerate(names):
        x0, x1 = c.sx(i + 0.15), c.sx(i + 0.85)
        y = c.sy(values[k])
        c.add(f'<rect x="{_f(x0)}" y="{_f(y)}" width="{_f(x1 - x0)}" height="{_f(c.sy(0) - y)}" '
              f'fill="{PALETTE[i % len(PALETTE)]}"/>')
        c.add(f'<text x="{_f((x0 + x1) / 2)}" y="{HEIGHT - PAD_B + 28}" text-anchor="middle">{escape(str(k))}</text>')
        if errors and k in errors:
            xm = (x0 + x1) / 2
            c.add(f'<path d="M{_f(xm)} {_f(c.sy(values[k] - errors[k]))}V{_f(c.sy(values[k] + errors[k]))}" '
                  f'stroke="black"/>')
    return c.render()


def line_svg(xs, series: dict, title: str, xlabel: str, ylabel: str) -> str:
    """Curves over a shared, sorted x grid (e.g. a lambda sweep)."""
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    xs = [xs[i] for i in order]
    ys_all = [v for ys in series.values() for v in ys]
    c = _Canvas(title, xlabel, ylabel, (xs[0], xs[-1]), (min(ys_all), max(ys_all)))
    for i, ys in enumerate(series.values()):
        ys = [ys[j] for j in order]
        colour = PALETTE[i % len(PALETTE)]
        c.add(_polyline(c, xs, ys, colour))
        for x, y in zip(xs, ys):
            c.add(f'<circle cx="{_f(c.sx(x))}" cy="{_f(c.sy(y))}" r="2.5" fill="{colour}"/>')
    c.legend(series.keys())
    return c.render()


def scatter_svg(points, labels, title: str, max_points: int = 2000) -> str:
    """2-D embedding scatter coloured by class; large sets are thinned by stride."""
    pts = [(float(p[0]), float(p[1])) for p in points]
    labs = [int(v) for v in labels]
    stride = max(1, -(-len(pts) // max_points))
    pts, labs = pts[::stride], labs[::stride]
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    c = _Canvas(title, "z1", "z2", (min(xs, default=0), max(xs, default=1)), (min(ys, default=0), max(ys, default=1)))
    for (x, y), lab in zip(pts, labs):
        c.add(f'<circle cx="{_f(c.sx(x))}" cy="{_f(c.sy(y))}" r="1.8" fill="{PALETTE[lab % len(PALETTE)]}" '
              f'fill-opacity="0.6"/>')
    c.legend([f"class {k + 1}" for k in sorted(set(labs))])
    return c.render()
