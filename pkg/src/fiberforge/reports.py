"""CSV tables and dependency-free SVG charts for errors and loss curves."""

import csv
import io
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .evaluation import ErrorReport
from .neuralnet import LossCurve
from .pipelines import SweepReport
from .synthdata import CELLS

ERROR_COLUMNS = ("task", "batch_size", "cell_id", "feature", "mean_signed_pct", "mean_abs_pct", "n")
DISPERSION_COLUMNS = ("task", "batch_size", "cell_id", "feature", "sd_signed_pct", "n")
CONFUSION_COLUMNS = ("batch_size", "true_bath", "pred_bath", "count")
LOSS_COLUMNS = ("batch_size", "epoch", "training_loss", "validation_loss")

WIDTH, HEIGHT = 800, 600
MARGIN = dict(left=90, right=190, top=50, bottom=70)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _bs(v) -> str:
    return "" if v is None else str(int(v))


def _table(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def error_csv(reports) -> str:
    rows = []
    for rep in reports:
        for (cell_id, q), e in rep.rows.items():
            rows.append([rep.task, _bs(rep.batch_size), cell_id, q, _num(e.mean_signed_pct), _num(e.mean_abs_pct), e.n])
    return _table(ERROR_COLUMNS, rows)


def dispersion_csv(reports) -> str:
    rows = []
    for rep in reports:
        for (cell_id, q), e in rep.rows.items():
            rows.append([rep.task, _bs(rep.batch_size), cell_id, q, _num(e.sd_signed_pct), e.n])
    return _table(DISPERSION_COLUMNS, rows)


def confusion_csv(reports) -> str:
    rows = []
    for rep in reports:
        for (t, p), count in sorted(rep.confusion.items()):
            rows.append([_bs(rep.batch_size), f"{t:g}", f"{p:g}", count])
    return _table(CONFUSION_COLUMNS, rows)


def loss_csv(curves) -> str:
    """``curves`` maps batch size (or ``None``) to a :class:`LossCurve`."""
    rows = []
    for bs, c in curves.items():
        for i, (tl, vl) in enumerate(zip(c.training_loss, c.validation_loss), start=1):
            rows.append([_bs(bs), i, _num(tl), _num(vl)])
    return _table(LOSS_COLUMNS, rows)


# -- SVG ---------------------------------------------------------------------

def _range(values):
    lo, hi = min(values), max(values)
    if lo == hi:
        pad = abs(lo) * 0.05 or 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_chart(series, title, xlabel, ylabel) -> str:
    """Standalone SVG 1.1 line chart; ``series`` is a list of ``(label, xs, ys)``."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys if math.isfinite(y)]
    x0, x1 = _range(xs_all or [0.0, 1.0])
    y0, y1 = _range(ys_all or [0.0, 1.0])
    left, right, top, bottom = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def px(x):
        return left + (x - x0) / (x1 - x0) * (right - left)

    def py(y):
        return bottom - (y - y0) / (y1 - y0) * (bottom - top)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{(left + right) / 2:.2f}" y="28" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.2f}" y1="{bottom}" x2="{px(t):.2f}" y2="{bottom + 5}" stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{bottom + 20}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{py(t):.2f}" x2="{left}" y2="{py(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{py(t) + 4:.2f}" text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{(left + right) / 2:.2f}" y="{HEIGHT - 25}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="25" y="{(top + bottom) / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 25 {(top + bottom) / 2:.2f})">{escape(ylabel)}</text>'
    )
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = top + 10 + 20 * i
        out.append(f'<line x1="{right + 15}" y1="{ly}" x2="{right + 40}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{right + 45}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def loss_svg(curve: LossCurve, title="Loss") -> str:
    epochs = list(range(1, len(curve) + 1))
    return line_chart(
        [("training", epochs, curve.training_loss), ("validation", epochs, curve.validation_loss)],
        title, "epoch", "mean squared error (standardized)",
    )


def error_vs_batch_svg(reports, quantity: str, task: str) -> str:
    ordered = sorted(reports, key=lambda r: r.batch_size)
    series = []
    for cell in CELLS:
        xs = [r.batch_size for r in ordered]
        ys = [r.rows[(cell.id, quantity)].mean_abs_pct for r in ordered]
        series.append((cell.id, xs, ys))
    return line_chart(series, f"{task}: {quantity}", "mini-batch size", "mean absolute error (%)")


# -- emission ----------------------------------------------------------------

def _write(path: Path, text: str, written: list):
    path.write_text(text, encoding="utf-8")
    written.append(path)


def emit_reports(obj, out_dir) -> list:
    """Write the CSV/SVG files for an ErrorReport, SweepReport or LossCurve.

    Returns the written paths in creation order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if isinstance(obj, LossCurve):
        _write(out / "loss.csv", loss_csv({None: obj}), written)
        _write(out / "loss.svg", loss_svg(obj), written)
    elif isinstance(obj, ErrorReport):
        _write(out / "errors.csv", error_csv([obj]), written)
        _write(out / "dispersion.csv", dispersion_csv([obj]), written)
        if obj.confusion is not None:
            _write(out / "confusion.csv", confusion_csv([obj]), written)
    elif isinstance(obj, SweepReport):
        reports = [e.report for e in obj]
        _write(out / "errors.csv", error_csv(reports), written)
        _write(out / "dispersion.csv", dispersion_csv(reports), written)
        if reports[0].confusion is not None:
            _write(out / "confusion.csv", confusion_csv(reports), written)
        _write(out / "losses.csv", loss_csv({e.batch_size: e.curve for e in obj}), written)
        for e in obj:
            _write(out / f"loss_bs{e.batch_size:02d}.svg", loss_svg(e.curve, f"{obj.direction}, batch size {e.batch_size}"), written)
        for q in reports[0].quantities():
            _write(out / f"errors_{q}.svg", error_vs_batch_svg(reports, q, obj.direction), written)
    else:
        raise TypeError(f"cannot emit reports for {type(obj).__name__}")
    return written
