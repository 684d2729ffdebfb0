"""Loss-curve rendering with machine-readable sidecar summaries.

Every PNG gets a sibling `<name>.summary.json` recording first/last/min/max
per series, so tests and tooling assert on numbers rather than pixels.
"""

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .rundir import atomic_write_bytes, atomic_write_json

PLOT_KINDS = {
    "gan-loss": ("step", ("critic_loss", "wasserstein_estimate", "generator_loss", "grad_penalty")),
    "enhance-loss": ("epoch", ("mean_loss",)),
    "inpaint-trace": ("iter", ("contextual", "perceptual", "total")),
}


class PlotError(Exception):
    pass


def read_history_csv(path, kind: str):
    """Parse a history CSV for the given plot kind; returns (x, {series: values})."""
    if kind not in PLOT_KINDS:
        raise PlotError(f"unknown plot kind {kind!r}, expected one of {sorted(PLOT_KINDS)}")
    x_name, series_names = PLOT_KINDS[kind]
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PlotError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise PlotError(f"{path} is empty")
    expected = [x_name, *series_names]
    if rows[0] != expected:
        raise PlotError(f"{path} header {rows[0]} does not match expected {expected}")
    if len(rows) < 2:
        raise PlotError(f"{path} has no data rows")
    try:
        data = [[float(v) for v in row] for row in rows[1:]]
    except ValueError as exc:
        raise PlotError(f"{path} has a non-numeric cell: {exc}") from exc
    columns = list(zip(*data))
    return list(columns[0]), {name: list(col) for name, col in zip(series_names, columns[1:])}


def _series_summary(values):
    return {"first": values[0], "last": values[-1], "min": min(values), "max": max(values)}


def emit_plot(history_csv, out_png, kind: str) -> Path:
    """Render a line plot PNG and write `<out_png>.summary.json` next to it."""
    x, series = read_history_csv(history_csv, kind)
    x_name, _ = PLOT_KINDS[kind]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, values in series.items():
        ax.plot(x, values, label=name, linewidth=1.0)
    ax.set_xlabel(x_name)
    ax.set_ylabel("loss")
    ax.set_title(kind)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110)
    plt.close(fig)
    atomic_write_bytes(out_png, buf.getvalue())

    summary = {
        "kind": kind,
        "rows": len(x),
        "x": {"name": x_name, "first": x[0], "last": x[-1]},
        "series": {name: _series_summary(values) for name, values in series.items()},
    }
    if kind == "inpaint-trace":
        total, contextual = series["total"], series["contextual"]
        summary["max_abs_total_minus_contextual"] = max(
            abs(t - c) for t, c in zip(total, contextual)
        )
        summary["max_abs_perceptual"] = max(abs(p) for p in series["perceptual"])
    out_png = Path(out_png)
    atomic_write_json(out_png.with_name(out_png.name + ".summary.json"), summary)
    return out_png
