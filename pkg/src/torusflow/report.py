"""Plot data: per-column time series, a gnuplot script and matplotlib figures."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .flow import CSV_COLUMNS, read_csv  # noqa: E402

LOG_COLUMNS = {"osc_dtu", "residual", "dt"}

GNUPLOT_HEADER = """\
# render with: gnuplot plot.gp
set terminal pngcairo size 900,600
set xlabel "t"
set grid
"""


def write_plotdata(run_dir, out_dir=None, figures=True):
    """Write ``<column>.dat`` files (t, value), ``plot.gp`` and PNG figures.

    Returns the list of written paths.  Raises ``FileNotFoundError`` when the
    run directory holds no diagnostics, ``ValueError`` when it holds no rows.
    """
    run_dir = Path(run_dir)
    csv_path = run_dir / "diagnostics.csv"
    if not csv_path.exists():
        raise FileNotFoundError(f"{run_dir}: no diagnostics.csv")
    records = read_csv(csv_path)
    if not records:
        raise ValueError(f"{csv_path}: no data rows")
    out = Path(out_dir) if out_dir else run_dir / "plotdata"
    out.mkdir(parents=True, exist_ok=True)
    table = np.array([[getattr(r, c) for c in CSV_COLUMNS] for r in records], dtype=float)
    t = table[:, 0]
    written = []
    script = [GNUPLOT_HEADER]
    for j, col in enumerate(CSV_COLUMNS[1:], start=1):
        p = out / f"{col}.dat"
        np.savetxt(p, np.column_stack([t, table[:, j]]), header=f"t {col}", fmt="%.17g")
        written.append(p)
        script.append(f'set output "{col}.png"\n')
        script.append("set logscale y\n" if col in LOG_COLUMNS else "unset logscale y\n")
        script.append(f'plot "{col}.dat" using 1:2 with lines title "{col}"\n')
    gp = out / "plot.gp"
    gp.write_text("".join(script))
    written.append(gp)
    if figures:
        written.extend(render_figures(table, out))
    return written


def render_figures(table, out):
    t = table[:, 0]
    col = {c: table[:, i] for i, c in enumerate(CSV_COLUMNS)}
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    pos = col["osc_dtu"] > 0
    ax.semilogy(t[pos], col["osc_dtu"][pos], label="osc dtu")
    pos = col["residual"] > 0
    ax.semilogy(t[pos], col["residual"][pos], label="residual", ls="--")
    ax.set_xlabel("t")
    ax.legend()
    fig.tight_layout()
    p = out / "decay.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, name in zip(axes.flat, ("c_t", "cone_margin", "ellipticity_trace", "h_t")):
        ax.plot(t, col[name])
        ax.set_title(name)
    for ax in axes[1]:
        ax.set_xlabel("t")
    fig.tight_layout()
    p = out / "monitors.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t, col["max_dtu"], label="max dtu")
    ax.plot(t, col["min_dtu"], label="min dtu")
    ax.plot(t, col["c_t"], label="c(t)", ls=":")
    ax.set_xlabel("t")
    ax.legend()
    fig.tight_layout()
    p = out / "dtu_bounds.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)
    return paths
