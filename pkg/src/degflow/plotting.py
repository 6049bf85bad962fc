"""PNG figures rendered from check rows (optional; CSV stays the primary output)."""

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _safe(name):
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def plot_rows(path, title, rows, logy=False):
    series = defaultdict(list)
    for r in rows:
        series[(r["check"], r["rung"])].append((r["t"], r["value"]))
    if logy and not any(abs(r["value"]) > 0 for r in rows if np.isfinite(r["value"])):
        logy = False
    fig, ax = plt.subplots(figsize=(6, 4))
    for (check, rung), pts in sorted(series.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        pts = sorted(p for p in pts if np.isfinite(p[1]))
        if not pts:
            continue
        t, v = zip(*pts)
        label = check if rung < 0 else f"{check} rung {rung}"
        ax.plot(t, np.abs(v) if logy else v, marker=".", lw=1, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_title(title)
    if len(series) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_gaps(path, lf):
    if lf.gaps.shape[1] == 0:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    for j in range(lf.gaps.shape[1]):
        ax.semilogy(lf.times, np.maximum(lf.gaps[:, j], 1e-300), marker=".", lw=1, label=f"|u_{j} - u_{j + 1}|")
    ax.set_xlabel("t")
    ax.set_title("rung gaps (sup norm)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_figures(directory, results, lf):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for res in results:
        rows = [r for r in res["rows"] if np.isfinite(r["t"])]
        if len({r["t"] for r in rows}) < 2:
            continue
        logy = res["name"].startswith(("weak", "residual", "uniqueness", "gauge"))
        plot_rows(d / f"{_safe(res['name'])}.png", res["name"], rows, logy=logy)
    plot_gaps(d / "rung_gaps.png", lf)
