"""Mean ± sd band data per scenario and an optional SVG rendering of it."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

PLOT_COLUMNS = ["k", "cpc_mean", "cpc_lo", "cpc_hi", "psc_mean", "psc_lo", "psc_hi"]

# Fixed salt and no date metadata keep reruns byte-identical.
matplotlib.rcParams["svg.hashsalt"] = "cpcscan"


def band_frame(report, scenario: str) -> pd.DataFrame:
    rows = []
    for k in report.config.ks:
        row = [k]
        for method in ("CPC", "PSC"):
            cell = report.cell(scenario, method, k)
            sd = cell.sd if math.isfinite(cell.sd) else math.nan
            row += [cell.mean, cell.mean - sd, cell.mean + sd]
        rows.append(row)
    return pd.DataFrame(rows, columns=PLOT_COLUMNS)


def render_svg(frame: pd.DataFrame, path: str, title: str, truth: float = 1.0) -> str:
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, method in zip(axes, ("cpc", "psc")):
        ax.plot(frame["k"], frame[f"{method}_mean"], marker="o", markersize=3, label=method.upper())
        ax.fill_between(frame["k"], frame[f"{method}_lo"], frame[f"{method}_hi"], alpha=0.25)
        ax.axhline(truth, color="black", linestyle="--", linewidth=0.8)
        ax.set_xlabel("number of principal components k")
        ax.set_title(f"{title}: {method.upper()}")
    axes[0].set_ylabel("estimate of beta_1")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
