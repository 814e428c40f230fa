"""Static SVG figures drawn from a simulation summary table."""

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "mnarstack"
    return plt


def plot_estimates_vs_phi(summary, path, parameter="Z2"):
    """Mean estimate against assumed phi1, one panel per design cell."""
    plt = _pyplot()
    df = summary[(summary["parameter"] == parameter) & summary["method"].isin(["carpenter", "proposed", "mar", "complete_case"])]
    cells = df[["family", "n", "M", "true_phi1"]].drop_duplicates().sort_values(["family", "n", "M", "true_phi1"])
    if cells.empty:
        return None
    fig, axes = plt.subplots(1, len(cells), figsize=(4.5 * len(cells), 3.8), squeeze=False)
    for ax, (_, cell) in zip(axes[0], cells.iterrows()):
        sub = df[(df["family"] == cell["family"]) & (df["n"] == cell["n"]) & (df["M"] == cell["M"]) & (df["true_phi1"] == cell["true_phi1"])]
        for method, grp in sub.groupby("method"):
            grp = grp.drop_duplicates("assumed_phi1").sort_values("assumed_phi1")
            if method in ("mar", "complete_case"):
                ax.axhline(grp["mean_estimate"].iloc[0], ls=":", lw=1, label=method, color="grey" if method == "mar" else "black")
            else:
                ax.plot(grp["assumed_phi1"], grp["mean_estimate"], marker="o", label=method)
        ax.axhline(sub["truth"].iloc[0], ls="--", color="red", lw=1, label="truth")
        ax.set_title(f"{cell['family']}, n={cell['n']}, M={cell['M']}, true phi1={cell['true_phi1']}", fontsize=9)
        ax.set_xlabel("assumed phi1")
        ax.set_ylabel(f"mean estimate of {parameter}")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def plot_coverage_vs_m(summary, path, parameter="Z2"):
    """Coverage of the proposed method's intervals against M, per SE method."""
    plt = _pyplot()
    df = summary[(summary["parameter"] == parameter) & (summary["method"] == "proposed")]
    df = df[np.isclose(df["assumed_phi1"], df["true_phi1"]) & df["coverage"].notna()]
    cells = df[["family", "n", "true_phi1"]].drop_duplicates().sort_values(["family", "n", "true_phi1"])
    if cells.empty:
        return None
    fig, axes = plt.subplots(1, len(cells), figsize=(4.5 * len(cells), 3.8), squeeze=False)
    for ax, (_, cell) in zip(axes[0], cells.iterrows()):
        sub = df[(df["family"] == cell["family"]) & (df["n"] == cell["n"]) & (df["true_phi1"] == cell["true_phi1"])]
        for se_method, grp in sub.groupby("se_method"):
            grp = grp.sort_values("M")
            ax.plot(grp["M"], grp["coverage"], marker="o", label=se_method)
        ax.axhline(0.95, ls="--", color="grey", lw=1)
        ax.set_xscale("log")
        ax.set_ylim(0.5, 1.0)
        ax.set_title(f"{cell['family']}, n={cell['n']}, phi1={cell['true_phi1']}", fontsize=9)
        ax.set_xlabel("M")
        ax.set_ylabel("95% CI coverage")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
