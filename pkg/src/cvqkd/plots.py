"""Static SVG figures for the command-line reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_budget_terms(path, rows: list[dict]) -> None:
    """Bar chart of the distance-budget terms, one group per configuration."""
    terms = ["R_rho", "Delta_diag", "Delta_nondiag", "R_sigma", "slack",
             "epsilon_prep"]
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(rows), 1)
    xs = np.arange(len(terms))
    for i, row in enumerate(rows):
        vals = [max(float(row.get(t, 0.0) or 0.0), 0.0) for t in terms]
        label = str(row.get("scheme", f"run {i}"))
        ax.bar(xs + i * width, vals, width=width, label=label)
    ax.set_yscale("log")
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(terms, rotation=20)
    ax.set_ylabel("contribution to the trace-distance bound")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_rate_curves(path, distances_km, curves: dict,
                     clamp_negative: bool = True) -> None:
    """Secret-key-rate curves versus distance, log-scale rate axis."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, rates in curves.items():
        r = np.asarray(rates, dtype=float)
        if clamp_negative:
            r = np.where(r > 0, r, np.nan)
        ax.plot(distances_km, r, label=name)
    ax.set_yscale("log")
    ax.set_xlabel("distance (km)")
    ax.set_ylabel("secret key rate (bits/symbol)")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
