"""PNG figures written next to the CSV reports."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_SAVE = dict(dpi=120, metadata={"Software": None})


def plot_mechanism_costs(names: Sequence[str], means: Sequence[float], stderrs: Sequence[float],
                         path, title: str = "Discounted social cost") -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.bar(list(names), list(means), yerr=list(stderrs), capsize=4, color="#4c72b0")
    ax.set_ylabel("mean discounted cost")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_poa_sweep(dials: Sequence[float], series: dict, path, title: str = "Price of anarchy") -> None:
    """``series`` maps a label to (ratios, stderrs, bounds); bounds may be None."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for label, (ratios, stderrs, bounds) in series.items():
        line = ax.errorbar(dials, ratios, yerr=stderrs, marker="o", capsize=3, label=f"{label} (simulated)")
        if bounds is not None:
            ax.plot(dials, bounds, linestyle="--", color=line[0].get_color(), label=f"{label} (closed form)")
    ax.set_xlabel("dial")
    ax.set_ylabel("cost ratio to optimum")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_hybrid_ratios(names: Sequence[str], ratios: Sequence[float], path) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.bar(list(names), [100.0 * (r - 1.0) for r in ratios], color="#dd8452")
    ax.set_ylabel("loss vs optimum (%)")
    ax.set_title("Two-origin network")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
