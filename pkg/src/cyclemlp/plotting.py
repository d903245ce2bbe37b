"""Figures written next to the CLI's tabular reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_sweep(rows, path, title=None):
    """``rows``: dicts with ``resolution``, ``macs`` and ``seconds``."""
    res = [r["resolution"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot([r * r for r in res], [r["macs"] / 1e9 for r in rows], "o-", color="C0")
        ax.set_xlabel("input pixels (H x W)")
        ax.set_ylabel("GMACs", color="C0")
        ax2 = ax.twinx()
        ax2.plot([r * r for r in res], [r["seconds"] for r in rows], "s--", color="C1")
        ax2.set_ylabel("forward wall time (s)", color="C1")
        ax2.grid(False)
        ax.set_title(title or "cost vs resolution")
        return _save(fig, path)


def plot_losses(traces: dict[str, list[float]], path, title=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, losses in traces.items():
            ax.plot(range(1, len(losses) + 1), losses, label=label, lw=1)
        ax.set_xlabel("step")
        ax.set_ylabel("cross-entropy")
        if traces:
            ax.legend(frameon=False)
        ax.set_title(title or "toy training loss")
        return _save(fig, path)


def plot_stage_costs(summary, path, title=None):
    """``summary``: (name, params, macs) rows, e.g. from ``accounting.stage_summary``."""
    names = [s[0] for s in summary]
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.6))
        a1.bar(names, [s[1] / 1e6 for s in summary], color="C0")
        a1.set_ylabel("parameters (M)")
        a2.bar(names, [s[2] / 1e9 for s in summary], color="C2")
        a2.set_ylabel("GMACs")
        for ax in (a1, a2):
            ax.tick_params(axis="x", rotation=30)
        fig.suptitle(title or "per-stage cost")
        return _save(fig, path)
