"""Matplotlib renderings written next to the delimited reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_loss_curve(curve, path):
    """Loss (left axis) and learning rate (right axis) against step."""
    steps = [row[0] for row in curve]
    lrs = [row[1] for row in curve]
    losses = [row[2] for row in curve]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, color="tab:blue", lw=1.2, label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("training loss", color="tab:blue")
    ax.tick_params(axis="y", labelcolor="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(steps, lrs, color="tab:orange", lw=1.0, alpha=0.8, label="lr")
    ax2.set_ylabel("learning rate", color="tab:orange")
    ax2.tick_params(axis="y", labelcolor="tab:orange")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_gradcheck_report(report, path):
    """Horizontal bars of per-group max relative error on a log axis."""
    names = [g.name for g in report.groups]
    errs = [max(g.max_rel_err, 1e-16) for g in report.groups]
    fig, ax = plt.subplots(figsize=(8, max(3.0, 0.18 * len(names))))
    ax.barh(range(len(names)), errs, color="tab:green")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=5)
    ax.set_xscale("log")
    ax.axvline(report.tolerance, color="tab:red", ls="--", lw=1.0,
               label=f"tolerance {report.tolerance:g}")
    ax.set_xlabel("max relative error vs central differences")
    ax.legend(loc="lower right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
