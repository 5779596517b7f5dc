"""Raster plots for evaluation reports."""

from __future__ import annotations

import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

TYPE_NAMES = {0: "null", 1: "rigid", 2: "spring"}


def _save(fig, path: Path, written: list[Path]):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)


def emit_plots(report: dict, out_dir: Path | str) -> list[Path]:
    """Render one raster file per report panel; missing fields are skipped
    with a warning. Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    t_obs = report.get("t_obs_list")
    for key, ylabel, fname in (
        ("accuracy_vs_t_obs", "edge-type accuracy", "accuracy_vs_window.png"),
        ("entropy_vs_t_obs", "mean posterior entropy (nats)", "entropy_vs_window.png"),
    ):
        values = report.get(key)
        if not t_obs or not values:
            warnings.warn(f"report lacks {key}; skipping {fname}")
            continue
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(t_obs, values, marker="o")
        ax.set_xlabel("observed frames")
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3)
        _save(fig, out / fname, written)

    scatter = report.get("param_scatter") or {}
    panels = [(t, s) for t, s in scatter.items() if s.get("latent")]
    if panels:
        fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.2), squeeze=False)
        for ax, (t, s) in zip(axes[0], panels):
            ax.scatter(s["latent"], s["truth"], s=6, alpha=0.5)
            ax.set_xlabel("inferred latent")
            ax.set_ylabel("true parameter")
            ax.set_title(TYPE_NAMES.get(int(t), f"type {t}"))
        _save(fig, out / "param_scatter.png", written)
    else:
        warnings.warn("report lacks param_scatter; skipping param_scatter.png")

    roll = report.get("rollout_error")
    if roll:
        fig, ax = plt.subplots(figsize=(4, 3))
        steps = list(range(1, len(roll) + 1))
        ax.plot(steps, roll, label="with inferred graph")
        base = report.get("baseline_rollout_error")
        if base:
            ax.plot(steps, base, label="no-inference baseline", linestyle="--")
        ax.set_xlabel("prediction step")
        ax.set_ylabel("mean keypoint error")
        ax.legend()
        ax.grid(alpha=0.3)
        _save(fig, out / "rollout_error.png", written)
    else:
        warnings.warn("report lacks rollout_error; skipping rollout_error.png")

    extra = report.get("extrapolation") or {}
    if extra:
        ns = sorted(extra, key=int)
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
        axes[0].bar([str(n) for n in ns], [extra[n]["accuracy"] for n in ns], color="tab:blue")
        axes[0].set_xlabel("bodies")
        axes[0].set_ylabel("edge-type accuracy")
        axes[1].bar([str(n) for n in ns], [extra[n]["rollout_error"] for n in ns], color="tab:orange")
        axes[1].set_xlabel("bodies")
        axes[1].set_ylabel("rollout error")
        _save(fig, out / "extrapolation.png", written)
    else:
        warnings.warn("report lacks extrapolation table; skipping extrapolation.png")

    cf = report.get("counterfactual")
    if cf and cf.get("n"):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.bar(
            ["intervened model", "non-intervened control"],
            [cf["intervened_error"], cf["control_error"]],
            color=["tab:green", "tab:gray"],
        )
        ax.set_ylabel(f"error vs intervened world (+{cf['delta']:g})")
        _save(fig, out / "counterfactual.png", written)
    else:
        warnings.warn("report lacks counterfactual results; skipping counterfactual.png")

    return written
