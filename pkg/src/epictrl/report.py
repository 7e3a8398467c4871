"""Output files for ``epictrl run``: trajectory CSV, events, summary and plots."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .integrator import Trajectory
from .model import ModelParams

__all__ = ["trajectory_header", "write_trajectory", "write_events", "write_summary", "write_plots",
           "vaccinated_percent_per_day"]


def trajectory_header(labels: list[str], with_estimates: bool) -> list[str]:
    cols = ["t"]
    for comp in ("S", "I", "R", "D", "theta"):
        cols += [f"{comp}_{lab}" for lab in labels]
    if with_estimates:
        for r in ("z1", "z2", "z3"):
            cols += [f"{r}hat_{lab}" for lab in labels]
    return cols


def write_trajectory(path: Path, traj: Trajectory, labels: list[str]) -> None:
    """One row per sample, written with 17 significant digits so values round-trip."""
    est = traj.estimates
    blocks = [traj.times[:, None], traj.states, traj.controls]
    if est is not None:
        # estimates are stored per class as (z1, z2, z3); regroup by coordinate
        n = len(labels)
        blocks.append(est.reshape(-1, n, 3).transpose(0, 2, 1).reshape(-1, 3 * n))
    data = np.hstack(blocks)
    header = ",".join(trajectory_header(labels, est is not None))
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def write_events(path: Path, traj: Trajectory, labels: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "kind", "class"])
        for e in traj.events:
            w.writerow([repr(float(e.time)), e.kind, "" if e.cls is None or e.cls < 0 else labels[e.cls]])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_summary(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(payload), fh, indent=2)
        fh.write("\n")


def vaccinated_percent_per_day(traj: Trajectory, params: ModelParams) -> np.ndarray:
    """``100 sum_k p_k theta_k S_k / sum N``: share of the population vaccinated per day."""
    S = traj.compartment("s")
    return 100.0 * (traj.controls * params.immun_prob * S).sum(axis=1) / params.populations.sum()


def write_plots(outdir: Path, traj: Trajectory, params: ModelParams) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = params.labels
    t = traj.times
    out = []

    fig, ax = plt.subplots(figsize=(7, 4))
    for k, lab in enumerate(labels):
        ax.plot(t, traj.infected[:, k] / params.populations[k], label=lab)
    ax.set_xlabel("time (days)")
    ax.set_ylabel("infected proportion")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out.append(outdir / "infected.png")
    fig.savefig(out[-1], dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    for k, lab in enumerate(labels):
        ax.step(t, traj.controls[:, k], where="post", label=lab)
    ax.set_xlabel("time (days)")
    ax.set_ylabel("vaccination rate (1/day)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out.append(outdir / "control.png")
    fig.savefig(out[-1], dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.step(t, vaccinated_percent_per_day(traj, params), where="post")
    ax.set_xlabel("time (days)")
    ax.set_ylabel("vaccinated per day (% of population)")
    fig.tight_layout()
    out.append(outdir / "vaccinated.png")
    fig.savefig(out[-1], dpi=120)
    plt.close(fig)
    return out
