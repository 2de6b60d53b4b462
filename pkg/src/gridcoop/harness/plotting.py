"""PNG figures: learning curves and heat maps (non-interactive backend)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..world import V_MAX  # noqa: E402
from .episode import EpisodeRecord, HeatMap  # noqa: E402

_META = {"Software": None}  # keep PNGs free of version strings


def plot_learning_curve(curves: Mapping[str, Sequence[float]], path, title: str = "",
                        v_max: float = V_MAX) -> Path:
    """One line per named curve of per-episode mean velocities."""
    fig, ax = plt.subplots(figsize=(6, 3.5), dpi=100)
    for name, values in curves.items():
        ax.plot(np.arange(len(values)), values, marker="o", ms=3, label=name)
    ax.axhline(v_max, color="grey", ls="--", lw=1, label="upper bound")
    ax.set_xlabel("episode")
    ax.set_ylabel("mean velocity (m/s)")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return Path(path)


def plot_step_curve(record: EpisodeRecord, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5), dpi=100)
    t = np.arange(len(record)) * 0.1
    ax.plot(t, record.velocity, lw=1)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("mean velocity (m/s)")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return Path(path)


def plot_heat_map(hm: HeatMap, path, kind: str = "velocity", cell: float = 5.0,
                  title: str = "") -> Path:
    grid = {"velocity": hm.velocity, "occupancy": hm.occupancy}[kind]
    shown = np.ma.masked_where(hm.occupancy == 0, grid)
    fig, ax = plt.subplots(figsize=(5, 4.5), dpi=100)
    extent = (0, grid.shape[1] * cell, 0, grid.shape[0] * cell)
    im = ax.imshow(shown, origin="lower", extent=extent, cmap="viridis",
                   vmin=0, vmax=V_MAX if kind == "velocity" else max(1.0, float(grid.max())))
    fig.colorbar(im, ax=ax, label="m/s" if kind == "velocity" else "vehicles")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title or f"{kind} at step {hm.step}")
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return Path(path)


def plot_record(records: Sequence[EpisodeRecord], out_dir, prefix: str = "run") -> list[Path]:
    """Standard figures for a list of records: curve plus heat maps of the last."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if len(records) > 1:
        paths.append(plot_learning_curve({prefix: [r.mean_velocity for r in records]},
                                         out / f"{prefix}_curve.png"))
    if records:
        last = records[-1]
        paths.append(plot_step_curve(last, out / f"{prefix}_steps.png"))
        for tag in ("final", "peak"):
            hm = getattr(last, f"heat_{tag}")
            if hm is not None:
                for kind in ("velocity", "occupancy"):
                    paths.append(plot_heat_map(hm, out / f"{prefix}_heat_{tag}_{kind}.png",
                                               kind, last.config.cell))
    return paths
