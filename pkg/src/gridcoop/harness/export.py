"""CSV and plain-text exports.  Every file opens with the same header line
(seed and config hash) so results can be traced back to their inputs."""
from __future__ import annotations

import io
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ScenarioConfig
from .episode import EpisodeRecord, HeatMap


class ExportError(OSError):
    pass


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from None
    return path


def episode_csv(records: Sequence[EpisodeRecord], config: ScenarioConfig) -> str:
    rows = [config.header(), "episode,mean_velocity,collisions,spawned,retired"]
    for i, r in enumerate(records):
        rows.append(f"{i},{_num(r.mean_velocity)},{len(r.collisions)},{r.spawned},{r.retired}")
    return "\n".join(rows) + "\n"


def step_csv(records: Sequence[EpisodeRecord], config: ScenarioConfig) -> str:
    rows = [config.header(), "episode,step,mean_velocity,active"]
    for i, r in enumerate(records):
        rows.extend(f"{i},{t},{_num(v)},{n}" for t, (v, n) in enumerate(zip(r.velocity, r.active)))
    return "\n".join(rows) + "\n"


def loss_csv(records: Sequence[EpisodeRecord], config: ScenarioConfig) -> str:
    rows = [config.header(), "episode,step,critic_loss,actor_loss"]
    for i, r in enumerate(records):
        rows.extend(f"{i},{t},{lc:.9g},{la:.9g}" for t, lc, la in r.losses)
    return "\n".join(rows) + "\n"


def collision_csv(records: Sequence[EpisodeRecord], config: ScenarioConfig) -> str:
    rows = [config.header(), "episode,step,vehicle_a,vehicle_b,virtual_lane,gap"]
    for i, r in enumerate(records):
        rows.extend(f"{i},{e.step_index},{e.vehicle_a},{e.vehicle_b},{e.virtual_lane},{e.gap:.6f}"
                    for e in r.collisions)
    return "\n".join(rows) + "\n"


def heat_text(hm: HeatMap, kind: str, config: ScenarioConfig) -> str:
    """One heat-map grid as a whitespace matrix; the first row is the south edge."""
    grid = {"velocity": hm.velocity, "occupancy": hm.occupancy}[kind]
    buf = io.StringIO()
    buf.write(config.header() + "\n")
    buf.write(f"# {kind} step={hm.step} cell={config.cell} shape={grid.shape[0]}x{grid.shape[1]}\n")
    np.savetxt(buf, grid, fmt="%.4f" if kind == "velocity" else "%d")
    return buf.getvalue()


def config_text(config: ScenarioConfig) -> str:
    return config.header() + "\n" + config.text()


def export_records(records: Sequence[EpisodeRecord], out_dir, config: ScenarioConfig,
                   prefix: str = "run") -> list[Path]:
    """Write episode, per-step, loss and collision CSVs, heat maps of the last
    record and the config echo.  Returns the written paths in order."""
    out = Path(out_dir)
    paths = [
        _write(out / f"{prefix}_episodes.csv", episode_csv(records, config)),
        _write(out / f"{prefix}_steps.csv", step_csv(records, config)),
        _write(out / f"{prefix}_losses.csv", loss_csv(records, config)),
        _write(out / f"{prefix}_collisions.csv", collision_csv(records, config)),
        _write(out / f"{prefix}_config.txt", config_text(config)),
    ]
    last = records[-1] if records else None
    for tag in ("final", "peak"):
        hm = getattr(last, f"heat_{tag}", None) if last is not None else None
        if hm is None:
            continue
        for kind in ("velocity", "occupancy"):
            paths.append(_write(out / f"{prefix}_heat_{tag}_{kind}.txt", heat_text(hm, kind, config)))
    return paths


def read_matrix(path) -> np.ndarray:
    return np.loadtxt(path, comments="#", ndmin=2)


def read_episode_csv(path) -> np.ndarray:
    """Structured array of an episode CSV written by :func:`episode_csv`."""
    return np.genfromtxt(path, delimiter=",", names=True, skip_header=1, dtype=None, encoding=None)
