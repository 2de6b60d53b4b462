"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 collision during a safety evaluation, 5 file or checkpoint error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..nets import DivergenceError
from .config import MODES, ConfigError, ScenarioConfig, load_config
from .episode import EpisodeRecord, HeatMap, run_episode
from .export import ExportError, export_records, read_episode_csv, read_matrix

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_COLLISION, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("gridcoop")


class CollisionFound(RuntimeError):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value file; flags override it")
    common.add_argument("--grid", help="grid size as RxC, e.g. 3x3")
    common.add_argument("--density", type=float, help="vehicles per lane per hour")
    common.add_argument("--seed", type=int)
    common.add_argument("--episodes", type=int)
    common.add_argument("--steps", type=int, help="steps per episode (0.1 s each)")
    common.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    common.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    common.add_argument("-q", "--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="gridcoop", description="Cooperative intersection control simulator.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("train-edge", parents=[common], help="stage one: edge policy on one intersection")
    s.add_argument("--checkpoint", type=Path, help="where to save (default OUT/edge.ckpt)")
    s = sub.add_parser("train-cloud", parents=[common], help="stage two: cloud policy, edge frozen")
    s.add_argument("--checkpoint", type=Path, required=True, help="stage-one checkpoint")
    s.add_argument("--save", type=Path, help="where to save (default OUT/edge_cloud.ckpt)")
    s = sub.add_parser("evaluate", parents=[common], help="run episodes without learning")
    s.add_argument("--mode", choices=MODES)
    s.add_argument("--checkpoint", type=Path, help="needed for modes EE and EEC")
    sub.add_parser("baseline", parents=[common], help="fixed-time signal baseline")
    sub.add_parser("export", parents=[common], help="render figures from exported files in OUT")
    return p


def _config(args, **extra) -> ScenarioConfig:
    over = {"grid": args.grid, "density": args.density, "seed": args.seed,
            "episodes": args.episodes, "episode_steps": args.steps}
    over.update(extra)
    return load_config(args.config, over)


def _report(records: list[EpisodeRecord], cfg: ScenarioConfig, args, prefix: str) -> None:
    paths = export_records(records, args.out, cfg, prefix)
    if not args.no_plots:
        from .plotting import plot_record
        paths += plot_record(records, args.out, prefix)
    for p in paths:
        log.info("wrote %s", p)


def _progress(tag: str):
    def report(ep: int, rec: EpisodeRecord) -> None:
        log.info("%s episode %d: mean velocity %.3f, collisions %d", tag, ep, rec.mean_velocity,
                 len(rec.collisions))
    return report


def cmd_train_edge(args) -> int:
    from .training import train_stage1
    cfg = _config(args)
    res = train_stage1(cfg, _progress("edge"))
    path = args.checkpoint or args.out / "edge.ckpt"
    path.parent.mkdir(parents=True, exist_ok=True)
    res.save(path)
    log.info("saved %s", path)
    _report(res.episodes, res.config, args, "train_edge")
    return EXIT_OK


def cmd_train_cloud(args) -> int:
    from .training import load_agents, train_stage2
    cfg = _config(args, mode="EEC")
    edge, _ = load_agents(args.checkpoint, cfg)
    if edge is None:
        raise ConfigError(f"{args.checkpoint} holds no edge policy")
    res = train_stage2(cfg, edge, _progress("cloud"))
    path = args.save or args.out / "edge_cloud.ckpt"
    path.parent.mkdir(parents=True, exist_ok=True)
    res.save(path)
    log.info("saved %s", path)
    _report(res.episodes, res.config, args, "train_cloud")
    return EXIT_OK


def _evaluate(cfg: ScenarioConfig, edge=None, cloud=None) -> list[EpisodeRecord]:
    records = []
    for ep in range(cfg.episodes):
        rec = run_episode(cfg.with_(seed=cfg.seed + ep), edge, cloud)
        _progress(cfg.mode)(ep, rec)
        records.append(rec)
    return records


def cmd_evaluate(args) -> int:
    cfg = _config(args, mode=args.mode)
    edge = cloud = None
    if cfg.mode in ("EE", "EEC"):
        if args.checkpoint is None:
            raise ConfigError(f"mode {cfg.mode} needs --checkpoint")
        from .training import load_agents
        edge, cloud = load_agents(args.checkpoint, cfg)
        if edge is None or (cfg.mode == "EEC" and cloud is None):
            raise ConfigError(f"{args.checkpoint} lacks the policies mode {cfg.mode} needs")
    records = _evaluate(cfg, edge, cloud)
    _report(records, cfg, args, f"eval_{cfg.mode}")
    _summary(records)
    hits = sum(len(r.collisions) for r in records)
    if hits and cfg.mode != "signal":
        raise CollisionFound(f"{hits} collision events in mode {cfg.mode}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _config(args, mode="signal")
    records = _evaluate(cfg)
    _report(records, cfg, args, "baseline")
    _summary(records)
    log.info("amber-rule passages: %d", sum(r.amber for r in records))
    return EXIT_OK


def _summary(records: list[EpisodeRecord]) -> None:
    v = np.array([r.mean_velocity for r in records])
    print(f"episodes={len(records)} mean_velocity={np.nanmean(v):.4f} "
          f"collisions={sum(len(r.collisions) for r in records)}")


def cmd_export(args) -> int:
    """Re-render PNG figures from the CSV and matrix files in ``--out``."""
    from .plotting import plot_heat_map, plot_learning_curve
    out = args.out
    csvs = sorted(out.glob("*_episodes.csv"))
    if not csvs:
        raise ExportError(f"no exported runs in {out}")
    cell = _config(args).cell
    for csv in csvs:
        prefix = csv.name[: -len("_episodes.csv")]
        data = read_episode_csv(csv)
        curve = np.atleast_1d(data["mean_velocity"]).astype(float)
        log.info("wrote %s", plot_learning_curve({prefix: curve}, out / f"{prefix}_curve.png"))
        for tag in ("final", "peak"):
            vel, occ = out / f"{prefix}_heat_{tag}_velocity.txt", out / f"{prefix}_heat_{tag}_occupancy.txt"
            if vel.exists() and occ.exists():
                hm = HeatMap(-1, read_matrix(occ), read_matrix(vel))
                for kind in ("velocity", "occupancy"):
                    log.info("wrote %s", plot_heat_map(hm, out / f"{prefix}_heat_{tag}_{kind}.png", kind,
                                                       cell, f"{prefix} {tag} {kind}"))
    return EXIT_OK


COMMANDS = {"train-edge": cmd_train_edge, "train-cloud": cmd_train_cloud, "evaluate": cmd_evaluate,
            "baseline": cmd_baseline, "export": cmd_export}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except DivergenceError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except CollisionFound as exc:
        log.error("safety failure: %s", exc)
        return EXIT_COLLISION
    except (OSError, ValueError) as exc:
        log.error("i/o error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
