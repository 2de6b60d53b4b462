"""Two-stage training: the edge policy on one intersection, then the cloud
policy on the grid with the edge policy frozen."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from ..nets import Agent, Hyperparams, load_checkpoint, save_checkpoint
from .config import ScenarioConfig
from .episode import EpisodeRecord, Learner, _dtype, make_buffer, run_episode

Progress = Callable[[int, EpisodeRecord], None]


def hyperparams(config: ScenarioConfig) -> Hyperparams:
    return Hyperparams(gamma=config.gamma, batch=config.batch, tau=config.tau,
                       episodes=config.episodes, lr_actor=config.lr_actor,
                       lr_critic=config.lr_critic, sigma_start=config.sigma_start,
                       sigma_end=config.sigma_end)


@dataclass
class TrainingResult:
    tier: str
    config: ScenarioConfig
    agent: Agent
    episodes: list[EpisodeRecord] = field(default_factory=list)
    frozen: Agent | None = None  # the edge agent during cloud training

    @property
    def curve(self) -> np.ndarray:
        """Mean velocity of every training episode."""
        return np.array([r.mean_velocity for r in self.episodes])

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"{self.tier}.{k}": v for k, v in self.agent.tensors().items()}
        if self.frozen is not None:
            out.update({f"edge.{k}": v for k, v in self.frozen.tensors().items()})
        return out

    def save(self, path) -> None:
        save_checkpoint(path, self.tensors(), {"config": self.config.hash, "seed": str(self.config.seed),
                                               "tiers": ",".join(tiers_of(self.tensors()))})


def tiers_of(tensors: Mapping[str, np.ndarray]) -> list[str]:
    return sorted({k.split(".", 1)[0] for k in tensors})


def _train(tier: str, config: ScenarioConfig, agent: Agent, edge: Agent | None,
           progress: Progress | None) -> list[EpisodeRecord]:
    learner = Learner(agent, make_buffer(config, tier, agent), agent.hp.sigma_at(0),
                      np.random.default_rng([config.seed, 0 if tier == "edge" else 1]))
    records = []
    for ep in range(config.episodes):
        agent.set_episode(ep)
        learner.sigma = agent.hp.sigma_at(ep)
        cfg = config.with_(seed=config.seed + ep)
        if tier == "edge":
            rec = run_episode(cfg, edge_agent=agent, train="edge", learner=learner, heat=False)
        else:
            rec = run_episode(cfg, edge_agent=edge, cloud_agent=agent, train="cloud",
                              learner=learner, heat=False)
        records.append(rec)
        if progress is not None:
            progress(ep, rec)
    return records


def train_stage1(config: ScenarioConfig, progress: Progress | None = None) -> TrainingResult:
    """Train the shared edge policy in mode EE on a single intersection."""
    cfg = config.with_(grid_rows=1, grid_cols=1, mode="EE")
    agent = Agent.create("edge", cfg.seed, hyperparams(cfg), _dtype(cfg))
    res = TrainingResult("edge", cfg, agent)
    res.episodes = _train("edge", cfg, agent, None, progress)
    return res


def train_stage2(config: ScenarioConfig, edge: Agent, progress: Progress | None = None) -> TrainingResult:
    """Train the cloud policy in mode EEC on ``config``'s grid; ``edge`` stays fixed."""
    cfg = config.with_(mode="EEC")
    before = {k: v.copy() for k, v in edge.tensors().items()}
    agent = Agent.create("cloud", cfg.seed + 1, hyperparams(cfg), _dtype(cfg))
    res = TrainingResult("cloud", cfg, agent, frozen=edge)
    res.episodes = _train("cloud", cfg, agent, edge, progress)
    after = edge.tensors()
    if any(not np.array_equal(before[k], after[k]) for k in before):
        raise RuntimeError("edge parameters changed during cloud training")
    return res


def load_agents(path, config: ScenarioConfig) -> tuple[Agent | None, Agent | None]:
    """Edge and cloud agents stored in a checkpoint (None where absent)."""
    tensors = load_checkpoint(Path(path))
    hp = hyperparams(config)
    out = []
    for tier in ("edge", "cloud"):
        pre = tier + "."
        sub = {k[len(pre):]: v for k, v in tensors.items() if k.startswith(pre)}
        if not sub:
            out.append(None)
            continue
        agent = Agent.create(tier, 0, hp, _dtype(config))
        agent.load(sub)
        out.append(agent)
    return out[0], out[1]
