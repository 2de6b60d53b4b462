"""Scenario configuration: plain ``key = value`` files plus overrides."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Mapping

MODES = ("E", "EE", "EEC", "signal")
STANDARD_DENSITIES = (300, 600, 900, 1200, 1500, 1800, 2100)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    grid_rows: int = 1
    grid_cols: int = 1
    density: float = 300.0  # vehicles per lane per hour
    seed: int = 0
    episode_steps: int = 3000
    mode: str = "E"
    episodes: int = 50
    # learning
    gamma: float = 0.8
    batch: int = 48
    tau: float = 0.99
    lr_actor: float = 1e-3
    lr_critic: float = 0.05
    sigma_start: float = 0.5
    sigma_end: float = 0.05
    buffer_edge: int = 100_000
    buffer_cloud: int = 10_000
    update_every: int = 1
    net_dtype: str = "float32"
    # spawning
    min_spawn_gap: float = 10.0
    gate_lookahead: float = 2.0
    # exports
    cell: float = 5.0
    # signal plan
    signal_cycle: float = 30.0
    signal_split: float = 0.5
    signal_all_red: float = 2.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)
        need(self.grid_rows >= 1 and self.grid_cols >= 1, f"grid must be at least 1x1, got {self.grid}")
        need(self.density >= 0, "density must be >= 0")
        need(self.density * 0.1 / 3600 <= 1, "density too high for one arrival per step")
        need(self.episode_steps >= 1, "episode_steps must be >= 1")
        need(self.mode in MODES, f"mode must be one of {MODES}, got {self.mode!r}")
        need(self.episodes >= 1, "episodes must be >= 1")
        need(0 < self.gamma < 1, "gamma must lie in (0, 1)")
        need(self.batch >= 1, "batch must be >= 1")
        need(0 <= self.tau <= 1, "tau must lie in [0, 1]")
        need(self.lr_actor >= 0 and self.lr_critic >= 0, "learning rates must be >= 0")
        need(self.sigma_start >= 0 and self.sigma_end >= 0, "noise scales must be >= 0")
        need(self.buffer_edge >= self.batch and self.buffer_cloud >= self.batch,
             "replay buffers must hold at least one minibatch")
        need(self.update_every >= 1, "update_every must be >= 1")
        need(self.net_dtype in ("float32", "float64"), "net_dtype must be float32 or float64")
        need(self.min_spawn_gap >= 0 and self.gate_lookahead >= 0, "spawn gate values must be >= 0")
        need(self.cell > 0, "cell must be positive")
        need(self.signal_cycle > 2 * self.signal_all_red, "signal cycle too short for its clearance")
        need(0 <= self.signal_split <= 1 and self.signal_all_red >= 0, "invalid signal plan")

    @property
    def grid(self) -> str:
        return f"{self.grid_rows}x{self.grid_cols}"

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    def lines(self) -> list[str]:
        return [f"{k} = {v}" for k, v in asdict(self).items()]

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()[:12]

    def header(self) -> str:
        return f"# seed={self.seed} config={self.hash}"


_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _coerce(key: str, raw) -> object:
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    try:
        if kind == "int":
            if isinstance(raw, str):
                f = float(raw)
                if f != int(f):
                    raise ValueError
                return int(f)
            return int(raw)
        if kind == "float":
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_grid(text: str) -> tuple[int, int]:
    parts = text.lower().replace("×", "x").split("x")
    if len(parts) != 2:
        raise ConfigError(f"grid must look like RxC, got {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"grid must look like RxC, got {text!r}") from None


def parse_text(text: str) -> dict[str, object]:
    out: dict[str, object] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k == "grid":
            out["grid_rows"], out["grid_cols"] = parse_grid(v)
        else:
            out[k] = _coerce(k, v)
    return out


def load_config(path=None, overrides: Mapping[str, object] | None = None,
                base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Config from defaults, then the file, then ``overrides`` (None values skipped)."""
    values: dict[str, object] = {}
    if path is not None:
        try:
            values.update(parse_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k == "grid":
            values["grid_rows"], values["grid_cols"] = parse_grid(str(v))
        else:
            values[k] = _coerce(k, v)
    try:
        return replace(base or ScenarioConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
