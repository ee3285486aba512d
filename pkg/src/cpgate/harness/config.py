"""Experiment configuration: dataclass, JSON loading and schema validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from ..perception import SensorConfig
from ..rl.dqn import TrainConfig
from ..rl.reward import RewardConfig
from ..v2x import ChannelConfig, CongestionConfig
from ..world import ScenarioConfig
from .episode import SimConfig

FULL_DENSITIES = (50, 100, 150, 200)
DESK_DENSITIES = (10, 25, 50)


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


def load_schema() -> dict:
    text = resources.files(__package__).joinpath("experiment.schema.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: str = "baseline"
    densities: tuple[int, ...] = FULL_DENSITIES
    scenarios_per_density: int = 9
    train_map: str = "map1"
    eval_map: str = "map2"
    milestones: tuple[int, ...] = ()
    window: int = 10
    staleness_ticks: int = 5
    detection_radius: float = 75.0
    congestion_thresholds: tuple[int, ...] = CongestionConfig.thresholds
    output: str = "runs"

    def __post_init__(self):
        if not self.densities or min(self.densities) < 1:
            raise ConfigError("densities must be a non-empty list of positive counts")
        if self.scenarios_per_density < 1:
            raise ConfigError("scenarios_per_density must be at least 1")
        if self.reward.window != self.window:
            raise ConfigError("reward.window must equal the observation window")

    @classmethod
    def desk_scale(cls, **overrides) -> "ExperimentConfig":
        """Laptop-sized campaign: three light densities, three 400-tick scenarios each.

        Training takes four gradient steps per simulated tick and a short
        discount horizon; with the long default horizon the TD targets grow
        to many times the per-decision reward and the gate learns less.
        """
        base = cls(
            scenario=ScenarioConfig(episode_ticks=400),
            densities=DESK_DENSITIES,
            scenarios_per_density=3,
            train=TrainConfig(total_steps=20_000, updates_per_tick=4, discount=0.5),
            milestones=(0, 1_000, 5_000, 10_000, 20_000),
        )
        return replace(base, **overrides)

    def sim(self) -> SimConfig:
        return SimConfig(
            sensors=SensorConfig(),
            channel=self.channel,
            reward=self.reward,
            congestion=CongestionConfig(self.window, tuple(self.congestion_thresholds)),
            window=self.window,
            staleness_ticks=self.staleness_ticks,
            detection_radius=self.detection_radius,
        )

    def episode_seed(self, density: int, episode: int, salt: int = 0) -> int:
        """Seed of one sweep episode; both policies of a pair share it."""
        ss = np.random.SeedSequence([self.scenario.rng_seed, salt, density, episode])
        return int(ss.generate_state(1, dtype=np.uint32)[0])

    def scenario_for(self, map_id: str, density: int, episode: int, salt: int = 0) -> ScenarioConfig:
        return replace(self.scenario, map_id=map_id, vehicle_count=density,
                       rng_seed=self.episode_seed(density, episode, salt))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k in ("densities", "milestones", "congestion_thresholds"):
            d[k] = list(d[k])
        return d


_SECTIONS = ("scenario", "channel", "reward", "train")


def config_from_dict(data: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Validate ``data`` against the shipped schema and overlay it on ``base``."""
    try:
        jsonschema.validate(data, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    base = base or ExperimentConfig.desk_scale()
    kw: dict[str, Any] = {}
    try:
        for name in _SECTIONS:
            if name in data:
                kw[name] = replace(getattr(base, name), **data[name])
        for f in fields(ExperimentConfig):
            if f.name in data and f.name not in _SECTIONS:
                v = data[f.name]
                kw[f.name] = tuple(v) if isinstance(v, list) else v
        if "window" in data and "reward" not in data:
            kw["reward"] = replace(base.reward, window=data["window"])
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data, base)
