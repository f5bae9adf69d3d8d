"""Run configuration: one structured file per run, hashed for provenance.

A RunConfig bundles everything a training/evaluation run needs.  Every
output file embeds `config_hash(cfg)` so results can be traced back to the
exact configuration that produced them.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict, replace

from .curriculum import CurriculumSchedule, RandomizationRanges
from .rewards import RewardConfig
from .trainer import PpoConfig

RUN_SCHEMA_VERSION = 1


class ConfigError(Exception):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    task: str = "squat-lift"
    stage: str = "residual"
    physics_label: str = "train"
    seed: int = 0
    reward: RewardConfig = field(default_factory=RewardConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    schedule: CurriculumSchedule = field(default_factory=CurriculumSchedule)
    ranges: RandomizationRanges = field(default_factory=RandomizationRanges)
    randomize: bool = True
    phase_random: bool = True
    reference_file: str = ""
    gmt_checkpoint: str = ""
    model_file: str = ""
    out_dir: str = "runs/run"
    # reference-generation knobs used when reference_file is empty
    ref_seed: int = 0
    penetration: float = 0.0
    float_offset: float = 0.0


def config_to_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["version"] = RUN_SCHEMA_VERSION
    # dataclass tuples serialize as lists; normalize for stable hashing
    return json.loads(json.dumps(d))


def config_hash(cfg: RunConfig) -> str:
    """sha256 of the canonical JSON form (seed and paths included)."""
    payload = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _build(section: dict, cls, what: str):
    try:
        for key in ("link_mass", "object_mass", "friction", "pd_gains"):
            if key in section and isinstance(section[key], list):
                section[key] = tuple(section[key])
        return cls(**section)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {what} section: {e}")


def config_from_dict(d: dict) -> RunConfig:
    d = dict(d)
    version = d.pop("version", RUN_SCHEMA_VERSION)
    if version != RUN_SCHEMA_VERSION:
        raise ConfigError(f"unsupported run-config version {version!r}")
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown run-config fields: {sorted(unknown)}")
    sections = {}
    if "reward" in d:
        sections["reward"] = _build(d.pop("reward"), RewardConfig, "reward")
    if "ppo" in d:
        sections["ppo"] = _build(d.pop("ppo"), PpoConfig, "ppo")
    if "schedule" in d:
        sections["schedule"] = _build(d.pop("schedule"), CurriculumSchedule,
                                      "schedule")
    if "ranges" in d:
        sections["ranges"] = _build(d.pop("ranges"), RandomizationRanges,
                                    "ranges")
    try:
        return RunConfig(**d, **sections)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e))


def load_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config parse error at offset {e.pos}: {e.msg}")
    return config_from_dict(d)


def save_config(cfg: RunConfig, path):
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=1)


def validate(cfg: RunConfig) -> None:
    """Cross-field pre-flight checks; raises ConfigError on the first."""
    from .env import STAGES
    from .physics import NAMED_CONFIGS
    from .refgen import TASKS
    if cfg.stage not in STAGES:
        raise ConfigError(f"unknown stage {cfg.stage!r}")
    if cfg.physics_label not in NAMED_CONFIGS:
        raise ConfigError(f"unknown physics label {cfg.physics_label!r}")
    if cfg.stage != "gmt" and cfg.task not in TASKS:
        raise ConfigError(f"unknown task {cfg.task!r}")
    if cfg.stage in ("residual", "finetune"):
        if not cfg.gmt_checkpoint:
            raise ConfigError(f"stage {cfg.stage!r} requires the "
                              "'gmt_checkpoint' field")
        if not os.path.exists(cfg.gmt_checkpoint):
            raise ConfigError(f"gmt_checkpoint not found: "
                              f"{cfg.gmt_checkpoint}")
    if cfg.ppo.stage != cfg.stage:
        raise ConfigError(f"ppo.stage {cfg.ppo.stage!r} disagrees with "
                          f"run stage {cfg.stage!r}")
    for name in ("reference_file", "model_file"):
        path = getattr(cfg, name)
        if path and not os.path.exists(path):
            raise ConfigError(f"{name} not found: {path}")
    if cfg.penetration > 0 and cfg.float_offset > 0:
        raise ConfigError("at most one of penetration/float_offset may be "
                          "nonzero")
