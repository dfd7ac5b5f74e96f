"""Run configuration: strict JSON schema over dataclass sections.

Unknown keys are rejected (exit code 2 at the CLI), defaults are always
materialized into the persisted effective config, and the whole config
hashes canonically so checkpoints can refuse mismatched resumes.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .env_pursuit import EnvConfig
from .errors import ConfigError
from .graph_inference import EDGE_MODES

N_ACTIONS = 5


@dataclass
class ModelConfig:
    d_h: int = 32            # encoding / message width
    d_k: int = 32            # attention key width
    gnn_layers: int = 2
    mixer_embed: int = 32


@dataclass
class GraphConfig:
    mode: str = "gacg"       # gacg | attention | bernoulli | inde_gaussian
    sigma2: float = 0.25     # inde_gaussian edge variance
    covariance: str = "rank1"  # rank1 | block


@dataclass
class GroupConfig:
    m: int = 2               # 0 disables grouping entirely (ablation)
    k: int = 10              # observation window length


@dataclass
class TrainConfig:
    lambda_: float = 0.1     # JSON key "lambda"
    gamma: float = 0.95
    lr: float = 5e-4
    batch_episodes: int = 8
    buffer_capacity: int = 500
    target_period: int = 200
    total_steps: int = 50000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal_steps: int = 20000
    group_loss_scope: str = "all"   # all | policy_only
    grad_clip: float = 10.0
    eval_interval: int = 500        # env steps between greedy evaluations
    eval_episodes: int = 20
    checkpoint_interval: int = 10000


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    group: GroupConfig = field(default_factory=GroupConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    run_id: str = "run"


_SECTIONS = {"env": EnvConfig, "model": ModelConfig, "graph": GraphConfig,
             "group": GroupConfig, "train": TrainConfig}
# dataclass field name <-> JSON key (only where they differ)
_JSON_KEY = {"lambda_": "lambda"}
_FIELD_NAME = {v: k for k, v in _JSON_KEY.items()}


def _coerce(key: str, value, target_type):
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    raise ConfigError(key, f"unsupported field type {target_type}")


def _section_from_dict(section: str, cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(section, "section must be a JSON object")
    by_json_key = {_JSON_KEY.get(f.name, f.name): f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        dotted = f"{section}.{key}"
        if key not in by_json_key:
            raise ConfigError(dotted, "unknown config key")
        f = by_json_key[key]
        kwargs[f.name] = _coerce(dotted, value, _FIELD_TYPES[cls][f.name])
    return cls(**kwargs)


# Resolve field types once (dataclass .type may be a string under
# `from __future__ import annotations`).
_FIELD_TYPES = {
    cls: {f.name: {"int": int, "float": float, "str": str}[f.type]
          for f in dataclasses.fields(cls)}
    for cls in (EnvConfig, ModelConfig, GraphConfig, GroupConfig, TrainConfig)
}


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _section_from_dict(key, _SECTIONS[key], value)
        elif key == "seed":
            kwargs["seed"] = _coerce("seed", value, int)
        elif key == "run_id":
            kwargs["run_id"] = _coerce("run_id", value, str)
        else:
            raise ConfigError(key, "unknown config key")
    cfg = RunConfig(**kwargs)
    validate_config(cfg)
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    out = {}
    for section, cls in _SECTIONS.items():
        sub = getattr(cfg, section)
        out[section] = {_JSON_KEY.get(f.name, f.name): getattr(sub, f.name)
                        for f in dataclasses.fields(cls)}
    out["seed"] = cfg.seed
    out["run_id"] = cfg.run_id
    return out


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def load_config(path: str, overrides: list[str] | None = None) -> RunConfig:
    """Parse a JSON config file and apply `--set key=value` overrides."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON in {path}: {exc}") from None
    if overrides:
        data = apply_overrides(data, overrides)
    return config_from_dict(data)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply dotted `section.key=value` strings onto the raw config dict."""
    data = json.loads(json.dumps(data))  # deep copy, JSON types only
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        dotted, raw = item.split("=", 1)
        value = _parse_override_value(dotted, raw)
        parts = dotted.split(".")
        if len(parts) == 1:
            data[parts[0]] = value
        elif len(parts) == 2:
            data.setdefault(parts[0], {})
            if not isinstance(data[parts[0]], dict):
                raise ConfigError(parts[0], "not a config section")
            data[parts[0]][parts[1]] = value
        else:
            raise ConfigError(dotted, "override keys have at most one dot")
    return data


def _parse_override_value(dotted: str, raw: str):
    parts = dotted.split(".")
    if len(parts) == 2 and parts[0] in _SECTIONS:
        cls = _SECTIONS[parts[0]]
        types = _FIELD_TYPES[cls]
        name = _FIELD_NAME.get(parts[1], parts[1])
        if name in types:
            t = types[name]
            try:
                return t(raw) if t is not str else raw
            except ValueError:
                raise ConfigError(dotted, f"cannot parse {raw!r} as {t.__name__}") from None
    elif len(parts) == 1 and parts[0] == "seed":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(dotted, f"cannot parse {raw!r} as int") from None
    elif len(parts) == 1 and parts[0] == "run_id":
        return raw
    # Unknown keys fall through as strings; config_from_dict rejects them
    # with the proper dotted name.
    return raw


def validate_config(cfg: RunConfig):
    if cfg.graph.mode not in EDGE_MODES:
        raise ConfigError("graph.mode",
                          f"must be one of {EDGE_MODES}, got {cfg.graph.mode!r}")
    if cfg.graph.covariance not in ("rank1", "block"):
        raise ConfigError("graph.covariance",
                          f"must be rank1 or block, got {cfg.graph.covariance!r}")
    if not (0.0 <= cfg.graph.sigma2 <= 1.0):
        raise ConfigError("graph.sigma2", "must lie in [0, 1]")
    if cfg.group.m < 0 or cfg.group.m > cfg.env.n_agents:
        raise ConfigError("group.m",
                          f"must lie in [0, {cfg.env.n_agents}], got {cfg.group.m}")
    if cfg.group.k < 1:
        raise ConfigError("group.k", "window length must be >= 1")
    if not (0.0 <= cfg.train.gamma < 1.0):
        raise ConfigError("train.gamma", "must lie in [0, 1)")
    if cfg.train.lambda_ < 0.0:
        raise ConfigError("train.lambda", "must be >= 0")
    if cfg.train.lr <= 0.0:
        raise ConfigError("train.lr", "must be > 0")
    if cfg.train.group_loss_scope not in ("all", "policy_only"):
        raise ConfigError("train.group_loss_scope", "must be all or policy_only")
    for key in ("batch_episodes", "buffer_capacity", "target_period",
                "total_steps", "eval_interval", "eval_episodes",
                "checkpoint_interval", "epsilon_anneal_steps"):
        if getattr(cfg.train, key) < 1:
            raise ConfigError(f"train.{key}", "must be >= 1")
    for key in ("epsilon_start", "epsilon_end"):
        if not (0.0 <= getattr(cfg.train, key) <= 1.0):
            raise ConfigError(f"train.{key}", "must lie in [0, 1]")
    if cfg.train.batch_episodes > cfg.train.buffer_capacity:
        raise ConfigError("train.batch_episodes", "exceeds buffer capacity")
    try:
        cfg.env.validate()
    except Exception as exc:
        raise ConfigError("env", str(exc)) from None


def epsilon_at(train: TrainConfig, env_step: int) -> float:
    """Linear anneal from epsilon_start to epsilon_end."""
    frac = min(1.0, env_step / train.epsilon_anneal_steps)
    return train.epsilon_start + frac * (train.epsilon_end - train.epsilon_start)
