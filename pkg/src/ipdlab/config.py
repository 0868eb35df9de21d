"""Run configuration: JSON documents with full defaulting, strict unknown-key
rejection, profiles, and a serialize/parse fixed point.

Sections: episode, pool, model, ppi, a2c, experiment, paths, seeds. The
``desk`` profile shrinks every scale knob so the full experiment suite runs
on one CPU; its overrides live here, in the config layer, so a resolved
config is always self-describing.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .a2c import A2C_STEP_HYPERS, A2CHyper
from .errors import ConfigError
from .experiments import ExperimentSpec
from .game import EpisodeConfig, PayoffMatrix
from .model import ModelArch
from .optim import OptimizerConfig
from .population import PoolConfig
from .ppi import PpiConfig

PROFILES = ("full", "desk")

_A2C_COLUMN_FOR_KIND = {
    "step1_best_response": "step1",
    "step2_extortion": "step2",
    "step3_mutual_extortion": "step3",
    "mixed_training": "step4",
    "ablation_opponent_id": "step4",
    "ablation_no_tabular": "step4",
    "equilibrium_check": "step1",
    "eval_vs_fixed": "step1",
}


def default_config(profile: str = "full") -> dict:
    """Fully-defaulted configuration document for a profile."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {PROFILES}")
    cfg = {
        "episode": {
            "horizon": 100,
            "payoff": {"cc": 1.0, "cd": -1.0, "dc": 2.0, "dd": 0.0},
        },
        "pool": {"learner_fraction": 0.5, "ablation": "none", "n_learners": 2},
        "model": {"hidden_dim": 128, "embed_dim": 32},
        "ppi": {
            "n_phases": 30,
            "n_samples_per_phase": 20000,
            "n_pretrain_trajectories": 200000,
            "train_epochs": 10,
            "train_batch_size": 256,
            "beta": 0.01,
            "rollout_depth": 15,
            "n_rollouts_per_action": 16,
            "rollout_gamma": 0.99,
            "loss_weights": [1.0, 1.0, 1.0],
            "rollout_reward_noise_std": 0.0,
            "store_opponent_perspective": False,
            "collect_chunk": 512,
            "optimizer": {
                "learning_rate": 1e-4,
                "weight_decay": 1e-2,
                "beta1": 0.9,
                "beta2": 0.98,
                "epsilon": 1e-8,
                "max_grad_norm": 1.0,
            },
        },
        "a2c": {
            "column": "auto",  # Table column matched to the experiment kind
            "overrides": {},
            "iterations": 2000,
        },
        "experiment": {
            "kind": None,
            "algorithm": "ppi",
            "scale": profile,
            "eval_episodes": 200,
            "eval_strategies": ["AllC", "AllD", "TFT", "Random50"],
            "early_checkpoint": 8,
            "baseline_episodes": 256,
            "equilibrium_episodes": 64,
            "checkpoint": None,
            "dataset": None,
        },
        "paths": {"out_root": "runs"},
        "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
    }
    if profile == "desk":
        cfg["episode"]["horizon"] = 32
        cfg["model"] = {"hidden_dim": 32, "embed_dim": 16}
        cfg["ppi"].update(
            n_phases=8,
            n_samples_per_phase=1500,
            n_pretrain_trajectories=10000,
            rollout_depth=8,
            n_rollouts_per_action=8,
            beta=0.3,
        )
        cfg["a2c"]["overrides"] = {"batch_size": 256}
        cfg["a2c"]["iterations"] = 400
        cfg["experiment"]["early_checkpoint"] = 3
        cfg["seeds"] = [0, 1, 2]
    return cfg


def _reject_unknown(user: dict, skeleton: dict, prefix: str = "") -> None:
    for key, value in user.items():
        path = f"{prefix}{key}"
        if key not in skeleton:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(skeleton[key], dict) and skeleton[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a section")
            _reject_unknown(value, skeleton[key], prefix=path + ".")


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(
    path: str | Path | None = None,
    profile: str = "full",
    overrides: dict | None = None,
) -> dict:
    """Defaults for the profile, overlaid with the user document and then any
    programmatic overrides; unknown keys are rejected."""
    cfg = default_config(profile)
    skeleton = default_config(profile)
    # a2c.overrides accepts any A2CHyper field.
    skeleton["a2c"]["overrides"] = {f: None for f in A2CHyper.__dataclass_fields__}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config document must be a JSON object")
        _reject_unknown(user, skeleton)
        cfg = _deep_merge(cfg, user)
    if overrides:
        _reject_unknown(overrides, skeleton)
        cfg = _deep_merge(cfg, overrides)
    return cfg


def resolve_a2c_hyper(cfg: dict, kind: str) -> A2CHyper:
    column = cfg["a2c"]["column"]
    if column == "auto":
        column = _A2C_COLUMN_FOR_KIND.get(kind, "step1")
    if column not in A2C_STEP_HYPERS:
        raise ConfigError(
            f"a2c.column must be one of {sorted(A2C_STEP_HYPERS)} or 'auto', got {column!r}"
        )
    base = A2C_STEP_HYPERS[column]
    overrides = dict(cfg["a2c"]["overrides"])
    unknown = set(overrides) - set(A2CHyper.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown a2c override fields: {sorted(unknown)}")
    fields = {f: getattr(base, f) for f in A2CHyper.__dataclass_fields__}
    fields.update(overrides)
    return A2CHyper(**fields)


def build_spec(cfg: dict, kind: str | None = None) -> ExperimentSpec:
    """Construct the typed experiment description from a resolved config."""
    exp = cfg["experiment"]
    kind = kind or exp["kind"]
    if not kind:
        raise ConfigError("missing required key 'experiment.kind'")
    pool_section = dict(cfg["pool"])
    if kind == "ablation_opponent_id":
        pool_section["ablation"] = "opponent_id"
    elif kind == "ablation_no_tabular":
        pool_section["ablation"] = "no_tabular"
    elif kind == "mixed_training" and pool_section["ablation"] != "none":
        raise ConfigError(
            "mixed_training runs the no-ablation condition; use the ablation_* kinds"
        )
    pool = PoolConfig(**pool_section)

    payoff = PayoffMatrix(**cfg["episode"]["payoff"])
    episode = EpisodeConfig(horizon=cfg["episode"]["horizon"], payoff=payoff)
    arch = ModelArch(
        hidden_dim=cfg["model"]["hidden_dim"],
        embed_dim=cfg["model"]["embed_dim"],
        cond_dim=pool.cond_dim,
    )
    ppi_section = dict(cfg["ppi"])
    opt = OptimizerConfig(**ppi_section.pop("optimizer"))
    ppi_section["loss_weights"] = tuple(ppi_section["loss_weights"])
    ppi = PpiConfig(optimizer=opt, **ppi_section)

    return ExperimentSpec(
        kind=kind,
        algorithm=exp["algorithm"],
        seeds=tuple(cfg["seeds"]),
        scale=exp["scale"],
        episode=episode,
        pool=pool,
        ppi=ppi,
        a2c=resolve_a2c_hyper(cfg, kind),
        arch=arch,
        a2c_iterations=cfg["a2c"]["iterations"],
        eval_episodes=exp["eval_episodes"],
        eval_strategies=tuple(exp["eval_strategies"]),
        early_checkpoint=exp["early_checkpoint"],
        baseline_episodes=exp["baseline_episodes"],
        equilibrium_episodes=exp["equilibrium_episodes"],
        checkpoint_path=exp["checkpoint"],
        dataset_path=exp["dataset"],
        out_root=Path(cfg["paths"]["out_root"]),
    )


def serialize_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
