"""Versioned model checkpoints with bit-exact round trips."""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import CheckpointCorruptError, CheckpointVersionError
from .model import ModelArch, ModelParams

FORMAT_VERSION = 1
_BLOCK_PREFIX = "block__"


def save_checkpoint(params: ModelParams, arch: ModelArch, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "arch": {
            "hidden_dim": arch.hidden_dim,
            "embed_dim": arch.embed_dim,
            "obs_vocab": arch.obs_vocab,
            "action_vocab": arch.action_vocab,
            "reward_input_dim": arch.reward_input_dim,
            "cond_dim": arch.cond_dim,
        },
        "blocks": sorted(params),
    }
    arrays = {_BLOCK_PREFIX + k: v for k, v in params.items()}
    with path.open("wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ModelArch]:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            if "meta" not in data:
                raise CheckpointCorruptError(f"{path}: missing metadata entry")
            meta = json.loads(str(data["meta"]))
            version = meta.get("format_version")
            if version != FORMAT_VERSION:
                raise CheckpointVersionError(
                    f"{path}: format version {version!r}, expected {FORMAT_VERSION}"
                )
            arch = ModelArch(**meta["arch"])
            params: ModelParams = {}
            for name in meta["blocks"]:
                key = _BLOCK_PREFIX + name
                if key not in data:
                    raise CheckpointCorruptError(f"{path}: missing block {name!r}")
                params[name] = np.asarray(data[key], dtype=np.float64)
            expected = set(arch.block_shapes())
            if set(params) != expected:
                raise CheckpointCorruptError(
                    f"{path}: blocks {sorted(set(params) ^ expected)} inconsistent with arch"
                )
            for name, shape in arch.block_shapes().items():
                if params[name].shape != shape:
                    raise CheckpointCorruptError(
                        f"{path}: block {name!r} has shape {params[name].shape}, want {shape}"
                    )
            return params, arch
    except (CheckpointVersionError, CheckpointCorruptError):
        raise
    except (zipfile.BadZipFile, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: unreadable checkpoint ({exc})") from exc
