"""Versioned weight container: canonical parameter names -> shape-tagged arrays.

Stored as an .npz archive. Every model parameter and buffer appears under its
hierarchical name (``module/level/block/tensor`` via the dotted module path);
a ``__meta__`` entry holds a JSON record with the format version, the model
configuration, and free-form extras (training step, data normalization card).
Loading refuses any missing name, unexpected name, or shape mismatch.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .unet import GuidedUNet, ModelConfig

FORMAT_NAME = "rgb2raw-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: GuidedUNet, extra: dict | None = None) -> None:
    path = Path(path)
    arrays = {name: tensor.detach().cpu().numpy() for name, tensor in model.state_dict().items()}
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "extra": extra or {},
    }
    meta_blob = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as f:  # np.savez would otherwise append ".npz" to bare names
        np.savez(f, __meta__=meta_blob, **arrays)


def read_meta(path) -> dict:
    with np.load(Path(path)) as archive:
        if "__meta__" not in archive:
            raise CheckpointError(f"{path}: not a checkpoint (missing metadata)")
        meta = json.loads(archive["__meta__"].tobytes().decode())
    if meta.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path}: unknown format {meta.get('format')!r}")
    if meta.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {meta.get('version')}")
    return meta


def load_checkpoint(path, model: GuidedUNet | None = None):
    """Load weights; builds the model from stored config when none is given.

    Returns (model, meta). Any name or shape disagreement with the target
    model's state dict raises CheckpointError.
    """
    path = Path(path)
    meta = read_meta(path)
    if model is None:
        model = GuidedUNet(ModelConfig.from_dict(meta["model_config"]))
    with np.load(path) as archive:
        stored = {k: archive[k] for k in archive.files if k != "__meta__"}
    state = model.state_dict()
    missing = sorted(set(state) - set(stored))
    unexpected = sorted(set(stored) - set(state))
    if missing or unexpected:
        raise CheckpointError(
            f"{path}: parameter names disagree (missing {missing[:4]}, unexpected {unexpected[:4]})"
        )
    for name, tensor in state.items():
        if tuple(stored[name].shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: "
                f"stored {stored[name].shape}, model {tuple(tensor.shape)}"
            )
    model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in stored.items()})
    return model, meta
