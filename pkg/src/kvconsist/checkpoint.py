"""Checkpoint I/O: a JSON manifest plus one raw float blob per tensor.

Blobs are little-endian 32-bit floats. Two manifest flavors share the same
mechanics: full model checkpoints (format tag, model config, vocabulary,
tensor index) and bare transformer weight bundles that can be dropped into a
sequence encoder of a matching configuration.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .encoders import SequenceEncoder, Vocab
from .model import KvModel, KvModelConfig

MODEL_FORMAT = "kvconsist-checkpoint/1"
TRANSFORMER_FORMAT = "kvconsist-transformer/1"


class CheckpointError(ValueError):
    pass


def _write_tensors(directory: Path, tensors: Mapping[str, torch.Tensor]) -> dict:
    index = {}
    for i, (name, tensor) in enumerate(tensors.items()):
        fname = f"t{i:05d}.bin"
        data = tensor.detach().cpu().numpy().astype("<f4")
        (directory / fname).write_bytes(data.tobytes())
        index[name] = {"shape": list(tensor.shape), "file": fname}
    return index


def _read_tensors(directory: Path, index: Mapping[str, Mapping],
                  expected: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    missing = sorted(set(expected) - set(index))
    extra = sorted(set(index) - set(expected))
    if missing or extra:
        raise CheckpointError(f"tensor set mismatch; missing={missing} extra={extra}")
    out = {}
    for name, meta in index.items():
        shape = tuple(meta["shape"])
        want = tuple(expected[name].shape)
        if shape != want:
            raise CheckpointError(f"tensor {name}: stored shape {shape} != expected {want}")
        blob = (directory / meta["file"]).read_bytes()
        arr = np.frombuffer(blob, dtype="<f4")
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"tensor {name}: blob size {arr.size} != shape {shape}")
        out[name] = torch.from_numpy(arr.reshape(shape).copy()).to(expected[name].dtype)
    return out


def save_checkpoint(model: KvModel, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = _write_tensors(directory, model.state_dict())
    manifest = {
        "format": MODEL_FORMAT,
        "model_config": model.cfg.to_dict(),
        "vocab": model.vocab.tokens,
        "tensors": index,
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(directory: str | Path) -> KvModel:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != MODEL_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    cfg = KvModelConfig.from_dict(manifest["model_config"])
    stored = manifest["vocab"]
    vocab = Vocab(stored[5:])  # the first five entries are the fixed specials
    if vocab.tokens != stored:
        raise CheckpointError("stored vocabulary does not start with the special tokens")
    model = KvModel(cfg, vocab)
    state = _read_tensors(directory, manifest["tensors"], model.state_dict())
    model.load_state_dict(state)
    model.eval()
    return model


def save_transformer_weights(encoder: SequenceEncoder, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = _write_tensors(directory, encoder.state_dict())
    manifest = {"format": TRANSFORMER_FORMAT, "tensors": index}
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def load_transformer_weights(encoder: SequenceEncoder, directory: str | Path) -> None:
    """Load externally produced transformer weights, validating every shape
    against the encoder configuration."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != TRANSFORMER_FORMAT:
        raise CheckpointError(f"unsupported weight format {manifest.get('format')!r}")
    state = _read_tensors(directory, manifest["tensors"], encoder.state_dict())
    encoder.load_state_dict(state)
