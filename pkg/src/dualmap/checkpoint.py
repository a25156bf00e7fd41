"""Framework-neutral checkpoints.

A checkpoint is a directory: ``config.json`` (model + training configuration,
loss trace) plus ``params/`` holding one raw little-endian float32 blob per
named parameter group and an index mapping names to files and shapes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .network import GroundingNetwork, ModelConfig

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _blob_name(param_name: str) -> str:
    return param_name.replace(".", "__") + ".bin"


def save_checkpoint(
    out_dir: str | Path,
    model: GroundingNetwork,
    train_config: dict,
    loss_trace: list[dict],
) -> Path:
    out_dir = Path(out_dir)
    params_dir = out_dir / "params"
    params_dir.mkdir(parents=True, exist_ok=True)

    index = {}
    for name, param in model.named_parameters():
        blob = _blob_name(name)
        arr = param.detach().cpu().numpy().astype("<f4")
        arr.tofile(params_dir / blob)
        index[name] = {"file": blob, "shape": list(arr.shape)}

    with open(params_dir / "index.json", "w") as fh:
        json.dump(index, fh, indent=2)
    with open(out_dir / "config.json", "w") as fh:
        json.dump(
            {
                "format_version": FORMAT_VERSION,
                "model": model.config.to_dict(),
                "train": train_config,
                "loss_trace": loss_trace,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    return out_dir


@dataclass
class Checkpoint:
    model: GroundingNetwork
    train_config: dict
    loss_trace: list[dict]

    @property
    def config(self) -> ModelConfig:
        return self.model.config


def load_checkpoint(ckpt_dir: str | Path) -> Checkpoint:
    ckpt_dir = Path(ckpt_dir)
    try:
        with open(ckpt_dir / "config.json") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint config: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format_version')!r}")

    model = GroundingNetwork(ModelConfig.from_dict(doc["model"]))
    params_dir = ckpt_dir / "params"
    with open(params_dir / "index.json") as fh:
        index = json.load(fh)

    named = dict(model.named_parameters())
    missing = sorted(set(named) - set(index))
    extra = sorted(set(index) - set(named))
    if missing or extra:
        raise CheckpointError(f"parameter mismatch: missing {missing}, unexpected {extra}")

    with torch.no_grad():
        for name, meta in index.items():
            arr = np.fromfile(params_dir / meta["file"], dtype="<f4")
            shape = tuple(meta["shape"])
            if arr.size != int(np.prod(shape)):
                raise CheckpointError(f"{name}: blob has {arr.size} values, expected shape {shape}")
            named[name].copy_(torch.from_numpy(arr.reshape(shape)))

    model.eval()
    return Checkpoint(model, doc.get("train", {}), doc.get("loss_trace", []))
