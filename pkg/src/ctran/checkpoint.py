"""Checkpoint directories.

Layout::

    config.json    {"model": {...}, "train": {...}}
    labels.json    {"tokens": [...], "slots": [...], "intents": [...]}
    manifest.json  {"dtype": "float32-le",
                    "params": [{"name", "shape", "offset", "group"}, ...]}
    params.bin     little-endian float32 values, concatenated in manifest
                   order; ``offset`` counts bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig, config_from_dict, config_to_dict
from .data import LabelMaps
from .model import CTRAN, param_group


class CheckpointError(ValueError):
    pass


def save_checkpoint(directory, model: CTRAN, maps: LabelMaps,
                    train_cfg: TrainConfig | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(directory / "params.bin", "wb") as fh:
        for name, tensor in model.state_dict().items():
            arr = tensor.detach().cpu().numpy().astype("<f4", copy=False)
            fh.write(np.ascontiguousarray(arr).tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                            "group": param_group(name)})
            offset += arr.nbytes
    _dump(directory / "manifest.json", {"dtype": "float32-le", "params": entries})
    _dump(directory / "config.json", config_to_dict(model.cfg, train_cfg or TrainConfig()))
    _dump(directory / "labels.json", maps.to_json())
    return directory


def _dump(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)


def _load(path: Path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint file missing: {path}") from exc


def load_checkpoint(directory) -> tuple[CTRAN, LabelMaps, ModelConfig, TrainConfig]:
    directory = Path(directory)
    model_cfg, train_cfg = config_from_dict(_load(directory / "config.json"))
    maps = LabelMaps.from_json(_load(directory / "labels.json"))
    manifest = _load(directory / "manifest.json")
    if manifest.get("dtype") != "float32-le":
        raise CheckpointError(f"unsupported parameter dtype {manifest.get('dtype')!r}")
    blob = np.fromfile(directory / "params.bin", dtype="<f4")
    model = CTRAN.for_labels(model_cfg, maps)
    expected = model.state_dict()
    names = [e["name"] for e in manifest["params"]]
    if set(names) != set(expected):
        missing = sorted(set(expected) - set(names))
        extra = sorted(set(names) - set(expected))
        raise CheckpointError(f"parameter mismatch: missing {missing}, unexpected {extra}")
    state = {}
    for e in manifest["params"]:
        shape = tuple(e["shape"])
        if shape != tuple(expected[e["name"]].shape):
            raise CheckpointError(
                f"{e['name']}: checkpoint shape {shape} != model shape "
                f"{tuple(expected[e['name']].shape)}"
            )
        start = e["offset"] // 4
        n = int(np.prod(shape)) if shape else 1
        if start + n > blob.size:
            raise CheckpointError(f"{e['name']}: params.bin is truncated")
        state[e["name"]] = torch.from_numpy(blob[start:start + n].reshape(shape).copy())
    model.load_state_dict(state)
    model.eval()
    return model, maps, model_cfg, train_cfg
