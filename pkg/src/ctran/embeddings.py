"""Per-token embedding providers.

Two providers exist: a trainable lookup table, and precomputed per-example
vectors read from a vector file. The vector file is a directory holding

``manifest.json``::

    {"dtype": "float32-le",
     "examples": {"<example id>": {"offset": <byte offset>, "length": L, "dim": d}}}

``vectors.bin``
    raw little-endian float32 values; example ``id`` occupies
    ``length * dim`` values starting at ``offset``, row-major ``[L, d]``.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import PAD_TOKEN, Batch


class VectorFileError(ValueError):
    pass


def write_vector_file(directory, vectors: Mapping[str, np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    offset = 0
    with open(directory / "vectors.bin", "wb") as fh:
        for key, mat in vectors.items():
            mat = np.asarray(mat, dtype="<f4")
            if mat.ndim != 2:
                raise VectorFileError(f"{key}: expected an [L, d] matrix, got shape {mat.shape}")
            fh.write(mat.tobytes(order="C"))
            entries[key] = {"offset": offset, "length": mat.shape[0], "dim": mat.shape[1]}
            offset += mat.nbytes
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump({"dtype": "float32-le", "examples": entries}, fh, indent=1)


class VectorStore:
    """Read-only view of a vector file; matrices are memory-mapped."""

    def __init__(self, directory):
        directory = Path(directory)
        try:
            with open(directory / "manifest.json", encoding="utf-8") as fh:
                manifest = json.load(fh)
        except FileNotFoundError as exc:
            raise VectorFileError(f"no manifest.json in {directory}") from exc
        if manifest.get("dtype") != "float32-le":
            raise VectorFileError(f"unsupported dtype {manifest.get('dtype')!r}")
        self.entries: dict = manifest["examples"]
        self.blob = np.memmap(directory / "vectors.bin", dtype="<f4", mode="r")
        dims = {e["dim"] for e in self.entries.values()}
        self.dim = dims.pop() if len(dims) == 1 else None

    def get(self, key: str, length: int | None = None, dim: int | None = None) -> np.ndarray:
        if key not in self.entries:
            raise VectorFileError(f"example {key!r} missing from vector file")
        e = self.entries[key]
        if length is not None and e["length"] != length:
            raise VectorFileError(
                f"example {key!r}: vector file has {e['length']} rows, batch has {length} tokens"
            )
        if dim is not None and e["dim"] != dim:
            raise VectorFileError(f"example {key!r}: vector dim {e['dim']} != expected {dim}")
        start = e["offset"] // 4
        n = e["length"] * e["dim"]
        return np.asarray(self.blob[start:start + n]).reshape(e["length"], e["dim"])


class StaticEmbedding(nn.Module):
    """Trainable lookup table; the PAD row is zero and receives no gradient."""

    def __init__(self, vocab_size: int, dim: int, trainable: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(vocab_size, dim).uniform_(-0.1, 0.1))
        with torch.no_grad():
            self.weight[PAD_TOKEN].zero_()
        self.weight.requires_grad_(trainable)

    def forward(self, batch: Batch) -> torch.Tensor:
        return F.embedding(batch.token_ids, self.weight, padding_idx=PAD_TOKEN)


class FileEmbedding(nn.Module):
    """Precomputed per-example vectors; never updated."""

    def __init__(self, store: VectorStore, dim: int):
        super().__init__()
        self.store = store
        self.dim = dim
        self.register_buffer("_anchor", torch.zeros(()), persistent=False)

    def forward(self, batch: Batch) -> torch.Tensor:
        B, L = batch.token_ids.shape
        out = torch.zeros(B, L, self.dim, dtype=self._anchor.dtype)
        for b, key in enumerate(batch.ids):
            n = int(batch.lengths[b])
            mat = self.store.get(key, dim=self.dim)
            if mat.shape[0] != n:
                # rows stored for the unstripped sentence
                if not batch.source_lengths or mat.shape[0] != batch.source_lengths[b]:
                    raise VectorFileError(
                        f"example {key!r}: vector file has {mat.shape[0]} rows, "
                        f"batch has {n} tokens"
                    )
                mat = mat[batch.kept[b]]
            out[b, :n] = torch.from_numpy(np.array(mat)).to(out.dtype)
        return out


def build_embedding(cfg, vocab_size: int) -> nn.Module:
    if cfg.embedding == "learned_static":
        return StaticEmbedding(vocab_size, cfg.d_emb, cfg.embedding_trainable)
    store = VectorStore(cfg.embedding_file)
    if store.dim is not None and store.dim != cfg.d_emb:
        raise VectorFileError(f"vector file dim {store.dim} != configured d_emb {cfg.d_emb}")
    return FileEmbedding(store, cfg.d_emb)
