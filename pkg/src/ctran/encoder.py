"""Shared encoder: convolution bank, window feature sequence, Transformer stack."""
from __future__ import annotations

import math

import torch
import torch.nn as nn

from .substrate import (
    ConfigError,
    ShapeError,
    conv1d_same,
    layer_norm,
    masked_softmax,
    matmul,
)


class LayerNorm(nn.Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with an additive {0, -inf} mask.

    ``mask`` broadcasts to ``[B, T, S]``; it is shared by all heads.
    The most recent attention weights are kept in ``last_weights``
    (``[B, heads, T, S]``) for inspection.
    """

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        if heads <= 0 or d_model % heads:
            raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
        self.heads = heads
        self.d_k = d_model // heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)
        self.last_weights: torch.Tensor | None = None

    def _split(self, x):
        B, n, _ = x.shape
        return x.view(B, n, self.heads, self.d_k).transpose(1, 2)

    def forward(self, query, key, value, mask):
        B, T, d = query.shape
        if key.shape[1] != value.shape[1]:
            raise ShapeError(f"key length {key.shape[1]} != value length {value.shape[1]}")
        q, k, v = self._split(self.q(query)), self._split(self.k(key)), self._split(self.v(value))
        scores = matmul(q, k.transpose(-1, -2)) / math.sqrt(self.d_k)
        if mask.dim() == 3:
            mask = mask.unsqueeze(1)
        w = masked_softmax(scores, mask)
        self.last_weights = w.detach()
        ctx = matmul(w, v).transpose(1, 2).reshape(B, T, d)
        return self.out(ctx)


def key_pad_mask(pad_mask: torch.Tensor) -> torch.Tensor:
    """[B, L] pad mask -> [B, 1, L], masking padded keys for every query."""
    return pad_mask.unsqueeze(1)


def compose_mask(structural: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
    """Structural [T, S] mask plus key padding, as [B, T, S].

    Query rows at padded positions keep only the structural mask so they
    never become fully masked; no real position attends to them.
    """
    B, L = pad_mask.shape
    out = structural.to(pad_mask.dtype).expand(B, L, L) + key_pad_mask(pad_mask)
    query_pad = torch.isinf(pad_mask).unsqueeze(-1)
    return torch.where(query_pad, structural.to(pad_mask.dtype).expand(B, L, L), out)


def sinusoidal_positions(length: int, d: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(length, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div[: d // 2])
    return pe


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.inner = nn.Linear(d_model, ffn_dim)
        self.outer = nn.Linear(ffn_dim, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.outer(self.drop(torch.relu(self.inner(x))))


class ConvBank(nn.Module):
    """One length-preserving convolution per kernel size, outputs concatenated
    per token position (the window feature sequence)."""

    def __init__(self, d_in: int, kernel_sizes, total_filters: int,
                 activation: str = "relu", dropout: float = 0.0):
        super().__init__()
        if total_filters % len(kernel_sizes):
            raise ConfigError(
                f"{total_filters} filters cannot be spread evenly over {len(kernel_sizes)} kernels"
            )
        per = total_filters // len(kernel_sizes)
        self.kernel_sizes = list(kernel_sizes)
        self.activation = activation
        self.filters = nn.ParameterList()
        self.biases = nn.ParameterList()
        for k in self.kernel_sizes:
            if k <= 0:
                raise ConfigError(f"kernel size must be positive, got {k}")
            bound = 1.0 / math.sqrt(k * d_in)
            self.filters.append(nn.Parameter(torch.empty(k, d_in, per).uniform_(-bound, bound)))
            self.biases.append(nn.Parameter(torch.empty(per).uniform_(-bound, bound)))
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        maps = [conv1d_same(x, f, b, self.activation) for f, b in zip(self.filters, self.biases)]
        return self.drop(window_feature_sequence(maps))


def window_feature_sequence(maps) -> torch.Tensor:
    """Concatenate per-kernel feature maps ``[..., L, V_j]`` at each token index."""
    lengths = {m.shape[-2] for m in maps}
    if len(lengths) != 1:
        raise ShapeError(f"feature maps disagree on length: {sorted(lengths)}")
    return torch.cat(list(maps), dim=-1)


class EncoderLayer(nn.Module):
    """Self-attention and FFN sublayers, each as ``x + LN(sublayer(x))``."""

    def __init__(self, d_model, heads, ffn_dim, dropout, eps=1e-5):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, heads)
        self.ln_attn = LayerNorm(d_model, eps)
        self.ffn = FeedForward(d_model, ffn_dim, dropout)
        self.ln_ffn = LayerNorm(d_model, eps)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask):
        x = x + self.ln_attn(self.drop(self.attn(x, x, x, mask)))
        return x + self.ln_ffn(self.drop(self.ffn(x)))


class EncoderStack(nn.Module):
    def __init__(self, d_model, layers, heads, ffn_dim, dropout, positional=True, eps=1e-5):
        super().__init__()
        if heads <= 0 or d_model % heads:
            raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
        self.d_model = d_model
        self.positional = positional
        self.layers = nn.ModuleList(
            EncoderLayer(d_model, heads, ffn_dim, dropout, eps) for _ in range(layers)
        )

    def forward(self, r, pad_mask):
        if r.shape[-1] != self.d_model:
            raise ShapeError(f"encoder input width {r.shape[-1]} != d_model {self.d_model}")
        if not self.layers:
            return r
        if self.positional:
            r = r + sinusoidal_positions(r.shape[1], self.d_model).to(r.dtype)
        mask = key_pad_mask(pad_mask)
        for layer in self.layers:
            r = layer(r, mask)
        return r


class SharedEncoder(nn.Module):
    """Embeddings -> conv bank + WFS -> Transformer encoder stack."""

    def __init__(self, cfg, d_emb: int):
        super().__init__()
        d = cfg.d_model
        if cfg.use_conv:
            self.front = ConvBank(d_emb, cfg.kernel_sizes, cfg.total_filters,
                                  cfg.activation, cfg.dropout["conv"])
        else:
            # Transformer-only ablation: project embeddings to d_model
            self.front = nn.Linear(d_emb, d)
        self.stack = EncoderStack(d, cfg.encoder_layers, cfg.heads, cfg.ffn,
                                  cfg.dropout["encoder"], cfg.use_positional, cfg.ln_eps)

    def forward(self, x, pad_mask):
        # zero padded rows so convolution windows see the same zeros as edge padding
        x = x * torch.isfinite(pad_mask).unsqueeze(-1).to(x.dtype)
        return self.stack(self.front(x), pad_mask)
