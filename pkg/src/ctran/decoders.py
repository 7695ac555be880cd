"""Intent decoder and the aligned Transformer slot decoder."""
from __future__ import annotations

import math

import torch
import torch.nn as nn

from .data import BOS_TAG, PAD_TAG
from .encoder import (
    FeedForward,
    LayerNorm,
    MultiHeadAttention,
    compose_mask,
    key_pad_mask,
    sinusoidal_positions,
)
from .substrate import NEG_INF, ConfigError, ShapeError


def build_causal_mask(n: int, dtype=torch.float32) -> torch.Tensor:
    """[n, n] mask: 0 where s <= t, -inf strictly above the diagonal."""
    if n <= 0:
        raise ConfigError(f"mask size must be positive, got {n}")
    return torch.triu(torch.full((n, n), NEG_INF, dtype=dtype), diagonal=1)


def build_zero_diag_mask(n: int, dtype=torch.float32) -> torch.Tensor:
    """[n, n] mask: 0 on the main diagonal, -inf everywhere else."""
    if n <= 0:
        raise ConfigError(f"mask size must be positive, got {n}")
    m = torch.full((n, n), NEG_INF, dtype=dtype)
    m.fill_diagonal_(0.0)
    return m


def memory_mask(n: int, aligned: bool, dtype=torch.float32) -> torch.Tensor:
    """Cross-attention mask: zero-diagonal when aligned, open otherwise."""
    if aligned:
        return build_zero_diag_mask(n, dtype)
    if n <= 0:
        raise ConfigError(f"mask size must be positive, got {n}")
    return torch.zeros(n, n, dtype=dtype)


class IntentDecoder(nn.Module):
    """S = e + LN(MultiHead(e)), pooled over real tokens, then a linear layer."""

    def __init__(self, d_model, heads, num_intents, pooling="mean", dropout=0.0, eps=1e-5):
        super().__init__()
        if pooling not in ("mean", "first"):
            raise ConfigError(f"unknown pooling {pooling!r}")
        self.attn = MultiHeadAttention(d_model, heads)
        self.ln = LayerNorm(d_model, eps)
        self.drop = nn.Dropout(dropout)
        self.proj = nn.Linear(d_model, num_intents)
        self.pooling = pooling

    def forward(self, e, pad_mask):
        """Intent logits ``[B, num_intents]``."""
        s = e + self.ln(self.drop(self.attn(e, e, e, key_pad_mask(pad_mask))))
        if self.pooling == "first":
            pooled = s[:, 0]
        else:
            valid = torch.isfinite(pad_mask).to(s.dtype).unsqueeze(-1)
            count = valid.sum(1)
            if bool((count == 0).any()):
                raise ShapeError("intent pooling over a zero-length row")
            pooled = (s * valid).sum(1) / count
        return self.proj(self.drop(pooled))


def id_decode(decoder: IntentDecoder, e, pad_mask) -> torch.Tensor:
    """Intent log-probabilities."""
    return torch.log_softmax(decoder(e, pad_mask), dim=-1)


class SlotDecoderLayer(nn.Module):
    """Masked self-attention over tag inputs, masked cross-attention into the
    encoder memory, then FFN:

        C = D + LN(SelfAttn(D, M_upper))
        F = C + LN(CrossAttn(C, memory, M_memory))
        O = LN(FFN(F)) + F
    """

    def __init__(self, d_model, heads, ffn_dim, dropout=0.0, eps=1e-5):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, heads)
        self.ln_self = LayerNorm(d_model, eps)
        self.cross_attn = MultiHeadAttention(d_model, heads)
        self.ln_cross = LayerNorm(d_model, eps)
        self.ffn = FeedForward(d_model, ffn_dim, dropout)
        self.ln_ffn = LayerNorm(d_model, eps)
        self.drop = nn.Dropout(dropout)

    def self_block(self, d, mask):
        return d + self.ln_self(self.drop(self.self_attn(d, d, d, mask)))

    def cross_block(self, c, memory, mask):
        return c + self.ln_cross(self.drop(self.cross_attn(c, memory, memory, mask)))

    def forward(self, d, memory, self_mask, cross_mask):
        if d.shape[1] != memory.shape[1]:
            raise ShapeError(
                f"target length {d.shape[1]} != source length {memory.shape[1]}"
            )
        c = self.self_block(d, self_mask)
        f = self.cross_block(c, memory, cross_mask)
        return self.ln_ffn(self.drop(self.ffn(f))) + f


class SlotDecoder(nn.Module):
    def __init__(self, d_model, heads, ffn_dim, num_tags, layers=2, aligned=True,
                 positional=True, dropout=0.0, eps=1e-5):
        super().__init__()
        self.d_model = d_model
        self.aligned = aligned
        self.positional = positional
        # BOS_TAG is already a row of the tag vocabulary
        self.tag_embedding = nn.Parameter(
            torch.empty(num_tags, d_model).uniform_(-0.1, 0.1))
        self.layers = nn.ModuleList(
            SlotDecoderLayer(d_model, heads, ffn_dim, dropout, eps) for _ in range(layers)
        )
        self.proj = nn.Linear(d_model, num_tags)
        self.drop = nn.Dropout(dropout)

    def masks(self, pad_mask):
        L = pad_mask.shape[1]
        dt = pad_mask.dtype
        return (
            compose_mask(build_causal_mask(L, dt), pad_mask),
            compose_mask(memory_mask(L, self.aligned, dt), pad_mask),
        )

    def embed_inputs(self, tag_inputs):
        d = self.tag_embedding[tag_inputs] * math.sqrt(self.d_model)
        if self.positional:
            d = d + sinusoidal_positions(tag_inputs.shape[1], self.d_model).to(d.dtype)
        return self.drop(d)

    def forward(self, tag_inputs, memory, pad_mask):
        """Tag logits ``[B, L, num_tags]`` for the given (shifted) tag inputs."""
        self_mask, cross_mask = self.masks(pad_mask)
        x = self.embed_inputs(tag_inputs)
        for layer in self.layers:
            x = layer(x, memory, self_mask, cross_mask)
        return self.proj(x)


def shift_right(slot_ids: torch.Tensor) -> torch.Tensor:
    """Decoder inputs for teacher forcing: BOS followed by gold tags 0..L-2."""
    bos = torch.full_like(slot_ids[:, :1], BOS_TAG)
    return torch.cat([bos, slot_ids[:, :-1]], dim=1)


def _blocked(num_tags: int, dtype) -> torch.Tensor:
    bias = torch.zeros(num_tags, dtype=dtype)
    bias[PAD_TAG] = NEG_INF
    bias[BOS_TAG] = NEG_INF
    return bias


@torch.no_grad()
def sf_greedy_decode(decoder: SlotDecoder, memory, pad_mask, return_logits=False):
    """Left-to-right greedy tagging for exactly L steps.

    Step t feeds BOS plus the tags emitted at steps < t and takes the argmax
    at position t. PAD and BOS are never emitted.
    """
    B, L, _ = memory.shape
    inputs = torch.full((B, L), PAD_TAG, dtype=torch.long)
    inputs[:, 0] = BOS_TAG
    out = torch.full((B, L), PAD_TAG, dtype=torch.long)
    block = _blocked(decoder.proj.out_features, memory.dtype)
    step_logits = []
    for t in range(L):
        logits = decoder(inputs, memory, pad_mask)[:, t]
        step_logits.append(logits)
        out[:, t] = (logits + block).argmax(-1)
        if t + 1 < L:
            inputs[:, t + 1] = out[:, t]
    valid = torch.isfinite(pad_mask)
    out = torch.where(valid, out, torch.full_like(out, PAD_TAG))
    if return_logits:
        return out, torch.stack(step_logits, dim=1)
    return out
