"""The joint CTRAN network."""
from __future__ import annotations

import torch
import torch.nn as nn

from .config import GROUPS, ModelConfig
from .data import PAD_TAG, Batch, LabelMaps
from .decoders import IntentDecoder, SlotDecoder, id_decode, sf_greedy_decode, shift_right
from .embeddings import build_embedding
from .encoder import SharedEncoder
from .substrate import cross_entropy


class CTRAN(nn.Module):
    def __init__(self, cfg: ModelConfig, num_tokens: int, num_tags: int, num_intents: int):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.embedding = build_embedding(cfg, num_tokens)
        self.embed_drop = nn.Dropout(cfg.dropout["embedding"])
        self.encoder = SharedEncoder(cfg, cfg.d_emb)
        d = cfg.d_model
        self.intent_decoder = IntentDecoder(d, cfg.heads, num_intents, cfg.intent_pooling,
                                            cfg.dropout["decoder"], cfg.ln_eps)
        self.slot_decoder = SlotDecoder(d, cfg.heads, cfg.ffn, num_tags, cfg.decoder_layers,
                                        aligned=cfg.decoder == "aligned",
                                        positional=cfg.use_positional,
                                        dropout=cfg.dropout["decoder"], eps=cfg.ln_eps)

    @classmethod
    def for_labels(cls, cfg: ModelConfig, maps: LabelMaps) -> "CTRAN":
        return cls(cfg, len(maps.tokens), maps.num_tags, maps.num_intents)

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def _pad_mask(self, batch: Batch):
        return batch.pad_mask.to(self.dtype)

    def encode(self, batch: Batch) -> torch.Tensor:
        pad_mask = self._pad_mask(batch)
        x = self.embed_drop(self.embedding(batch).to(self.dtype))
        return self.encoder(x, pad_mask)

    def forward(self, batch: Batch, tag_inputs: torch.Tensor | None = None):
        """Teacher-forced pass: (intent logits [B, I], slot logits [B, L, T])."""
        pad_mask = self._pad_mask(batch)
        e = self.encode(batch)
        if tag_inputs is None:
            tag_inputs = shift_right(batch.slot_ids)
        return self.intent_decoder(e, pad_mask), self.slot_decoder(tag_inputs, e, pad_mask)

    def losses(self, batch: Batch, intent_weight=1.0, slot_weight=1.0) -> dict:
        intent_logits, slot_logits = self(batch)
        known = batch.intent_ids < intent_logits.shape[1]
        if bool(known.any()):
            loss_intent = cross_entropy(intent_logits[known], batch.intent_ids[known])
        else:  # only unseen intents: nothing to learn from
            loss_intent = intent_logits.sum() * 0.0
        loss_slot = cross_entropy(slot_logits.reshape(-1, slot_logits.shape[-1]),
                                  batch.slot_ids.reshape(-1), ignore_id=PAD_TAG)
        total = intent_weight * loss_intent + slot_weight * loss_slot
        return {"loss_intent": loss_intent, "loss_slot": loss_slot, "loss_total": total}

    @torch.no_grad()
    def predict(self, batch: Batch):
        """Greedy predictions: (intent ids [B], tag ids [B, L])."""
        pad_mask = self._pad_mask(batch)
        e = self.encode(batch)
        intents = id_decode(self.intent_decoder, e, pad_mask).argmax(-1)
        tags = sf_greedy_decode(self.slot_decoder, e, pad_mask)
        return intents, tags

    def param_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        """Named trainable parameters keyed by layer group."""
        groups = {g: [] for g in GROUPS}
        for name, p in self.named_parameters():
            groups[param_group(name)].append((name, p))
        return groups


def param_group(name: str) -> str:
    if name.startswith("embedding."):
        return "embedding"
    if name.startswith("encoder.front."):
        return "conv"
    if name.startswith("encoder."):
        return "encoder"
    return "decoder"
