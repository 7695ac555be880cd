"""Joint optimisation of the intent and slot losses."""
from __future__ import annotations

import copy
import logging
import random
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .config import GROUPS, ModelConfig, TrainConfig
from .data import UNK_TAG, Example, LabelMaps, build_label_maps, encode_batch, iter_batches
from .evaluation import intent_accuracy, slot_f1
from .model import CTRAN
from .substrate import NonFiniteError, clip_grad_norm

log = logging.getLogger(__name__)

UNK_TAG_RENDERING = "B-<unk>"


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def build_optimizer(model: CTRAN, cfg: TrainConfig) -> torch.optim.AdamW:
    groups = []
    for name, named in model.param_groups().items():
        params = [p for _, p in named if p.requires_grad]
        if params:
            groups.append({"params": params, "lr": cfg.lr[name], "name": name})
    return torch.optim.AdamW(groups, betas=cfg.betas, eps=cfg.adam_eps,
                             weight_decay=cfg.weight_decay, foreach=True)


def scheduled_lr(epoch: int, cfg: TrainConfig) -> dict[str, float]:
    """Per-group learning rate after ``epoch`` completed epochs:
    ``lr * gamma ** (epoch // step_size)``."""
    k = epoch // cfg.step_size
    return {g: cfg.lr[g] * cfg.gamma[g] ** k for g in GROUPS}


def scheduler_step(optimizer, epoch: int, cfg: TrainConfig) -> dict[str, float]:
    """Apply the step decay for the epoch boundary just crossed."""
    rates = scheduled_lr(epoch, cfg)
    for group in optimizer.param_groups:
        group["lr"] = rates[group["name"]]
    return rates


def joint_step(model: CTRAN, batch, optimizer, cfg: TrainConfig) -> dict[str, float]:
    """One update on the summed intent + slot loss."""
    model.train()
    optimizer.zero_grad(set_to_none=False)
    losses = model.losses(batch, cfg.intent_weight, cfg.slot_weight)
    total = losses["loss_total"]
    if not torch.isfinite(total):
        raise NonFiniteError(
            f"non-finite loss (intent={float(losses['loss_intent'].detach())}, "
            f"slot={float(losses['loss_slot'].detach())}) on batch {batch.ids[:3]}..."
        )
    total.backward()
    params = [p for p in model.parameters() if p.requires_grad]
    norm = clip_grad_norm(params, cfg.clip_norm) if cfg.clip_norm else None
    optimizer.step()
    out = {k: float(v.detach()) for k, v in losses.items()}
    out["grad_norm"] = norm
    return out


def tag_names(ids, maps: LabelMaps) -> list[str]:
    out = []
    for i in ids:
        i = int(i)
        out.append(UNK_TAG_RENDERING if i == UNK_TAG else maps.slots[i])
    return out


def predict_examples(model: CTRAN, examples: Sequence[Example], maps: LabelMaps,
                     batch_size: int = 64) -> list[tuple[str, list[str], float]]:
    """(intent, tags, seconds) per example. Tags cover every input token;
    punctuation stripped before encoding comes back as ``O``."""
    model.eval()
    strip = model.cfg.strip_punct
    out = []
    for chunk in iter_batches(examples, batch_size):
        t0 = time.perf_counter()
        batch = encode_batch(chunk, maps, strip)
        intents, tags = model.predict(batch)
        per = (time.perf_counter() - t0) / len(chunk)
        for b, ex in enumerate(chunk):
            n = int(batch.lengths[b])
            names = tag_names(tags[b, :n], maps)
            full = ["O"] * len(ex.tokens)
            for j, orig in enumerate(batch.kept[b]):
                full[orig] = names[j]
            out.append((maps.intent_name(int(intents[b])), full, per))
    return out


def evaluate(model: CTRAN, examples: Sequence[Example], maps: LabelMaps,
             batch_size: int = 64) -> dict[str, float]:
    preds = predict_examples(model, examples, maps, batch_size)
    f = slot_f1([list(ex.slots) for ex in examples], [p[1] for p in preds])
    return {
        "slot_f1": f["f1"],
        "slot_precision": f["precision"],
        "slot_recall": f["recall"],
        "intent_accuracy": intent_accuracy([ex.intent for ex in examples], [p[0] for p in preds]),
    }


@dataclass
class RunResult:
    model: CTRAN
    maps: LabelMaps
    best_epoch: int
    best_dev: dict
    history: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def _better(a: dict, b: dict | None) -> bool:
    if b is None:
        return True
    return (a["slot_f1"], a["intent_accuracy"]) > (b["slot_f1"], b["intent_accuracy"])


def train_run(train: Sequence[Example], dev: Sequence[Example] | None,
              model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int,
              maps: LabelMaps | None = None, eval_train: bool = False,
              callback=None) -> RunResult:
    """Train for ``train_cfg.epochs`` epochs, keeping the parameters with the
    best dev slot F1 (ties: dev intent accuracy, then the earlier epoch).

    Without a dev split the training split is used for selection.
    """
    seed_everything(seed, train_cfg.deterministic)
    maps = maps or build_label_maps(train)
    model = CTRAN.for_labels(model_cfg, maps)
    optimizer = build_optimizer(model, train_cfg)
    rng = np.random.default_rng(seed)
    select_on = dev if dev else train

    best_state, best_dev, best_epoch = copy.deepcopy(model.state_dict()), None, 0
    history, step_losses = [], []
    for epoch in range(1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        sums = {"loss_intent": 0.0, "loss_slot": 0.0, "loss_total": 0.0}
        n_batches = 0
        order = rng.permutation(len(train))
        for chunk in iter_batches(train, train_cfg.batch_size, order):
            batch = encode_batch(chunk, maps, model_cfg.strip_punct)
            losses = joint_step(model, batch, optimizer, train_cfg)
            step_losses.append(losses["loss_total"])
            for k in sums:
                sums[k] += losses[k]
            n_batches += 1
        train_seconds = time.perf_counter() - t0
        rates = scheduler_step(optimizer, epoch, train_cfg)

        dev_metrics = evaluate(model, select_on, maps)
        row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()},
               **{f"dev_{k}": v for k, v in dev_metrics.items()},
               "lr_encoder": rates["encoder"], "epoch_seconds": train_seconds}
        if eval_train:
            row.update({f"train_{k}": v for k, v in evaluate(model, train, maps).items()})
        history.append(row)
        log.info("seed %d epoch %d loss %.4f dev slot F1 %.4f intent acc %.4f (%.1fs)",
                 seed, epoch, row["loss_total"], dev_metrics["slot_f1"],
                 dev_metrics["intent_accuracy"], train_seconds)
        if _better(dev_metrics, best_dev):
            best_state, best_dev, best_epoch = copy.deepcopy(model.state_dict()), dev_metrics, epoch
        if callback is not None and callback(row, model) is False:
            break

    model.load_state_dict(best_state)
    return RunResult(model, maps, best_epoch, best_dev or {}, history, step_losses)

