import dataclasses

import pytest
import torch

from ctran.config import GROUPS, ConfigError, ModelConfig, TrainConfig, config_from_dict
from ctran.data import Example, build_label_maps, encode_batch
from ctran.model import CTRAN
from ctran.substrate import NonFiniteError
from ctran.training import (
    build_optimizer,
    joint_step,
    scheduled_lr,
    scheduler_step,
    train_run,
)

from conftest import tiny_config


def flat_lr(value, **kw):
    return TrainConfig(lr={g: value for g in GROUPS}, **kw)


def test_zero_learning_rate_leaves_losses_unchanged(toy_batch, maps):
    torch.manual_seed(0)
    model = CTRAN.for_labels(tiny_config(), maps)
    cfg = flat_lr(0.0, weight_decay=0.0)
    opt = build_optimizer(model, cfg)
    a = joint_step(model, toy_batch, opt, cfg)
    b = joint_step(model, toy_batch, opt, cfg)
    assert a["loss_total"] == b["loss_total"]
    assert a["loss_intent"] == b["loss_intent"]


def test_total_is_the_plain_sum(toy_model, toy_batch):
    out = toy_model.losses(toy_batch)
    assert torch.equal(out["loss_total"], out["loss_intent"] + out["loss_slot"])


def test_step_clips_to_configured_norm(toy_batch, maps):
    torch.manual_seed(1)
    model = CTRAN.for_labels(tiny_config(), maps)
    cfg = TrainConfig(clip_norm=1e-3)
    out = joint_step(model, toy_batch, build_optimizer(model, cfg), cfg)
    grads = [p.grad for p in model.parameters() if p.grad is not None]
    post = torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(g) for g in grads]))
    assert out["grad_norm"] > 1e-3
    assert abs(float(post) - 1e-3) < 1e-9


def test_non_finite_loss_aborts(toy_batch, maps):
    model = CTRAN.for_labels(tiny_config(), maps)
    with torch.no_grad():
        model.intent_decoder.proj.weight.fill_(float("nan"))
    cfg = TrainConfig()
    before = [p.detach().clone() for p in model.parameters()]
    with pytest.raises(NonFiniteError, match="non-finite"):
        joint_step(model, toy_batch, build_optimizer(model, cfg), cfg)
    for p, q in zip(before, model.parameters()):
        assert torch.equal(p, q.detach()) or torch.isnan(p).any()


class TestScheduler:
    def test_identity_decay(self):
        cfg = TrainConfig(gamma=1.0)
        for epoch in (0, 1, 7, 100):
            assert scheduled_lr(epoch, cfg) == cfg.lr

    def test_two_halvings(self):
        cfg = TrainConfig(lr=1e-3, gamma=0.5, step_size=1)
        assert scheduled_lr(2, cfg)["encoder"] == pytest.approx(2.5e-4, rel=0, abs=1e-18)

    def test_step_size(self):
        cfg = TrainConfig(lr=1e-3, gamma=0.5, step_size=3)
        assert scheduled_lr(2, cfg)["decoder"] == 1e-3
        assert scheduled_lr(3, cfg)["decoder"] == 5e-4

    def test_groups_decay_independently(self):
        base = TrainConfig()
        tweaked = TrainConfig(gamma={"conv": 0.1})
        a, b = scheduled_lr(4, base), scheduled_lr(4, tweaked)
        assert a["conv"] != b["conv"]
        for g in ("embedding", "encoder", "decoder"):
            assert a[g] == b[g]

    def test_optimizer_groups_follow(self, maps):
        model = CTRAN.for_labels(tiny_config(), maps)
        cfg = TrainConfig(gamma={"embedding": 0.5})
        opt = build_optimizer(model, cfg)
        scheduler_step(opt, 1, cfg)
        lrs = {g["name"]: g["lr"] for g in opt.param_groups}
        assert lrs["embedding"] == cfg.lr["embedding"] * 0.5
        assert lrs["decoder"] == cfg.lr["decoder"] * cfg.gamma["decoder"]


def test_loss_non_increasing_with_small_steps():
    ex = Example(["fly", "to", "boston", "today"], ["O", "O", "B-city", "B-date"], "flight")
    maps = build_label_maps([ex, Example(["play"], ["O"], "music")])
    torch.manual_seed(0)
    model = CTRAN.for_labels(tiny_config(), maps).double()
    cfg = flat_lr(1e-4, gamma=1.0, clip_norm=None, weight_decay=0.0)
    opt = build_optimizer(model, cfg)
    batch = encode_batch([ex], maps)
    losses = [joint_step(model, batch, opt, cfg)["loss_total"] for _ in range(50)]
    assert all(b <= a for a, b in zip(losses, losses[1:])), losses


def test_intent_loss_alone_reaches_the_encoder(toy_model, toy_batch):
    for p in toy_model.slot_decoder.parameters():
        p.requires_grad_(False)
    toy_model.losses(toy_batch)["loss_intent"].backward()
    enc = [p.grad for n, p in toy_model.named_parameters() if n.startswith("encoder.")]
    assert enc and all(g is not None for g in enc)
    assert sum(float(g.abs().sum()) for g in enc) > 0


def test_unknown_intents_do_not_break_the_loss(toy_model, maps):
    batch = encode_batch([Example(["play"], ["O"], "never_seen")], maps)
    out = toy_model.losses(batch)
    assert float(out["loss_intent"].detach()) == 0.0
    assert torch.isfinite(out["loss_total"])


def test_protocol_defaults():
    cfg = TrainConfig()
    assert cfg.batch_size == 16
    assert cfg.epochs == 50
    assert cfg.seeds == list(range(1, 11))
    assert cfg.clip_norm == 0.5
    assert cfg.betas == (0.9, 0.999) and cfg.adam_eps == 1e-8 and cfg.weight_decay == 0.01


@pytest.mark.parametrize("bad", [dict(clip_norm=0.0), dict(batch_size=0), dict(step_size=0)])
def test_train_config_invariants(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad).validate()


def test_unknown_config_keys_are_named():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"model": {"bogus": 1}})


def test_train_run_selects_best_dev_epoch(corpus):
    cfg = TrainConfig(epochs=3, batch_size=8, deterministic=True)
    result = train_run(corpus[:24], corpus[24:], tiny_config(), cfg, seed=0)
    assert len(result.history) == 3
    best = max(result.history, key=lambda r: (r["dev_slot_f1"], r["dev_intent_accuracy"]))
    assert result.best_epoch == best["epoch"]
    assert result.best_dev["slot_f1"] == best["dev_slot_f1"]
    assert {"loss_total", "dev_slot_f1", "epoch_seconds", "lr_encoder"} <= result.history[0].keys()


def test_callback_can_stop_early(corpus):
    cfg = TrainConfig(epochs=5, batch_size=8)
    result = train_run(corpus, None, tiny_config(), cfg, seed=0,
                       callback=lambda row, model: row["epoch"] < 2)
    assert len(result.history) == 2


def test_same_seed_same_trajectory(corpus):
    cfg = TrainConfig(epochs=2, batch_size=8, deterministic=True)
    a = train_run(corpus, None, tiny_config(dropout=0.1), cfg, seed=3)
    b = train_run(corpus, None, tiny_config(dropout=0.1), cfg, seed=3)
    assert a.step_losses == b.step_losses
    c = train_run(corpus, None, tiny_config(dropout=0.1), cfg, seed=4)
    assert a.step_losses != c.step_losses


def test_dropout_is_per_group():
    cfg = dataclasses.replace(ModelConfig(), dropout={"decoder": 0.3}).validate()
    assert cfg.dropout["decoder"] == 0.3 and cfg.dropout["encoder"] == 0.1
