"""Self-check suites run by ``ctran verify``.

Each check returns a :class:`Check`; nothing here raises on a failed
property, so a report can always be printed.
"""
from __future__ import annotations

import random
import time
from dataclasses import dataclass
from typing import Callable

import torch

from .config import GROUPS, ModelConfig
from .data import build_label_maps, encode_batch
from .decoders import build_causal_mask, build_zero_diag_mask
from .encoder import LayerNorm, MultiHeadAttention
from .evaluation import slot_f1
from .model import CTRAN
from .substrate import cross_entropy, grad_check
from .synthetic import synthetic_corpus

GRAD_TOL = 1e-5
SCOPES = ("grad", "masks", "metrics", "all")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> Check:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # reported, never propagated
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return Check(name, ok, detail, time.perf_counter() - t0)


# masks

def causal_reference(n: int) -> list[list[float]]:
    return [[0.0 if s <= t else float("-inf") for s in range(n)] for t in range(n)]


def zero_diag_reference(n: int) -> list[list[float]]:
    return [[0.0 if s == t else float("-inf") for s in range(n)] for t in range(n)]


def check_masks(max_n: int = 16) -> tuple[bool, str]:
    for n in range(1, max_n + 1):
        if build_causal_mask(n).tolist() != causal_reference(n):
            return False, f"causal mask differs at n={n}"
        if build_zero_diag_mask(n).tolist() != zero_diag_reference(n):
            return False, f"zero-diagonal mask differs at n={n}"
    return True, f"causal and zero-diagonal masks exact for n=1..{max_n}"


# gradients

def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(d_emb=6, kernel_sizes=[1, 2], total_filters=8, heads=2, ffn_dim=12,
                encoder_layers=1, decoder_layers=1, dropout={g: 0.0 for g in GROUPS})
    base.update(overrides)
    return ModelConfig(**base).validate()


def toy_joint_problem(seed: int = 0, cfg: ModelConfig | None = None):
    """A float64 CTRAN and a 2-example batch of unequal lengths."""
    torch.manual_seed(seed)
    examples = synthetic_corpus(2, seed=seed)
    maps = build_label_maps(examples)
    batch = encode_batch(examples, maps)
    model = CTRAN.for_labels(cfg or tiny_model_config(), maps).double()
    return model, batch


def joint_loss_grad_error(seed: int = 0, h: float = 1e-6, samples: int | None = 4) -> float:
    model, batch = toy_joint_problem(seed)
    model.train()
    params = [p for p in model.parameters() if p.requires_grad]
    return grad_check(lambda: model.losses(batch)["loss_total"], params, h, samples, seed)


def attention_block_grad_error(seed: int = 0, h: float = 1e-6) -> float:
    """cross_entropy over the output of a masked attention block + layer norm."""
    g = torch.Generator().manual_seed(seed)
    d, n, c = 4, 5, 3
    attn = MultiHeadAttention(d, 2).double()
    ln = LayerNorm(d).double()
    head = torch.nn.Linear(d, c).double()
    with torch.no_grad():
        for p in list(attn.parameters()) + list(head.parameters()):
            p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64) * 0.5)
    x = torch.randn(1, n, d, generator=g, dtype=torch.float64)
    mask = build_causal_mask(n, torch.float64)
    targets = torch.randint(0, c, (n,), generator=g)
    params = list(attn.parameters()) + list(ln.parameters()) + list(head.parameters())

    def f():
        y = x + ln(attn(x, x, x, mask))
        return cross_entropy(head(y)[0], targets)

    return grad_check(f, params, h, None, seed)


def check_grads(seeds: int = 3) -> tuple[bool, str]:
    worst_attn = max(attention_block_grad_error(s) for s in range(seeds))
    worst_joint = max(joint_loss_grad_error(s) for s in range(seeds))
    ok = worst_attn < GRAD_TOL and worst_joint < GRAD_TOL
    return ok, (f"max rel err attention block {worst_attn:.2e}, "
                f"joint loss {worst_joint:.2e} (threshold {GRAD_TOL:.0e})")


# metrics

def brute_force_span_f1(gold, pred) -> dict:
    """Span matching by enumerating every (start, end) interval.

    An interval is a span of type x when it opens a chunk (B-x, or I-x not
    continuing an x chunk), every later token is I-x, and the chunk does not
    continue past its end.
    """
    def typ(tag):
        if tag == "O":
            return None, None
        p, _, lab = tag.partition("-")
        return (p, lab) if p in ("B", "I") and lab else ("B", tag)

    def spans(tags):
        out = set()
        n = len(tags)
        for i in range(n):
            p, lab = typ(tags[i])
            if p is None:
                continue
            prev = typ(tags[i - 1]) if i > 0 else (None, None)
            if p == "I" and prev[1] == lab:
                continue
            j = i
            while j + 1 < n and typ(tags[j + 1]) == ("I", lab):
                j += 1
            out.add((i, j, lab))
        return out

    tp = ng = npred = 0
    for g, p in zip(gold, pred):
        gs, ps = spans(g), spans(p)
        tp += sum(1 for s in ps if s in gs)
        ng += len(gs)
        npred += len(ps)
    if ng == 0 and npred == 0:
        return {"precision": 1.0, "recall": 1.0, "f1": 1.0}
    pr = tp / npred if npred else 0.0
    rc = tp / ng if ng else 0.0
    return {"precision": pr, "recall": rc, "f1": 2 * pr * rc / (pr + rc) if pr + rc else 0.0}


TAG_ALPHABET = ("O", "B-a", "I-a", "B-b", "I-b")


def random_tag_pair(rng: random.Random, n_examples: int = 3, max_len: int = 6):
    gold, pred = [], []
    for _ in range(n_examples):
        n = rng.randint(1, max_len)
        gold.append([rng.choice(TAG_ALPHABET) for _ in range(n)])
        pred.append([rng.choice(TAG_ALPHABET) for _ in range(n)])
    return gold, pred


def check_metrics(cases: int = 100, seed: int = 0) -> tuple[bool, str]:
    rng = random.Random(seed)
    for case in range(cases):
        gold, pred = random_tag_pair(rng)
        if slot_f1(gold, pred) != brute_force_span_f1(gold, pred):
            return False, f"slot_f1 disagrees with brute force on case {case}"
    return True, f"slot_f1 == brute-force oracle on {cases} random cases"


def run(scope: str = "all") -> list[Check]:
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; expected one of {SCOPES}")
    checks = []
    if scope in ("masks", "all"):
        checks.append(_timed("masks", check_masks))
    if scope in ("metrics", "all"):
        checks.append(_timed("metrics", check_metrics))
    if scope in ("grad", "all"):
        with torch.random.fork_rng():
            checks.append(_timed("grad", check_grads))
    return checks
