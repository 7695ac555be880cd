"""Dense tensor kernels used by the CTRAN layers.

Tensors are ``torch.Tensor`` objects and reverse-mode gradients come from
torch autograd. :func:`grad_check` is the independent check on those
gradients: it perturbs parameter entries and compares against central
differences, so it never consults autograd for the numeric side.

Training runs in float32; gradient checks cast the same graph to float64.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import torch
import torch.nn.functional as F

NEG_INF = float("-inf")

ACTIVATIONS = ("relu", "tanh", "identity")


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A hyperparameter or structural argument is invalid."""


class DegenerateRowError(ValueError):
    """A softmax row has every entry masked out."""


class EmptyBatchError(ValueError):
    """Every target of a loss was ignored."""


class NonFiniteError(FloatingPointError):
    """A loss or gradient evaluated to NaN or infinity."""


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix product over the last two axes, batch axes broadcast."""
    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: cannot multiply {tuple(a.shape)} by {tuple(b.shape)}"
        )
    return torch.matmul(a, b)


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Softmax over the last axis after adding a {0, -inf} mask.

    Masked entries receive exactly zero weight. A row whose entries are all
    masked raises :class:`DegenerateRowError` instead of producing NaN.
    """
    try:
        mask = torch.broadcast_to(mask.to(scores.dtype), scores.shape)
    except RuntimeError as exc:
        raise ShapeError(
            f"masked_softmax: mask {tuple(mask.shape)} does not broadcast to "
            f"scores {tuple(scores.shape)}"
        ) from exc
    dead = torch.isneginf(mask).all(dim=-1)
    if bool(dead.any()):
        where = tuple(int(i) for i in dead.nonzero()[0].tolist())
        raise DegenerateRowError(f"masked_softmax: row {where} is fully masked")
    return torch.softmax(scores + mask, dim=-1)


def layer_norm(
    x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5
) -> torch.Tensor:
    if eps <= 0:
        raise ConfigError(f"layer_norm: eps must be positive, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {tuple(gain.shape)} / bias {tuple(bias.shape)} "
            f"do not match feature size {d}"
        )
    mean = x.mean(dim=-1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gain + bias


def same_padding(k: int) -> tuple[int, int]:
    """(left, right) zero padding that keeps a length-L input at length L."""
    if k <= 0:
        raise ConfigError(f"kernel size must be positive, got {k}")
    left = (k - 1) // 2
    return left, k - 1 - left


def activate(x: torch.Tensor, activation: str) -> torch.Tensor:
    if activation == "relu":
        return torch.relu(x)
    if activation == "tanh":
        return torch.tanh(x)
    if activation == "identity":
        return x
    raise ConfigError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


def conv1d_same(
    x: torch.Tensor,
    filt: torch.Tensor,
    bias: torch.Tensor,
    activation: str = "relu",
) -> torch.Tensor:
    """Length-preserving 1-D convolution over token positions.

    ``x`` is ``[..., L, d_in]``, ``filt`` is ``[k, d_in, d_out]``. Output
    position ``i`` is computed from the window that starts at padded index
    ``i``: ``A(sum_r x_pad[i + r] @ filt[r] + bias)``.
    """
    if filt.dim() != 3:
        raise ShapeError(f"conv1d_same: filter must be [k, d_in, d_out], got {tuple(filt.shape)}")
    k, d_in, d_out = filt.shape
    left, right = same_padding(k)
    if x.shape[-1] != d_in:
        raise ShapeError(
            f"conv1d_same: input feature size {x.shape[-1]} != filter d_in {d_in}"
        )
    if bias.shape != (d_out,):
        raise ShapeError(f"conv1d_same: bias {tuple(bias.shape)} != ({d_out},)")
    lead = x.shape[:-2]
    L = x.shape[-2]
    flat = x.reshape(-1, L, d_in).transpose(1, 2)
    flat = F.pad(flat, (left, right))
    # F.conv1d is cross-correlation: weight[o, c, r] multiplies x_pad[i + r, c]
    out = F.conv1d(flat, filt.permute(2, 1, 0), bias)
    out = out.transpose(1, 2).reshape(*lead, L, d_out)
    return activate(out, activation)


def cross_entropy(
    logits: torch.Tensor, targets: torch.Tensor, ignore_id: int | None = None
) -> torch.Tensor:
    """Mean negative log-likelihood over rows whose target is not ``ignore_id``."""
    if logits.dim() != 2:
        raise ShapeError(f"cross_entropy: logits must be [n, c], got {tuple(logits.shape)}")
    targets = torch.as_tensor(targets, dtype=torch.long, device=logits.device).reshape(-1)
    if targets.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy: {targets.shape[0]} targets for {logits.shape[0]} rows"
        )
    keep = torch.ones_like(targets, dtype=torch.bool)
    if ignore_id is not None:
        keep = targets != ignore_id
    if not bool(keep.any()):
        raise EmptyBatchError("cross_entropy: every row is ignored")
    kept = targets[keep]
    c = logits.shape[1]
    if bool(((kept < 0) | (kept >= c)).any()):
        raise ShapeError(f"cross_entropy: target outside [0, {c})")
    logp = torch.log_softmax(logits[keep], dim=-1)
    return -logp.gather(1, kept.unsqueeze(1)).mean()


def global_grad_norm(params: Iterable[torch.Tensor]) -> float:
    grads = [p.grad.detach() for p in params if p.grad is not None]
    if not grads:
        return 0.0
    return float(torch.linalg.vector_norm(
        torch.stack([torch.linalg.vector_norm(g) for g in grads])))


def clip_grad_norm(params: Iterable[torch.Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    if max_norm <= 0:
        raise ConfigError(f"clip norm must be positive, got {max_norm}")
    params = [p for p in params if p.grad is not None]
    norm = global_grad_norm(params)
    if not math.isfinite(norm):
        raise NonFiniteError(f"gradient norm is {norm}")
    if norm > max_norm:
        torch._foreach_mul_([p.grad for p in params], max_norm / norm)
    return norm


def grad_check(
    f: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    h: float = 1e-6,
    samples_per_param: int | None = 8,
    seed: int = 0,
) -> float:
    """Compare autograd gradients of scalar ``f()`` with central differences.

    Returns ``max |analytic - numeric| / max(1, |analytic|)`` over the
    sampled entries. ``samples_per_param=None`` checks every entry.
    """
    if h <= 0:
        raise ConfigError(f"finite-difference step must be positive, got {h}")
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss = f()
    if not torch.isfinite(loss):
        raise NonFiniteError(f"grad_check: loss is {float(loss)}")
    analytic = torch.autograd.grad(loss, params, allow_unused=True)

    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat = p.view(-1)
            n = flat.numel()
            if samples_per_param is None or samples_per_param >= n:
                idx = range(n)
            else:
                idx = torch.randperm(n, generator=gen)[:samples_per_param].tolist()
            g_flat = g.reshape(-1) if g is not None else torch.zeros(n, dtype=p.dtype)
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
                flat[i] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise NonFiniteError("grad_check: perturbed loss is not finite")
                numeric = (up - down) / (2 * h)
                a = g_flat[i].item()
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
