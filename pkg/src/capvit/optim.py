"""AdamW with decoupled weight decay, gradient clipping, and the LR schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .tensor import Tensor


@dataclass(frozen=True)
class AdamHyper:
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def decays(name: str) -> bool:
    """Weight decay applies to matrices only: layernorm affines, biases, and
    the temperature are skipped."""
    leaf = name.rsplit(".", 1)[-1]
    if leaf in ("b", "b1", "b2", "log_inv_tau"):
        return False
    if "ln" in leaf or "final_ln" in name:
        return False
    return True


def adamw_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    hyper: AdamHyper = AdamHyper(),
) -> None:
    """One AdamW update in place; params carry their grads.

    All gradients are validated as finite before anything mutates, so a
    bad step aborts cleanly.
    """
    for name in params:
        g = params[name].grad
        if g is not None and not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name}; step aborted")

    state.step += 1
    t = state.step
    bc1 = 1.0 - hyper.beta1**t
    bc2 = 1.0 - hyper.beta2**t
    for name in sorted(params):
        p = params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        if hyper.weight_decay and decays(name):
            p.data *= 1.0 - lr * hyper.weight_decay
        mhat = m / bc1
        vhat = v / bc2
        p.data -= lr * mhat / (np.sqrt(vhat) + hyper.eps)


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most max_norm; returns
    the pre-clip norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


def lr_at(step: int, peak: float, warmup: int, total: int) -> float:
    """Linear warmup 0 -> peak, then cosine decay to 0 at `total` steps."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if warmup > 0 and step < warmup:
        return peak * step / warmup
    if total <= warmup:
        return peak if step <= total else 0.0
    if step >= total:
        return 0.0
    phase = (step - warmup) / (total - warmup)
    return peak * 0.5 * (1.0 + np.cos(np.pi * phase))
