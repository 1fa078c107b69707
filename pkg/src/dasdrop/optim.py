"""Initialisation, learning-rate schedule, Adam and class-balanced sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError, DivergenceError
from .numerics import xavier_bound


def xavier_init(fan_in: int, fan_out: int, seed: int | np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Xavier/Glorot uniform matrix of shape ``(fan_in, fan_out)``."""
    if fan_in <= 0 or fan_out <= 0:
        raise ContractError(f"fans must be positive, got {fan_in}, {fan_out}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    b = xavier_bound(fan_in, fan_out)
    return rng.uniform(-b, b, size=(fan_in, fan_out)).astype(dtype)


def noam_lr(step: int, d_model: int, warmup: int) -> float:
    if step < 1:
        raise ContractError(f"noam_lr step must be >= 1, got {step}")
    return d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update of ``params``.

    Parameters missing from ``grads`` had no gradient flow this step and are
    left untouched, moments included.
    """
    for name, g in grads.items():
        if name not in params:
            raise ContractError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ContractError(f"{name}: grad shape {g.shape} != param shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def oversample(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices for one epoch with positives replicated up to the negative count.

    Every negative appears once. Positives appear ``n_neg // n_pos`` times each,
    plus a without-replacement draw for the remainder, so the stream is exactly
    1:1 when the classes are already balanced or divide evenly.
    """
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise DataError(f"oversample needs both classes, got {len(pos)} positive / {len(neg)} negative")
    if len(pos) >= len(neg):
        # majority positives: replicate negatives instead
        reps, rem = divmod(len(pos), len(neg))
        minority, majority = neg, pos
    else:
        reps, rem = divmod(len(neg), len(pos))
        minority, majority = pos, neg
    stream = np.concatenate([majority, np.tile(minority, reps), rng.choice(minority, size=rem, replace=False)])
    return rng.permutation(stream)
