"""Learnable temporal shrinking between stages.

A spike train over ``T_prev`` steps is compressed into an input current over
``T_next`` steps. Each source step's content is distributed over the target
steps by a softmax allocation whose logits are the learnable weights scaled by
the population mean activity at that source step, so every source column
allocates total mass exactly one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ShrinkLayer:
    W: np.ndarray  # (T_next, T_prev) allocation logits
    guide_grad: bool = True  # let gradient flow through the population mean

    def __post_init__(self):
        if self.W.ndim != 2:
            raise ValueError("shrink weights must be a matrix")
        if not 1 <= self.T_next < self.T_prev:
            raise ValueError(f"need 1 <= T_next < T_prev, got {self.T_next} -> {self.T_prev}")

    @classmethod
    def zeros(cls, T_prev, T_next, guide_grad=True):
        return cls(np.zeros((T_next, T_prev)), guide_grad)

    @property
    def T_next(self):
        return self.W.shape[0]

    @property
    def T_prev(self):
        return self.W.shape[1]


@dataclass
class ShrinkCache:
    O: np.ndarray
    m: np.ndarray
    S: np.ndarray


def pop_mean(O):
    """Mean activity over neurons at each timestep; ``(..., T, n) -> (..., T)``."""
    O = np.asarray(O, dtype=np.float64)
    if O.ndim < 2 or O.shape[-1] == 0 or O.shape[-2] == 0:
        raise ValueError(f"pop_mean needs a non-empty (T, n) tensor, got shape {O.shape}")
    return O.mean(axis=-1)


def allocation(W, m):
    """Softmax over the target axis of ``W * m``; columns sum to one."""
    G = W * m[..., None, :]
    G = G - G.max(axis=-2, keepdims=True)
    E = np.exp(G)
    return E / E.sum(axis=-2, keepdims=True)


def shrink_forward(O_prev, layer):
    """Compress ``(..., T_prev, n)`` into ``(..., T_next, n)``."""
    O_prev = np.asarray(O_prev, dtype=np.float64)
    if O_prev.ndim < 2 or O_prev.shape[-2] != layer.T_prev:
        raise ValueError(f"input shape {O_prev.shape} does not have T_prev={layer.T_prev} steps")
    m = pop_mean(O_prev)
    S = allocation(layer.W, m)
    return S @ O_prev, ShrinkCache(O=O_prev, m=m, S=S)


def shrink_backward(dL_dI, cache, layer):
    """Exact gradients ``(dL_dW, dL_dO_prev)``; batch axes are summed out of ``dL_dW``."""
    dL_dI = np.asarray(dL_dI, dtype=np.float64)
    O, m, S = cache.O, cache.m, cache.S
    if S.shape[-2:] != layer.W.shape:
        raise ValueError("cache was not produced by this layer")
    if dL_dI.shape != (*O.shape[:-2], layer.T_next, O.shape[-1]):
        raise ValueError(f"gradient shape {dL_dI.shape} does not match cached forward")
    dS = dL_dI @ np.swapaxes(O, -1, -2)
    dG = S * (dS - (S * dS).sum(axis=-2, keepdims=True))
    dO = np.swapaxes(S, -1, -2) @ dL_dI
    dW = (dG * m[..., None, :]).reshape(-1, *layer.W.shape).sum(axis=0)
    if layer.guide_grad:
        dm = (dG * layer.W).sum(axis=-2)
        dO = dO + dm[..., None] / O.shape[-1]
    return dW, dO
