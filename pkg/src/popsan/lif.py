"""Current-based leaky integrate-and-fire layer with a rectangular surrogate gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

D_C = 0.5
D_V = 0.75
V_TH = 0.5
V_REST = 0.0
WIDTH = 1.0


@dataclass
class LIFParams:
    W: np.ndarray
    b: np.ndarray
    d_c: float = D_C
    d_v: float = D_V
    v_th: float = V_TH
    v_rest: float = V_REST
    width: float = WIDTH

    def __post_init__(self):
        if not 0.0 <= self.d_c < 1.0:
            raise ValueError(f"d_c must lie in [0, 1), got {self.d_c}")
        if not 0.0 <= self.d_v < 1.0:
            raise ValueError(f"d_v must lie in [0, 1), got {self.d_v}")
        if not self.v_th > self.v_rest:
            raise ValueError("v_th must exceed v_rest")
        if self.width <= 0:
            raise ValueError("surrogate width must be positive")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent shapes W{self.W.shape} b{self.b.shape}")

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]


@dataclass
class LIFState:
    c: np.ndarray
    v: np.ndarray
    o_prev: np.ndarray

    @classmethod
    def zeros(cls, n_out, v_rest=V_REST, batch_shape=()):
        shape = (*batch_shape, n_out)
        return cls(np.zeros(shape), np.full(shape, float(v_rest)), np.zeros(shape))


@dataclass
class LIFTrace:
    """Everything the backward pass needs, stacked over time (axis -2)."""

    x: np.ndarray
    c: np.ndarray
    v: np.ndarray  # pre-reset voltage
    spikes: np.ndarray  # hard spikes, used as the reset gate
    out: np.ndarray  # emitted signal (spikes, or ramp values in surrogate mode)

    @property
    def T(self):
        return self.x.shape[-2]


def surrogate_grad(v, v_th=V_TH, width=WIDTH):
    """Rectangular window: ``1/width`` where ``|v - v_th| < width/2``, else 0."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(np.abs(v - v_th) < width / 2.0, 1.0 / width, 0.0)


def surrogate_ramp(v, v_th=V_TH, width=WIDTH):
    """Antiderivative of :func:`surrogate_grad`; a smooth stand-in for the spike."""
    return np.clip((np.asarray(v, dtype=np.float64) - v_th) / width + 0.5, 0.0, 1.0)


def lif_step(x_t, state, params):
    """Advance one timestep. Returns ``(o_t, new_state)``; the returned voltage is post-reset."""
    if not (np.all(np.isfinite(state.c)) and np.all(np.isfinite(state.v))):
        raise ValueError("LIF state contains non-finite values")
    c = params.d_c * state.c + np.asarray(x_t, dtype=np.float64) @ params.W.T + params.b
    v = params.d_v * state.v * (1.0 - state.o_prev) + c
    o = (v > params.v_th).astype(np.float64)
    v = np.where(o > 0, params.v_rest, v)
    return o, LIFState(c=c, v=v, o_prev=o)


def lif_forward(X, params, surrogate=False, gates=None):
    """Simulate the layer over ``T`` timesteps from a zero initial state.

    ``X`` has shape ``(..., T, n_in)``. Returns the output of shape
    ``(..., T, n_out)`` and a :class:`LIFTrace`.

    With ``surrogate=True`` the emitted signal is the piecewise-linear ramp
    whose derivative is :func:`surrogate_grad`; the reset gate still uses hard
    spikes, or ``gates`` when a frozen spike pattern is supplied. The backward
    pass is the exact derivative of that smoothed model.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2 or X.shape[-1] != params.n_in:
        raise ValueError(f"input shape {X.shape} incompatible with n_in={params.n_in}")
    T = X.shape[-2]
    if T < 1:
        raise ValueError("need at least one timestep")
    if not np.all(np.isfinite(X)):
        raise ValueError("LIF input contains non-finite values")
    if gates is not None and gates.shape != (*X.shape[:-1], params.n_out):
        raise ValueError(f"gates shape {gates.shape} does not match output shape")
    drive = X @ params.W.T + params.b
    C = np.empty_like(drive)
    V = np.empty_like(drive)
    S = np.empty_like(drive)
    c = np.zeros(drive.shape[:-2] + drive.shape[-1:])
    v = np.full_like(c, params.v_rest)
    gate = np.zeros_like(c)
    for t in range(T):
        c = params.d_c * c + drive[..., t, :]
        v = params.d_v * v * (1.0 - gate) + c
        spikes = (v > params.v_th).astype(np.float64)
        C[..., t, :] = c
        V[..., t, :] = v
        S[..., t, :] = spikes
        gate = spikes if gates is None else gates[..., t, :]
    if not np.all(np.isfinite(V)):
        raise ValueError("LIF state became non-finite")
    out = surrogate_ramp(V, params.v_th, params.width) if surrogate else S
    if gates is not None:
        S = gates
    return out, LIFTrace(x=X, c=C, v=V, spikes=S, out=out)


def lif_backward(dL_dO, trace, params):
    """Backpropagate through time. Returns ``(dL_dW, dL_db, dL_dX)``.

    The reset gate is held constant, so gradient reaches earlier voltages
    only through non-spiking steps. Leading batch axes are summed out of the
    parameter gradients.
    """
    dL_dO = np.asarray(dL_dO, dtype=np.float64)
    if dL_dO.shape != trace.v.shape:
        raise ValueError(f"gradient shape {dL_dO.shape} does not match trace {trace.v.shape}")
    if trace.x.shape[-1] != params.n_in or trace.v.shape[-1] != params.n_out:
        raise ValueError("trace was not produced by these parameters")
    T = trace.T
    dv_spike = dL_dO * surrogate_grad(trace.v, params.v_th, params.width)
    keep = params.d_v * (1.0 - trace.spikes)
    dC = np.empty_like(dv_spike)
    dv = np.zeros(dv_spike.shape[:-2] + dv_spike.shape[-1:])
    dc = np.zeros_like(dv)
    for t in range(T - 1, -1, -1):
        dv = dv_spike[..., t, :] + dv
        dc = dv + params.d_c * dc
        dC[..., t, :] = dc
        if t > 0:
            dv = dv * keep[..., t - 1, :]
    n_out, n_in = params.W.shape
    dW = dC.reshape(-1, n_out).T @ trace.x.reshape(-1, n_in)
    db = dC.reshape(-1, n_out).sum(axis=0)
    dX = dC @ params.W
    return dW, db, dX
