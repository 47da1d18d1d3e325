"""Finite-difference verification of every hand-written backward pass.

Spiking layers are checked on their smoothed stand-in: spikes are replaced by
the surrogate ramp, reset gates are frozen to the hard spike pattern of the
unperturbed run and encoder spikes are replaced by their activations. On that
model the analytic gradients are exact derivatives, so central differences
must agree to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from .lif import LIFParams, lif_backward, lif_forward
from .network import NetworkSpec, PopSAN, StageConfig, decoder_backward, decoder_forward
from .shrink import ShrinkLayer, shrink_backward, shrink_forward

EPS = 1e-6


@dataclass
class CheckResult:
    suite: str
    tensor: str
    rel_err: float


def rel_error(analytic, numeric):
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numeric_grad(f, x, eps=EPS):
    """Central differences of scalar ``f()`` w.r.t. array ``x``, perturbed in place."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        fp = f()
        flat[k] = old - eps
        fm = f()
        flat[k] = old
        gf[k] = (fp - fm) / (2.0 * eps)
    return g


def check_decoder(rng, act_dim=2, pop=3, batch=4):
    fr = rng.random((batch, act_dim, pop))
    W = rng.normal(size=(act_dim, pop))
    b = rng.normal(size=act_dim)
    R = rng.normal(size=(batch, act_dim))

    def loss():
        return float(np.sum(R * decoder_forward(fr, W, b)))

    dW, db, dfr = decoder_backward(R, fr, W)
    return [CheckResult("decoder", "W_d", rel_error(dW, numeric_grad(loss, W))),
            CheckResult("decoder", "b_d", rel_error(db, numeric_grad(loss, b))),
            CheckResult("decoder", "fr", rel_error(dfr, numeric_grad(loss, fr)))]


def check_lif(rng, n_in=3, n_out=2, T=4, batch=2):
    params = LIFParams(rng.normal(0.0, 0.8, (n_out, n_in)), rng.normal(0.0, 0.3, n_out))
    X = rng.normal(0.5, 0.5, (batch, T, n_in))
    _, hard = lif_forward(X, params)
    gates = hard.spikes
    R = rng.normal(size=(batch, T, n_out))

    def loss():
        out, _ = lif_forward(X, params, surrogate=True, gates=gates)
        return 0.5 * float(np.sum((out - R) ** 2))

    out, tr = lif_forward(X, params, surrogate=True, gates=gates)
    dW, db, dX = lif_backward(out - R, tr, params)
    tag = f"lif[{n_in}x{n_out},T={T}]"
    return [CheckResult(tag, "W", rel_error(dW, numeric_grad(loss, params.W))),
            CheckResult(tag, "b", rel_error(db, numeric_grad(loss, params.b))),
            CheckResult(tag, "X", rel_error(dX, numeric_grad(loss, X)))]


def check_shrink(rng, T_prev=3, T_next=2, n=4, batch=2):
    layer = ShrinkLayer(rng.normal(size=(T_next, T_prev)))
    O = (rng.random((batch, T_prev, n)) < 0.5).astype(float)
    R = rng.normal(size=(batch, T_next, n))

    def loss():
        out, _ = shrink_forward(O, layer)
        return float(np.sum(R * out))

    _, cache = shrink_forward(O, layer)
    dW, dO = shrink_backward(R, cache, layer)
    tag = f"shrink[{T_prev}->{T_next}]"
    return [CheckResult(tag, "W", rel_error(dW, numeric_grad(loss, layer.W))),
            CheckResult(tag, "O", rel_error(dO, numeric_grad(loss, O)))]


def check_encoder(rng, obs_dim=1, pop=3, T=2, batch=1):
    coder = enc.PopulationCoder.tiled([-1.0] * obs_dim, [1.0] * obs_dim, pop)
    coder.sigma[...] = rng.uniform(0.3, 0.8, coder.sigma.shape)
    s = rng.uniform(-1.0, 1.0, (batch, obs_dim))
    R = rng.normal(size=(batch, T, obs_dim * pop))

    def loss():
        A = coder.receptive_field(s)
        return float(np.sum(R * A.reshape(batch, 1, -1)))

    A = coder.receptive_field(s)
    d_mu, d_sigma = coder.backward(R, A, s)
    tag = f"encoder[{obs_dim}x{pop},T={T}]"
    return [CheckResult(tag, "mu", rel_error(d_mu, numeric_grad(loss, coder.mu))),
            CheckResult(tag, "sigma", rel_error(d_sigma, numeric_grad(loss, coder.sigma)))]


def tiny_spec(seed=0):
    """1-D observation and action, populations of 2, stages T = (2, 1)."""
    return NetworkSpec(obs_dim=1, act_dim=1, pop_in=2, pop_out=2,
                       stages=[StageConfig(2, (3,), 0.4), StageConfig(1, (3,), 0.6)],
                       weight_gain=2.0, seed=seed)


def check_network(spec, rng, batch=2):
    """End-to-end check of the lambda-weighted loss over every stage head."""
    net = PopSAN(spec)
    for name, p in net.params.items():
        if name.startswith("shrink"):
            p[...] = rng.normal(size=p.shape)
    s = rng.uniform(-1.0, 1.0, (batch, spec.obs_dim))
    noise = net.sample_noise(rng, batch)
    _, _, hard = net.forward(s, "train", noise=noise)
    gates = net.spike_gates(hard)
    n_aux = len(spec.stages) - 1
    R = rng.normal(size=(batch, spec.act_dim))
    R_aux = [rng.normal(size=(batch, spec.act_dim)) for _ in range(n_aux)]
    lams = spec.lambdas

    def loss():
        a, aux, _ = net.forward(s, "train", noise=noise, surrogate=True, gates=gates)
        total = lams[-1] * float(np.sum(R * a))
        for i in range(n_aux):
            total += lams[i] * float(np.sum(R_aux[i] * aux[i]))
        return total

    _, _, trace = net.forward(s, "train", noise=noise, surrogate=True, gates=gates)
    grads = net.backward(R, R_aux, trace)
    results = []
    for name, p in net.params.items():
        if name == "log_std":
            continue
        results.append(CheckResult("network", name, rel_error(grads[name], numeric_grad(loss, p))))
    return results


def run_all(spec=None, seed=0):
    """Every suite; returns a flat list of :class:`CheckResult`."""
    rng = np.random.default_rng(seed)
    results = []
    results += check_decoder(rng)
    for n_in, n_out, T in ((1, 1, 3), (2, 3, 4), (4, 4, 4), (3, 2, 1)):
        results += check_lif(rng, n_in, n_out, T)
    results += check_shrink(rng, 3, 2)
    results += check_shrink(rng, 4, 2)
    results += check_encoder(rng)
    results += check_encoder(rng, obs_dim=2, pop=3, T=3, batch=2)
    results += check_network(spec or tiny_spec(seed), rng)
    return results
