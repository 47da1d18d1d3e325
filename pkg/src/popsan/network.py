"""Population-coded spiking actor with staged temporal shrinking and auxiliary heads.

Data flow for one inference::

    obs -> Gaussian encoder -> spikes (T_1 steps)
        -> stage 1 LIF layers -> [aux head 1] -> shrink -> current (T_2 steps)
        -> stage 2 LIF layers -> [aux head 2] -> shrink -> ...
        -> stage I LIF layers -> output populations -> firing rates -> decoder -> action

Auxiliary heads (one LIF layer plus a decoder per non-final stage) only run
in train mode. All parameters live in ``PopSAN.params``, a flat dict of named
arrays that the optimizer updates in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from .lif import D_C, D_V, V_TH, WIDTH, LIFParams, lif_backward, lif_forward
from .shrink import ShrinkLayer, shrink_backward, shrink_forward


@dataclass
class StageConfig:
    T: int
    hidden_sizes: tuple = (64,)
    lam: float = 1.0

    def to_dict(self):
        return {"T": self.T, "hidden_sizes": list(self.hidden_sizes), "lam": self.lam}


@dataclass
class NetworkSpec:
    obs_dim: int = 6
    act_dim: int = 2
    pop_in: int = 10
    pop_out: int = 10
    stages: list = field(default_factory=lambda: [
        StageConfig(3, (64,), 0.2), StageConfig(2, (64,), 0.2), StageConfig(1, (64,), 0.6)])
    d_c: float = D_C
    d_v: float = D_V
    v_th: float = V_TH
    width: float = WIDTH
    obs_low: tuple = None
    obs_high: tuple = None
    log_std_init: float = -0.5
    weight_gain: float = 2.0
    guide_grad: bool = True
    seed: int = 0

    def __post_init__(self):
        self.stages = [s if isinstance(s, StageConfig) else StageConfig(
            int(s["T"]), tuple(s["hidden_sizes"]), float(s["lam"])) for s in self.stages]
        for s in self.stages:
            s.hidden_sizes = tuple(int(h) for h in s.hidden_sizes)
        if self.obs_low is None:
            self.obs_low = (-1.0,) * self.obs_dim
        if self.obs_high is None:
            self.obs_high = (1.0,) * self.obs_dim
        self.obs_low = tuple(float(x) for x in self.obs_low)
        self.obs_high = tuple(float(x) for x in self.obs_high)
        self.validate()

    def validate(self):
        errors = []
        for name in ("obs_dim", "act_dim", "pop_in", "pop_out"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if not self.stages:
            errors.append("at least one stage is required")
        Ts = [s.T for s in self.stages]
        if any(T < 1 for T in Ts):
            errors.append(f"stage timesteps must be >= 1, got {Ts}")
        if any(a <= b for a, b in zip(Ts, Ts[1:])):
            errors.append(f"stage timesteps must strictly decrease, got {Ts}")
        if any(not s.hidden_sizes or min(s.hidden_sizes) < 1 for s in self.stages):
            errors.append("every stage needs at least one hidden layer of positive width")
        lams = [s.lam for s in self.stages]
        if any(not 0.0 <= lam <= 1.0 for lam in lams):
            errors.append(f"stage weights must lie in [0, 1], got {lams}")
        if self.stages and abs(sum(lams) - 1.0) > 1e-9:
            errors.append(f"stage weights must sum to 1, got {sum(lams)!r}")
        if len(self.obs_low) != self.obs_dim or len(self.obs_high) != self.obs_dim:
            errors.append("obs_low/obs_high must have obs_dim entries")
        elif any(h <= lo for lo, h in zip(self.obs_low, self.obs_high)):
            errors.append("obs_high must exceed obs_low")
        try:
            LIFParams(np.zeros((1, 1)), np.zeros(1), self.d_c, self.d_v, self.v_th, 0.0, self.width)
        except ValueError as e:
            errors.append(str(e))
        if errors:
            raise ValueError("invalid network spec: " + "; ".join(errors))

    @property
    def lambdas(self):
        return tuple(s.lam for s in self.stages)

    def to_dict(self):
        return {
            "obs_dim": self.obs_dim, "act_dim": self.act_dim,
            "pop_in": self.pop_in, "pop_out": self.pop_out,
            "stages": [s.to_dict() for s in self.stages],
            "d_c": self.d_c, "d_v": self.d_v, "v_th": self.v_th, "width": self.width,
            "obs_low": list(self.obs_low), "obs_high": list(self.obs_high),
            "log_std_init": self.log_std_init, "weight_gain": self.weight_gain,
            "guide_grad": self.guide_grad, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ActorTrace:
    mode: str
    surrogate: bool
    squeeze: bool
    s: np.ndarray
    A_E: np.ndarray
    noise: np.ndarray
    x_in: np.ndarray
    stage_traces: list  # per stage, list of LIFTrace
    shrink_caches: list  # per stage boundary
    aux_traces: list  # per non-final stage: (LIFTrace, fr) or None in eval mode
    out_trace: object
    fr: np.ndarray  # (B, act_dim, pop_out)


def decoder_forward(fr, W_d, b_d):
    """``a_i = W_d[i] . fr[i] + b_d[i]``; ``fr`` has shape ``(..., act_dim, pop_out)``."""
    return (W_d * fr).sum(axis=-1) + b_d


def decoder_backward(dL_da, fr, W_d):
    """Returns ``(dL_dWd, dL_dbd, dL_dfr)``; batch axes are summed out of the parameter gradients."""
    dL_da = np.asarray(dL_da, dtype=np.float64)
    if fr.shape[-2:] != W_d.shape or dL_da.shape != fr.shape[:-1]:
        raise ValueError(f"shape mismatch: dL_da {dL_da.shape}, fr {fr.shape}, W_d {W_d.shape}")
    g = dL_da[..., None]
    dW = (g * fr).reshape(-1, *W_d.shape).sum(axis=0)
    db = dL_da.reshape(-1, W_d.shape[0]).sum(axis=0)
    return dW, db, g * W_d


class PopSAN:
    kind = "popsan"

    def __init__(self, spec=None):
        self.spec = spec or NetworkSpec()
        sp = self.spec
        rng = np.random.default_rng(sp.seed)
        self.params = {}
        coder = enc.PopulationCoder.tiled(sp.obs_low, sp.obs_high, sp.pop_in)
        self.params["encoder.mu"] = coder.mu
        self.params["encoder.sigma"] = coder.sigma
        self.coder = coder

        n_out_pop = sp.act_dim * sp.pop_out
        n_in = sp.obs_dim * sp.pop_in
        self.stage_layers = []  # per stage: list of layer names
        for i, st in enumerate(sp.stages, start=1):
            names = []
            for j, h in enumerate(st.hidden_sizes):
                name = f"s{i}.l{j}"
                self._init_lif(name, n_in, h, rng)
                names.append(name)
                n_in = h
            self.stage_layers.append(names)
            if i < len(sp.stages):
                self._init_lif(f"aux{i}", n_in, n_out_pop, rng)
                self._init_decoder(f"aux{i}.dec", rng)
                self.params[f"shrink{i}.W"] = np.zeros((sp.stages[i].T, st.T))
        self._init_lif("out", n_in, n_out_pop, rng)
        self._init_decoder("dec", rng)
        self.params["log_std"] = np.full(sp.act_dim, float(sp.log_std_init))

    def _init_lif(self, name, n_in, n_out, rng):
        bound = self.spec.weight_gain / np.sqrt(n_in)
        self.params[f"{name}.W"] = rng.uniform(-bound, bound, (n_out, n_in))
        self.params[f"{name}.b"] = rng.uniform(-bound, bound, n_out)

    def _init_decoder(self, name, rng):
        bound = 1.0 / np.sqrt(self.spec.pop_out)
        self.params[f"{name}.W"] = rng.uniform(-bound, bound, (self.spec.act_dim, self.spec.pop_out))
        self.params[f"{name}.b"] = np.zeros(self.spec.act_dim)

    # -- accessors -----------------------------------------------------

    @property
    def lambdas(self):
        return self.spec.lambdas

    @property
    def n_heads(self):
        return len(self.spec.stages)

    def lif(self, name):
        sp = self.spec
        return LIFParams(self.params[f"{name}.W"], self.params[f"{name}.b"], sp.d_c, sp.d_v, sp.v_th, 0.0, sp.width)

    def shrink(self, i):
        return ShrinkLayer(self.params[f"shrink{i}.W"], self.spec.guide_grad)

    def lif_names(self, mode="eval"):
        """Main-path LIF layers in execution order (plus auxiliary layers in train mode)."""
        names = [n for layers in self.stage_layers for n in layers] + ["out"]
        if mode == "train":
            names += [f"aux{i}" for i in range(1, len(self.spec.stages))]
        return names

    def n_params(self):
        return sum(p.size for p in self.params.values())

    def sample_noise(self, rng, batch):
        """Uniform draws that fix the encoder's spike sampling for ``batch`` observations."""
        return enc.draw_uniforms(rng, self.spec.stages[0].T, self.spec.obs_dim * self.spec.pop_in, (batch,))

    def clamp(self):
        np.maximum(self.params["encoder.sigma"], enc.SIGMA_MIN, out=self.params["encoder.sigma"])

    # -- forward ---------------------------------------------------------

    def forward(self, s, mode="eval", rng=None, noise=None, surrogate=False, gates=None):
        """Run one inference. Returns ``(action, aux_actions, trace)``.

        ``noise`` (from :meth:`sample_noise`) replays a frozen encoder mask;
        otherwise spikes are drawn from ``rng``. ``surrogate=True`` replaces
        the encoder spikes by their activations and LIF spikes by their
        surrogate ramps, with reset gates frozen to ``gates`` (a dict of
        layer name -> hard spike pattern) when given.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        sp = self.spec
        s = np.asarray(s, dtype=np.float64)
        squeeze = s.ndim == 1
        x = s[None] if squeeze else s
        if x.ndim != 2 or x.shape[1] != sp.obs_dim:
            raise ValueError(f"observation shape {s.shape} incompatible with obs_dim={sp.obs_dim}")
        A_E = enc.compute_receptive_field(x, self.params["encoder.mu"], self.params["encoder.sigma"])
        T1 = sp.stages[0].T
        if noise is None:
            if rng is None:
                raise ValueError("forward needs rng or a frozen noise mask")
            noise = self.sample_noise(rng, x.shape[0])
        if surrogate:
            h = np.repeat(A_E.reshape(x.shape[0], 1, -1), T1, axis=1)
        else:
            h = enc.encode_spikes(A_E, T1, uniforms=noise)
        x_in = h
        gates = gates or {}

        stage_traces, shrink_caches, aux_traces = [], [], []
        aux_actions = []
        n_stages = len(sp.stages)
        for i, names in enumerate(self.stage_layers, start=1):
            traces = []
            for name in names:
                h, tr = lif_forward(h, self.lif(name), surrogate, gates.get(name))
                traces.append(tr)
            stage_traces.append(traces)
            if i < n_stages:
                if mode == "train":
                    o_aux, tr_aux = lif_forward(h, self.lif(f"aux{i}"), surrogate, gates.get(f"aux{i}"))
                    fr_aux = o_aux.mean(axis=-2).reshape(-1, sp.act_dim, sp.pop_out)
                    a_aux = decoder_forward(fr_aux, self.params[f"aux{i}.dec.W"], self.params[f"aux{i}.dec.b"])
                    aux_traces.append((tr_aux, fr_aux))
                    aux_actions.append(a_aux[0] if squeeze else a_aux)
                else:
                    aux_traces.append(None)
                h, cache = shrink_forward(h, self.shrink(i))
                shrink_caches.append(cache)
        o_out, out_trace = lif_forward(h, self.lif("out"), surrogate, gates.get("out"))
        fr = o_out.mean(axis=-2).reshape(-1, sp.act_dim, sp.pop_out)
        action = decoder_forward(fr, self.params["dec.W"], self.params["dec.b"])
        trace = ActorTrace(mode=mode, surrogate=surrogate, squeeze=squeeze, s=x, A_E=A_E, noise=noise,
                           x_in=x_in, stage_traces=stage_traces, shrink_caches=shrink_caches,
                           aux_traces=aux_traces, out_trace=out_trace, fr=fr)
        return (action[0] if squeeze else action), aux_actions, trace

    def spike_gates(self, trace):
        """Hard spike patterns of every LIF layer in ``trace``, keyed by layer name."""
        gates = {}
        for names, traces in zip(self.stage_layers, trace.stage_traces):
            for name, tr in zip(names, traces):
                gates[name] = tr.spikes
        for i, aux in enumerate(trace.aux_traces, start=1):
            if aux is not None:
                gates[f"aux{i}"] = aux[0].spikes
        gates["out"] = trace.out_trace.spikes
        return gates

    # -- backward --------------------------------------------------------

    def backward(self, dL_da, dL_daux, trace):
        """Gradient of ``sum_i lambda_i L_i`` for every parameter.

        ``dL_da`` is the gradient of the final-stage loss w.r.t. the action and
        ``dL_daux[i]`` that of stage ``i``'s loss w.r.t. its auxiliary action.
        Each is weighted by its stage's lambda; heads with zero weight are
        skipped. ``log_std`` receives zero here (its gradient comes from the
        policy loss directly).
        """
        sp = self.spec
        lams = sp.lambdas
        n_stages = len(sp.stages)
        dL_daux = list(dL_daux or [])
        if trace.mode != "train" and any(g is not None for g in dL_daux):
            raise ValueError("auxiliary gradients need a train-mode trace")
        if dL_daux and len(dL_daux) != n_stages - 1:
            raise ValueError(f"expected {n_stages - 1} auxiliary gradients, got {len(dL_daux)}")
        if len(trace.stage_traces) != n_stages:
            raise ValueError("trace does not match this network")
        dL_daux += [None] * (n_stages - 1 - len(dL_daux))

        def batched(g):
            g = np.asarray(g, dtype=np.float64)
            return g[None] if trace.squeeze else g

        grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        B = trace.s.shape[0]

        dA = lams[-1] * batched(dL_da)
        dWd, dbd, dfr = decoder_backward(dA, trace.fr, self.params["dec.W"])
        grads["dec.W"] += dWd
        grads["dec.b"] += dbd
        T_last = sp.stages[-1].T
        dO = np.repeat(dfr.reshape(B, 1, -1) / T_last, T_last, axis=1)
        dW, db, dh = lif_backward(dO, trace.out_trace, self.lif("out"))
        grads["out.W"] += dW
        grads["out.b"] += db

        for i in range(n_stages, 0, -1):
            names = self.stage_layers[i - 1]
            traces = trace.stage_traces[i - 1]
            if i < n_stages:
                dW, dh = shrink_backward(dh, trace.shrink_caches[i - 1], self.shrink(i))
                grads[f"shrink{i}.W"] += dW
                g_aux = dL_daux[i - 1]
                if g_aux is not None and lams[i - 1] != 0.0:
                    tr_aux, fr_aux = trace.aux_traces[i - 1]
                    dWd, dbd, dfr = decoder_backward(lams[i - 1] * batched(g_aux), fr_aux,
                                                     self.params[f"aux{i}.dec.W"])
                    grads[f"aux{i}.dec.W"] += dWd
                    grads[f"aux{i}.dec.b"] += dbd
                    T_i = sp.stages[i - 1].T
                    dO = np.repeat(dfr.reshape(B, 1, -1) / T_i, T_i, axis=1)
                    dW, db, dh_aux = lif_backward(dO, tr_aux, self.lif(f"aux{i}"))
                    grads[f"aux{i}.W"] += dW
                    grads[f"aux{i}.b"] += db
                    dh = dh + dh_aux
            for name, tr in zip(reversed(names), reversed(traces)):
                dW, db, dh = lif_backward(dh, tr, self.lif(name))
                grads[f"{name}.W"] += dW
                grads[f"{name}.b"] += db

        d_mu, d_sigma = enc.encoder_backward(dh, trace.A_E, trace.s, self.params["encoder.mu"],
                                             self.params["encoder.sigma"])
        grads["encoder.mu"] += d_mu
        grads["encoder.sigma"] += d_sigma
        return grads

    def layer_sizes(self):
        """Main-path widths: encoder neurons, hidden layers, output populations."""
        sp = self.spec
        sizes = [sp.obs_dim * sp.pop_in]
        for st in sp.stages:
            sizes.extend(st.hidden_sizes)
        sizes.append(sp.act_dim * sp.pop_out)
        return sizes


def actor_forward(net, s, mode="eval", rng=None, noise=None):
    return net.forward(s, mode, rng, noise)


def actor_backward(net, dL_da, dL_daux, trace):
    return net.backward(dL_da, dL_daux, trace)


def apply_update(net, grads, optimizer):
    """One optimizer step on ``net.params``; receptive-field widths are clamped afterwards."""
    skipped = optimizer.step(net.params, grads)
    net.clamp()
    return skipped
