"""Dense tanh networks: the value critic and the non-spiking actor baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MLP:
    """Fully connected network with tanh hidden layers and a linear output.

    Parameters live in ``self.params`` as ``"{prefix}{k}.W"`` / ``"{prefix}{k}.b"``.
    """

    def __init__(self, sizes, rng, prefix="", out_scale=1.0):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.prefix = prefix
        self.params = {}
        n_layers = len(self.sizes) - 1
        for k, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / np.sqrt(n_in)
            scale = out_scale if k == n_layers - 1 else 1.0
            self.params[f"{prefix}{k}.W"] = rng.uniform(-bound, bound, (n_out, n_in)) * scale
            self.params[f"{prefix}{k}.b"] = np.zeros(n_out)

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input has trailing dim {x.shape[-1]}, expected {self.sizes[0]}")
        acts = [x]
        h = x
        for k in range(self.n_layers):
            h = h @ self.params[f"{self.prefix}{k}.W"].T + self.params[f"{self.prefix}{k}.b"]
            if k < self.n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, dy, acts):
        """Returns ``(grads, dx)``; batch axes are summed out of ``grads``."""
        dy = np.asarray(dy, dtype=np.float64)
        if dy.shape != acts[-1].shape:
            raise ValueError(f"gradient shape {dy.shape} does not match output {acts[-1].shape}")
        grads = {}
        delta = dy
        for k in range(self.n_layers - 1, -1, -1):
            W = self.params[f"{self.prefix}{k}.W"]
            inp = acts[k]
            grads[f"{self.prefix}{k}.W"] = delta.reshape(-1, W.shape[0]).T @ inp.reshape(-1, W.shape[1])
            grads[f"{self.prefix}{k}.b"] = delta.reshape(-1, W.shape[0]).sum(axis=0)
            delta = delta @ W
            if k > 0:
                delta = delta * (1.0 - inp * inp)
        return grads, delta


class CriticNet(MLP):
    """State-value network ``obs_dim -> hidden -> 1``."""

    def __init__(self, obs_dim, hidden=(64, 64), seed=0):
        super().__init__((obs_dim, *hidden, 1), np.random.default_rng(seed), prefix="critic.")

    def value(self, s):
        v, acts = self.forward(s)
        return v[..., 0], acts

    def value_backward(self, dL_dv, acts):
        grads, _ = self.backward(np.asarray(dL_dv)[..., None], acts)
        return grads


@dataclass
class DenseSpec:
    obs_dim: int = 6
    act_dim: int = 2
    hidden: tuple = (64, 64)
    log_std_init: float = -0.5
    seed: int = 0
    lambdas: tuple = field(default=(1.0,), init=False)

    def to_dict(self):
        return {"obs_dim": self.obs_dim, "act_dim": self.act_dim, "hidden": list(self.hidden),
                "log_std_init": self.log_std_init, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(obs_dim=int(d["obs_dim"]), act_dim=int(d["act_dim"]), hidden=tuple(d["hidden"]),
                   log_std_init=float(d["log_std_init"]), seed=int(d["seed"]))


@dataclass
class DenseTrace:
    s: np.ndarray
    acts: list
    squeeze: bool
    mode: str = "eval"


class DenseActor:
    """Non-spiking baseline actor with the same calling convention as :class:`popsan.network.PopSAN`."""

    kind = "dense"

    def __init__(self, spec=None):
        self.spec = spec or DenseSpec()
        rng = np.random.default_rng(self.spec.seed)
        self.mlp = MLP((self.spec.obs_dim, *self.spec.hidden, self.spec.act_dim), rng, prefix="mlp.", out_scale=0.01)
        self.params = dict(self.mlp.params)
        self.params["log_std"] = np.full(self.spec.act_dim, float(self.spec.log_std_init))
        self.mlp.params = self.params

    @property
    def lambdas(self):
        return (1.0,)

    @property
    def n_heads(self):
        return 1

    def sample_noise(self, rng, batch):
        return None

    def forward(self, s, mode="eval", rng=None, noise=None):
        s = np.asarray(s, dtype=np.float64)
        squeeze = s.ndim == 1
        x = s[None] if squeeze else s
        if not np.all(np.isfinite(x)):
            raise ValueError("observation contains non-finite values")
        a, acts = self.mlp.forward(x)
        trace = DenseTrace(s=x, acts=acts, squeeze=squeeze, mode=mode)
        return (a[0] if squeeze else a), [], trace

    def backward(self, dL_da, dL_daux, trace):
        if dL_daux:
            raise ValueError("the dense actor has no auxiliary heads")
        dL_da = np.asarray(dL_da, dtype=np.float64)
        if trace.squeeze:
            dL_da = dL_da[None]
        grads, _ = self.mlp.backward(dL_da, trace.acts)
        grads["log_std"] = np.zeros_like(self.params["log_std"])
        return grads

    def clamp(self):
        pass

    def layer_sizes(self):
        return list(self.mlp.sizes)
