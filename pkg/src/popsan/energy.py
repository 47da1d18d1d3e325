"""MAC/AC operation counting and energy estimates for PopSAN inference.

Accounting rules:

* The encoder's Gaussian receptive-field evaluations are MACs (one per
  neuron per inference), and so is the first fully connected layer, charged
  densely at every stage-1 timestep (``first_layer="mac"``). With
  ``first_layer="ac"`` that layer is charged per input spike instead.
* Every later layer is charged one AC per nonzero input per target neuron per
  timestep. This includes a stage's first layer, whose input is the real-valued
  shrunken current: only its nonzero entries are counted.
* Temporal shrinking costs one AC per nonzero source entry per target step and
  is reported separately.
* The decoder accumulates one weight per output spike (AC).
* The dense baseline performs one pass with every operation a MAC.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .network import NetworkSpec, StageConfig

E_MAC = 4.6  # pJ per 32-bit multiply-accumulate, 45 nm
E_AC = 0.9  # pJ per 32-bit accumulate, 45 nm


@dataclass
class EnergyModel:
    e_mac: float = E_MAC
    e_ac: float = E_AC

    def __post_init__(self):
        if self.e_mac <= 0 or self.e_ac <= 0:
            raise ValueError("energy per operation must be positive")


@dataclass
class OpCount:
    """Per-inference operation counts; ``mac_ops``/``ac_ops`` are means over the measured batch."""

    mac_ops: float
    ac_ops: float
    shrink_ac_ops: float = 0.0
    per_layer: dict = field(default_factory=dict)  # name -> (mac, ac), per-inference means
    timesteps: int = 0
    n_inferences: int = 1
    mac_std: float = 0.0
    ac_std: float = 0.0

    def __post_init__(self):
        if self.mac_ops < 0 or self.ac_ops < 0:
            raise ValueError("operation counts must be nonnegative")


def estimate_energy(counts, model=None):
    """Energy in pJ: ``e_mac * mac_ops + e_ac * ac_ops``."""
    model = model or EnergyModel()
    return model.e_mac * counts.mac_ops + model.e_ac * counts.ac_ops


def _nnz_per_inference(x):
    return np.count_nonzero(x.reshape(x.shape[0], -1), axis=1).astype(np.float64)


def count_ops(net, obs, rng, mode="eval", first_layer="mac"):
    """Run eval-mode inference on a batch of observations and count operations from the actual spikes."""
    if mode != "eval":
        raise ValueError("operation counts are defined for eval-mode inference only (auxiliary heads excluded)")
    if first_layer not in ("mac", "ac"):
        raise ValueError(f"first_layer must be 'mac' or 'ac', got {first_layer!r}")
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    _, _, trace = net.forward(obs, "eval", rng=rng)
    return count_trace_ops(net, trace, first_layer)


def count_trace_ops(net, trace, first_layer="mac"):
    """Operation counts replayed from an eval-mode :class:`~popsan.network.ActorTrace`."""
    if trace.mode != "eval":
        raise ValueError("trace must come from an eval-mode forward pass")
    sp = net.spec
    B = trace.s.shape[0]
    mac = np.zeros(B)
    ac = np.zeros(B)
    shrink_ac = np.zeros(B)
    per_layer = {}

    def charge(name, m, a):
        per_layer[name] = (float(np.mean(m)), float(np.mean(a)))

    enc = np.full(B, float(sp.obs_dim * sp.pop_in))
    mac += enc
    charge("encoder", enc, np.zeros(B))
    first = True
    for i, (names, traces) in enumerate(zip(net.stage_layers, trace.stage_traces), start=1):
        for name, tr in zip(names, traces):
            n_in, n_out = tr.x.shape[-1], tr.v.shape[-1]
            if first and first_layer == "mac":
                m = np.full(B, float(tr.T * n_in * n_out))
                mac += m
                charge(name, m, np.zeros(B))
            else:
                a = _nnz_per_inference(tr.x) * n_out
                ac += a
                charge(name, np.zeros(B), a)
            first = False
        if i < len(sp.stages):
            cache = trace.shrink_caches[i - 1]
            a = _nnz_per_inference(cache.O) * cache.S.shape[-2]
            shrink_ac += a
            charge(f"shrink{i}", np.zeros(B), a)
    tr = trace.out_trace
    a = _nnz_per_inference(tr.x) * tr.v.shape[-1]
    ac += a
    charge("out", np.zeros(B), a)
    a = _nnz_per_inference(tr.spikes)
    ac += a
    charge("dec", np.zeros(B), a)
    total_ac = ac + shrink_ac
    return OpCount(mac_ops=float(mac.mean()), ac_ops=float(total_ac.mean()), shrink_ac_ops=float(shrink_ac.mean()),
                   per_layer=per_layer, timesteps=sum(s.T for s in sp.stages), n_inferences=B,
                   mac_std=float(mac.std()), ac_std=float(total_ac.std()))


def measure_rates(net, trace):
    """Activity rates feeding each operation: nonzero fraction of the encoder spikes,
    each LIF layer's output spikes and each shrink layer's output current."""
    rates = {"encoder": float(np.count_nonzero(trace.x_in) / trace.x_in.size)}
    for i, (names, traces) in enumerate(zip(net.stage_layers, trace.stage_traces), start=1):
        for name, tr in zip(names, traces):
            rates[name] = float(tr.spikes.mean())
        if i < len(net.spec.stages):
            x = trace.stage_traces[i][0].x
            rates[f"shrink{i}"] = float(np.count_nonzero(x) / x.size)
    rates["out"] = float(trace.out_trace.spikes.mean())
    return rates


def _main_path(spec):
    """Yield ``(layer name, source rate key, n_in, n_out, T)`` along the eval path."""
    n_in = spec.obs_dim * spec.pop_in
    src = "encoder"
    for i, st in enumerate(spec.stages, start=1):
        for j, h in enumerate(st.hidden_sizes):
            name = f"s{i}.l{j}"
            yield name, src, n_in, h, st.T
            n_in, src = h, name
        if i < len(spec.stages):
            src = f"shrink{i}"
    yield "out", src, n_in, spec.act_dim * spec.pop_out, spec.stages[-1].T


def expected_counts(spec, rates, first_layer="mac"):
    """Per-inference counts predicted from activity ``rates`` (see :func:`measure_rates`)."""
    mac = float(spec.obs_dim * spec.pop_in)
    ac = 0.0
    shrink_ac = 0.0
    per_layer = {"encoder": (mac, 0.0)}
    for k, (name, src, n_in, n_out, T) in enumerate(_main_path(spec)):
        if k == 0 and first_layer == "mac":
            m = float(T * n_in * n_out)
            mac += m
            per_layer[name] = (m, 0.0)
        else:
            a = rates[src] * n_in * n_out * T
            ac += a
            per_layer[name] = (0.0, a)
    for i in range(1, len(spec.stages)):
        last = f"s{i}.l{len(spec.stages[i - 1].hidden_sizes) - 1}"
        width = spec.stages[i - 1].hidden_sizes[-1]
        a = rates[last] * width * spec.stages[i - 1].T * spec.stages[i].T
        shrink_ac += a
        per_layer[f"shrink{i}"] = (0.0, a)
    a = rates["out"] * spec.act_dim * spec.pop_out * spec.stages[-1].T
    ac += a
    per_layer["dec"] = (0.0, a)
    return OpCount(mac_ops=mac, ac_ops=ac + shrink_ac, shrink_ac_ops=shrink_ac, per_layer=per_layer,
                   timesteps=sum(s.T for s in spec.stages))


def ann_mac_ops(spec):
    """MACs of a dense network with the same widths: encoder, every FC layer once, decoder."""
    mac = spec.obs_dim * spec.pop_in
    for _, _, n_in, n_out, _ in _main_path(spec):
        mac += n_in * n_out
    return float(mac + spec.act_dim * spec.pop_out)


@dataclass
class SavingsRow:
    t_final: int
    ann_pj: float
    snn_pj: float
    savings_pct: float
    mac_ops: float
    ac_ops: float
    spike_rate_mean: float


def with_final_T(spec, t_final):
    """Copy of ``spec`` whose stage timesteps end at ``t_final`` and drop by one per stage."""
    n = len(spec.stages)
    stages = [StageConfig(t_final + n - 1 - k, s.hidden_sizes, s.lam) for k, s in enumerate(spec.stages)]
    d = spec.to_dict()
    d["stages"] = [s.to_dict() for s in stages]
    return NetworkSpec.from_dict(d)


def compare_with_ann(spec, rates, model=None, first_layer="mac"):
    """Energy of the spiking actor against its dense twin at the given activity rates."""
    model = model or EnergyModel()
    counts = expected_counts(spec, rates, first_layer)
    snn = estimate_energy(counts, model)
    ann = model.e_mac * ann_mac_ops(spec)
    lif_rates = [v for k, v in rates.items() if k != "encoder" and not k.startswith("shrink")]
    return SavingsRow(t_final=spec.stages[-1].T, ann_pj=ann, snn_pj=snn, savings_pct=100.0 * (1.0 - snn / ann),
                      mac_ops=counts.mac_ops, ac_ops=counts.ac_ops,
                      spike_rate_mean=float(np.mean(lif_rates)) if lif_rates else 0.0)


SAVINGS_COLUMNS = ("t_final", "ann_pj", "snn_pj", "savings_pct", "mac_ops", "ac_ops", "spike_rate_mean")


def write_savings_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SAVINGS_COLUMNS)
        for r in rows:
            w.writerow([r.t_final] + [repr(float(getattr(r, c))) for c in SAVINGS_COLUMNS[1:]])
