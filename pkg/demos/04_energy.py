"""Operation counts and estimated energy of the spiking actor against a dense twin.

Usage: ``python demos/04_energy.py [checkpoint]``. Without a checkpoint an
untrained default actor is profiled (rates, and so savings, then reflect
initial activity only).
"""
import sys

import numpy as np

from popsan.checkpoint import load_checkpoint
from popsan.energy import ann_mac_ops, compare_with_ann, count_ops, estimate_energy, measure_rates, with_final_T
from popsan.envs import collect_observations, network_policy
from popsan.network import PopSAN
from popsan.ppo import default_spec

net = load_checkpoint(sys.argv[1]) if len(sys.argv) > 1 else PopSAN(default_spec())
rng = np.random.default_rng(0)

# Profile on observations the policy actually visits.
obs = collect_observations(network_policy(net, rng), 200, rng)
counts = count_ops(net, obs, rng)
print(f"per inference over {counts.n_inferences} samples:")
for name, (mac, ac) in counts.per_layer.items():
    print(f"  {name:8s} MAC {mac:9.1f}   AC {ac:9.1f}")
print(f"  total    MAC {counts.mac_ops:9.1f}   AC {counts.ac_ops:9.1f}   -> {estimate_energy(counts):.0f} pJ")
print(f"dense twin: {ann_mac_ops(net.spec):.0f} MAC -> {4.6 * ann_mac_ops(net.spec):.0f} pJ")

# Re-evaluate at the measured rates for shorter and longer final stages.
_, _, trace = net.forward(obs, "eval", rng=rng)
rates = measure_rates(net, trace)
for first_layer in ("mac", "ac"):
    print(f"\nfirst FC layer charged as {first_layer.upper()}:")
    for t in (1, 2, 3):
        row = compare_with_ann(with_final_T(net.spec, t), rates, first_layer=first_layer)
        print(f"  T_final={t}: SNN {row.snn_pj:8.0f} pJ  ANN {row.ann_pj:8.0f} pJ  savings {row.savings_pct:6.2f}%")
