"""Train the spiking actor on point-mass velocity tracking and watch the error fall.

Usage: ``python demos/02_train_tracking.py [iterations] [out_dir]`` (defaults 200, runs/demo_train).
A 1000-iteration run reproduces the acceptance configuration.
"""
import csv
import sys

import numpy as np

from popsan.checkpoint import load_checkpoint
from popsan.envs import evaluate_tracking, network_policy, proportional_policy
from popsan.ppo import EnvConfig, PPOConfig, default_spec, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 200
out = sys.argv[2] if len(sys.argv) > 2 else "runs/demo_train"

result = train(default_spec(seed=0), EnvConfig(), PPOConfig(iterations=iterations), out, seed=0)

with open(result.metrics) as f:
    rows = list(csv.DictReader(f))
for r in rows[:: max(1, len(rows) // 10)]:
    print(f"it {int(r['iteration']):5d}  reward {float(r['reward_mean']):.3f}  kl {float(r['kl']):.4f}  "
          f"out-layer spike rate {float(r['spike_rate_layer_out']):.3f}")


def rel_error(policy):
    row = evaluate_tracking(policy, [0.0], episodes=20, rng=np.random.default_rng(2)).rows[0]
    return row.relative_error


# Relative error = mean |v - v_cmd| over mean |v_cmd| after a 1 s settling period.
print("\nrelative tracking error")
print(f"  untrained actor  {rel_error(network_policy(load_checkpoint(f'{out}/ckpt_0.bin'), np.random.default_rng(1))):.3f}")
print(f"  trained actor    {rel_error(network_policy(result.actor, np.random.default_rng(1))):.3f}")
print(f"  P-controller     {rel_error(proportional_policy()):.3f}  (scripted reference)")
