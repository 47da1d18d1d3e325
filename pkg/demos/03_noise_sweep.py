"""Spiking vs dense actor under command noise.

Both actors get the same PPO budget, then face sigma in {0, 0.1, 0.2, 0.3}
on identical commands and identical noise draws.

Usage: ``python demos/03_noise_sweep.py [iterations]`` (default 300).
"""
import sys

import numpy as np

from popsan.dense import DenseSpec
from popsan.envs import DEFAULT_SIGMAS, evaluate_tracking, network_policy
from popsan.ppo import EnvConfig, PPOConfig, default_spec, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = PPOConfig(iterations=iterations)

snn = train(default_spec(seed=0), EnvConfig(), cfg, "runs/demo_noise/snn", seed=0).actor
ann = train(DenseSpec(seed=0), EnvConfig(), cfg, "runs/demo_noise/ann", seed=0, kind="dense").actor

print(f"{'sigma':>6s} {'snn rel err':>12s} {'dense rel err':>14s} {'snn div':>8s} {'dense div':>10s}")
reports = [evaluate_tracking(network_policy(a, np.random.default_rng(1)), DEFAULT_SIGMAS, 20,
                             rng=np.random.default_rng(2)) for a in (snn, ann)]
for s_row, a_row in zip(*(r.rows for r in reports)):
    print(f"{s_row.sigma:6.1f} {s_row.relative_error:12.3f} {a_row.relative_error:14.3f} "
          f"{s_row.diverged:8d} {a_row.diverged:10d}")
