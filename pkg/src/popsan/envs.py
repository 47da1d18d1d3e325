"""2-D point-mass velocity-command tracking task and command-noise harness.

The state arrays may carry leading batch axes, so one call steps many
independent environments at once.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

DT = 0.02
K_A = 5.0
V_MAX = 2.0
EPISODE_LEN = 200
TRACK_SCALE = 0.25
ACTION_COST = 0.01
OBS_DIM = 6
ACT_DIM = 2
OBS_LOW = (-V_MAX, -V_MAX, -1.0, -1.0, -3.0, -3.0)
OBS_HIGH = (V_MAX, V_MAX, 1.0, 1.0, 3.0, 3.0)
COMMAND_CHANNELS = (2, 3)
ERROR_CHANNELS = (4, 5)
DEFAULT_SIGMAS = (0.0, 0.1, 0.2, 0.3)


@dataclass
class PointMassState:
    position: np.ndarray
    velocity: np.ndarray
    command: np.ndarray
    step_count: np.ndarray

    def copy(self):
        return PointMassState(self.position.copy(), self.velocity.copy(), self.command.copy(),
                              np.array(self.step_count, copy=True))


@dataclass
class NoiseConfig:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.sigma}")


def observe(state):
    """``(velocity, command, velocity - command)``, 6 values per environment."""
    return np.concatenate([state.velocity, state.command, state.velocity - state.command], axis=-1)


def env_reset(rng, n=None):
    """Fresh episode(s): at rest at the origin with a command drawn from U[-1, 1]^2."""
    shape = (2,) if n is None else (n, 2)
    command = rng.uniform(-1.0, 1.0, shape)
    state = PointMassState(np.zeros(shape), np.zeros(shape), command,
                           np.zeros(shape[:-1], dtype=np.int64))
    return state, observe(state)


def _clamp_norm(v, limit):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(norm > limit, v * (limit / np.maximum(norm, 1e-300)), v)


def env_step(state, action):
    """Semi-implicit Euler step. Returns ``(state, observation, reward, done)``."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != state.velocity.shape:
        raise ValueError(f"action shape {action.shape} does not match {state.velocity.shape}")
    if not np.all(np.isfinite(action)):
        raise ValueError("action contains non-finite values")
    a = np.clip(action, -1.0, 1.0)
    velocity = _clamp_norm(state.velocity + a * DT * K_A, V_MAX)
    position = state.position + velocity * DT
    steps = state.step_count + 1
    new = PointMassState(position, velocity, state.command, steps)
    err2 = np.sum((velocity - state.command) ** 2, axis=-1)
    reward = np.exp(-err2 / TRACK_SCALE) - ACTION_COST * np.sum(a * a, axis=-1)
    done = steps >= EPISODE_LEN
    return new, observe(new), reward, done


class PointMassVecEnv:
    """``n`` point-mass environments that reset themselves when an episode ends."""

    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self.state, self.obs = env_reset(rng, n)

    def step(self, action):
        """Returns ``(obs, reward, done, final_obs)``; ``final_obs`` is the pre-reset observation."""
        self.state, obs, reward, done = env_step(self.state, action)
        self.episode_lengths = self.state.step_count.copy()
        final_obs = obs.copy()
        if np.any(done):
            fresh, fresh_obs = env_reset(self.rng, self.n)
            for attr in ("position", "velocity", "command", "step_count"):
                getattr(self.state, attr)[done] = getattr(fresh, attr)[done]
            obs = np.where(done[:, None], fresh_obs, obs)
        self.obs = obs
        return obs, reward, done, final_obs


def inject_noise(obs, noise, rng):
    """Perturb the command channels with N(0, sigma^2) and keep the error channels consistent.

    ``noise`` is a :class:`NoiseConfig` or a plain sigma.
    """
    sigma = noise.sigma if isinstance(noise, NoiseConfig) else float(noise)
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    obs = np.array(obs, dtype=np.float64, copy=True)
    if sigma == 0:
        return obs
    eps = rng.normal(0.0, sigma, obs.shape[:-1] + (len(COMMAND_CHANNELS),))
    obs[..., COMMAND_CHANNELS] += eps
    obs[..., ERROR_CHANNELS] -= eps
    return obs


@dataclass
class TrackingRow:
    sigma: float
    mean_abs_err_x: float
    mean_abs_err_y: float
    std_err: float
    episodes: int
    diverged: int
    mean_err_norm: float = 0.0
    mean_cmd_norm: float = 0.0

    @property
    def relative_error(self):
        return self.mean_err_norm / self.mean_cmd_norm


@dataclass
class TrackingReport:
    rows: list = field(default_factory=list)
    settle_steps: int = 0

    CSV_COLUMNS = ("sigma", "mean_abs_err_x", "mean_abs_err_y", "std_err", "episodes", "diverged")

    def to_csv(self, path, label=None):
        cols = (("policy",) if label is not None else ()) + self.CSV_COLUMNS
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(cols)
            for r in self.rows:
                w.writerow(([label] if label is not None else []) + [repr(getattr(r, c)) for c in self.CSV_COLUMNS])


def evaluate_tracking(policy, sigmas=DEFAULT_SIGMAS, episodes=20, rng=None, settle_steps=50,
                      diverge_threshold=1.0):
    """Run ``episodes`` episodes per noise level with a deterministic policy.

    ``policy`` maps a batch of (possibly noisy) observations to a batch of
    actions. Errors are measured against the true command after the first
    ``settle_steps`` steps. An episode counts as diverged when the policy
    emits a non-finite action or its mean post-settling error norm exceeds
    ``diverge_threshold``. The same commands are used at every sigma.
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    if not 0 <= settle_steps < EPISODE_LEN:
        raise ValueError(f"settle_steps must lie in [0, {EPISODE_LEN})")
    rng = rng if rng is not None else np.random.default_rng(0)
    base = int(rng.integers(2**63))
    report = TrackingReport(settle_steps=settle_steps)
    for k, sigma in enumerate(sigmas):
        reset_rng = np.random.default_rng([base, 0])
        noise_rng = np.random.default_rng([base, 1, k])
        state, obs = env_reset(reset_rng, episodes)
        bad = np.zeros(episodes, dtype=bool)
        errs = []
        for t in range(EPISODE_LEN):
            action = np.asarray(policy(inject_noise(obs, sigma, noise_rng)), dtype=np.float64)
            finite = np.all(np.isfinite(action), axis=-1)
            bad |= ~finite
            action = np.where(finite[:, None], action, 0.0)
            state, obs, _, _ = env_step(state, action)
            if t >= settle_steps:
                errs.append(state.velocity - state.command)
        errs = np.stack(errs, axis=1)  # (episodes, steps, 2)
        abs_err = np.abs(errs)
        norm_err = np.linalg.norm(errs, axis=-1)
        per_episode = norm_err.mean(axis=1)
        bad |= per_episode > diverge_threshold
        report.rows.append(TrackingRow(
            sigma=float(sigma),
            mean_abs_err_x=float(abs_err[..., 0].mean()),
            mean_abs_err_y=float(abs_err[..., 1].mean()),
            std_err=float(per_episode.std()),
            episodes=episodes,
            diverged=int(bad.sum()),
            mean_err_norm=float(norm_err.mean()),
            mean_cmd_norm=float(np.linalg.norm(state.command, axis=-1).mean()),
        ))
    return report


def network_policy(net, rng):
    """Deterministic (mean-action) policy over an actor; spike sampling draws from ``rng``."""
    def policy(obs):
        action, _, _ = net.forward(obs, "eval", rng=rng)
        return action
    return policy


def proportional_policy(gain=5.0):
    """Scripted controller pushing velocity toward the observed command."""
    def policy(obs):
        return np.clip(-gain * obs[..., ERROR_CHANNELS], -1.0, 1.0)
    return policy


def collect_observations(policy, n, rng, n_envs=10):
    """Observations visited by ``policy`` over parallel episodes, ``n`` in total."""
    state, obs = env_reset(rng, n_envs)
    out = []
    while sum(len(o) for o in out) < n:
        out.append(obs)
        state, obs, _, done = env_step(state, np.clip(policy(obs), -1.0, 1.0))
        if np.any(done):
            state, obs = env_reset(rng, n_envs)
    return np.concatenate(out)[:n]
