"""PPO training harness for spiking (or dense) actors with per-stage auxiliary losses.

Every stage head of the actor gets its own clipped surrogate loss computed on
the executed actions; the actor is trained on ``sum_i lambda_i L_i``. The
final head's loss also carries the entropy bonus. The critic is a dense
network regressed onto GAE returns.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .dense import CriticNet, DenseActor, DenseSpec
from .envs import ACT_DIM, OBS_DIM, OBS_HIGH, OBS_LOW, PointMassVecEnv, inject_noise
from .network import NetworkSpec, PopSAN, StageConfig, apply_update
from .optim import Adam, clip_grad_norm

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class RolloutError(RuntimeError):
    pass


@dataclass
class PPOConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    entropy_coef: float = 0.005
    n_envs: int = 16
    rollout_len: int = 64
    iterations: int = 1000
    max_grad_norm: float = 0.5
    checkpoint_every: int = 100
    normalize_advantages: bool = True

    def __post_init__(self):
        errors = []
        if not 0 < self.gamma <= 1:
            errors.append(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 <= self.gae_lambda <= 1:
            errors.append(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if not self.clip_eps > 0:
            errors.append(f"clip_eps must be > 0, got {self.clip_eps}")
        for name in ("epochs", "minibatch_size", "n_envs"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        for name in ("rollout_len", "iterations"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        if errors:
            raise ValueError("invalid PPO config: " + "; ".join(errors))


@dataclass
class TrajectoryBatch:
    """Rollout storage, time-major: every array has leading axes ``(T, n_envs)``."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    logp: np.ndarray
    aux_logp: np.ndarray  # (T, n_envs, n_aux)
    noise: object  # frozen encoder masks (T, n_envs, T_1, n_in) or None
    bootstrap: np.ndarray  # value of the final observation where an episode timed out
    last_values: np.ndarray  # (n_envs,)
    advantages: np.ndarray = None
    returns: np.ndarray = None
    spike_rates: dict = field(default_factory=dict)
    completed_lengths: list = field(default_factory=list)

    @property
    def size(self):
        return self.rewards.size

    def flat(self, name):
        arr = getattr(self, name)
        return arr.reshape(arr.shape[0] * arr.shape[1], *arr.shape[2:])


@dataclass
class UpdateStats:
    stage_losses: tuple
    kl: float
    clip_frac: float
    value_loss: float
    entropy: float
    nonfinite: bool = False
    skipped: tuple = ()


def gaussian_logp(a, mu, log_std):
    z = (a - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(log_std):
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


def normalize_advantages(adv):
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def collect_rollout(envs, actor, critic, config, rng, deterministic=False, single_head=False):
    """Step every environment ``config.rollout_len`` times under the current policy.

    Actions are sampled from a Gaussian around the actor's mean (or the mean
    itself when ``deterministic``). Auxiliary-head log-probabilities of the
    executed actions are recorded for the per-stage losses.
    """
    T, N = config.rollout_len, envs.n
    if T < 1:
        raise RolloutError("rollout length must be >= 1 (empty batch)")
    n_aux = 0 if single_head else actor.n_heads - 1
    mode = "eval" if single_head else "train"
    log_std = actor.params["log_std"]
    obs_buf = np.empty((T, N, envs.obs.shape[-1]))
    act_buf = np.empty((T, N, log_std.size))
    rew_buf = np.empty((T, N))
    done_buf = np.empty((T, N))
    val_buf = np.empty((T, N))
    logp_buf = np.empty((T, N))
    aux_buf = np.zeros((T, N, n_aux))
    boot_buf = np.zeros((T, N))
    noise_buf = None
    rates = {}
    completed = []
    obs = envs.obs
    for t in range(T):
        noise = actor.sample_noise(rng, N)
        if noise is not None:
            if noise_buf is None:
                noise_buf = np.empty((T, *noise.shape))
            noise_buf[t] = noise
        mu, aux, trace = actor.forward(obs, mode, noise=noise)
        if deterministic:
            action = mu.copy()
        else:
            action = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
        value, _ = critic.value(obs)
        obs_buf[t] = obs
        act_buf[t] = action
        val_buf[t] = value
        logp_buf[t] = gaussian_logp(action, mu, log_std)
        for i in range(n_aux):
            aux_buf[t, :, i] = gaussian_logp(action, aux[i], log_std)
        if isinstance(actor, PopSAN):
            for name, rate in layer_spike_rates(actor, trace).items():
                rates[name] = rates.get(name, 0.0) + rate / T
        try:
            obs, reward, done, final_obs = envs.step(action)
        except Exception as e:
            raise RolloutError(f"environment step failed at rollout step {t}: {e}") from e
        rew_buf[t] = reward
        done_buf[t] = done
        if np.any(done):
            final_v, _ = critic.value(final_obs[done])
            boot_buf[t, done] = final_v
            completed.extend(int(x) for x in envs.episode_lengths[done])
    last_values, _ = critic.value(obs)
    return TrajectoryBatch(obs=obs_buf, actions=act_buf, rewards=rew_buf, dones=done_buf, values=val_buf,
                           logp=logp_buf, aux_logp=aux_buf, noise=noise_buf, bootstrap=boot_buf,
                           last_values=last_values, spike_rates=rates, completed_lengths=completed)


def layer_spike_rates(net, trace):
    """Mean spike rate of each main-path LIF layer in ``trace``."""
    rates = {}
    for names, traces in zip(net.stage_layers, trace.stage_traces):
        for name, tr in zip(names, traces):
            rates[name] = float(tr.spikes.mean())
    rates["out"] = float(trace.out_trace.spikes.mean())
    return rates


def compute_gae(batch, gamma, lam):
    """Generalized advantage estimation over a time-major batch; fills advantages and returns.

    At a time-limit termination the stored bootstrap value stands in for the
    value of the (reset-replaced) next state.
    """
    r, v, d = batch.rewards, batch.values, batch.dones
    if not (r.shape == v.shape == d.shape == batch.bootstrap.shape):
        raise ValueError("rewards, values, dones and bootstrap must share a shape")
    T = r.shape[0]
    adv = np.zeros_like(r)
    gae = np.zeros(r.shape[1:])
    next_value = batch.last_values
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - d[t]
        delta = r[t] + gamma * (nonterminal * next_value + d[t] * batch.bootstrap[t]) - v[t]
        gae = delta + gamma * lam * nonterminal * gae
        adv[t] = gae
        next_value = v[t]
    batch.advantages = adv
    batch.returns = adv + v
    return batch


def clipped_surrogate(logp_new, logp_old, adv, clip_eps):
    """Loss ``-mean(min(r A, clip(r) A))`` and its gradient w.r.t. ``logp_new``.

    Also returns the ratios.
    """
    ratio = np.exp(logp_new - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    unclipped_obj = ratio * adv
    clipped_obj = clipped * adv
    obj = np.minimum(unclipped_obj, clipped_obj)
    M = adv.size
    active = unclipped_obj <= clipped_obj
    dlogp = -(adv * ratio * active) / M
    return -float(obj.mean()), dlogp, ratio


def _policy_grads(dlogp, a, mu, log_std):
    """Chain ``dL/dlogp`` into the mean and log-std of a diagonal Gaussian."""
    inv_var = np.exp(-2.0 * log_std)
    diff = a - mu
    d_mu = dlogp[:, None] * diff * inv_var
    d_log_std = (dlogp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0)
    return d_mu, d_log_std


def ppo_update(actor, critic, batch, config, actor_opt, critic_opt, rng, single_head=False):
    """Several epochs of minibatch PPO on ``batch``. Returns averaged :class:`UpdateStats`."""
    if batch.advantages is None:
        raise ValueError("batch has no advantages; run compute_gae first")
    lams = (1.0,) if single_head else actor.lambdas
    n_heads = len(lams)
    mode = "eval" if single_head else "train"
    obs = batch.flat("obs")
    actions = batch.flat("actions")
    logp_old = batch.flat("logp")
    aux_old = batch.flat("aux_logp")
    noise = None if batch.noise is None else batch.noise.reshape(-1, *batch.noise.shape[2:])
    returns = batch.flat("returns")
    adv = batch.flat("advantages")
    if config.normalize_advantages:
        adv = normalize_advantages(adv)
    M = adv.size
    mb = min(config.minibatch_size, M)

    sums = np.zeros(n_heads)
    kl_sum = clip_sum = vloss_sum = 0.0
    n_mb = 0
    skipped = set()
    for _ in range(config.epochs):
        perm = rng.permutation(M)
        for start in range(0, M, mb):
            idx = perm[start:start + mb]
            log_std = actor.params["log_std"]
            mu, aux_mu, trace = actor.forward(obs[idx], mode, noise=None if noise is None else noise[idx])
            logp = gaussian_logp(actions[idx], mu, log_std)
            loss_I, dlogp, ratio = clipped_surrogate(logp, logp_old[idx], adv[idx], config.clip_eps)
            entropy = gaussian_entropy(log_std)
            loss_I -= config.entropy_coef * entropy
            d_mu, d_log_std = _policy_grads(dlogp, actions[idx], mu, log_std)
            g_log_std = lams[-1] * (d_log_std - config.entropy_coef)
            losses = np.zeros(n_heads)
            losses[-1] = loss_I
            d_aux = []
            for i in range(n_heads - 1):
                if lams[i] == 0.0:
                    d_aux.append(None)
                    continue
                logp_i = gaussian_logp(actions[idx], aux_mu[i], log_std)
                losses[i], dlogp_i, _ = clipped_surrogate(logp_i, aux_old[idx, i], adv[idx], config.clip_eps)
                dmu_i, dls_i = _policy_grads(dlogp_i, actions[idx], aux_mu[i], log_std)
                d_aux.append(dmu_i)
                g_log_std = g_log_std + lams[i] * dls_i

            values, acts = critic.value(obs[idx])
            verr = values - returns[idx]
            vloss = float(np.mean(verr * verr))
            if not (np.all(np.isfinite(losses)) and math.isfinite(vloss)):
                log.error("non-finite loss; aborting update")
                return UpdateStats(tuple(sums / max(n_mb, 1)), float("nan"), float("nan"), float("nan"),
                                   gaussian_entropy(actor.params["log_std"]), nonfinite=True)

            grads = actor.backward(d_mu, [] if single_head else d_aux, trace)
            grads["log_std"] = grads["log_std"] + g_log_std
            clip_grad_norm(grads, config.max_grad_norm)
            skipped.update(apply_update(actor, grads, actor_opt))

            cgrads = critic.value_backward(2.0 * verr / verr.size, acts)
            clip_grad_norm(cgrads, config.max_grad_norm)
            skipped.update(critic_opt.step(critic.params, cgrads))

            log_ratio = np.log(ratio)
            kl_sum += float(np.mean((ratio - 1.0) - log_ratio))
            clip_sum += float(np.mean(np.abs(ratio - 1.0) > config.clip_eps))
            vloss_sum += vloss
            sums += losses
            n_mb += 1
    return UpdateStats(stage_losses=tuple(float(x) for x in sums / n_mb), kl=kl_sum / n_mb,
                       clip_frac=clip_sum / n_mb, value_loss=vloss_sum / n_mb,
                       entropy=gaussian_entropy(actor.params["log_std"]), skipped=tuple(sorted(skipped)))


# -- training loop -------------------------------------------------------------


def default_spec(seed=0, T_final=1, hidden=64, lambdas=(0.2, 0.2, 0.6)):
    """Default actor for the tracking task: three stages with T = (T_final+2, T_final+1, T_final)."""
    stages = [StageConfig(T_final + 2 - k, (hidden,), lam) for k, lam in enumerate(lambdas)]
    return NetworkSpec(obs_dim=OBS_DIM, act_dim=ACT_DIM, pop_in=10, pop_out=10, stages=stages,
                       obs_low=OBS_LOW, obs_high=OBS_HIGH, seed=seed)


@dataclass
class EnvConfig:
    noise_sigma: float = 0.0


class MetricsLog:
    """Append-only CSV with a fixed header, flushed after every row."""

    def __init__(self, path, n_stages, layer_names, wall_time=False):
        self.path = Path(path)
        self.layer_names = list(layer_names)
        self.wall_time = wall_time
        self.columns = (["iteration", "reward_mean", "ep_len_mean"]
                        + [f"loss_stage_{i}" for i in range(1, n_stages + 1)]
                        + ["kl", "clip_frac"]
                        + [f"spike_rate_layer_{n}" for n in self.layer_names]
                        + ["wall_ms"])
        self._f = open(self.path, "w", newline="")
        self._w = csv.writer(self._f)
        self._w.writerow(self.columns)
        self._f.flush()

    def write(self, iteration, reward_mean, ep_len_mean, stats, rates, wall_ms):
        row = [iteration, repr(float(reward_mean)), repr(float(ep_len_mean))]
        row += [repr(x) for x in stats.stage_losses]
        row += [repr(stats.kl), repr(stats.clip_frac)]
        row += [repr(float(rates.get(n, 0.0))) for n in self.layer_names]
        row += [repr(float(wall_ms)) if self.wall_time else "0"]
        self._w.writerow(row)
        self._f.flush()

    def close(self):
        self._f.close()


@dataclass
class TrainResult:
    actor: object
    critic: object
    checkpoint: Path
    metrics: Path
    stats: list


def build_actor(kind, spec):
    if kind == "popsan":
        return PopSAN(spec)
    if kind == "dense":
        return DenseActor(spec)
    raise ValueError(f"unknown actor kind {kind!r}")


def train(spec, env_config, ppo_config, out_dir, seed=0, kind="popsan", single_head=False,
          log_wall_time=False):
    """Run PPO for ``ppo_config.iterations`` iterations, writing checkpoints and a metrics CSV.

    ``ckpt_0.bin`` is written before training and ``ckpt_<it>.bin`` every
    ``checkpoint_every`` iterations and at the end. All randomness derives from
    ``seed``; with ``log_wall_time=False`` the metrics file is byte-reproducible.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if spec is None:
        spec = default_spec(seed) if kind == "popsan" else DenseSpec(seed=seed)
    actor = build_actor(kind, spec)
    ss = np.random.SeedSequence(seed)
    critic_seed, env_ss, rollout_ss, update_ss = ss.spawn(4)
    critic = CriticNet(spec.obs_dim, seed=critic_seed)
    env = TrainingEnv(ppo_config.n_envs, np.random.default_rng(env_ss), env_config.noise_sigma)
    rollout_rng = np.random.default_rng(rollout_ss)
    update_rng = np.random.default_rng(update_ss)
    actor_opt = Adam(ppo_config.actor_lr)
    critic_opt = Adam(ppo_config.critic_lr)

    n_stages = 1 if kind == "dense" else len(spec.stages)
    layer_names = actor.lif_names("eval") if kind == "popsan" else []
    metrics_path = out_dir / "metrics.csv"
    timing = open(out_dir / "timing.csv", "w", newline="")
    timing.write("iteration,wall_ms\n")
    metrics = MetricsLog(metrics_path, n_stages, layer_names, wall_time=log_wall_time)
    save_checkpoint(actor, out_dir / "ckpt_0.bin")
    ckpt = out_dir / "ckpt_0.bin"
    all_stats = []
    last_len = 0.0
    try:
        for it in range(1, ppo_config.iterations + 1):
            t0 = time.perf_counter()
            batch = collect_rollout(env, actor, critic, ppo_config, rollout_rng, single_head=single_head)
            compute_gae(batch, ppo_config.gamma, ppo_config.gae_lambda)
            stats = ppo_update(actor, critic, batch, ppo_config, actor_opt, critic_opt, update_rng,
                               single_head=single_head)
            all_stats.append(stats)
            if batch.completed_lengths:
                last_len = float(np.mean(batch.completed_lengths))
            wall_ms = (time.perf_counter() - t0) * 1e3
            metrics.write(it, batch.rewards.mean(), last_len, stats, batch.spike_rates, wall_ms)
            timing.write(f"{it},{wall_ms:.3f}\n")
            if stats.nonfinite:
                raise FloatingPointError(f"non-finite loss at iteration {it}")
            if it % ppo_config.checkpoint_every == 0 or it == ppo_config.iterations:
                ckpt = save_checkpoint(actor, out_dir / f"ckpt_{it}.bin")
    finally:
        metrics.close()
        timing.close()
    return TrainResult(actor=actor, critic=critic, checkpoint=ckpt, metrics=metrics_path, stats=all_stats)


class TrainingEnv(PointMassVecEnv):
    """Vectorised point mass whose policy-facing observations carry optional command noise."""

    def __init__(self, n, rng, noise_sigma=0.0):
        super().__init__(n, rng)
        self.noise_sigma = noise_sigma
        self.obs = inject_noise(self.obs, noise_sigma, rng)

    def step(self, action):
        obs, reward, done, final_obs = super().step(action)
        self.obs = inject_noise(obs, self.noise_sigma, self.rng)
        return self.obs, reward, done, final_obs
