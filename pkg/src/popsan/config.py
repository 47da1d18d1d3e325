"""Run configuration: a YAML tree with a default for every field, plus dotted overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dense import DenseSpec
from .envs import ACT_DIM, DEFAULT_SIGMAS, OBS_DIM, OBS_HIGH, OBS_LOW
from .network import NetworkSpec, StageConfig
from .ppo import EnvConfig, PPOConfig


class ConfigError(Exception):
    """Aggregated configuration problems; ``errors`` lists one message per field."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass
class NetworkSection:
    kind: str = "popsan"
    T_final: int = 1
    hidden: int = 64
    lambdas: list = field(default_factory=lambda: [0.2, 0.2, 0.6])
    pop_in: int = 10
    pop_out: int = 10
    d_c: float = 0.5
    d_v: float = 0.75
    v_th: float = 0.5
    width: float = 1.0
    log_std_init: float = -0.5
    weight_gain: float = 2.0
    guide_grad: bool = True
    dense_hidden: list = field(default_factory=lambda: [64, 64])


@dataclass
class PPOSection:
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
    single_head: bool = False


@dataclass
class EnvSection:
    noise_sigma: float = 0.0


@dataclass
class EvalSection:
    episodes: int = 20
    sigmas: list = field(default_factory=lambda: list(DEFAULT_SIGMAS))
    settle_steps: int = 50


@dataclass
class EnergySection:
    inferences: int = 200
    t_finals: list = field(default_factory=lambda: [1, 2, 3])
    first_layer: str = "mac"
    e_mac: float = 4.6
    e_ac: float = 0.9


@dataclass
class GradcheckSection:
    tolerance: float = 1e-3
    max_params: int = 500
    obs_dim: int = 1
    act_dim: int = 1
    pop_in: int = 2
    pop_out: int = 2
    T: list = field(default_factory=lambda: [2, 1])
    hidden: int = 3
    lambdas: list = field(default_factory=lambda: [0.4, 0.6])


SECTIONS = {"network": NetworkSection, "ppo": PPOSection, "env": EnvSection, "eval": EvalSection,
            "energy": EnergySection, "gradcheck": GradcheckSection}


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    log_wall_time: bool = False
    network: NetworkSection = field(default_factory=NetworkSection)
    ppo: PPOSection = field(default_factory=PPOSection)
    env: EnvSection = field(default_factory=EnvSection)
    eval: EvalSection = field(default_factory=EvalSection)
    energy: EnergySection = field(default_factory=EnergySection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)

    # -- derived objects ---------------------------------------------------

    def network_spec(self):
        n = self.network
        if n.kind == "dense":
            return DenseSpec(obs_dim=OBS_DIM, act_dim=ACT_DIM, hidden=tuple(n.dense_hidden),
                             log_std_init=n.log_std_init, seed=self.seed)
        stages = [StageConfig(n.T_final + len(n.lambdas) - 1 - k, (n.hidden,), float(lam))
                  for k, lam in enumerate(n.lambdas)]
        return NetworkSpec(obs_dim=OBS_DIM, act_dim=ACT_DIM, pop_in=n.pop_in, pop_out=n.pop_out, stages=stages,
                           d_c=n.d_c, d_v=n.d_v, v_th=n.v_th, width=n.width, obs_low=OBS_LOW, obs_high=OBS_HIGH,
                           log_std_init=n.log_std_init, weight_gain=n.weight_gain, guide_grad=n.guide_grad,
                           seed=self.seed)

    def ppo_config(self):
        d = dataclasses.asdict(self.ppo)
        d.pop("single_head")
        return PPOConfig(**d)

    def env_config(self):
        return EnvConfig(noise_sigma=self.env.noise_sigma)

    def gradcheck_spec(self):
        g = self.gradcheck
        stages = [StageConfig(int(T), (g.hidden,), float(lam)) for T, lam in zip(g.T, g.lambdas)]
        return NetworkSpec(obs_dim=g.obs_dim, act_dim=g.act_dim, pop_in=g.pop_in, pop_out=g.pop_out,
                           stages=stages, seed=self.seed)

    def to_dict(self):
        return dataclasses.asdict(self)


def _coerce(value, default, where, errors):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, list):
        if isinstance(value, (list, tuple)):
            return list(value)
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return [value]
    errors.append(f"{where}: expected {type(default).__name__}, got {value!r}")
    return default


def _fill(obj, data, prefix, errors):
    if not isinstance(data, dict):
        errors.append(f"{prefix or 'config'}: expected a mapping, got {data!r}")
        return
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        where = f"{prefix}{key}"
        if key not in names:
            errors.append(f"{where}: unknown field")
            continue
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _fill(current, value if value is not None else {}, f"{where}.", errors)
        else:
            setattr(obj, key, _coerce(value, current, where, errors))


def _set_dotted(tree, dotted, value):
    node = tree
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError([f"{dotted}: cannot override inside a non-mapping"])
    node[parts[-1]] = value


def parse_overrides(tokens):
    """``["--ppo.iterations", "5", "--seed=3"]`` -> ``{"ppo.iterations": 5, "seed": 3}``."""
    out = {}
    errors = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            errors.append(f"unexpected argument {tok!r}")
            i += 1
            continue
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        elif i + 1 < len(tokens):
            raw = tokens[i + 1]
            i += 2
        else:
            errors.append(f"override {tok} is missing a value")
            break
        try:
            out[key] = yaml.safe_load(raw)
        except yaml.YAMLError:
            out[key] = raw
    if errors:
        raise ConfigError(errors)
    return out


def validate(cfg):
    errors = []
    if cfg.network.kind not in ("popsan", "dense"):
        errors.append(f"network.kind: must be 'popsan' or 'dense', got {cfg.network.kind!r}")
    if cfg.energy.first_layer not in ("mac", "ac"):
        errors.append(f"energy.first_layer: must be 'mac' or 'ac', got {cfg.energy.first_layer!r}")
    if not cfg.eval.sigmas:
        errors.append("eval.sigmas: need at least one noise level")
    elif any(not isinstance(s, (int, float)) or s < 0 for s in cfg.eval.sigmas):
        errors.append(f"eval.sigmas: must be nonnegative numbers, got {cfg.eval.sigmas}")
    if cfg.eval.episodes < 1:
        errors.append("eval.episodes: must be >= 1")
    if cfg.energy.inferences < 1:
        errors.append("energy.inferences: must be >= 1")
    if not cfg.energy.t_finals or any(not isinstance(t, int) or t < 1 for t in cfg.energy.t_finals):
        errors.append(f"energy.t_finals: must be positive integers, got {cfg.energy.t_finals}")
    if cfg.gradcheck.tolerance < 0:
        errors.append("gradcheck.tolerance: must be >= 0")
    if len(cfg.gradcheck.T) != len(cfg.gradcheck.lambdas):
        errors.append("gradcheck.T and gradcheck.lambdas must have equal length")
    for name, build in (("network", cfg.network_spec), ("ppo", cfg.ppo_config)):
        try:
            build()
        except (ValueError, TypeError) as e:
            errors.append(f"{name}: {e}")
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path=None, overrides=None):
    """Defaults, then the YAML file at ``path`` (if any), then dotted ``overrides``; validated as a whole."""
    tree = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError([f"config file not found: {path}"])
        try:
            tree = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError([f"{path}: not valid YAML ({e})"]) from e
        if not isinstance(tree, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
    for key, value in (overrides or {}).items():
        _set_dotted(tree, key, value)
    cfg = RunConfig()
    errors = []
    _fill(cfg, tree, "", errors)
    try:
        validate(cfg)
    except ConfigError as e:
        errors += e.errors
    if errors:
        raise ConfigError(errors)
    return cfg


def dump_config(cfg, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
