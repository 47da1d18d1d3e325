"""Command-line entry point: ``popsan {train,eval,noise-sweep,energy,gradcheck}``.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 artifact mismatch.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, dump_config, load_config, parse_overrides
from .energy import (EnergyModel, compare_with_ann, count_ops, measure_rates, with_final_T,
                     write_savings_csv)
from .envs import ACT_DIM, OBS_DIM, TrackingReport, collect_observations, evaluate_tracking, network_policy
from .network import PopSAN
from .ppo import train

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_ARTIFACT = 0, 1, 2, 3

log = logging.getLogger("popsan")


def _parser():
    p = argparse.ArgumentParser(prog="popsan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="override the run seed")
        sp.add_argument("--out", help="override the output directory")
        return sp

    sp = common(sub.add_parser("train", help="train an actor with PPO"))
    sp.add_argument("--iterations", type=int, help="override ppo.iterations")

    sp = common(sub.add_parser("eval", help="noise-free tracking evaluation of a checkpoint"))
    sp.add_argument("checkpoint")
    sp.add_argument("--episodes", type=int)

    sp = common(sub.add_parser("noise-sweep", help="tracking under command noise"))
    sp.add_argument("checkpoint")
    sp.add_argument("--baseline", help="second checkpoint evaluated on the same commands and noise")
    sp.add_argument("--sigmas", help="comma-separated noise levels")
    sp.add_argument("--episodes", type=int)

    sp = common(sub.add_parser("energy", help="MAC/AC energy against a dense baseline"))
    sp.add_argument("checkpoint")

    sp = common(sub.add_parser("gradcheck", help="finite-difference check of every backward pass"))
    sp.add_argument("--tolerance", type=float)
    return p


def _sigmas(text):
    text = text.strip()
    if not text:
        return []
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError([f"--sigmas: not a comma-separated list of numbers: {text!r}"]) from None


def _config(args, extra):
    overrides = parse_overrides(extra)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if getattr(args, "iterations", None) is not None:
        overrides["ppo.iterations"] = args.iterations
    if getattr(args, "episodes", None) is not None:
        overrides["eval.episodes"] = args.episodes
    if getattr(args, "sigmas", None) is not None:
        overrides["eval.sigmas"] = _sigmas(args.sigmas)
    if getattr(args, "tolerance", None) is not None:
        overrides["gradcheck.tolerance"] = args.tolerance
    return load_config(args.config, overrides)


def _load_actor(path):
    net = load_checkpoint(path)
    if net.spec.obs_dim != OBS_DIM or net.spec.act_dim != ACT_DIM:
        raise CheckpointError(f"{path}: actor has obs_dim={net.spec.obs_dim}, act_dim={net.spec.act_dim}; "
                              f"the tracking task needs {OBS_DIM} and {ACT_DIM}")
    return net


def _out_dir(cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(cfg):
    out = _out_dir(cfg)
    dump_config(cfg, out / "config.yaml")
    result = train(cfg.network_spec(), cfg.env_config(), cfg.ppo_config(), out, seed=cfg.seed,
                   kind=cfg.network.kind, single_head=cfg.ppo.single_head, log_wall_time=cfg.log_wall_time)
    print(f"wrote {result.metrics} and {result.checkpoint}")
    return EXIT_OK


def _tracking(cfg, net, sigmas):
    return evaluate_tracking(network_policy(net, np.random.default_rng([cfg.seed, 1])), sigmas, cfg.eval.episodes,
                             rng=np.random.default_rng([cfg.seed, 2]), settle_steps=cfg.eval.settle_steps)


def _print_report(label, report):
    for r in report.rows:
        print(f"{label:>8s} sigma={r.sigma:.2f} err_x={r.mean_abs_err_x:.4f} err_y={r.mean_abs_err_y:.4f} "
              f"rel={r.relative_error:.3f} diverged={r.diverged}/{r.episodes}")


def cmd_eval(cfg, checkpoint):
    net = _load_actor(checkpoint)
    report = _tracking(cfg, net, [0.0])
    path = _out_dir(cfg) / "eval.csv"
    report.to_csv(path)
    _print_report(net.kind, report)
    print(f"wrote {path}")
    return EXIT_OK


def write_paired_csv(reports, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("policy",) + TrackingReport.CSV_COLUMNS)
        for label, report in reports.items():
            for r in report.rows:
                w.writerow([label] + [repr(getattr(r, c)) for c in TrackingReport.CSV_COLUMNS])


def cmd_noise_sweep(cfg, checkpoint, baseline=None):
    nets = {"primary": _load_actor(checkpoint)}
    if baseline is not None:
        nets["baseline"] = _load_actor(baseline)
    reports = {}
    for role, net in nets.items():
        label = net.kind if baseline is None or nets["primary"].kind != nets["baseline"].kind else role
        reports[label] = _tracking(cfg, net, cfg.eval.sigmas)
        _print_report(label, reports[label])
    path = _out_dir(cfg) / "noise_sweep.csv"
    if baseline is None:
        next(iter(reports.values())).to_csv(path)
    else:
        write_paired_csv(reports, path)
    print(f"wrote {path}")
    return EXIT_OK


def energy_report(cfg, net):
    """Counts measured on visited observations, then the dense-baseline comparison per final T."""
    rng = np.random.default_rng([cfg.seed, 3])
    policy = network_policy(net, rng)
    obs = collect_observations(policy, cfg.energy.inferences, rng)
    counts = count_ops(net, obs, rng, first_layer=cfg.energy.first_layer)
    _, _, trace = net.forward(obs, "eval", rng=rng)
    rates = measure_rates(net, trace)
    model = EnergyModel(cfg.energy.e_mac, cfg.energy.e_ac)
    rows = [compare_with_ann(with_final_T(net.spec, t), rates, model, cfg.energy.first_layer)
            for t in cfg.energy.t_finals]
    return counts, rates, rows


def cmd_energy(cfg, checkpoint):
    net = _load_actor(checkpoint)
    if not isinstance(net, PopSAN):
        raise CheckpointError(f"{checkpoint}: energy profiling needs a spiking (popsan) checkpoint")
    counts, rates, rows = energy_report(cfg, net)
    print(f"measured over {counts.n_inferences} inferences: MAC {counts.mac_ops:.1f} (std {counts.mac_std:.1f}), "
          f"AC {counts.ac_ops:.1f} (std {counts.ac_std:.1f}), of which shrink {counts.shrink_ac_ops:.1f}")
    for r in rows:
        print(f"T_final={r.t_final}: ANN {r.ann_pj:.1f} pJ, SNN {r.snn_pj:.1f} pJ, savings {r.savings_pct:.2f}%")
    path = _out_dir(cfg) / "energy.csv"
    write_savings_csv(rows, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(cfg):
    spec = cfg.gradcheck_spec()
    n = PopSAN(spec).n_params()
    if n > cfg.gradcheck.max_params:
        raise ConfigError([f"gradcheck: spec has {n} parameters, limit is {cfg.gradcheck.max_params}"])
    results = gradcheck.run_all(spec, seed=cfg.seed)
    worst = max(results, key=lambda r: r.rel_err)
    tol = cfg.gradcheck.tolerance
    ok = all(r.rel_err <= tol for r in results)
    print(f"{len(results)} tensors checked, worst: {worst.suite}/{worst.tensor} rel_err={worst.rel_err:.3e} "
          f"(tolerance {tol:g}) -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args, extra = _parser().parse_known_args(argv)
    try:
        cfg = _config(args, extra)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "noise-sweep":
            return cmd_noise_sweep(cfg, args.checkpoint, args.baseline)
        if args.command == "energy":
            return cmd_energy(cfg, args.checkpoint)
        return cmd_gradcheck(cfg)
    except ConfigError as e:
        print(f"popsan {args.command}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"popsan {args.command}: {e}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
