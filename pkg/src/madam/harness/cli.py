"""Command line entry points.

Subcommands: train one experiment, sweep a learning-rate grid, compare
ladder bit widths, run the numerical verification suites, inspect a
compressed checkpoint, and generate CSV datasets. Exit codes: 0 success,
2 configuration error, 3 every trial diverged, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import descent, lns
from ..nets import random_mlp, Dataset, backward
from ..tensor import DegenerateAngleError
from .config import ConfigError, ExperimentConfig, LnsConfig, load_config
from .datasets import DatasetFormatError, generate_dataset, save_dataset
from .grid import (bitwidth_summary, compare_bitwidths, default_eta_grid, grid_search,
                   write_grid_csv)
from .training import train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _load_or_default(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return load_config(path)


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg = cfg.replace(out_dir=args.out)
    if getattr(args, "eta", None) is not None:
        cfg = cfg.replace(optimizer=replace(cfg.optimizer, eta=args.eta, eta_star=None))
    if getattr(args, "optimizer", None) is not None:
        cfg = cfg.replace(optimizer=replace(cfg.optimizer, variant=args.optimizer))
    if getattr(args, "epochs", None) is not None:
        cfg = cfg.replace(schedule=replace(cfg.schedule, epochs=args.epochs))
    if getattr(args, "bits", None) is not None or getattr(args, "eta0", None) is not None:
        base = cfg.lns if cfg.lns is not None else LnsConfig()
        if args.bits is not None:
            base = replace(base, bits=args.bits)
        if getattr(args, "eta0", None) is not None:
            base = replace(base, eta0=args.eta0)
        cfg = cfg.replace(lns=base)
    if getattr(args, "eta_floor", None) is not None:
        if cfg.lns is None:
            raise ConfigError("--eta-floor requires an lns section or --bits")
        cfg = cfg.replace(lns=replace(cfg.lns, eta_floor=args.eta_floor))
    # rebuild to rerun cross-field validation
    return ExperimentConfig.from_dict(cfg.to_dict())


def _cmd_train(args) -> int:
    cfg = _apply_overrides(_load_or_default(args.config), args)
    record = train(cfg)
    summary = record.to_dict()
    del summary["epochs"]  # full series lives in metrics.jsonl / summary.json
    summary["epochs_run"] = len(record.epochs) - 1 if record.epochs else 0
    print(json.dumps(summary, indent=2))
    return EXIT_DIVERGED if record.diverged else EXIT_OK


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad float list {text!r}: {exc}") from None


def _cmd_grid(args) -> int:
    cfg = _apply_overrides(_load_or_default(args.config), args)
    etas = _parse_floats(args.etas) if args.etas else default_eta_grid()
    optimizers = tuple(tok.strip() for tok in args.optimizers.split(",") if tok.strip())
    cells, _ = grid_search(cfg, etas, optimizers)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_grid_csv(cells, out_dir / "grid.csv")
    header = f"{'optimizer':>10} {'eta':>10} {'metric':>12} {'score':>8} diverged"
    print(header)
    for cell in cells:
        metric = "-" if math.isinf(cell.final_metric) else f"{cell.final_metric:.6f}"
        print(f"{cell.optimizer:>10} {cell.eta:>10.2e} {metric:>12} "
              f"{cell.normalized_score:>8.4f} {int(cell.diverged)}")
    if all(cell.diverged for cell in cells):
        print("every grid cell diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_compare_bits(args) -> int:
    cfg = _apply_overrides(_load_or_default(args.config), args)
    bits_list = tuple(int(b) for b in _parse_floats(args.bits_list))
    rows = compare_bitwidths(cfg, bits_list, repeats=args.repeats)
    summary = bitwidth_summary(rows)
    text = json.dumps(summary, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    if all(not any(math.isfinite(m) for m in row.metrics) for row in rows):
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_verify(args) -> int:
    report = run_verification(seed=args.seed, instances=args.instances,
                              t_samples=args.t_samples, mc_dim=args.mc_dim,
                              mc_trials=args.mc_trials)
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def run_verification(seed: int = 0, instances: int = 50, t_samples: int = 64,
                     mc_dim: int = 100_000, mc_trials: int = 10) -> dict:
    """Numerical checks of the descent theory on random small networks.

    Reports the worst angle-identity and relative-step errors for the
    multiplicative update, the descent-inequality slack distribution, how
    often measured gradient breakdown exceeds the deep-relative-trust
    bound, the Gaussian angle constant, and a table of learning-rate
    bounds.
    """
    rng = np.random.default_rng(seed)
    identity_err = 0.0
    step_err = 0.0
    slacks = []
    drt_violations = 0
    drt_excess = []
    descended = 0
    for _ in range(instances):
        widths = [int(rng.integers(2, 9)) for _ in range(rng.integers(2, 5))]
        net = random_mlp(widths, rng, weight_std=0.5, bias_std=0.5)
        batch = Dataset(rng.standard_normal((8, widths[0])),
                        rng.standard_normal((8, widths[-1])), "regression")
        grads = backward(net, batch).flat()
        try:
            gammas = descent.cos_gamma(net, grads)
        except DegenerateAngleError:
            continue
        depth = len(net.param_list())
        eta = 0.5 * descent.eta_descent_bound(depth, float(np.min(gammas)))
        report = descent.verify_madam_descent(net, batch, eta)
        identity_err = max(identity_err, report.max_angle_identity_error)
        step_err = max(step_err, report.max_relative_step_error)
        descended += int(report.descended)
        delta = [-eta * np.abs(p) * np.sign(g)
                 for p, g in zip(net.param_list(), grads)]
        gap = descent.descent_gap(net, delta, batch, t_samples)
        slacks.append(gap.slack)
        worst = max(g.breakdown for g in gap.groups)
        if worst > gap.drt_bound + 1e-12:
            drt_violations += 1
            drt_excess.append(worst - gap.drt_bound)
    mc_mean, mc_stderr = descent.gaussian_cos_gamma_mc(mc_dim, mc_trials, seed)
    return {
        "instances": instances,
        "max_angle_identity_error": identity_err,
        "max_relative_step_error": step_err,
        "descent_rate": descended / instances,
        "slack_min": float(np.min(slacks)) if slacks else None,
        "slack_median": float(np.median(slacks)) if slacks else None,
        "drt_violation_rate": drt_violations / instances,
        "drt_violation_max_excess": float(np.max(drt_excess)) if drt_excess else 0.0,
        "gaussian_cos_gamma": {"mean": mc_mean, "stderr": mc_stderr,
                               "target": 2.0 / math.pi},
        "eta_bound_table": [
            {"depth": L, "cos_gamma": 0.64,
             "eta_bound": descent.eta_descent_bound(L, 0.64)}
            for L in (1, 2, 5, 10, 20, 40)
        ],
    }


def _cmd_inspect(args) -> int:
    data = Path(args.checkpoint).read_bytes()
    entries = lns.read_checkpoint(data)
    print(f"{args.checkpoint}: {len(entries)} layer(s)")
    for entry in entries:
        t = entry.tensor
        levels = t.levels
        hist, edges = np.histogram(levels, bins=min(16, t.spec.num_levels),
                                   range=(0, t.spec.num_levels))
        print(f"  {entry.name}: B={t.spec.bits} eta0={t.spec.eta0:g} "
              f"sigma*={t.spec.sigma_star:g} n={t.size} "
              f"gbar_sq={'yes' if entry.gbar_sq is not None else 'no'}")
        print(f"    levels: min={levels.min()} max={levels.max()} "
              f"mean={levels.mean():.1f}")
        for count, lo, hi in zip(hist, edges[:-1], edges[1:]):
            if count:
                print(f"    [{int(lo):>6}, {int(hi):>6}): {count}")
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    params = {}
    if args.kind == "gaussian_blobs" and args.classes is not None:
        params["classes"] = args.classes
    if args.kind == "random_regression":
        if args.in_dim is not None:
            params["in_dim"] = args.in_dim
        if args.target_scale is not None:
            params["target_scale"] = args.target_scale
    ds = generate_dataset(args.kind, args.n, args.noise, args.seed, **params)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="madam",
                                     description="multiplicative-update training toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="experiment config JSON (defaults when omitted)")
        p.add_argument("--seed", type=int, help="override trial seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--eta", type=float, help="override learning rate")
        p.add_argument("--epochs", type=int, help="override epoch budget")

    p_train = sub.add_parser("train", help="run one training trial")
    add_common(p_train)
    p_train.add_argument("--optimizer", help="override optimizer variant")
    p_train.add_argument("--bits", type=int, help="enable the B-bit ladder path")
    p_train.add_argument("--eta0", type=float, help="ladder base precision")
    p_train.add_argument("--eta-floor", dest="eta_floor", type=float,
                         help="decay floor for the ladder path (default eta0)")
    p_train.set_defaults(func=_cmd_train)

    p_grid = sub.add_parser("grid", help="learning-rate grid search")
    add_common(p_grid)
    p_grid.add_argument("--etas", help="comma-separated grid (default 1e-4..1)")
    p_grid.add_argument("--optimizers", default="madam,sgd",
                        help="comma-separated optimizer variants")
    p_grid.set_defaults(func=_cmd_grid)

    p_bits = sub.add_parser("compare-bits", help="bit-width sweep at fixed dynamic range")
    add_common(p_bits)
    p_bits.add_argument("--bits-list", dest="bits_list", default="12,10,8",
                        help="comma-separated bit widths")
    p_bits.add_argument("--repeats", type=int, default=3, help="seeds per width")
    p_bits.set_defaults(func=_cmd_compare_bits)

    p_verify = sub.add_parser("verify", help="run the numerical theory checks")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--instances", type=int, default=50)
    p_verify.add_argument("--t-samples", dest="t_samples", type=int, default=64)
    p_verify.add_argument("--mc-dim", dest="mc_dim", type=int, default=100_000)
    p_verify.add_argument("--mc-trials", dest="mc_trials", type=int, default=10)
    p_verify.add_argument("--out", help="write the JSON report here too")
    p_verify.set_defaults(func=_cmd_verify)

    p_inspect = sub.add_parser("inspect-checkpoint", help="dump a ladder checkpoint")
    p_inspect.add_argument("checkpoint")
    p_inspect.set_defaults(func=_cmd_inspect)

    p_gen = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    p_gen.add_argument("--kind", required=True,
                       choices=("two_moons", "gaussian_blobs", "random_regression"))
    p_gen.add_argument("--n", type=int, default=400)
    p_gen.add_argument("--noise", type=float, default=0.1)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--classes", type=int, help="blob count for gaussian_blobs")
    p_gen.add_argument("--in-dim", dest="in_dim", type=int,
                       help="input width for random_regression")
    p_gen.add_argument("--target-scale", dest="target_scale", type=float,
                       help="target amplitude for random_regression")
    p_gen.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, lns.FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
