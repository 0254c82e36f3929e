"""Command-line entry point.

Subcommands cover dataset generation, single trainings, kernel fits,
learning-rate tuning and sweeps, stability curves, preset experiment
suites, and plot rendering.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .. import datasets as ds_mod
from ..evaluation import (
    LrSearchSpec,
    default_v_grid,
    kernel_classifier,
    net_classifier,
    rule_classifier,
    search_lr,
    stability_curve,
    test_error,
)
from ..ising import IsingTask, build_ising_dataset
from ..mlp import NetConfig, TrainConfig, load_params, save_params, train_to_zero_error
from ..ntk import NtkSpec, load_kernel_model, ntk_fit, save_kernel_model
from .config import ArchSpec, ConfigError, parse_config
from .plots import PLOT_KINDS, emit_plot, write_stability_csv
from .presets import PRESETS, get_preset, run_preset_action
from .runner import lr_sweep, run_experiment

logger = logging.getLogger(__name__)


def _parse_indices(raw: str | None) -> tuple[int, ...]:
    if not raw:
        return ()
    return tuple(int(tok) for tok in raw.split(",") if tok.strip())


def _rule_from_args(args) -> ds_mod.LabelRule:
    return ds_mod.LabelRule(args.rule, k=args.k or 0, indices=_parse_indices(args.indices))


def _cmd_gen_data(args) -> int:
    rule = _rule_from_args(args)
    ds = ds_mod.make_dataset(rule, args.n, args.d, args.seed)
    ds_mod.write_dataset(ds, args.out)
    if args.csv:
        ds_mod.export_csv(ds, args.csv)
    print(f"wrote {ds.n} samples (d={ds.d}, rule={rule.describe()}) to {args.out}")
    return 0


def _cmd_ising_gen(args) -> int:
    task = IsingTask(d=args.d, beta1=args.beta1, beta2=args.beta2,
                     sweeps=args.sweeps, burn_in=args.burn_in, seed=args.seed)
    ds = build_ising_dataset(task, args.n)
    ds_mod.write_dataset(ds, args.out)
    if args.csv:
        ds_mod.export_csv(ds, args.csv)
    print(f"wrote {ds.n} chains (d={ds.d}, beta1={args.beta1}, beta2={args.beta2}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    train = ds_mod.read_dataset(args.data)
    arch = ArchSpec.parse(args.arch)
    if arch.kind == "ntk":
        raise SystemExit("use the 'ntk' subcommand for kernel models")
    cfg = NetConfig(d=train.d, L=arch.L, H=arch.H, K=train.K, init=args.init)
    tcfg = TrainConfig(eta=args.eta, batch_size=args.batch, max_epochs=args.epochs,
                       check_every=args.check_every, loss=args.loss, seed=args.seed)
    out = train_to_zero_error(cfg, train, tcfg)
    print(f"epochs={out.epochs} converged={out.converged} train_error={out.train_error:.6f}")
    if args.test:
        err = test_error(net_classifier(out.params), ds_mod.read_dataset(args.test))
        print(f"test_error={err:.6f}")
    if args.save_weights:
        save_params(out.params, args.save_weights)
        print(f"weights -> {args.save_weights}")
    return 0


def _cmd_ntk(args) -> int:
    train = ds_mod.read_dataset(args.data)
    spec = NtkSpec(depth=args.depth, beta=args.beta, jitter=args.jitter)
    model = ntk_fit(train, spec)
    print(f"fitted kernel model: depth={args.depth} n={model.n} lam={model.lam:.3e}")
    if args.test:
        err = test_error(kernel_classifier(model), ds_mod.read_dataset(args.test))
        print(f"test_error={err:.6f}")
    if args.save_model:
        save_kernel_model(model, args.save_model)
        print(f"model -> {args.save_model}")
    return 0


def _cmd_tune_lr(args) -> int:
    train = ds_mod.read_dataset(args.data)
    arch = ArchSpec.parse(args.arch)
    cfg = NetConfig(d=train.d, L=arch.L, H=arch.H, K=train.K)
    spec = LrSearchSpec(grid_lo=args.grid_lo, grid_hi=args.grid_hi,
                        coarse_points=args.coarse, refine_rounds=args.rounds,
                        folds=args.folds, cv_max_epochs=args.cv_epochs)
    tcfg = TrainConfig(eta=1.0, batch_size=args.batch, loss=args.loss, seed=args.seed)
    result = search_lr(train, cfg, spec, tcfg)
    print(f"best_eta={result.best_eta:.6g} cv_score={result.best_score:.6f} "
          f"trainings={result.trainings}")
    if args.scores:
        with open(args.scores, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["eta", "fold", "miss_rate"])
            for eta, fold, rate in result.fold_rows:
                writer.writerow([f"{eta:.12g}", fold, f"{rate:.10g}"])
        print(f"score table -> {args.scores}")
    return 0


def _cmd_sweep_lr(args) -> int:
    spec = parse_config(args.config)
    rows = lr_sweep(spec, args.out, workers=args.workers)
    print(f"{len(rows)} new rows -> {args.out}")
    return 0


def _cmd_stability(args) -> int:
    chosen = [opt for opt in (args.weights, args.model, args.rule) if opt]
    if len(chosen) != 1:
        raise SystemExit("choose exactly one of --weights / --model / --rule")
    if args.data:
        probe = ds_mod.read_dataset(args.data)
    else:
        if not args.d:
            raise SystemExit("--d is required when no --data file is given")
        probe = ds_mod.make_dataset(ds_mod.LabelRule("random"), args.n_test, args.d, args.seed)
    if args.weights:
        predict = net_classifier(load_params(args.weights))
    elif args.model:
        predict = kernel_classifier(load_kernel_model(args.model))
    else:
        predict = rule_classifier(_rule_from_args(args))
    report = stability_curve(predict, probe, default_v_grid(args.points))
    write_stability_csv(report, args.out)
    print(f"stability curve ({report.n_test} probes) -> {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    if bool(args.config) == bool(args.preset):
        raise SystemExit("choose exactly one of --config / --preset")
    if args.preset:
        actions = get_preset(args.preset, args.seed if args.seed is not None else 0)
        for action in actions:
            files = run_preset_action(action, args.out_dir, workers=args.workers,
                                      seed=args.seed)
            for path in files:
                print(f"-> {path}")
        return 0
    spec = parse_config(args.config)
    if args.seed is not None:
        spec.seed = args.seed
    import os

    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, f"{spec.name}.csv")
    if spec.eta_grid:
        rows = lr_sweep(spec, csv_path, workers=args.workers)
        kind = "error_vs_eta"
    else:
        rows = run_experiment(spec, csv_path, workers=args.workers)
        kind = "error_vs_N" if len(spec.n_list) > 1 else "error_vs_depth"
    print(f"{len(rows)} new rows -> {csv_path}")
    svg = os.path.join(args.out_dir, f"{spec.name}.svg")
    emit_plot(csv_path, args.plot_kind or kind, svg)
    print(f"-> {svg}")
    return 0


def _cmd_plot(args) -> int:
    emit_plot(args.inputs, args.kind, args.out)
    print(f"-> {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthloc",
                                     description="depth vs. feature-locality experiments")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for info, -vv for debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a labeled Gaussian dataset")
    p.add_argument("--rule", required=True, choices=["k_local", "k_global", "random"])
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int, default=0)
    p.add_argument("--indices", default=None, help="comma-separated 1-based indices")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None, help="also export rows as CSV")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("ising-gen", help="sample spin chains at two temperatures")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--beta1", type=float, default=0.1)
    p.add_argument("--beta2", type=float, default=0.3)
    p.add_argument("--sweeps", type=int, default=1)
    p.add_argument("--burn-in", type=int, default=10)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=_cmd_ising_gen)

    p = sub.add_parser("train", help="train one network to zero training error")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", required=True, help="LxH or perceptron")
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--loss", choices=["ce", "mse"], default="ce")
    p.add_argument("--init", choices=["glorot", "he", "ntk_scaled"], default="glorot")
    p.add_argument("--batch", type=int, default=50)
    p.add_argument("--epochs", type=int, default=2500)
    p.add_argument("--check-every", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test", default=None)
    p.add_argument("--save-weights", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("ntk", help="fit the infinite-width kernel classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--test", default=None)
    p.add_argument("--save-model", default=None)
    p.set_defaults(func=_cmd_ntk)

    p = sub.add_parser("tune-lr", help="cross-validated learning-rate search")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--loss", choices=["ce", "mse"], default="ce")
    p.add_argument("--batch", type=int, default=50)
    p.add_argument("--grid-lo", type=float, default=1e-4)
    p.add_argument("--grid-hi", type=float, default=1.0)
    p.add_argument("--coarse", type=int, default=7)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--cv-epochs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scores", default=None, help="write eta,fold,miss_rate table")
    p.set_defaults(func=_cmd_tune_lr)

    p = sub.add_parser("sweep-lr", help="train at each eta in the config's eta_grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_sweep_lr)

    p = sub.add_parser("stability", help="s(v) curve of a model or rule")
    p.add_argument("--weights", default=None, help="trained network file")
    p.add_argument("--model", default=None, help="kernel model file")
    p.add_argument("--rule", default=None, choices=["k_local", "k_global"])
    p.add_argument("--k", type=int, default=0)
    p.add_argument("--indices", default=None)
    p.add_argument("--data", default=None, help="probe inputs file")
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_stability)

    p = sub.add_parser("experiment", help="run a config or preset suite")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", default=None, choices=sorted(PRESETS))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--plot-kind", default=None, choices=list(PLOT_KINDS))
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("plot", help="render a results CSV to SVG")
    p.add_argument("--kind", required=True, choices=list(PLOT_KINDS))
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
