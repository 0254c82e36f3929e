"""Sweep execution with append-only CSV persistence.

Every row's seed derives from (master seed, row coordinates), so any
row can be recomputed in isolation.  Completed rows are journaled by
their coordinates; interrupting and resuming a sweep never duplicates
or retrains finished work.  Cells (one dataset, one architecture) can
run on a process pool; the parent serializes all CSV appends.
"""

from __future__ import annotations

import concurrent.futures
import csv
import logging
import os
import time
from dataclasses import dataclass

from .. import datasets as ds_mod
from ..datasets import Dataset, LabelRule
from ..evaluation import LrSearchError, net_classifier, kernel_classifier, search_lr, test_error
from ..ising import IsingTask, build_ising_dataset
from ..mlp import DivergenceError, NetConfig, TrainConfig, train_to_zero_error
from ..ntk import NtkSpec, ntk_fit
from ..seeding import derive_seed
from .config import ArchSpec, ExperimentSpec

logger = logging.getLogger(__name__)

CSV_HEADER = [
    "experiment", "rule", "d", "k", "n", "model", "loss", "eta", "repeat",
    "test_error", "train_epochs", "status", "wall_ms", "seed",
]


@dataclass
class RunResult:
    experiment: str
    rule: str
    d: int
    k: int
    n: int
    model: str
    loss: str
    eta: float | None
    repeat: int
    test_error: float | None
    train_epochs: int
    status: str
    wall_ms: int
    seed: int

    def to_row(self) -> list[str]:
        return [
            self.experiment, self.rule, str(self.d), str(self.k), str(self.n),
            self.model, self.loss,
            "" if self.eta is None else f"{self.eta:.12g}",
            str(self.repeat),
            "" if self.test_error is None else f"{self.test_error:.10g}",
            str(self.train_epochs), self.status, str(self.wall_ms), str(self.seed),
        ]


def _rule_token(rule: LabelRule) -> str:
    if rule.kind in ("k_local", "k_global"):
        idx = ",".join(map(str, rule.resolved_indices()))
        return f"{rule.kind}:{rule.k}:{idx}"
    if rule.kind == "ising":
        return f"ising:{rule.beta1!r}:{rule.beta2!r}"
    return "random"


def _build_dataset(spec: ExperimentSpec, n: int, tag: str) -> Dataset:
    seed = derive_seed(spec.seed, tag, _rule_token(spec.rule), spec.d, n)
    if spec.rule.kind == "ising":
        task = IsingTask(
            d=spec.d, beta1=spec.ising.beta1, beta2=spec.ising.beta2,
            sweeps=spec.ising.sweeps, burn_in=spec.ising.burn_in, seed=seed,
        )
        return build_ising_dataset(task, n)
    return ds_mod.make_dataset(spec.rule, n, spec.d, seed)


def _row_seed(spec: ExperimentSpec, n: int, arch: ArchSpec, repeat: int, *extra) -> int:
    return derive_seed(
        spec.seed, _rule_token(spec.rule), spec.d, spec.rule.k, n,
        arch.kind, arch.L, arch.H, repeat, *extra,
    )


def _coord_key(spec: ExperimentSpec, n: int, arch: ArchSpec, repeat: int,
               eta: float | None = None) -> str:
    parts = [spec.name, spec.rule.kind, str(spec.d), str(spec.rule.k), str(n),
             str(arch), spec.loss, str(repeat)]
    if eta is not None:
        parts.append(f"{eta:.12g}")
    return "|".join(parts)


def _net_config(spec: ExperimentSpec, arch: ArchSpec) -> NetConfig:
    return NetConfig(d=spec.d, L=arch.L, H=arch.H, K=2, init="glorot")


def _ntk_row(spec: ExperimentSpec, train: Dataset, test: Dataset, arch: ArchSpec,
             n: int) -> RunResult:
    seed = _row_seed(spec, n, arch, 0)
    start = time.perf_counter()
    model = ntk_fit(train, NtkSpec(depth=arch.L, beta=spec.beta_ntk, jitter=spec.jitter))
    err = test_error(kernel_classifier(model), test)
    wall = int(round(1000 * (time.perf_counter() - start)))
    return RunResult(spec.name, spec.rule.kind, spec.d, spec.rule.k, n, str(arch),
                     spec.loss, None, 0, err, 0, "ok", wall, seed)


def _train_row(spec: ExperimentSpec, train: Dataset, test: Dataset, arch: ArchSpec,
               n: int, eta: float, repeat: int, seed_extra: tuple = ()) -> RunResult:
    seed = _row_seed(spec, n, arch, repeat, *seed_extra)
    tcfg = TrainConfig(eta=eta, loss=spec.loss, seed=seed)
    start = time.perf_counter()
    try:
        out = train_to_zero_error(_net_config(spec, arch), train, tcfg)
        err = test_error(net_classifier(out.params), test)
        status = "ok" if out.converged else "not_converged"
        epochs = out.epochs
    except DivergenceError as div:
        err, status, epochs = None, "diverged", div.epoch
    except Exception:
        logger.exception("run failed: %s n=%d %s repeat=%d", spec.name, n, arch, repeat)
        err, status, epochs = None, "failed", 0
    wall = int(round(1000 * (time.perf_counter() - start)))
    return RunResult(spec.name, spec.rule.kind, spec.d, spec.rule.k, n, str(arch),
                     spec.loss, eta, repeat, err, epochs, status, wall, seed)


def _tuned_eta(spec: ExperimentSpec, train: Dataset, arch: ArchSpec, n: int) -> float:
    tcfg = TrainConfig(eta=1.0, loss=spec.loss,
                       seed=derive_seed(spec.seed, "tune", _rule_token(spec.rule),
                                        spec.d, n, str(arch)))
    result = search_lr(train, _net_config(spec, arch), spec.tuner, tcfg)
    logger.info("%s n=%d %s: tuned eta=%.4e (cv %.4f)",
                spec.name, n, arch, result.best_eta, result.best_score)
    return result.best_eta


def _run_cell(spec: ExperimentSpec, n: int, arch: ArchSpec,
              missing: list[int], eta_hint: float | None) -> list[RunResult]:
    """All outstanding rows of one (dataset, architecture) cell."""
    train = _build_dataset(spec, n, "train")
    test = _test_set(spec)
    if arch.kind == "ntk":
        return [_ntk_row(spec, train, test, arch, n)]
    try:
        eta = eta_hint if eta_hint is not None else _tuned_eta(spec, train, arch, n)
    except LrSearchError:
        logger.exception("tuner failed: %s n=%d %s", spec.name, n, arch)
        seed = _row_seed(spec, n, arch, 0)
        return [RunResult(spec.name, spec.rule.kind, spec.d, spec.rule.k, n, str(arch),
                          spec.loss, None, r, None, 0, "failed", 0, seed)
                for r in missing]
    return [_train_row(spec, train, test, arch, n, eta, r) for r in missing]


def _test_set(spec: ExperimentSpec) -> Dataset:
    return _build_dataset(spec, spec.n_test, "test")


class _Journal:
    """Append-only results CSV with completed-row lookup."""

    def __init__(self, path: str):
        self.path = path
        self.rows: list[dict[str, str]] = []
        if os.path.exists(path) and os.path.getsize(path) > 0:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames != CSV_HEADER:
                    raise ValueError(f"{path}: header {reader.fieldnames} does not match")
                self.rows = list(reader)
        self._fh = open(path, "a", newline="")
        self._writer = csv.writer(self._fh)
        if not self.rows and os.path.getsize(path) == 0:
            self._writer.writerow(CSV_HEADER)
            self._fh.flush()

    def key_set(self, with_eta: bool) -> set[str]:
        keys = set()
        for row in self.rows:
            parts = [row["experiment"], row["rule"], row["d"], row["k"], row["n"],
                     row["model"], row["loss"], row["repeat"]]
            if with_eta:
                parts.append(row["eta"])
            keys.add("|".join(parts))
        return keys

    def eta_hint(self, spec: ExperimentSpec, n: int, arch: ArchSpec) -> float | None:
        for row in self.rows:
            if (row["experiment"], row["model"], row["n"]) == (spec.name, str(arch), str(n)):
                if row["eta"]:
                    return float(row["eta"])
        return None

    def append(self, result: RunResult) -> None:
        self._writer.writerow(result.to_row())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _write_meta(csv_path: str, spec: ExperimentSpec, mode: str) -> None:
    meta_path = csv_path + ".meta"
    with open(meta_path, "w", encoding="utf-8") as fh:
        fh.write(f"experiment={spec.name}\nmode={mode}\n")
        fh.write(f"rule={_rule_token(spec.rule)}\nd={spec.d}\nloss={spec.loss}\n")
        fh.write(f"seed={spec.seed}\nn_test={spec.n_test}\nrepeats={spec.repeats}\n")
        fh.write("tuner=coarse-to-fine log-grid cross validation "
                 f"(lo={spec.tuner.grid_lo:g}, hi={spec.tuner.grid_hi:g}, "
                 f"coarse={spec.tuner.coarse_points}, rounds={spec.tuner.refine_rounds}, "
                 f"folds={spec.tuner.folds}, cv_epochs={spec.tuner.cv_max_epochs})\n")


def _execute_cells(fn, cells, workers: int, journal: _Journal) -> list[RunResult]:
    done: list[RunResult] = []

    def record(results: list[RunResult]) -> None:
        for row in results:
            journal.append(row)
            done.append(row)

    if workers <= 1:
        for args in cells:
            record(fn(*args))
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fn, *args) for args in cells]
            for fut in concurrent.futures.as_completed(futures):
                record(fut.result())
    return done


def run_experiment(spec: ExperimentSpec, csv_path: str, workers: int = 1) -> list[RunResult]:
    """Tune, train and evaluate every (N, architecture) cell; returns new rows."""
    journal = _Journal(csv_path)
    _write_meta(csv_path, spec, "experiment")
    try:
        finished = journal.key_set(with_eta=False)
        cells = []
        for n in spec.n_list:
            for arch in spec.archs:
                repeats = 1 if arch.kind == "ntk" else spec.repeats
                missing = [r for r in range(repeats)
                           if _coord_key(spec, n, arch, r) not in finished]
                if not missing:
                    continue
                cells.append((spec, n, arch, missing, journal.eta_hint(spec, n, arch)))
        return _execute_cells(_run_cell, cells, workers, journal)
    finally:
        journal.close()


def _sweep_cell(spec: ExperimentSpec, n: int, arch: ArchSpec,
                jobs: list[tuple[float, int]]) -> list[RunResult]:
    train = _build_dataset(spec, n, "train")
    test = _test_set(spec)
    if arch.kind == "ntk":
        return [_ntk_row(spec, train, test, arch, n)]
    return [_train_row(spec, train, test, arch, n, eta, r, ("sweep", eta))
            for eta, r in jobs]


def lr_sweep(spec: ExperimentSpec, csv_path: str, workers: int = 1) -> list[RunResult]:
    """Train at every learning rate in spec.eta_grid instead of tuning."""
    if not spec.eta_grid:
        raise ValueError("lr_sweep needs a nonempty eta_grid")
    journal = _Journal(csv_path)
    _write_meta(csv_path, spec, "lr_sweep")
    try:
        finished = journal.key_set(with_eta=True)
        cells = []
        for n in spec.n_list:
            for arch in spec.archs:
                if arch.kind == "ntk":
                    if _coord_key(spec, n, arch, 0) + "|" not in finished:
                        cells.append((spec, n, arch, []))
                    continue
                jobs = [(eta, r) for eta in spec.eta_grid for r in range(spec.repeats)
                        if _coord_key(spec, n, arch, r, eta) not in finished]
                if jobs:
                    cells.append((spec, n, arch, jobs))
        return _execute_cells(_sweep_cell, cells, workers, journal)
    finally:
        journal.close()
