"""Model-agnostic evaluation: cross-validated learning-rate search,
held-out test error, and label stability under single-coordinate
perturbations.

Classifiers enter as callables mapping an (n, d) input block to integer
labels, so deterministic rules, trained networks and kernel models are
interchangeable here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .datasets import Dataset, LabelRule, apply_rule
from .mlp import DivergenceError, NetConfig, TrainConfig, net_predict, train_to_zero_error
from .ntk import KernelModel, ntk_predict_batch
from .seeding import derive_seed

logger = logging.getLogger(__name__)


class LrSearchError(RuntimeError):
    """Every candidate learning rate diverged in every fold."""


@dataclass(frozen=True)
class FoldPlan:
    """Balanced assignment of n samples to k validation folds."""

    assignment: np.ndarray
    k: int

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def val_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)


def make_folds(n: int, k: int, seed: int) -> FoldPlan:
    """Random partition; fold sizes differ by at most one."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    return FoldPlan(assignment=assignment, k=k)


@dataclass(frozen=True)
class LrSearchSpec:
    """Coarse-to-fine search on a log-spaced learning-rate grid.

    Each refinement round halves the log-interval, recenters it on the
    incumbent (shifting, not clipping, at the grid edges) and snaps the
    nearest grid slot to the incumbent's exact value.  ``cv_max_epochs``
    caps the per-fold training used to score candidates.
    """

    grid_lo: float = 1e-4
    grid_hi: float = 1.0
    coarse_points: int = 7
    refine_rounds: int = 2
    folds: int = 10
    cv_max_epochs: int = 500

    def __post_init__(self) -> None:
        if not 0 < self.grid_lo < self.grid_hi:
            raise ValueError("need 0 < grid_lo < grid_hi")
        if self.coarse_points < 2 or self.refine_rounds < 0:
            raise ValueError("need coarse_points >= 2 and refine_rounds >= 0")


@dataclass
class SearchResult:
    best_eta: float
    best_score: float
    table: list[tuple[float, float]]
    fold_rows: list[tuple[float, int, float]]
    trainings: int


def _subset(ds: Dataset, idx: np.ndarray) -> Dataset:
    return Dataset(ds.inputs[idx], ds.labels[idx], d=ds.d, K=ds.K, meta=ds.meta)


def _cv_detail(
    eta: float, ds: Dataset, cfg: NetConfig, tcfg: TrainConfig, folds: FoldPlan
) -> tuple[float, list[float], int]:
    if folds.n != ds.n:
        raise ValueError(f"fold plan for n={folds.n} does not match dataset n={ds.n}")
    rates: list[float] = []
    diverged = 0
    for fold in range(folds.k):
        fold_tcfg = replace(tcfg, eta=eta, seed=derive_seed(tcfg.seed, "fold", fold))
        try:
            out = train_to_zero_error(cfg, _subset(ds, folds.train_index(fold)), fold_tcfg)
            val = folds.val_index(fold)
            rate = float(np.mean(net_predict(out.params, ds.inputs[val]) != ds.labels[val]))
        except DivergenceError:
            # A step size that blows up is scored as total failure.
            rate = 1.0
            diverged += 1
        rates.append(rate)
    return float(np.mean(rates)), rates, diverged


def cv_score(
    eta: float, ds: Dataset, cfg: NetConfig, tcfg: TrainConfig, folds: FoldPlan
) -> float:
    """Mean validation miss rate over folds at a fixed learning rate."""
    return _cv_detail(eta, ds, cfg, tcfg, folds)[0]


def minimize_on_log_grid(score_fn, spec: LrSearchSpec):
    """Coarse-to-fine minimization of ``score_fn(eta) -> (score, rows, diverged)``.

    Returns (best_eta, best_score, table, fold_rows, all_diverged).  Ties
    prefer the smaller eta.  Re-encountered etas are re-emitted from a
    cache so the table always has coarse + rounds*(coarse-1) rows.
    """
    cache: dict[float, tuple[float, list[float], int]] = {}
    table: list[tuple[float, float]] = []
    fold_rows: list[tuple[float, int, float]] = []

    def evaluate(eta: float) -> float:
        if eta not in cache:
            cache[eta] = score_fn(eta)
        score, rates, _ = cache[eta]
        table.append((eta, score))
        fold_rows.extend((eta, f, r) for f, r in enumerate(rates))
        return score

    log_lo, log_hi = np.log(spec.grid_lo), np.log(spec.grid_hi)
    width = log_hi - log_lo
    best_eta = best_score = np.inf
    for eta in np.exp(np.linspace(log_lo, log_hi, spec.coarse_points)):
        score = evaluate(float(eta))
        if (score, eta) < (best_score, best_eta):
            best_score, best_eta = score, float(eta)
    for _ in range(spec.refine_rounds):
        width /= 2.0
        lo = min(max(np.log(best_eta) - width / 2.0, log_lo), log_hi - width)
        grid = np.linspace(lo, lo + width, spec.coarse_points)
        grid[np.argmin(np.abs(grid - np.log(best_eta)))] = np.log(best_eta)
        for point in np.exp(grid):
            eta = float(point)
            if eta == best_eta:
                continue
            score = evaluate(eta)
            if (score, eta) < (best_score, best_eta):
                best_score, best_eta = score, eta
    all_diverged = all(div == len(rates) for _, rates, div in cache.values())
    return best_eta, best_score, table, fold_rows, all_diverged


def search_lr(
    ds: Dataset, cfg: NetConfig, spec: LrSearchSpec, tcfg: TrainConfig
) -> SearchResult:
    """Pick the learning rate with the lowest cross-validated miss rate."""
    folds = make_folds(ds.n, spec.folds, derive_seed(tcfg.seed, "folds"))
    cv_tcfg = replace(tcfg, max_epochs=spec.cv_max_epochs)
    trainings = 0

    def score_fn(eta: float):
        nonlocal trainings
        trainings += folds.k
        result = _cv_detail(eta, ds, cfg, cv_tcfg, folds)
        logger.info("cv eta=%.4e score=%.4f", eta, result[0])
        return result

    best_eta, best_score, table, fold_rows, all_diverged = minimize_on_log_grid(
        score_fn, spec
    )
    if all_diverged:
        raise LrSearchError("every learning rate diverged in every fold")
    return SearchResult(best_eta, best_score, table, fold_rows, trainings)


def test_error(predict, ds: Dataset) -> float:
    """Fraction of ds misclassified by the callable."""
    pred = np.asarray(predict(ds.inputs))
    if pred.shape != ds.labels.shape:
        raise ValueError(f"predictions shape {pred.shape} != labels {ds.labels.shape}")
    return float(np.mean(pred != ds.labels))


def rule_classifier(rule: LabelRule):
    """Oracle callable for a deterministic label rule."""
    if rule.kind not in ("k_local", "k_global"):
        raise ValueError(f"rule {rule.kind!r} has no deterministic classifier")
    return lambda X: apply_rule(np.atleast_2d(np.asarray(X, dtype=float)), rule)


def net_classifier(params):
    return lambda X: net_predict(params, X)


def kernel_classifier(model: KernelModel):
    return lambda X: ntk_predict_batch(model, X)


def v_stable(predict, x: np.ndarray, v: float) -> bool:
    """True when every single-coordinate +/-v shift keeps the label."""
    if v < 0:
        raise ValueError("perturbation strength must be >= 0")
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected one input vector, got shape {x.shape}")
    d = x.size
    probes = np.tile(x, (2 * d + 1, 1))
    probes[np.arange(1, d + 1), np.arange(d)] += v
    probes[np.arange(d + 1, 2 * d + 1), np.arange(d)] -= v
    labels = np.asarray(predict(probes))
    return bool((labels[1:] == labels[0]).all())


@dataclass
class StabilityReport:
    v: np.ndarray
    s: np.ndarray
    n_test: int


def stability_curve(predict, ds: Dataset, v_grid: np.ndarray) -> StabilityReport:
    """Fraction of samples whose label survives all +/-v coordinate shifts.

    The grid must be ascending; a sample unstable at one strength is
    counted unstable at every larger one, so the curve is nonincreasing
    by construction and each strength only probes the surviving set.
    """
    v_grid = np.asarray(v_grid, dtype=float)
    if v_grid.ndim != 1 or v_grid.size == 0:
        raise ValueError("v_grid must be a nonempty vector")
    if (np.diff(v_grid) < 0).any() or v_grid[0] < 0:
        raise ValueError("v_grid must be ascending and nonnegative")
    base = np.asarray(predict(ds.inputs))
    active = np.arange(ds.n)
    s = np.empty(v_grid.size)
    for j, v in enumerate(v_grid):
        if active.size and v > 0:
            X = ds.inputs[active].copy()
            ref = base[active]
            ok = np.ones(active.size, dtype=bool)
            for i in range(ds.d):
                col = X[:, i].copy()
                for shift in (v, -v):
                    X[:, i] = col + shift
                    ok &= np.asarray(predict(X)) == ref
                X[:, i] = col
            active = active[ok]
        s[j] = active.size / ds.n
    return StabilityReport(v=v_grid.copy(), s=s, n_test=ds.n)


def default_v_grid(points: int = 32) -> np.ndarray:
    return np.logspace(-2.0, 1.0, points)
