"""Named desk-scale experiment plans.

Each preset expands to a few actions (tuned sweep, fixed-eta sweep, or
stability study) sized to finish on a single core in minutes rather
than the hours the full-scale coordinates would need.  Dimensions and
sample counts are recorded in every output row, so scaled results are
never mistaken for full-scale ones.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, replace

from ..datasets import LabelRule, make_dataset
from ..evaluation import (
    LrSearchSpec,
    default_v_grid,
    net_classifier,
    rule_classifier,
    stability_curve,
)
from ..mlp import NetConfig, TrainConfig, train_to_zero_error
from ..seeding import derive_seed
from .config import ArchSpec, ExperimentSpec
from .plots import emit_plot, write_stability_csv
from .runner import lr_sweep, run_experiment

logger = logging.getLogger(__name__)

_FAST_TUNER = LrSearchSpec(coarse_points=4, refine_rounds=0, folds=3, cv_max_epochs=100)


@dataclass(frozen=True)
class StabilityJob:
    """Nets trained on random labels plus rule oracles, probed for s(v)."""

    d: int = 100
    n_train: int = 2000
    n_test: int = 2000
    archs: tuple[ArchSpec, ...] = (ArchSpec("mlp", 1, 128), ArchSpec("mlp", 5, 128))
    rules: tuple[LabelRule, ...] = (LabelRule("k_local", 2), LabelRule("k_global", 2))
    eta: float = 0.1
    grid_points: int = 32


@dataclass(frozen=True)
class PresetAction:
    mode: str  # experiment | sweep | stability
    stem: str
    plot: str
    spec: ExperimentSpec | None = None
    stability: StabilityJob | None = None


def _mlp(L: int, H: int) -> ArchSpec:
    return ArchSpec("mlp", L, H)


def _ntk(L: int) -> ArchSpec:
    return ArchSpec("ntk", L)


def _fig1(seed: int) -> list[PresetAction]:
    actions = []
    for kind in ("k_local", "k_global"):
        tag = "local" if kind == "k_local" else "global"
        spec = ExperimentSpec(
            name=f"fig1-1-{tag}", rule=LabelRule(kind, 1), d=200,
            n_list=(100, 300, 1000),
            archs=(_mlp(1, 128), _mlp(5, 128), _ntk(1), _ntk(5)),
            repeats=3, seed=seed, tuner=_FAST_TUNER,
        )
        actions.append(PresetAction("experiment", spec.name, "error_vs_N", spec=spec))
    return actions


def _fig2(seed: int) -> list[PresetAction]:
    coords = [("k_local", 2, 50), ("k_local", 3, 30), ("k_global", 2, 40), ("k_global", 3, 20)]
    actions = []
    for kind, k, d in coords:
        tag = "local" if kind == "k_local" else "global"
        spec = ExperimentSpec(
            name=f"fig2-{k}-{tag}", rule=LabelRule(kind, k), d=d,
            n_list=(100, 300, 1000),
            archs=(_mlp(1, 128), _mlp(5, 128), _ntk(1), _ntk(5)),
            repeats=3, seed=seed, tuner=_FAST_TUNER,
        )
        actions.append(PresetAction("experiment", spec.name, "error_vs_N", spec=spec))
    return actions


def _fig4(seed: int) -> list[PresetAction]:
    scan = tuple(_mlp(L, 128) for L in range(1, 7))
    actions = []
    for kind, d in (("k_local", 50), ("k_global", 40)):
        tag = "local" if kind == "k_local" else "global"
        spec = ExperimentSpec(
            name=f"fig4-2-{tag}", rule=LabelRule(kind, 2), d=d, n_list=(4000,),
            archs=scan, repeats=5, seed=seed,
            tuner=replace(_FAST_TUNER, cv_max_epochs=120),
        )
        actions.append(PresetAction("experiment", spec.name, "error_vs_depth", spec=spec))
    return actions


def _fig5(seed: int) -> list[PresetAction]:
    spec = ExperimentSpec(
        name="fig5-3-global", rule=LabelRule("k_global", 3), d=20, n_list=(2000,),
        archs=(_mlp(1, 512), _ntk(1)), repeats=3, seed=seed,
        eta_grid=(1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0),
    )
    return [PresetAction("sweep", spec.name, "error_vs_eta", spec=spec)]


def _fig6(seed: int) -> list[PresetAction]:
    del seed
    return [PresetAction("stability", "fig6-stability", "stability",
                         stability=StabilityJob())]


def _suppB(seed: int) -> list[PresetAction]:
    spec = ExperimentSpec(
        name="suppB-2-local-mse", rule=LabelRule("k_local", 2), d=50,
        n_list=(300, 1000), archs=(_mlp(1, 128), _mlp(5, 128)), loss="mse",
        repeats=3, seed=seed, tuner=_FAST_TUNER,
    )
    return [PresetAction("experiment", spec.name, "error_vs_N", spec=spec)]


def _suppC(seed: int) -> list[PresetAction]:
    spec = ExperimentSpec(
        name="suppC-ising", rule=LabelRule("ising", beta1=0.1, beta2=0.3), d=100,
        n_list=(4000,), archs=(_mlp(1, 128), _mlp(5, 128)), repeats=5, seed=seed,
        tuner=replace(_FAST_TUNER, cv_max_epochs=120),
    )
    return [PresetAction("experiment", spec.name, "error_vs_depth", spec=spec)]


PRESETS = {
    "fig1": _fig1,
    "fig2": _fig2,
    "fig4-depth-scan": _fig4,
    "fig5-lr-sweep": _fig5,
    "fig6-stability": _fig6,
    "suppB-mse": _suppB,
    "suppC-ising": _suppC,
}


def get_preset(name: str, seed: int) -> list[PresetAction]:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choices: {sorted(PRESETS)}")
    return PRESETS[name](seed)


def run_stability_job(job: StabilityJob, seed: int, out_dir: str, stem: str) -> list[str]:
    """Train nets on random labels, probe curves, write one CSV per series."""
    train = make_dataset(LabelRule("random"), job.n_train, job.d,
                         derive_seed(seed, "stability", "train"))
    probe = make_dataset(LabelRule("random"), job.n_test, job.d,
                         derive_seed(seed, "stability", "probe"))
    grid = default_v_grid(job.grid_points)
    paths = []

    def emit(label: str, predict) -> None:
        report = stability_curve(predict, probe, grid)
        path = os.path.join(out_dir, f"{stem}-{label}.csv")
        write_stability_csv(report, path)
        paths.append(path)

    for arch in job.archs:
        cfg = NetConfig(d=job.d, L=arch.L, H=arch.H, K=2, init="glorot")
        tcfg = TrainConfig(eta=job.eta, seed=derive_seed(seed, "stability", str(arch)))
        out = train_to_zero_error(cfg, train, tcfg)
        logger.info("stability net %s: converged=%s epochs=%d", arch, out.converged, out.epochs)
        emit(f"net-{arch}", net_classifier(out.params))
    for rule in job.rules:
        emit(f"rule-{rule.describe()}", rule_classifier(rule))
    return paths


def run_preset_action(action: PresetAction, out_dir: str, workers: int = 1,
                      seed: int | None = None) -> list[str]:
    """Execute one action; returns the files written (CSVs then SVG)."""
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []
    if action.mode == "stability":
        job = action.stability
        csvs = run_stability_job(job, seed if seed is not None else 0, out_dir, action.stem)
        written.extend(csvs)
        svg = os.path.join(out_dir, f"{action.stem}.svg")
        emit_plot(csvs, action.plot, svg)
        written.append(svg)
        return written
    spec = action.spec if seed is None else replace(action.spec, seed=seed)
    csv_path = os.path.join(out_dir, f"{action.stem}.csv")
    if action.mode == "sweep":
        lr_sweep(spec, csv_path, workers=workers)
    else:
        run_experiment(spec, csv_path, workers=workers)
    written.append(csv_path)
    svg = os.path.join(out_dir, f"{action.stem}.svg")
    emit_plot(csv_path, action.plot, svg)
    written.append(svg)
    return written
