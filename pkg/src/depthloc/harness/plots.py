"""SVG renderings of result tables.

Output is deterministic: fixed hash salt, no timestamp metadata, series
drawn in sorted label order.  Every series polyline carries a
``series-<label>`` gid and every error bar an ``errbar-<label>-<j>``
gid, so files are diffable and element counts are testable.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

PLOT_KINDS = ("error_vs_N", "error_vs_depth", "error_vs_eta", "stability")

_AXES = {
    "error_vs_N": ("N", "test error", "log"),
    "error_vs_depth": ("L", "test error", "linear"),
    "error_vs_eta": ("eta", "test error", "log"),
    "stability": ("v", "s(v)", "log"),
}


def _read_csv(path: str, required: set[str]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        if not required <= fields:
            raise ValueError(f"{path}: columns {sorted(fields)} lack {sorted(required - fields)}")
        return list(reader)


def _model_depth(model: str) -> int:
    if model == "perceptron":
        return 0
    if model.startswith("ntk:"):
        return int(model[4:])
    return int(model.split("x")[0])


def _model_family(model: str) -> str:
    if model == "perceptron" or model.startswith("ntk:"):
        return model
    return f"H={model.split('x')[1]}"


def _series_from_results(paths: list[str], kind: str):
    rows = [row for path in paths
            for row in _read_csv(path, {"experiment", "model", "n", "eta",
                                        "test_error", "status"})]
    rows = [row for row in rows if row["test_error"] != ""]
    if kind == "error_vs_eta":
        reference = [row for row in rows
                     if row["model"].startswith("ntk:") and row["status"] == "ok"]
        rows = [row for row in rows if row["status"] == "ok" and row["eta"] != ""]
    else:
        reference = []
    grouped: dict[str, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        if kind == "error_vs_N":
            label, x = f"{row['experiment']}/{row['model']}", float(row["n"])
        elif kind == "error_vs_depth":
            label, x = f"{row['experiment']}/{_model_family(row['model'])}", float(
                _model_depth(row["model"]))
        else:
            label, x = f"{row['experiment']}/{row['model']}", float(row["eta"])
        grouped[label][x].append(float(row["test_error"]))
    series = {}
    for label, bucket in grouped.items():
        xs = np.array(sorted(bucket))
        means = np.array([np.mean(bucket[x]) for x in xs])
        stds = np.array([np.std(bucket[x]) for x in xs])
        counts = np.array([len(bucket[x]) for x in xs])
        series[label] = (xs, means, stds, counts)
    refs = {f"{row['experiment']}/{row['model']}": float(row["test_error"])
            for row in reference}
    return series, refs


def _series_from_stability(paths: list[str]):
    series = {}
    for path in paths:
        rows = _read_csv(path, {"v", "s"})
        label = os.path.splitext(os.path.basename(path))[0]
        xs = np.array([float(row["v"]) for row in rows])
        ys = np.array([float(row["s"]) for row in rows])
        order = np.argsort(xs)
        series[label] = (xs[order], ys[order], np.zeros(xs.size), np.ones(xs.size, int))
    return series, {}


def emit_plot(csv_in: str | list[str], kind: str, out_path: str) -> str:
    """Render one figure kind from results CSVs to a self-contained SVG."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"kind must be one of {PLOT_KINDS}, got {kind!r}")
    paths = [csv_in] if isinstance(csv_in, str) else list(csv_in)
    if not paths:
        raise ValueError("no input files")
    if kind == "stability":
        series, refs = _series_from_stability(paths)
    else:
        series, refs = _series_from_results(paths, kind)
    if not series and not refs:
        raise ValueError("no plottable rows in input")

    with matplotlib.rc_context({"svg.hashsalt": "depthloc"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.2))
        try:
            xlabel, ylabel, xscale = _AXES[kind]
            for label in sorted(series):
                xs, means, stds, counts = series[label]
                (line,) = ax.plot(xs, means, marker="o", markersize=4, label=label)
                line.set_gid(f"series-{label}")
                color = line.get_color()
                for j, (x, m, s, c) in enumerate(zip(xs, means, stds, counts)):
                    if c < 2:
                        continue
                    bar, = ax.plot([x, x], [m - s, m + s], color=color, linewidth=1.2)
                    bar.set_gid(f"errbar-{label}-{j}")
            for label in sorted(refs):
                ref = ax.axhline(refs[label], linestyle=":", linewidth=1.2, label=label)
                ref.set_gid(f"series-{label}")
            ax.set_xscale(xscale)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            ax.grid(True, alpha=0.3)
            if series or refs:
                ax.legend(fontsize=8)
            fig.savefig(out_path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return out_path


def write_stability_csv(report, path: str) -> None:
    """Two-column v,s table for one stability curve."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["v", "s"])
        for v, s in zip(report.v, report.s):
            writer.writerow([f"{v:.12g}", f"{s:.12g}"])
