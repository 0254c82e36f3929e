"""Synthetic classification tasks with controllable feature locality.

Inputs are i.i.d. standard Gaussian vectors in ``d`` dimensions.  Binary
labels come from one of four rules:

* ``k_local``:  sign of a product of ``k`` fixed coordinates,
* ``k_global``: sign of the cyclic sum of that product over all shifts,
* ``random``:   uniform labels, independent of the input,
* ``ising``:    spin chains labeled by sampling temperature (built in
  :mod:`depthloc.ising`; included here for serialization).

Datasets round-trip through a little-endian binary container (magic
``LOCB``) and export to CSV for interoperability.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

RULE_KINDS = ("k_local", "k_global", "random", "ising")
_KIND_CODES = {kind: code for code, kind in enumerate(RULE_KINDS)}

_MAGIC = b"LOCB"
_VERSION = 1


class DatasetFormatError(ValueError):
    """Malformed or truncated dataset container."""


@dataclass(frozen=True)
class LabelRule:
    """Labeling rule descriptor.

    ``indices`` are 1-based coordinate indices.  For ``k_local`` they
    select the coordinates whose product is thresholded; for
    ``k_global`` they are the offsets of the translation-averaged
    product.  Empty ``indices`` with ``k > 0`` means the default
    ``(1, ..., k)``.
    """

    kind: str
    k: int = 0
    indices: tuple[int, ...] = ()
    beta1: float | None = None
    beta2: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.kind in ("k_local", "k_global"):
            if self.k < 1:
                raise ValueError(f"{self.kind} needs k >= 1, got {self.k}")
            idx = self.resolved_indices()
            if len(idx) != self.k:
                raise ValueError(f"expected {self.k} indices, got {len(idx)}")
            if len(set(idx)) != len(idx):
                raise ValueError(f"duplicate indices in {idx}")
            if min(idx) < 1:
                raise ValueError("indices are 1-based and must be positive")
        if self.kind == "ising" and (self.beta1 is None or self.beta2 is None):
            raise ValueError("ising rule needs beta1 and beta2")

    def resolved_indices(self) -> tuple[int, ...]:
        if self.indices:
            return self.indices
        return tuple(range(1, self.k + 1))

    def validate_dim(self, d: int) -> None:
        if self.kind in ("k_local", "k_global") and max(self.resolved_indices()) > d:
            raise ValueError(f"rule indices {self.resolved_indices()} exceed d={d}")

    def describe(self) -> str:
        if self.kind == "k_local":
            return f"{self.k}-local"
        if self.kind == "k_global":
            return f"{self.k}-global"
        return self.kind


@dataclass(frozen=True)
class DatasetMeta:
    rule: LabelRule
    seed: int


@dataclass
class Dataset:
    """Immutable-by-convention sample container. Labels run 1..K."""

    inputs: np.ndarray
    labels: np.ndarray
    d: int
    K: int
    meta: DatasetMeta = field(repr=False)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def validate(self) -> None:
        if self.inputs.shape != (self.n, self.d):
            raise ValueError(f"inputs shape {self.inputs.shape} != ({self.n}, {self.d})")
        if not np.isfinite(self.inputs).all():
            raise ValueError("non-finite inputs")
        if self.labels.min(initial=1) < 1 or self.labels.max(initial=1) > self.K:
            raise ValueError(f"labels outside 1..{self.K}")


def gen_gaussian_inputs(n: int, d: int, seed: int) -> np.ndarray:
    """(n, d) matrix of i.i.d. N(0, 1) entries, reproducible from seed."""
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    return np.random.default_rng(seed).standard_normal((n, d))


def _local_products(X: np.ndarray, indices: tuple[int, ...]) -> np.ndarray:
    cols = np.asarray(indices, dtype=np.intp) - 1
    return np.prod(X[:, cols], axis=1)


def _global_features(X: np.ndarray, offsets: tuple[int, ...]) -> np.ndarray:
    # Cyclic translation average of the coordinate product: column j of
    # np.roll(X, -i, axis=1) is x_{j+i mod d}, matching 1-based wraparound.
    terms = np.ones_like(X)
    for i in offsets:
        terms = terms * np.roll(X, -i, axis=1)
    return terms.sum(axis=1)


def k_local_label(x: np.ndarray, indices: tuple[int, ...]) -> int:
    """1 when the product of the selected coordinates is >= 0, else 2."""
    prod = _local_products(np.asarray(x, dtype=float)[None, :], indices)[0]
    return 1 if prod >= 0.0 else 2


def k_global_feature(x: np.ndarray, offsets: tuple[int, ...]) -> float:
    """Sum over all cyclic shifts of the product of offset coordinates."""
    return float(_global_features(np.asarray(x, dtype=float)[None, :], offsets)[0])


def k_global_label(x: np.ndarray, offsets: tuple[int, ...]) -> int:
    return 1 if k_global_feature(x, offsets) >= 0.0 else 2


def apply_rule(X: np.ndarray, rule: LabelRule) -> np.ndarray:
    """Vectorized labels for every row of X under a deterministic rule."""
    X = np.asarray(X, dtype=float)
    rule.validate_dim(X.shape[1])
    if rule.kind == "k_local":
        score = _local_products(X, rule.resolved_indices())
    elif rule.kind == "k_global":
        score = _global_features(X, rule.resolved_indices())
    else:
        raise ValueError(f"rule {rule.kind!r} has no deterministic labeling")
    return np.where(score >= 0.0, 1, 2).astype(np.int64)


def make_dataset(rule: LabelRule, n: int, d: int, seed: int) -> Dataset:
    """Gaussian inputs with labels from ``rule``.

    Ising datasets have their own sampler (:func:`depthloc.ising.build_ising_dataset`);
    asking for one here is an error.
    """
    if rule.kind == "ising":
        raise ValueError("ising datasets are built by depthloc.ising.build_ising_dataset")
    rule.validate_dim(d)
    X = gen_gaussian_inputs(n, d, seed)
    if rule.kind == "random":
        labels = np.random.default_rng(seed).integers(1, 3, size=n).astype(np.int64)
    else:
        labels = apply_rule(X, rule)
    return Dataset(X, labels, d=d, K=2, meta=DatasetMeta(rule=rule, seed=seed))


def randomize_labels(ds: Dataset, seed: int) -> Dataset:
    """Same inputs, labels redrawn uniformly from 1..K."""
    labels = np.random.default_rng(seed).integers(1, ds.K + 1, size=ds.n).astype(np.int64)
    meta = DatasetMeta(rule=LabelRule("random"), seed=seed)
    return Dataset(ds.inputs, labels, d=ds.d, K=ds.K, meta=meta)


def write_dataset(ds: Dataset, path: str) -> None:
    """Serialize to the LOCB binary container (little-endian throughout)."""
    ds.validate()
    rule = ds.meta.rule
    idx = rule.resolved_indices() if rule.kind in ("k_local", "k_global") else ()
    head = struct.pack(
        "<4sIIIIBI", _MAGIC, _VERSION, ds.n, ds.d, ds.K, _KIND_CODES[rule.kind], len(idx)
    )
    body = [head]
    if idx:
        body.append(struct.pack(f"<{len(idx)}I", *idx))
    body.append(struct.pack("<Q", ds.meta.seed % 2**64))
    if rule.kind == "ising":
        body.append(struct.pack("<dd", rule.beta1, rule.beta2))
    body.append(np.ascontiguousarray(ds.inputs, dtype="<f8").tobytes())
    body.append(np.ascontiguousarray(ds.labels, dtype="<u4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(body))


def read_dataset(path: str) -> Dataset:
    """Parse a LOCB container, validating structure and label range."""
    with open(path, "rb") as fh:
        raw = fh.read()

    def take(fmt: str, offset: int):
        size = struct.calcsize(fmt)
        if offset + size > len(raw):
            raise DatasetFormatError(f"truncated file: need {offset + size} bytes, have {len(raw)}")
        return struct.unpack_from(fmt, raw, offset), offset + size

    (magic, version, n, d, K, code, k), pos = take("<4sIIIIBI", 0)
    if magic != _MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    if code >= len(RULE_KINDS):
        raise DatasetFormatError(f"unknown rule code {code}")
    kind = RULE_KINDS[code]
    indices: tuple[int, ...] = ()
    if k:
        vals, pos = take(f"<{k}I", pos)
        indices = tuple(int(v) for v in vals)
    (seed,), pos = take("<Q", pos)
    beta1 = beta2 = None
    if kind == "ising":
        (beta1, beta2), pos = take("<dd", pos)
    need = pos + 8 * n * d + 4 * n
    if len(raw) != need:
        raise DatasetFormatError(f"size mismatch: expected {need} bytes, have {len(raw)}")
    X = np.frombuffer(raw, dtype="<f8", count=n * d, offset=pos).reshape(n, d).copy()
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=pos + 8 * n * d).astype(np.int64)
    try:
        rule = LabelRule(kind, k=k, indices=indices, beta1=beta1, beta2=beta2)
    except ValueError as err:
        raise DatasetFormatError(str(err)) from err
    ds = Dataset(X, labels, d=d, K=K, meta=DatasetMeta(rule=rule, seed=int(seed)))
    try:
        ds.validate()
    except ValueError as err:
        raise DatasetFormatError(str(err)) from err
    return ds


def export_csv(ds: Dataset, path: str) -> None:
    """Plain CSV with header x1,...,xd,label."""
    header = ",".join([f"x{i}" for i in range(1, ds.d + 1)] + ["label"])
    table = np.column_stack([ds.inputs, ds.labels.astype(float)])
    np.savetxt(path, table, fmt=["%.17g"] * ds.d + ["%d"], delimiter=",",
               header=header, comments="")
