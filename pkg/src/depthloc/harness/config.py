"""Flat key=value experiment configs.

Unknown keys, duplicate keys, missing required keys and malformed
values are all hard errors; silent fallbacks in sweep configs waste
compute and hide typos.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..datasets import LabelRule
from ..evaluation import LrSearchSpec


class ConfigError(ValueError):
    """Bad experiment configuration."""


@dataclass(frozen=True)
class ArchSpec:
    """One model entry: ``LxH`` (MLP), ``perceptron``, or ``ntk:L``."""

    kind: str  # mlp | perceptron | ntk
    L: int = 0
    H: int = 0

    def __str__(self) -> str:
        if self.kind == "mlp":
            return f"{self.L}x{self.H}"
        if self.kind == "ntk":
            return f"ntk:{self.L}"
        return "perceptron"

    @classmethod
    def parse(cls, token: str) -> "ArchSpec":
        token = token.strip()
        if token == "perceptron":
            return cls("perceptron")
        if token.startswith("ntk:"):
            try:
                depth = int(token[4:])
            except ValueError as err:
                raise ConfigError(f"bad arch token {token!r}") from err
            if depth < 0:
                raise ConfigError(f"ntk depth must be >= 0 in {token!r}")
            return cls("ntk", L=depth)
        parts = token.split("x")
        if len(parts) == 2:
            try:
                L, H = int(parts[0]), int(parts[1])
            except ValueError as err:
                raise ConfigError(f"bad arch token {token!r}") from err
            if L < 1 or H < 1:
                raise ConfigError(f"arch {token!r} needs L >= 1 and H >= 1")
            return cls("mlp", L=L, H=H)
        raise ConfigError(f"bad arch token {token!r}")


@dataclass(frozen=True)
class IsingOptions:
    beta1: float = 0.1
    beta2: float = 0.3
    sweeps: int = 1
    burn_in: int = 10


@dataclass
class ExperimentSpec:
    name: str
    rule: LabelRule
    d: int
    n_list: tuple[int, ...]
    archs: tuple[ArchSpec, ...]
    loss: str = "ce"
    repeats: int = 10
    seed: int = 0
    n_test: int = 10000
    eta_grid: tuple[float, ...] | None = None
    beta_ntk: float = 0.1
    jitter: float | None = None
    tuner: LrSearchSpec = field(default_factory=LrSearchSpec)
    ising: IsingOptions = field(default_factory=IsingOptions)

    def __post_init__(self) -> None:
        if not self.n_list:
            raise ConfigError("n_list must be nonempty")
        if not self.archs:
            raise ConfigError("archs must be nonempty")
        if self.loss not in ("ce", "mse"):
            raise ConfigError(f"loss must be ce or mse, got {self.loss!r}")
        if self.repeats < 1 or self.d < 1 or self.n_test < 1:
            raise ConfigError("repeats, d and n_test must be positive")
        self.rule.validate_dim(self.d)


_SCALAR_KEYS = {
    "name", "rule", "d", "k", "indices", "n_list", "archs", "loss", "repeats",
    "seed", "n_test", "eta_grid", "beta_ntk", "jitter",
}
_TUNER_KEYS = {
    "tuner.grid_lo", "tuner.grid_hi", "tuner.coarse_points",
    "tuner.refine_rounds", "tuner.folds", "tuner.cv_max_epochs",
}
_ISING_KEYS = {"ising.beta1", "ising.beta2", "ising.sweeps", "ising.burn_in"}


def _read_pairs(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        key, value = key.strip(), value.strip()
        if key in pairs:
            raise ConfigError(f"duplicate key {key!r}")
        if key not in _SCALAR_KEYS | _TUNER_KEYS | _ISING_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        pairs[key] = value
    return pairs


def _coerce(pairs: dict[str, str], key: str, kind, default=None):
    if key not in pairs:
        return default
    raw = pairs.pop(key)
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as err:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {kind.__name__}") from err


def _coerce_list(pairs: dict[str, str], key: str, kind) -> tuple | None:
    if key not in pairs:
        return None
    raw = pairs.pop(key)
    try:
        return tuple(kind(tok.strip()) for tok in raw.split(",") if tok.strip())
    except ValueError as err:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {kind.__name__} list") from err


def parse_config_text(text: str) -> ExperimentSpec:
    pairs = _read_pairs(text)

    def require(key: str):
        if key not in pairs:
            raise ConfigError(f"missing required key {key!r}")

    for key in ("name", "rule", "d", "n_list", "archs"):
        require(key)
    name = _coerce(pairs, "name", str)
    kind = _coerce(pairs, "rule", str)
    d = _coerce(pairs, "d", int)
    k = _coerce(pairs, "k", int)
    indices = _coerce_list(pairs, "indices", int)

    ising = IsingOptions(
        beta1=_coerce(pairs, "ising.beta1", float, 0.1),
        beta2=_coerce(pairs, "ising.beta2", float, 0.3),
        sweeps=_coerce(pairs, "ising.sweeps", int, 1),
        burn_in=_coerce(pairs, "ising.burn_in", int, 10),
    )
    if kind in ("k_local", "k_global"):
        if k is None:
            raise ConfigError(f"rule {kind!r} requires key 'k'")
    elif kind in ("random", "ising"):
        if k is not None or indices is not None:
            raise ConfigError(f"keys 'k'/'indices' are not valid for rule {kind!r}")
    else:
        raise ConfigError(f"unknown rule {kind!r}")
    try:
        if kind == "ising":
            rule = LabelRule("ising", beta1=ising.beta1, beta2=ising.beta2)
        else:
            rule = LabelRule(kind, k=k or 0, indices=indices or ())
    except ValueError as err:
        raise ConfigError(str(err)) from err

    defaults = LrSearchSpec()
    try:
        tuner = LrSearchSpec(
            grid_lo=_coerce(pairs, "tuner.grid_lo", float, defaults.grid_lo),
            grid_hi=_coerce(pairs, "tuner.grid_hi", float, defaults.grid_hi),
            coarse_points=_coerce(pairs, "tuner.coarse_points", int, defaults.coarse_points),
            refine_rounds=_coerce(pairs, "tuner.refine_rounds", int, defaults.refine_rounds),
            folds=_coerce(pairs, "tuner.folds", int, defaults.folds),
            cv_max_epochs=_coerce(pairs, "tuner.cv_max_epochs", int, defaults.cv_max_epochs),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err

    archs = tuple(ArchSpec.parse(tok) for tok in _coerce(pairs, "archs", str).split(","))
    try:
        spec = ExperimentSpec(
            name=name,
            rule=rule,
            d=d,
            n_list=_coerce_list(pairs, "n_list", int) or (),
            archs=archs,
            loss=_coerce(pairs, "loss", str, "ce"),
            repeats=_coerce(pairs, "repeats", int, 10),
            seed=_coerce(pairs, "seed", int, 0),
            n_test=_coerce(pairs, "n_test", int, 10000),
            eta_grid=_coerce_list(pairs, "eta_grid", float),
            beta_ntk=_coerce(pairs, "beta_ntk", float, 0.1),
            jitter=_coerce(pairs, "jitter", float),
            tuner=tuner,
            ising=ising,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err
    assert not pairs, f"unconsumed keys {sorted(pairs)}"
    return spec


def parse_config(path: str) -> ExperimentSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
