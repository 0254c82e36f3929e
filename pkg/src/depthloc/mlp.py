"""Fully connected ReLU classifiers trained by minibatch SGD.

Architectures have L hidden layers of width H (L=0 is a bare linear
map).  Losses are mean cross-entropy or mean squared error against
one-hot targets.  Training runs until the training error hits zero,
checked at fixed epoch intervals, or until an epoch cap.

The ``ntk_scaled`` initialization stores actual weights
``W = scale * w``, ``b = beta * b0`` with ``w, b0`` standard normal,
where ``scale`` is ``sqrt(1/d)`` on the input layer and
``sqrt(2/fan_in)`` elsewhere; :func:`empirical_ntk` computes gradient
inner products with respect to ``w`` and ``b0``.  This makes the first
pre-activation covariance equal ``x.x'/d + beta^2``, the base case of
the analytic recursion in :mod:`depthloc.ntk`, so the empirical kernel
converges to that limit as H grows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .seeding import derive_seed

_INITS = ("glorot", "he", "ntk_scaled")
_MAGIC = b"MLPW"
_VERSION = 1
_LOSSES = ("ce", "mse")
_PREDICT_BLOCK = 2048


class DivergenceError(RuntimeError):
    """Parameters left the finite range during training."""

    def __init__(self, epoch: int):
        super().__init__(f"non-finite parameters after epoch {epoch}")
        self.epoch = epoch


class WeightsFormatError(ValueError):
    """Malformed or truncated weights file."""


@dataclass(frozen=True)
class NetConfig:
    d: int
    L: int
    H: int
    K: int = 2
    init: str = "glorot"
    beta: float = 0.1

    def __post_init__(self) -> None:
        if self.d < 1 or self.K < 2 or self.L < 0:
            raise ValueError(f"bad dimensions d={self.d}, L={self.L}, K={self.K}")
        if self.L >= 1 and self.H < 1:
            raise ValueError("hidden layers need H >= 1")
        if self.init not in _INITS:
            raise ValueError(f"init must be one of {_INITS}")

    def dims(self) -> list[int]:
        return [self.d] + [self.H] * self.L + [self.K]


@dataclass
class NetParams:
    cfg: NetConfig
    weights: list[np.ndarray]  # layer l: (fan_in, fan_out)
    biases: list[np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    eta: float
    batch_size: int = 50
    max_epochs: int = 2500
    check_every: int = 50
    loss: str = "ce"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 0 or self.check_every < 1:
            raise ValueError("bad training sizes")
        if self.loss not in _LOSSES:
            raise ValueError(f"loss must be one of {_LOSSES}")


@dataclass
class TrainOutcome:
    params: NetParams
    epochs: int
    converged: bool
    train_error: float


def _tangent_scale_sq(cfg: NetConfig, layer: int) -> float:
    # Input layer carries 1/d, deeper layers 2/fan_in; the ReLU factor 2
    # is absent at the input, where no activation precedes the weights.
    fan_in = cfg.dims()[layer]
    return (1.0 if layer == 0 else 2.0) / fan_in


def init_params(cfg: NetConfig, seed: int) -> NetParams:
    """Draw fresh parameters; biases start at zero except under ntk_scaled."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    dims = cfg.dims()
    for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if cfg.init == "glorot":
            W = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), (fan_in, fan_out))
            b = np.zeros(fan_out)
        elif cfg.init == "he":
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))
            b = np.zeros(fan_out)
        else:
            W = np.sqrt(_tangent_scale_sq(cfg, layer)) * rng.standard_normal((fan_in, fan_out))
            b = cfg.beta * rng.standard_normal(fan_out)
        weights.append(W)
        biases.append(b)
    return NetParams(cfg=cfg, weights=weights, biases=biases)


def _forward_trace(params: NetParams, X: np.ndarray):
    """Post-activations per layer (zs[0] is the input) and ReLU masks."""
    zs = [X]
    masks = []
    a = X
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        pre = a @ W + b
        mask = pre > 0
        a = np.where(mask, pre, 0.0)
        zs.append(a)
        masks.append(mask)
    logits = a @ params.weights[-1] + params.biases[-1]
    return zs, masks, logits


def forward(params: NetParams, x: np.ndarray) -> np.ndarray:
    """Logits for one input (K,) or a batch (n, K)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != params.cfg.d:
        raise ValueError(f"input dimension {X.shape[1]} != {params.cfg.d}")
    out = _forward_trace(params, X)[2]
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite activations in forward pass")
    return out[0] if single else out


def _as_batch(f: np.ndarray, y) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[None, :]
        y = np.array([y])
    y = np.asarray(y)
    if y.shape != (f.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match logits {f.shape}")
    if y.min() < 1 or y.max() > f.shape[1]:
        raise ValueError(f"labels outside 1..{f.shape[1]}")
    return f, y


def ce_loss(f: np.ndarray, y) -> float:
    """Mean cross entropy, -f_y + log sum_k exp(f_k), stabilized."""
    f, y = _as_batch(f, y)
    m = f.max(axis=1)
    lse = m + np.log(np.exp(f - m[:, None]).sum(axis=1))
    return float(np.mean(lse - f[np.arange(f.shape[0]), y - 1]))


def mse_loss(f: np.ndarray, y) -> float:
    """Mean squared distance to the one-hot target (summed over classes)."""
    f, y = _as_batch(f, y)
    Y = np.zeros_like(f)
    Y[np.arange(f.shape[0]), y - 1] = 1.0
    return float(np.mean(((f - Y) ** 2).sum(axis=1)))


def _loss_delta(logits: np.ndarray, y: np.ndarray, loss: str) -> np.ndarray:
    """d(mean loss)/d(logits) for a batch."""
    n = logits.shape[0]
    Y = np.zeros_like(logits)
    Y[np.arange(n), y - 1] = 1.0
    if loss == "ce":
        m = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - m)
        return (e / e.sum(axis=1, keepdims=True) - Y) / n
    return 2.0 * (logits - Y) / n


def backprop(params: NetParams, batch: tuple[np.ndarray, np.ndarray], loss: str = "ce"):
    """Gradients (dWs, dbs) of the mean batch loss."""
    if loss not in _LOSSES:
        raise ValueError(f"loss must be one of {_LOSSES}")
    X, y = batch
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y).reshape(-1)
    zs, masks, logits = _forward_trace(params, X)
    g = _loss_delta(logits, y, loss)
    dWs = [np.empty(0)] * len(params.weights)
    dbs = [np.empty(0)] * len(params.biases)
    for l in range(len(params.weights) - 1, -1, -1):
        dWs[l] = zs[l].T @ g
        dbs[l] = g.sum(axis=0)
        if l > 0:
            g = (g @ params.weights[l].T) * masks[l - 1]
    return dWs, dbs


def sgd_epoch(
    params: NetParams,
    ds: Dataset,
    tcfg: TrainConfig,
    rng: np.random.Generator,
    epoch: int = 0,
) -> None:
    """One shuffled pass of minibatch SGD, updating params in place.

    The trailing short batch is used with its own mean.  Raises
    :class:`DivergenceError` if any parameter leaves the finite range.
    """
    order = rng.permutation(ds.n)
    X, y = ds.inputs, ds.labels
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for lo in range(0, ds.n, tcfg.batch_size):
            sel = order[lo : lo + tcfg.batch_size]
            dWs, dbs = backprop(params, (X[sel], y[sel]), tcfg.loss)
            for W, b, dW, db in zip(params.weights, params.biases, dWs, dbs):
                W -= tcfg.eta * dW
                b -= tcfg.eta * db
    for W, b in zip(params.weights, params.biases):
        if not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise DivergenceError(epoch)


def net_predict(params: NetParams, X: np.ndarray) -> np.ndarray:
    """Labels 1..K for rows of X; ties resolve to the smaller class."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(X.shape[0], dtype=np.int64)
    for lo in range(0, X.shape[0], _PREDICT_BLOCK):
        logits = _forward_trace(params, X[lo : lo + _PREDICT_BLOCK])[2]
        out[lo : lo + logits.shape[0]] = np.argmax(logits, axis=1) + 1
    return out


def train_error(params: NetParams, ds: Dataset) -> float:
    return float(np.mean(net_predict(params, ds.inputs) != ds.labels))


def train_to_zero_error(cfg: NetConfig, ds: Dataset, tcfg: TrainConfig) -> TrainOutcome:
    """SGD until a checkpoint sees zero training error or the cap is hit.

    Checkpoints fall every ``check_every`` epochs and at the cap; the
    run stops at the first one with no training mistakes.
    """
    if ds.K != cfg.K or ds.d != cfg.d:
        raise ValueError("dataset does not match network config")
    params = init_params(cfg, derive_seed(tcfg.seed, "init"))
    rng = np.random.default_rng(derive_seed(tcfg.seed, "shuffle"))
    err = train_error(params, ds)
    epoch = 0
    while epoch < tcfg.max_epochs:
        sgd_epoch(params, ds, tcfg, rng, epoch)
        epoch += 1
        if epoch % tcfg.check_every == 0 or epoch == tcfg.max_epochs:
            err = train_error(params, ds)
            if err == 0.0:
                return TrainOutcome(params, epoch, True, 0.0)
    return TrainOutcome(params, epoch, False, err)


def empirical_ntk(params: NetParams, x: np.ndarray, xp: np.ndarray) -> np.ndarray:
    """(K, K) tangent kernel of the network at its current parameters.

    Only defined under the ntk_scaled parameterization, where the
    trainable variables are the unscaled ``w`` and ``b0``.
    """
    cfg = params.cfg
    if cfg.init != "ntk_scaled":
        raise ValueError("empirical kernel requires ntk_scaled parameterization")
    X = np.stack([np.asarray(x, dtype=float), np.asarray(xp, dtype=float)])
    if X.shape[1] != cfg.d:
        raise ValueError(f"input dimension {X.shape[1]} != {cfg.d}")
    zs, masks, _ = _forward_trace(params, X)
    n_layers = len(params.weights)
    # J[l] holds d(logits)/d(pre-activation of layer l), shape (2, K, n_l).
    J = np.broadcast_to(np.eye(cfg.K), (2, cfg.K, cfg.K)).copy()
    theta = np.zeros((cfg.K, cfg.K))
    b2 = cfg.beta**2
    for l in range(n_layers - 1, -1, -1):
        jj = J[0] @ J[1].T
        zz = float(zs[l][0] @ zs[l][1])
        theta += _tangent_scale_sq(cfg, l) * zz * jj + b2 * jj
        if l > 0:
            J = (J @ params.weights[l].T) * masks[l - 1][:, None, :]
    return theta


def save_params(params: NetParams, path: str) -> None:
    cfg = params.cfg
    head = struct.pack(
        "<4sIIIIIBd", _MAGIC, _VERSION, cfg.d, cfg.L, cfg.H, cfg.K,
        _INITS.index(cfg.init), cfg.beta,
    )
    with open(path, "wb") as fh:
        fh.write(head)
        for W, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path: str) -> NetParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    head_fmt = "<4sIIIIIBd"
    head_size = struct.calcsize(head_fmt)
    if len(raw) < head_size:
        raise WeightsFormatError("truncated weights file")
    magic, version, d, L, H, K, init_code, beta = struct.unpack_from(head_fmt, raw, 0)
    if magic != _MAGIC:
        raise WeightsFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise WeightsFormatError(f"unsupported version {version}")
    if init_code >= len(_INITS):
        raise WeightsFormatError(f"unknown init code {init_code}")
    try:
        cfg = NetConfig(d=d, L=L, H=H, K=K, init=_INITS[init_code], beta=beta)
    except ValueError as err:
        raise WeightsFormatError(str(err)) from err
    dims = cfg.dims()
    need = head_size + sum(8 * (i * o + o) for i, o in zip(dims[:-1], dims[1:]))
    if len(raw) != need:
        raise WeightsFormatError(f"size mismatch: expected {need} bytes, have {len(raw)}")
    weights, biases = [], []
    pos = head_size
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out, offset=pos)
        pos += 8 * fan_in * fan_out
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=pos)
        pos += 8 * fan_out
        weights.append(W.reshape(fan_in, fan_out).copy())
        biases.append(b.copy())
    return NetParams(cfg=cfg, weights=weights, biases=biases)
