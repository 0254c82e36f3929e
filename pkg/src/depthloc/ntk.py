"""Infinite-width tangent kernel for deep ReLU networks, and ridge
classification on top of it.

Layer-0 covariance of two inputs is ``S(x,x') = x.x'/d + beta^2``.  With
``P = S(x,x) S(x',x')`` and ``det = P - S^2``, one ReLU layer maps

    Sdot  = 1/2 + arctan(S / sqrt(det)) / pi
    S_new = sqrt(det)/pi + S * Sdot + beta^2

and the tangent kernel of an L-hidden-layer network accumulates as

    T_l = Sdot_l * (T_{l-1} + S_{l-1}),   T_0 = 0,
    Theta = T_L + S_L

where the last line uses the convention that the output layer's
derivative factor is identically one (the output layer is linear); the
alternative that recurses one more derivative factor is available as a
switch.  When ``det`` underflows relative to ``P`` the arctan is replaced
by its exact limit ``sign(S) * pi/2`` and ``sqrt(det)`` by zero, which
keeps diagonal entries exact: ``S(x,x)`` after l layers is
``|x|^2/d + (l+1) beta^2`` to the last bit.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .datasets import Dataset

logger = logging.getLogger(__name__)

_DET_EPS = 1e-24
_MAGIC = b"NTKM"
_VERSION = 1
_CONVENTIONS = ("one", "recurse")


class ModelFormatError(ValueError):
    """Malformed or truncated kernel model file."""


@dataclass(frozen=True)
class NtkSpec:
    """Kernel of a network with ``depth`` hidden ReLU layers.

    ``jitter=None`` resolves to 1e-8 times the mean Gram diagonal at fit
    time; an explicit value is used as an absolute ridge.
    """

    depth: int
    beta: float = 0.1
    jitter: float | None = None
    last_layer: str = "one"

    def __post_init__(self) -> None:
        if self.depth < 0:
            raise ValueError(f"depth must be >= 0, got {self.depth}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.last_layer not in _CONVENTIONS:
            raise ValueError(f"last_layer must be one of {_CONVENTIONS}")


@dataclass
class KernelState:
    """Covariance state of one input pair after ``layer`` ReLU layers."""

    sigma: float
    sigma_xx: float
    sigma_yy: float
    theta_accum: float
    layer: int
    beta: float


@dataclass
class KernelModel:
    spec: NtkSpec
    train_inputs: np.ndarray
    dual_coeffs: np.ndarray
    lam: float

    @property
    def n(self) -> int:
        return self.train_inputs.shape[0]

    @property
    def d(self) -> int:
        return self.train_inputs.shape[1]

    @property
    def K(self) -> int:
        return self.dual_coeffs.shape[1]


def _layer_step(sxx: np.ndarray, syy: np.ndarray, s: np.ndarray, beta: float):
    """One ReLU layer of the covariance recursion, vectorized over pairs.

    sxx (m,) and syy (n,) are current diagonals, s (m, n) the cross
    covariances.  Returns (s_next, s_dot).
    """
    prod = np.multiply.outer(sxx, syy)
    root = np.sqrt(prod)
    rho = np.zeros_like(s)
    np.divide(s, root, out=rho, where=root > 0)
    np.clip(rho, -1.0, 1.0, out=rho)
    det = prod * (1.0 - rho * rho)
    singular = det <= _DET_EPS * prod
    sqrt_det = np.sqrt(np.where(singular, 0.0, det))
    ratio = np.zeros_like(s)
    np.divide(s, sqrt_det, out=ratio, where=~singular)
    atan = np.arctan(ratio)
    atan[singular] = np.sign(s[singular]) * (np.pi / 2)
    s_dot = 0.5 + atan / np.pi
    s_next = sqrt_det / np.pi + s * s_dot + beta * beta
    return s_next, s_dot


def _theta(sxx: np.ndarray, syy: np.ndarray, s: np.ndarray, spec: NtkSpec) -> np.ndarray:
    """Tangent kernel values from layer-0 covariances, in place over s."""
    b2 = spec.beta**2
    accum = np.zeros_like(s)
    for _ in range(spec.depth):
        s_next, s_dot = _layer_step(sxx, syy, s, spec.beta)
        accum += s
        accum *= s_dot
        s = s_next
        sxx = sxx + b2
        syy = syy + b2
    if spec.last_layer == "one":
        return accum + s
    _, s_dot = _layer_step(sxx, syy, s, spec.beta)
    return s_dot * (accum + s)


def _check_pair(x: np.ndarray, xp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if x.ndim != 1 or xp.ndim != 1 or x.shape != xp.shape:
        raise ValueError(f"expected equal-length vectors, got {x.shape} and {xp.shape}")
    return x, xp


def sigma0(x: np.ndarray, xp: np.ndarray, beta: float) -> float:
    """Layer-0 covariance x.x'/d + beta^2."""
    x, xp = _check_pair(x, xp)
    return float(x @ xp / x.size + beta * beta)


def initial_state(x: np.ndarray, xp: np.ndarray, spec: NtkSpec) -> KernelState:
    x, xp = _check_pair(x, xp)
    return KernelState(
        sigma=sigma0(x, xp, spec.beta),
        sigma_xx=sigma0(x, x, spec.beta),
        sigma_yy=sigma0(xp, xp, spec.beta),
        theta_accum=0.0,
        layer=0,
        beta=spec.beta,
    )


def kernel_layer_step(state: KernelState) -> KernelState:
    """Advance the pair state through one ReLU layer."""
    s = np.array([[state.sigma]])
    s_next, s_dot = _layer_step(
        np.array([state.sigma_xx]), np.array([state.sigma_yy]), s, state.beta
    )
    b2 = state.beta**2
    return KernelState(
        sigma=float(s_next[0, 0]),
        sigma_xx=state.sigma_xx + b2,
        sigma_yy=state.sigma_yy + b2,
        theta_accum=float(s_dot[0, 0]) * (state.theta_accum + state.sigma),
        layer=state.layer + 1,
        beta=state.beta,
    )


def ntk_value(x: np.ndarray, xp: np.ndarray, spec: NtkSpec) -> float:
    """Tangent kernel of one input pair."""
    x, xp = _check_pair(x, xp)
    d = x.size
    b2 = spec.beta**2
    sxx = np.array([x @ x / d + b2])
    syy = np.array([xp @ xp / d + b2])
    s = np.array([[x @ xp / d + b2]])
    return float(_theta(sxx, syy, s, spec)[0, 0])


def ntk_value_bias_free(x: np.ndarray, xp: np.ndarray, depth: int) -> float:
    """Zero-bias kernel via the angle recursion.

    cos t_l = (sin t_{l-1} + (pi - t_{l-1}) cos t_{l-1}) / pi with
    Sdot_l = 1 - t_{l-1}/pi; equal to :func:`ntk_value` at beta=0 (with
    the linear-output convention) but free of det/arctan algebra, which
    makes it an independent cross-check.
    """
    x, xp = _check_pair(x, xp)
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(xp))
    if nx == 0.0 or ny == 0.0:
        raise ValueError("bias-free kernel needs nonzero inputs")
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    amp = nx * ny / x.size
    cos_t = min(1.0, max(-1.0, float(x @ xp) / (nx * ny)))
    t = np.arccos(cos_t)
    sig = amp * cos_t
    accum = 0.0
    for _ in range(depth):
        s_dot = 1.0 - t / np.pi
        cos_t = (np.sin(t) + (np.pi - t) * cos_t) / np.pi
        accum = s_dot * (accum + sig)
        sig = amp * cos_t
        t = np.arccos(min(1.0, max(-1.0, cos_t)))
    return accum + sig


def _as_inputs(data: Dataset | np.ndarray) -> np.ndarray:
    X = data.inputs if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected (n, d) inputs, got shape {X.shape}")
    return X


def gram_matrix(data: Dataset | np.ndarray, spec: NtkSpec) -> np.ndarray:
    """Symmetric (n, n) kernel matrix.

    The layer-0 matrix is mirrored from its upper triangle and its
    diagonal written from the same norms used as recursion diagonals,
    so symmetry is bit-exact and diagonal entries take the singular
    (exact) branch.
    """
    X = _as_inputs(data)
    d = X.shape[1]
    b2 = spec.beta**2
    s = X @ X.T / d + b2
    s = np.triu(s) + np.triu(s, 1).T
    diag = np.einsum("ij,ij->i", X, X) / d + b2
    np.fill_diagonal(s, diag)
    return _theta(diag, diag, s, spec)


def cross_gram(
    model_inputs: np.ndarray, X: np.ndarray, spec: NtkSpec, block: int = 1024
) -> np.ndarray:
    """(m, n_train) kernel block between new rows and training rows."""
    Xtr = np.asarray(model_inputs, dtype=float)
    X = _as_inputs(X)
    if X.shape[1] != Xtr.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Xtr.shape[1]}")
    d = X.shape[1]
    b2 = spec.beta**2
    syy = np.einsum("ij,ij->i", Xtr, Xtr) / d + b2
    out = np.empty((X.shape[0], Xtr.shape[0]))
    for lo in range(0, X.shape[0], block):
        part = X[lo : lo + block]
        sxx = np.einsum("ij,ij->i", part, part) / d + b2
        s = part @ Xtr.T / d + b2
        out[lo : lo + part.shape[0]] = _theta(sxx, syy, s, spec)
    return out


def ntk_fit(ds: Dataset, spec: NtkSpec) -> KernelModel:
    """Kernel ridge fit of one-hot labels.

    Solves (K + lam*I) A = Y by Cholesky, falling back to least squares
    if the factorization fails.
    """
    K = gram_matrix(ds, spec)
    lam = spec.jitter if spec.jitter is not None else 1e-8 * float(np.mean(np.diag(K)))
    K[np.diag_indices_from(K)] += lam
    Y = np.zeros((ds.n, ds.K))
    Y[np.arange(ds.n), ds.labels - 1] = 1.0
    try:
        factor = scipy.linalg.cho_factor(K, lower=True, check_finite=False)
        fdiag = np.diag(factor[0])
        logger.debug(
            "gram %dx%d, lam=%.3e, cond~%.3e",
            ds.n, ds.n, lam, (fdiag.max() / fdiag.min()) ** 2,
        )
        coeffs = scipy.linalg.cho_solve(factor, Y, check_finite=False)
    except np.linalg.LinAlgError:
        logger.warning("Cholesky failed at lam=%.3e, using least squares", lam)
        coeffs, *_ = scipy.linalg.lstsq(K, Y)
    return KernelModel(
        spec=replace(spec, jitter=lam),
        train_inputs=np.array(ds.inputs, dtype=float, copy=True),
        dual_coeffs=coeffs,
        lam=lam,
    )


def ntk_decision(model: KernelModel, X: np.ndarray) -> np.ndarray:
    """(m, K) score matrix for rows of X."""
    return cross_gram(model.train_inputs, X, model.spec) @ model.dual_coeffs


def ntk_predict_batch(model: KernelModel, X: np.ndarray) -> np.ndarray:
    """Labels 1..K for rows of X; score ties resolve to the smaller class."""
    return np.argmax(ntk_decision(model, X), axis=1) + 1


def ntk_predict(model: KernelModel, x: np.ndarray) -> int:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected a single input vector, got shape {x.shape}")
    return int(ntk_predict_batch(model, x[None, :])[0])


def save_kernel_model(model: KernelModel, path: str) -> None:
    spec = model.spec
    head = struct.pack(
        "<4sIIdddBIII",
        _MAGIC, _VERSION, spec.depth, spec.beta, model.lam, model.lam,
        _CONVENTIONS.index(spec.last_layer), model.n, model.d, model.K,
    )
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(model.train_inputs, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.dual_coeffs, dtype="<f8").tobytes())


def load_kernel_model(path: str) -> KernelModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    head_fmt = "<4sIIdddBIII"
    head_size = struct.calcsize(head_fmt)
    if len(raw) < head_size:
        raise ModelFormatError("truncated model file")
    magic, version, depth, beta, jitter, lam, conv, n, d, k = struct.unpack_from(head_fmt, raw, 0)
    if magic != _MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise ModelFormatError(f"unsupported version {version}")
    if conv >= len(_CONVENTIONS):
        raise ModelFormatError(f"unknown convention code {conv}")
    need = head_size + 8 * n * d + 8 * n * k
    if len(raw) != need:
        raise ModelFormatError(f"size mismatch: expected {need} bytes, have {len(raw)}")
    X = np.frombuffer(raw, dtype="<f8", count=n * d, offset=head_size).reshape(n, d).copy()
    coeffs = (
        np.frombuffer(raw, dtype="<f8", count=n * k, offset=head_size + 8 * n * d)
        .reshape(n, k)
        .copy()
    )
    spec = NtkSpec(depth=depth, beta=beta, jitter=jitter, last_layer=_CONVENTIONS[conv])
    return KernelModel(spec=spec, train_inputs=X, dual_coeffs=coeffs, lam=lam)
