"""Stage-1 augmentation network: forward pass, losses, analytic gradients,
and the seeded mini-batch training loop with validation checkpointing.

The network is a 2-layer ReLU MLP mapping a unit image embedding toward an
unseen domain. It is trained with a convex combination of two objectives:

  * domain alignment   1 - cos(f(x) - x, T(dk, y) - T(d0, y))
    where both deltas are normalized with a small eps added to the
    denominator so f(x) = x stays finite;
  * class consistency  cross-entropy of tau-scaled logits f(x) . T(y)
    against the true class, i.e. the augmented embedding must still be
    recognizable by the class-text rows alone.

All gradients below are derived by hand and verified against central finite
differences in the test suite; arithmetic is float64 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding_store import EPS_NORM, PromptBank, l2_normalize, read_container, write_container
from .errors import (
    ConfigError,
    DegenerateTextError,
    DimMismatchError,
    NonFiniteError,
    ZeroVectorError,
)

AUGNET_MAGIC = b"AUGNET01"

VAL_FRACTION = 0.1


@dataclass
class AugNetParams:
    """Weights of the 2-layer MLP: y = W2 * relu(W1 x + b1) + b2."""

    W1: np.ndarray  # H x D
    b1: np.ndarray  # H
    W2: np.ndarray  # D x H
    b2: np.ndarray  # D

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        h, d = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape != (d, h) or self.b2.shape != (d,):
            raise DimMismatchError("inconsistent parameter shapes")

    @property
    def dim(self):
        return self.W1.shape[1]

    @property
    def hidden(self):
        return self.W1.shape[0]

    def copy(self):
        return AugNetParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def as_list(self):
        return [self.W1, self.b1, self.W2, self.b2]


@dataclass
class AugTrainConfig:
    alpha: float = 0.5
    lr: float = 0.001
    weight_decay: float = 0.05
    epochs: int = 200
    batch_size: int = 512
    temperature: float = 100.0
    eps_dir: float = 1e-8
    seed: int = 0
    normalize_output: bool = True
    hidden_dim: int | None = None  # None -> dim // 2, the 768->384 convention

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.eps_dir <= 0:
            raise ConfigError(f"eps_dir must be positive, got {self.eps_dir}")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")

    def resolved_hidden(self, dim):
        return self.hidden_dim if self.hidden_dim is not None else max(1, dim // 2)


def init_params(dim, hidden, rng) -> AugNetParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    w1 = rng.uniform(-1.0 / np.sqrt(dim), 1.0 / np.sqrt(dim), size=(hidden, dim))
    w2 = rng.uniform(-1.0 / np.sqrt(hidden), 1.0 / np.sqrt(hidden), size=(dim, hidden))
    return AugNetParams(w1, np.zeros(hidden), w2, np.zeros(dim))


def forward(params: AugNetParams, x, normalize_output=True):
    """Apply the MLP to a single embedding; optionally re-normalize the output."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.dim,):
        raise DimMismatchError(f"x has shape {x.shape}, net expects ({params.dim},)")
    y = params.W2 @ np.maximum(params.W1 @ x + params.b1, 0.0) + params.b2
    if normalize_output:
        return l2_normalize(y)
    return y


def batch_forward(params: AugNetParams, rows, normalize_output=True):
    """Vectorized forward over a row matrix; raises on zero output rows."""
    rows = np.asarray(rows, dtype=np.float64)
    f, _ = _forward_cached(params, rows, normalize_output)
    return f


def _forward_cached(params, X, normalize_output):
    Z = X @ params.W1.T + params.b1
    A = np.maximum(Z, 0.0)
    U = A @ params.W2.T + params.b2
    if normalize_output:
        R = np.linalg.norm(U, axis=1, keepdims=True)
        if np.any(R <= EPS_NORM):
            raise ZeroVectorError("MLP produced a zero output row before normalization")
        F = U / R
    else:
        R = None
        F = U
    return F, (Z, A, U, R)


def text_deltas(bank: PromptBank, d0, dk, y, eps_dir):
    """Per-row normalized text-delta directions T(dk, y) - T(d0, y).

    d0/dk may be scalars (broadcast) or per-row arrays of domain indices.
    """
    y = np.asarray(y, dtype=np.int64)
    d0 = np.broadcast_to(np.asarray(d0, dtype=np.int64), y.shape)
    dk = np.broadcast_to(np.asarray(dk, dtype=np.int64), y.shape)
    dc = bank.domain_class64()
    delta = dc[dk, y] - dc[d0, y]
    norms = np.linalg.norm(delta, axis=1)
    if np.any(norms <= EPS_NORM):
        bad = int(np.argmin(norms))
        raise DegenerateTextError(
            f"identical prompts for domains ({d0[bad]}, {dk[bad]}) class {y[bad]}"
        )
    return delta / (norms[:, None] + eps_dir)


def _batch_losses(params, X, y, E, class_text, config):
    """Per-row (da, cc) losses plus the forward cache used by the backward pass."""
    F, cache = _forward_cached(params, X, config.normalize_output)
    delta = F - X
    nd = np.linalg.norm(delta, axis=1, keepdims=True)
    gdir = delta / (nd + config.eps_dir)
    da = 1.0 - np.sum(gdir * E, axis=1)

    logits = config.temperature * (F @ class_text.T)
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)
    cc = -np.log(probs[np.arange(len(y)), y])
    return da, cc, (F, cache, delta, nd, probs)


def domain_alignment_loss(params, x, y_label, bank, train_domain, target_domain,
                          config: AugTrainConfig | None = None):
    """1 - cos between the image delta and the text delta; value in [0, 2]."""
    config = config or AugTrainConfig()
    x = np.asarray(x, dtype=np.float64)
    E = text_deltas(bank, train_domain, target_domain, np.asarray([y_label]), config.eps_dir)
    da, _, _ = _batch_losses(params, x[None, :], np.asarray([y_label]), E,
                             bank.class64(), config)
    return float(da[0])


def class_consistency_loss(params, x, y_label, bank, config: AugTrainConfig | None = None):
    """Cross-entropy of the augmented embedding's class-text logits."""
    config = config or AugTrainConfig()
    x = np.asarray(x, dtype=np.float64)
    class_text = bank.class64()
    if x.shape != (class_text.shape[1],):
        raise DimMismatchError(f"x has shape {x.shape}, bank dim is {class_text.shape[1]}")
    E = np.zeros((1, class_text.shape[1]))  # unused by the cc term
    _, cc, _ = _batch_losses(params, x[None, :], np.asarray([y_label]), E, class_text, config)
    return float(cc[0])


def lads_loss(params, X, y, bank, config: AugTrainConfig, d0, dk):
    """Mean over the batch of alpha * DA + (1 - alpha) * CC."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ConfigError("batch must be nonempty")
    E = text_deltas(bank, d0, dk, y, config.eps_dir)
    da, cc, _ = _batch_losses(params, X, y, E, bank.class64(), config)
    return float(np.mean(config.alpha * da + (1.0 - config.alpha) * cc))


def lads_grad(params, X, y, bank, config: AugTrainConfig, d0, dk) -> AugNetParams:
    """Analytic gradient of lads_loss with the same shapes as the parameters.

    The chain runs through the output normalization (when enabled), the
    delta-normalization of the alignment term, the softmax of the
    consistency term, and the ReLU mask.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ConfigError("batch must be nonempty")
    class_text = bank.class64()
    E = text_deltas(bank, d0, dk, y, config.eps_dir)
    da, cc, (F, cache, delta, nd, probs) = _batch_losses(params, X, y, E, class_text, config)
    Z, A, U, R = cache
    B = X.shape[0]

    # d(da)/d(delta): -E/(nd+eps) + (delta.E)/((nd+eps)^2 * nd) * delta,
    # with nd guarded away from zero (the term vanishes in that limit).
    nde = nd + config.eps_dir
    dot_de = np.sum(delta * E, axis=1, keepdims=True)
    nd_guard = np.maximum(nd, EPS_NORM)
    d_da = -E / nde + (dot_de / (nde**2 * nd_guard)) * delta

    onehot = np.zeros_like(probs)
    onehot[np.arange(B), y] = 1.0
    d_cc = config.temperature * (probs - onehot) @ class_text

    dF = (config.alpha * d_da + (1.0 - config.alpha) * d_cc) / B

    if config.normalize_output:
        # F = U / ||U||: dU = (dF - (F . dF) F) / ||U||
        dU = (dF - np.sum(F * dF, axis=1, keepdims=True) * F) / R
    else:
        dU = dF

    db2 = dU.sum(axis=0)
    dW2 = dU.T @ A
    dA = dU @ params.W2
    dZ = dA * (Z > 0.0)
    db1 = dZ.sum(axis=0)
    dW1 = dZ.T @ X
    return AugNetParams(dW1, db1, dW2, db2)


@dataclass
class AugTrainResult:
    params: AugNetParams
    history: list = field(default_factory=list)
    best_epoch: int = 0


def train_augnet(rows, labels, bank, config: AugTrainConfig, d0, dk) -> AugTrainResult:
    """Mini-batch SGD with decoupled weight decay and val-loss checkpointing.

    A fixed fraction of the rows is held out (seeded) as the validation
    subset; after every epoch the combined loss is evaluated on it and the
    parameters from the best epoch (including epoch 0, the initialization)
    are returned. Fully deterministic given config.seed.
    """
    config.validate()
    X = np.asarray(rows, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise ConfigError("training set must be nonempty")
    if X.shape[1] != bank.dim:
        raise DimMismatchError(f"rows dim {X.shape[1]} != bank dim {bank.dim}")
    d0 = np.broadcast_to(np.asarray(d0, dtype=np.int64), y.shape).copy()
    dk = np.broadcast_to(np.asarray(dk, dtype=np.int64), y.shape).copy()

    rng = np.random.default_rng(config.seed)
    # generator order is part of the contract: holdout permutation, then init
    perm = rng.permutation(n)
    n_val = min(max(1, round(VAL_FRACTION * n)), n - 1) if n > 1 else 0
    val_idx, fit_idx = perm[:n_val], perm[n_val:]
    if n_val == 0:
        val_idx = fit_idx
    params = init_params(X.shape[1], config.resolved_hidden(X.shape[1]), rng)

    def full_loss(idx):
        return lads_loss(params, X[idx], y[idx], bank, config, d0[idx], dk[idx])

    history = [{"epoch": 0, "train_loss": full_loss(fit_idx), "val_loss": full_loss(val_idx)}]
    _check_finite(history[0]["val_loss"], epoch=0)
    best = params.copy()
    best_val = history[0]["val_loss"]
    best_epoch = 0

    lr, wd = config.lr, config.weight_decay
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(fit_idx))
        batch_losses = []
        for start in range(0, len(fit_idx), config.batch_size):
            idx = fit_idx[order[start : start + config.batch_size]]
            loss = lads_loss(params, X[idx], y[idx], bank, config, d0[idx], dk[idx])
            _check_finite(loss, epoch=epoch)
            batch_losses.append(loss)
            grads = lads_grad(params, X[idx], y[idx], bank, config, d0[idx], dk[idx])
            for p, g in zip(params.as_list(), grads.as_list()):
                p -= lr * (g + wd * p)
        val_loss = full_loss(val_idx)
        _check_finite(val_loss, epoch=epoch)
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(batch_losses)), "val_loss": val_loss}
        )
        if val_loss < best_val:
            best_val = val_loss
            best = params.copy()
            best_epoch = epoch
    return AugTrainResult(params=best, history=history, best_epoch=best_epoch)


def _check_finite(loss, epoch):
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss} at epoch {epoch}; lower the learning rate")


def save_augnet(params: AugNetParams, path, normalize_output=True, meta=None):
    header = {
        "version": 1,
        "dim": params.dim,
        "hidden": params.hidden,
        "normalize_output": bool(normalize_output),
    }
    if meta:
        header["meta"] = meta
    write_container(
        path,
        AUGNET_MAGIC,
        header,
        [
            ("W1", params.W1.astype(np.float32)),
            ("b1", params.b1.astype(np.float32)),
            ("W2", params.W2.astype(np.float32)),
            ("b2", params.b2.astype(np.float32)),
        ],
    )


def load_augnet(path):
    """Returns (AugNetParams, header)."""
    header, arrays = read_container(path, AUGNET_MAGIC)
    params = AugNetParams(arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"])
    return params, header
