"""Stage-2 linear probing: softmax regression on original plus augmented
embeddings, zero-shot initialization, and weight-space ensembling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augnet import batch_forward
from .embedding_store import read_container, write_container
from .errors import ConfigError, DimMismatchError, NonFiniteError
from .zeroshot import ZeroShotHead

PROBE_MAGIC = b"LINPRB01"

INIT_MODES = ("zeros", "zero_shot")


@dataclass
class LinearProbe:
    W: np.ndarray  # C x D
    b: np.ndarray  # C

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimMismatchError("probe W must be C x D with a length-C bias")

    def copy(self):
        return LinearProbe(self.W.copy(), self.b.copy())


@dataclass
class ProbeConfig:
    lr: float = 0.001
    weight_decay: float = 0.05
    epochs: int = 400
    batch_size: int = 512
    init: str = "zeros"
    seed: int = 0

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.init not in INIT_MODES:
            raise ConfigError(f"init must be one of {INIT_MODES}, got {self.init!r}")


def assemble_training_set(rows, labels, aug_nets, normalize_output=True):
    """Concatenate original rows with every net's augmented copy of them.

    Returns (matrix, labels) with M = N * (1 + len(aug_nets)) rows; each
    augmented block repeats the original labels.
    """
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    blocks = [rows]
    label_blocks = [labels]
    for net in aug_nets:
        if net.dim != rows.shape[1]:
            raise DimMismatchError(f"net dim {net.dim} != row width {rows.shape[1]}")
        blocks.append(batch_forward(net, rows, normalize_output))
        label_blocks.append(labels)
    return np.concatenate(blocks), np.concatenate(label_blocks)


def _softmax_ce(W, b, X, y):
    """Mean cross-entropy and the (probs - onehot) residual for the batch."""
    logits = X @ W.T + b
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)
    n = len(y)
    loss = float(-np.mean(np.log(probs[np.arange(n), y])))
    resid = probs
    resid[np.arange(n), y] -= 1.0
    return loss, resid


def train_probe(matrix, labels, config: ProbeConfig, n_classes=None, zs_head=None):
    """Softmax cross-entropy minimized by seeded mini-batch SGD.

    init='zeros' starts from an all-zero probe; init='zero_shot' copies the
    zero-shot head rows into W (bias zero), so an untrained probe scores
    inputs exactly like the head does. Deterministic given config.seed.

    Returns (LinearProbe, history) where history holds one mean-loss entry
    per epoch.
    """
    config.validate()
    X = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ConfigError("training matrix must be nonempty and 2-D")
    if len(y) != X.shape[0]:
        raise DimMismatchError("labels length must match matrix rows")
    C = int(n_classes) if n_classes is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= C:
        raise ConfigError(f"labels must lie in [0, {C})")
    D = X.shape[1]

    if config.init == "zero_shot":
        if zs_head is None:
            raise ConfigError("init='zero_shot' requires a zero-shot head")
        if zs_head.weights.shape != (C, D):
            raise DimMismatchError(
                f"head shape {zs_head.weights.shape} != ({C}, {D})"
            )
        W = zs_head.weights.copy()
    else:
        W = np.zeros((C, D))
    b = np.zeros(C)

    rng = np.random.default_rng(config.seed)
    lr, wd = config.lr, config.weight_decay
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(X.shape[0])
        batch_losses = []
        for start in range(0, X.shape[0], config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, resid = _softmax_ce(W, b, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NonFiniteError(f"non-finite probe loss at epoch {epoch}")
            batch_losses.append(loss)
            resid /= len(idx)
            W -= lr * (resid.T @ X[idx] + wd * W)
            b -= lr * (resid.sum(axis=0) + wd * b)
        history.append({"epoch": epoch, "train_loss": float(np.mean(batch_losses))})
    return LinearProbe(W, b), history


def predict(probe: LinearProbe, x) -> int:
    """argmax_c W_c . x + b_c with lowest-index tie-breaking."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (probe.W.shape[1],):
        raise DimMismatchError(f"x has shape {x.shape}, probe expects ({probe.W.shape[1]},)")
    return int(np.argmax(probe.W @ x + probe.b))


def predict_batch(probe: LinearProbe, rows) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[1] != probe.W.shape[1]:
        raise DimMismatchError("row width does not match probe dimension")
    return np.argmax(rows @ probe.W.T + probe.b, axis=1).astype(np.int64)


def wise_ensemble(probe: LinearProbe, zs_head: ZeroShotHead, mix=0.5) -> LinearProbe:
    """Weight-space average of a trained probe with the zero-shot classifier.

    W' = mix * W_probe + (1 - mix) * W_zs, b' = mix * b_probe (the zero-shot
    side has no bias).
    """
    if not 0.0 <= mix <= 1.0:
        raise ConfigError(f"mix must be in [0, 1], got {mix}")
    if probe.W.shape != zs_head.weights.shape:
        raise DimMismatchError(
            f"probe {probe.W.shape} and head {zs_head.weights.shape} disagree"
        )
    return LinearProbe(mix * probe.W + (1.0 - mix) * zs_head.weights, mix * probe.b)


def save_probe(probe: LinearProbe, path, meta=None):
    header = {"version": 1, "n_classes": probe.W.shape[0], "dim": probe.W.shape[1]}
    if meta:
        header["meta"] = meta
    write_container(
        path,
        PROBE_MAGIC,
        header,
        [("W", probe.W.astype(np.float32)), ("b", probe.b.astype(np.float32))],
    )


def load_probe(path):
    header, arrays = read_container(path, PROBE_MAGIC)
    return LinearProbe(arrays["W"], arrays["b"]), header
