"""Zero-shot classification heads and per-example zero-shot domain labeling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding_store import PromptBank, l2_normalize
from .errors import DimMismatchError, UnknownDomainError

MODES = ("generic", "adaptive")


@dataclass
class ZeroShotHead:
    """A linear classifier whose rows are (averaged) class text embeddings."""

    weights: np.ndarray  # C x D, unit-norm rows
    mode: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)


def build_head(bank: PromptBank, mode: str) -> ZeroShotHead:
    """Build the generic (class name alone) or adaptive (mean over domains) head."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "generic":
        weights = bank.class64()
    else:
        mean = bank.domain_class64().mean(axis=0)  # C x D
        weights = np.stack([l2_normalize(row) for row in mean])
    return ZeroShotHead(weights=weights, mode=mode)


def zero_shot_predict(head: ZeroShotHead, x) -> int:
    """Class index with the highest dot product; ties go to the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (head.weights.shape[1],):
        raise DimMismatchError(f"x has shape {x.shape}, head expects ({head.weights.shape[1]},)")
    return int(np.argmax(head.weights @ x))


def zero_shot_predict_batch(head: ZeroShotHead, rows) -> np.ndarray:
    """Vectorized zero_shot_predict over a row matrix."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[1] != head.weights.shape[1]:
        raise DimMismatchError("row width does not match head dimension")
    return np.argmax(rows @ head.weights.T, axis=1).astype(np.int64)


def assign_domains(bundle, bank: PromptBank, candidate_domains) -> np.ndarray:
    """Zero-shot domain label per row, conditioned on the row's class.

    For row i with class y_i the assigned domain is the candidate d whose
    prompt embedding T(d, y_i) has the largest dot product with the row.
    The assigned domain plays the training-domain role for that row; every
    other candidate becomes an augmentation target.
    """
    candidates = list(candidate_domains)
    if not candidates:
        raise UnknownDomainError("need at least one candidate domain")
    for d in candidates:
        if not 0 <= d < bank.n_domains:
            raise UnknownDomainError(f"domain index {d} not in bank (K={bank.n_domains})")
    if bundle.dim != bank.dim:
        raise DimMismatchError(f"bundle dim {bundle.dim} != bank dim {bank.dim}")
    rows = bundle.rows64()
    prompts = bank.domain_class64()[candidates]  # m x C x D
    # sims[i, j] = rows[i] . prompts[j, class_labels[i]]
    per_class = prompts[:, bundle.class_labels, :]  # m x N x D
    sims = np.einsum("nd,mnd->nm", rows, per_class)
    best = np.argmax(sims, axis=1)
    return np.asarray([candidates[j] for j in best], dtype=np.int64)
