"""Reported metrics: ID/OOD/extended accuracy, per-class and per-domain
breakdowns, class-balanced accuracy, and nearest-neighbor quality scores."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .embedding_store import normalize_rows
from .errors import (
    DimMismatchError,
    EmptyInputError,
    EmptyTestSetError,
    MissingDomainLabelsError,
    RangeError,
)
from .probe import LinearProbe, predict_batch
from .zeroshot import ZeroShotHead, zero_shot_predict_batch


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise DimMismatchError(f"preds {preds.shape} vs labels {labels.shape}")
    if preds.size == 0:
        raise EmptyInputError("accuracy of an empty prediction set is undefined")
    return float(np.mean(preds == labels))


def per_class_accuracy(preds, labels) -> dict[int, float]:
    """Accuracy per class label; classes absent from `labels` are omitted."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0:
        raise EmptyInputError("empty input")
    out = {}
    for c in np.unique(labels):
        mask = labels == c
        out[int(c)] = float(np.mean(preds[mask] == c))
    return out


def per_domain_accuracy(preds, labels, domains) -> dict[int, float]:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    domains = np.asarray(domains)
    if preds.size == 0:
        raise EmptyInputError("empty input")
    out = {}
    for d in np.unique(domains):
        mask = domains == d
        out[int(d)] = float(np.mean(preds[mask] == labels[mask]))
    return out


def class_balanced_accuracy(preds, labels, n_classes=None):
    """Unweighted mean of per-class accuracies.

    Returns (value, missing) where missing lists the class indices (out of
    n_classes, when given) that had no samples and were excluded.
    """
    per_class = per_class_accuracy(preds, labels)
    present = sorted(per_class)
    missing = []
    if n_classes is not None:
        missing = [c for c in range(n_classes) if c not in per_class]
    value = float(np.mean([per_class[c] for c in present]))
    return value, missing


def extended_accuracy(id_acc, ood_acc, weight=0.5) -> float:
    """weight * id + (1 - weight) * ood; all three arguments must be in [0, 1]."""
    for name, v in (("id_acc", id_acc), ("ood_acc", ood_acc), ("weight", weight)):
        if not 0.0 <= v <= 1.0:
            raise RangeError(f"{name} must be in [0, 1], got {v}")
    return float(weight * id_acc + (1.0 - weight) * ood_acc)


def nn_scores(aug_rows, target_domains, source_classes, test_rows, test_domains,
              test_classes, sample_size, seed):
    """Domain-alignment and class-consistency scores via exact cosine NN.

    Draws `sample_size` augmented rows without replacement (seeded), finds
    each one's nearest neighbor in the test set (brute force, ties to the
    lowest test index), and reports the fraction whose neighbor lies in the
    row's target domain / keeps the row's source class.
    """
    aug_rows = np.asarray(aug_rows, dtype=np.float64)
    test_rows = np.asarray(test_rows, dtype=np.float64)
    target_domains = np.asarray(target_domains)
    source_classes = np.asarray(source_classes)
    test_domains = np.asarray(test_domains)
    test_classes = np.asarray(test_classes)
    if test_rows.shape[0] == 0:
        raise EmptyTestSetError("test set is empty")
    if aug_rows.shape[0] == 0:
        raise EmptyInputError("no augmented rows to score")
    if aug_rows.shape[1] != test_rows.shape[1]:
        raise DimMismatchError("augmented and test rows disagree in width")
    if not 1 <= sample_size <= aug_rows.shape[0]:
        raise RangeError(
            f"sample_size must be in [1, {aug_rows.shape[0]}], got {sample_size}"
        )
    rng = np.random.default_rng(seed)
    sel = np.sort(rng.choice(aug_rows.shape[0], size=sample_size, replace=False))
    queries = normalize_rows(aug_rows[sel])
    refs = normalize_rows(test_rows)
    sims = queries @ refs.T
    nn = np.argmax(sims, axis=1)  # first maximum = lowest test-row index
    da = float(np.mean(test_domains[nn] == target_domains[sel]))
    cc = float(np.mean(test_classes[nn] == source_classes[sel]))
    return da, cc


@dataclass
class EvalReport:
    id_acc: float
    ood_acc: float
    extended_acc: float
    per_domain_acc: dict = field(default_factory=dict)
    per_class_acc: dict = field(default_factory=dict)
    balanced_acc: float | None = None
    da_score: float | None = None
    cc_score: float | None = None
    sample_counts: dict = field(default_factory=dict)

    KEY_ORDER = (
        "id_acc",
        "ood_acc",
        "extended_acc",
        "balanced_acc",
        "da_score",
        "cc_score",
        "per_domain_acc",
        "per_class_acc",
        "sample_counts",
    )

    def to_dict(self):
        out = {}
        for key in self.KEY_ORDER:
            val = getattr(self, key)
            if isinstance(val, dict):
                val = {str(k): val[k] for k in sorted(val)}
            out[key] = val
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def model_predictions(model, rows) -> np.ndarray:
    """Predictions of a LinearProbe or ZeroShotHead over a row matrix."""
    if isinstance(model, LinearProbe):
        return predict_batch(model, rows)
    if isinstance(model, ZeroShotHead):
        return zero_shot_predict_batch(model, rows)
    raise TypeError(f"cannot predict with {type(model).__name__}")


def evaluate_pipeline(model, bundle, train_domain, weight=0.5, split="test",
                      da_score=None, cc_score=None) -> EvalReport:
    """ID accuracy on the training domain, OOD averaged over unseen domains,
    and their weighted combination, with per-class/per-domain breakdowns."""
    if bundle.domain_labels is None:
        raise MissingDomainLabelsError("bundle has no domain labels")
    idx = bundle.split_indices(split)
    if idx.size == 0:
        raise EmptyInputError(f"split {split!r} is empty")
    rows = bundle.rows64(idx)
    labels = bundle.class_labels[idx]
    domains = bundle.domain_labels[idx]
    preds = model_predictions(model, rows)

    per_dom = per_domain_accuracy(preds, labels, domains)
    if train_domain not in per_dom:
        raise MissingDomainLabelsError(
            f"split has no rows from training domain {train_domain}"
        )
    id_acc = per_dom[train_domain]
    unseen = [d for d in sorted(per_dom) if d != train_domain]
    if not unseen:
        raise MissingDomainLabelsError("split has no unseen-domain rows")
    ood_acc = float(np.mean([per_dom[d] for d in unseen]))
    balanced, _ = class_balanced_accuracy(preds, labels, n_classes=bundle.n_classes)
    counts = {"total": int(idx.size)}
    for d in sorted(per_dom):
        counts[f"domain_{d}"] = int(np.sum(domains == d))
    return EvalReport(
        id_acc=id_acc,
        ood_acc=ood_acc,
        extended_acc=extended_accuracy(id_acc, ood_acc, weight),
        per_domain_acc=per_dom,
        per_class_acc=per_class_accuracy(preds, labels),
        balanced_acc=balanced,
        da_score=da_score,
        cc_score=cc_score,
        sample_counts=counts,
    )
