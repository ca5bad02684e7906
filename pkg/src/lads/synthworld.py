"""Synthetic joint embedding worlds for desk-scale, ground-truth verification.

Construction: class prototypes p_c, domain offsets o_d, and per-class style
directions r_c are mutually orthogonal unit vectors (seeded Gram-Schmidt).
The preimage of class c in domain d is

    p_c + offset * o_d + style * r_{(c + shift_d) mod C},   shift_d = d - train_domain

so every domain shift is, per class, one exact direction shared by image and
text embeddings: text rows are the normalized preimages and image rows add
isotropic Gaussian noise before normalization. With zero noise each image
equals its text embedding and the image delta between domains equals the
text delta exactly.

The style component is what gives the world teeth: in the training domain
each class co-occurs with its own style direction (a spurious cue a linear
probe will happily exploit), while unseen domains reassign styles cyclically,
so a source-only probe fails there and latent augmentation has something real
to fix. style_scale=0 removes the mechanism and yields a world where a plain
probe already transfers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .embedding_store import EmbeddingBundle, PromptBank, SPLIT_TO_INT, normalize_rows
from .errors import ConfigError

VAL_PER_CLASS_DIVISOR = 5  # val split gets n_per_class_per_domain // 5 rows per class


@dataclass
class WorldConfig:
    dim: int = 64
    classes: int = 10
    domains: int = 2
    train_domain: int = 0
    class_margin: float = 0.0  # reporting threshold for the realized margin
    domain_offset_scale: float = 1.0
    style_scale: float = 1.5
    noise_sigma: float = 0.1
    n_per_class_per_domain: int = 100
    seed: int = 0

    def validate(self):
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.domains < 2:
            raise ConfigError(f"need at least 2 domains, got {self.domains}")
        if not 0 <= self.train_domain < self.domains:
            raise ConfigError(f"train_domain {self.train_domain} out of range")
        n_dirs = self.n_directions()
        if self.dim < n_dirs:
            raise ConfigError(
                f"dim {self.dim} too small for {n_dirs} orthogonal directions"
            )
        for name in ("domain_offset_scale", "style_scale", "noise_sigma", "class_margin"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.n_per_class_per_domain < 1:
            raise ConfigError("n_per_class_per_domain must be >= 1")

    def n_directions(self):
        base = self.classes + self.domains
        return base + (self.classes if self.style_scale > 0 else 0)


@dataclass
class World:
    config: WorldConfig
    bundle: EmbeddingBundle
    bank: PromptBank
    truth: dict


def gram_schmidt_directions(rng, n_dirs, dim):
    """n_dirs orthonormal rows built by modified Gram-Schmidt on seeded draws."""
    basis = np.zeros((n_dirs, dim))
    k = 0
    while k < n_dirs:
        v = rng.standard_normal(dim)
        for j in range(k):
            v -= (v @ basis[j]) * basis[j]
        norm = np.linalg.norm(v)
        if norm > 1e-6:  # redraw on (measure-zero) collinearity
            basis[k] = v / norm
            k += 1
    return basis


def generate_world(config: WorldConfig) -> World:
    """Build the bundle, prompt bank, and ground-truth record for a config."""
    config.validate()
    C, K, D = config.classes, config.domains, config.dim
    rng = np.random.default_rng(config.seed)
    dirs = gram_schmidt_directions(rng, config.n_directions(), D)
    prototypes = dirs[:C]
    offsets = dirs[C : C + K]
    styles = dirs[C + K :] if config.style_scale > 0 else np.zeros((0, D))

    def preimage(c, d):
        v = prototypes[c] + config.domain_offset_scale * offsets[d]
        if config.style_scale > 0:
            shift = (d - config.train_domain) % C
            v = v + config.style_scale * styles[(c + shift) % C]
        return v

    pre = np.stack([np.stack([preimage(c, d) for c in range(C)]) for d in range(K)])
    domain_class_text = normalize_rows(pre.reshape(-1, D)).reshape(K, C, D)
    class_text = prototypes.copy()  # already unit-norm

    class_names = [f"class_{c}" for c in range(C)]
    domain_names = [f"domain_{d}" for d in range(K)]
    bank = PromptBank(
        dim=D,
        domain_class_text=domain_class_text,
        class_text=class_text,
        domain_names=domain_names,
        class_names=class_names,
    )

    def sample(c, d, count):
        raw = np.tile(pre[d, c], (count, 1))
        if config.noise_sigma > 0:
            raw = raw + rng.normal(0.0, config.noise_sigma, size=(count, D))
        return normalize_rows(raw)

    n = config.n_per_class_per_domain
    n_val = max(1, n // VAL_PER_CLASS_DIVISOR)
    rows, cls, dom, split = [], [], [], []
    # fixed generation order: train split, then val, then test (domain-major)
    for tag, counts in (("train", n), ("val", n_val)):
        for c in range(C):
            rows.append(sample(c, config.train_domain, counts))
            cls.append(np.full(counts, c))
            dom.append(np.full(counts, config.train_domain))
            split.append(np.full(counts, SPLIT_TO_INT[tag]))
    for d in range(K):
        for c in range(C):
            rows.append(sample(c, d, n))
            cls.append(np.full(n, c))
            dom.append(np.full(n, d))
            split.append(np.full(n, SPLIT_TO_INT["test"]))

    bundle = EmbeddingBundle(
        dim=D,
        rows=np.concatenate(rows).astype(np.float32),
        class_labels=np.concatenate(cls),
        split_tags=np.concatenate(split),
        class_names=class_names,
        domain_names=domain_names,
        domain_labels=np.concatenate(dom),
    )
    truth = {
        "config": asdict(config),
        "prototypes": prototypes.tolist(),
        "offsets": offsets.tolist(),
        "styles": styles.tolist(),
        "counts": {"train": C * n, "val": C * n_val, "test": K * C * n},
    }
    return World(config=config, bundle=bundle, bank=bank, truth=truth)


def world_summary(world: World) -> dict:
    """Realized statistics: inter-class margin, shift alignment, split counts."""
    bundle, bank, cfg = world.bundle, world.bank, world.config
    ct = bank.class64()
    cos = ct @ ct.T
    np.fill_diagonal(cos, -np.inf)
    min_margin = float(1.0 - cos.max())

    # mean cosine between realized image-mean deltas and text deltas, per
    # (class, unseen domain) over the test split
    test_idx = bundle.split_indices("test")
    rows = bundle.rows64(test_idx)
    labels = bundle.class_labels[test_idx]
    domains = bundle.domain_labels[test_idx]
    dc = bank.domain_class64()
    td = cfg.train_domain
    aligns = []
    for d in range(cfg.domains):
        if d == td:
            continue
        for c in range(cfg.classes):
            m_d = rows[(labels == c) & (domains == d)].mean(axis=0)
            m_t = rows[(labels == c) & (domains == td)].mean(axis=0)
            img_delta = m_d - m_t
            txt_delta = dc[d, c] - dc[td, c]
            denom = np.linalg.norm(img_delta) * np.linalg.norm(txt_delta)
            aligns.append(float(img_delta @ txt_delta / denom))
    counts = {
        name: int(bundle.split_indices(name).size) for name in ("train", "val", "test")
    }
    return {
        "min_interclass_margin": min_margin,
        "margin_ok": min_margin >= cfg.class_margin,
        "mean_shift_alignment": float(np.mean(aligns)),
        "counts": counts,
    }
