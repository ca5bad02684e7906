"""Walk a class/domain-structured image tree and export embedding files.

Folder convention: image_root/<domain>/<class>/*.{jpg,jpeg,png,bmp};
domain and class indices follow sorted directory names. The exporter writes
a bundle (every image embedded, labeled, split-tagged) plus a prompt bank
holding one text row per (domain template, class) composition and one per
class alone, then a provenance JSON describing the run.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .encoders import build_encoder
from .writer import SPLIT_TO_INT, write_bank, write_bundle

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp")


class ManifestError(ValueError):
    pass


@dataclass
class ExtractionManifest:
    image_root: str
    domain_templates: dict           # domain name -> template with one "{}"
    out_bundle: str
    out_bank: str
    out_provenance: str
    classes: list[str] | None = None  # default: sorted class folder names
    class_template: str = "a photo of a {}"
    model: str = "openai/clip-vit-large-patch14"
    image_size: int = 224
    batch_size: int = 64
    splits: dict = field(default_factory=lambda: {"train": 1.0})

    FIELD_NAMES = (
        "image_root", "domain_templates", "out_bundle", "out_bank",
        "out_provenance", "classes", "class_template", "model", "image_size",
        "batch_size", "splits",
    )

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        unknown = sorted(set(data) - set(cls.FIELD_NAMES))
        if unknown:
            raise ManifestError(f"unknown manifest key(s): {unknown}")
        missing = [k for k in ("image_root", "domain_templates", "out_bundle",
                               "out_bank", "out_provenance") if k not in data]
        if missing:
            raise ManifestError(f"missing manifest key(s): {missing}")
        return cls(**data)

    def validate(self):
        if not self.domain_templates:
            raise ManifestError("domain_templates must be nonempty")
        for name, template in {**self.domain_templates,
                               "<class_template>": self.class_template}.items():
            if template.count("{}") != 1:
                raise ManifestError(
                    f"template for {name!r} must contain exactly one '{{}}' "
                    f"placeholder, got {template!r}"
                )
        if self.classes is not None and not self.classes:
            raise ManifestError("classes, when given, must be nonempty")
        if self.image_size < 1:
            raise ManifestError("image_size must be >= 1")
        total = sum(self.splits.values())
        if not self.splits or abs(total - 1.0) > 1e-9:
            raise ManifestError(f"split fractions must sum to 1, got {total}")
        for split in self.splits:
            if split not in SPLIT_TO_INT:
                raise ManifestError(f"unknown split {split!r}")


def _split_for(relpath, splits):
    """Deterministic split assignment from a stable hash of the file path."""
    digest = hashlib.blake2b(relpath.encode("utf-8"), digest_size=8).digest()
    u = int.from_bytes(digest, "little") / 2**64
    acc = 0.0
    names = sorted(splits)
    for name in names:
        acc += splits[name]
        if u < acc:
            return SPLIT_TO_INT[name]
    return SPLIT_TO_INT[names[-1]]


def scan_tree(manifest: ExtractionManifest):
    """Collect (path, domain index, class index) per image, sorted names."""
    root = manifest.image_root
    if not os.path.isdir(root):
        raise ManifestError(f"image root {root!r} is not a directory")
    domains = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    expected = sorted(manifest.domain_templates)
    if domains != expected:
        raise ManifestError(
            f"domain folders {domains} do not match templates {expected}"
        )
    class_set = set()
    for d in domains:
        for c in os.listdir(os.path.join(root, d)):
            if os.path.isdir(os.path.join(root, d, c)):
                class_set.add(c)
    classes = list(manifest.classes) if manifest.classes is not None else sorted(class_set)
    missing = sorted(class_set - set(classes))
    if missing:
        raise ManifestError(f"folder classes {missing} absent from manifest classes")
    if not classes:
        raise ManifestError("no class folders found")

    records = []
    for di, domain in enumerate(domains):
        for ci, cls in enumerate(classes):
            folder = os.path.join(root, domain, cls)
            if not os.path.isdir(folder):
                continue
            for name in sorted(os.listdir(folder)):
                if name.lower().endswith(IMAGE_EXTENSIONS):
                    records.append((os.path.join(folder, name), di, ci))
    if not records:
        raise ManifestError(f"no images found under {root!r}")
    return domains, classes, records


def extract(manifest: ExtractionManifest):
    """Run the export; returns the provenance record."""
    manifest.validate()
    domains, classes, records = scan_tree(manifest)
    encoder = build_encoder(manifest.model, batch_size=manifest.batch_size)

    paths = [r[0] for r in records]
    rows = encoder.encode_images(paths, image_size=manifest.image_size)
    domain_labels = np.array([r[1] for r in records], dtype=np.int32)
    class_labels = np.array([r[2] for r in records], dtype=np.int32)
    split_tags = np.array(
        [
            _split_for(os.path.relpath(p, manifest.image_root), manifest.splits)
            for p in paths
        ],
        dtype=np.int32,
    )

    prompts = [
        manifest.domain_templates[domain].format(cls)
        for domain in domains
        for cls in classes
    ]
    class_prompts = [manifest.class_template.format(cls) for cls in classes]
    dim = rows.shape[1]
    domain_class_text = encoder.encode_texts(prompts).reshape(len(domains), len(classes), dim)
    class_text = encoder.encode_texts(class_prompts)

    write_bundle(
        manifest.out_bundle,
        rows,
        class_labels,
        split_tags,
        classes,
        domains,
        domain_labels,
        manifest.model,
    )
    write_bank(manifest.out_bank, domain_class_text, class_text, domains, classes,
               manifest.model)

    provenance = {
        "model": manifest.model,
        "image_size": manifest.image_size,
        "dim": dim,
        "n_images": len(records),
        "domains": domains,
        "classes": classes,
        "splits": {
            name: int(np.sum(split_tags == SPLIT_TO_INT[name]))
            for name in sorted(manifest.splits)
        },
        "outputs": {
            "bundle": manifest.out_bundle,
            "bank": manifest.out_bank,
        },
    }
    with open(manifest.out_provenance, "w") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return provenance
