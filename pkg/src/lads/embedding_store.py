"""Embedding data model, binary file formats, and elementary vector geometry.

The on-disk container is shared by every artifact the toolkit writes:

    8-byte magic | uint32 little-endian header length | UTF-8 JSON header
    | concatenated raw little-endian arrays in the order listed by the
      header's "arrays" entry (name, dtype, shape)

Float payloads are stored as float32 and round-trip bit-exactly; all
arithmetic elsewhere happens in float64.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimMismatchError,
    FormatError,
    LabelError,
    ShapeError,
    ZeroVectorError,
)

EPS_NORM = 1e-12

BUNDLE_MAGIC = b"EMBNDL01"
BANK_MAGIC = b"PRMBNK01"

SPLIT_NAMES = ("train", "val", "test")
SPLIT_TO_INT = {name: i for i, name in enumerate(SPLIT_NAMES)}


def l2_normalize(v):
    """Scale a vector to unit L2 norm, preserving direction.

    Raises ZeroVectorError when the norm is at or below EPS_NORM.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm <= EPS_NORM:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm:.3e}")
    return v / norm


def normalize_rows(m):
    """Row-wise l2_normalize for a 2-D array; raises on any zero row."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms <= EPS_NORM):
        bad = int(np.argmin(norms))
        raise ZeroVectorError(f"row {bad} has norm {norms[bad]:.3e}")
    return m / norms[:, None]


def cosine_similarity(a, b):
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na <= EPS_NORM or nb <= EPS_NORM:
        raise ZeroVectorError("cosine similarity undefined for zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass
class EmbeddingBundle:
    """A dataset of unit-norm image embeddings with labels and split tags.

    rows are stored float32; class/domain labels and split tags are int arrays
    aligned with rows. domain_labels may be None when the source data carries
    no domain annotation.
    """

    dim: int
    rows: np.ndarray
    class_labels: np.ndarray
    split_tags: np.ndarray
    class_names: list[str]
    domain_names: list[str] = field(default_factory=list)
    domain_labels: np.ndarray | None = None

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        self.class_labels = np.ascontiguousarray(self.class_labels, dtype=np.int32)
        self.split_tags = np.ascontiguousarray(self.split_tags, dtype=np.int32)
        if self.domain_labels is not None:
            self.domain_labels = np.ascontiguousarray(self.domain_labels, dtype=np.int32)
        self.validate()

    @property
    def n(self):
        return self.rows.shape[0]

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def n_domains(self):
        return len(self.domain_names)

    def validate(self):
        if self.dim <= 0 or self.rows.ndim != 2:
            raise ShapeError(f"bad rows shape {self.rows.shape} for dim {self.dim}")
        n, d = self.rows.shape
        if n == 0:
            raise ShapeError("bundle must contain at least one row")
        if d != self.dim:
            raise ShapeError(f"rows have width {d}, header says dim={self.dim}")
        for name, arr in (("class_labels", self.class_labels), ("split_tags", self.split_tags)):
            if arr.shape != (n,):
                raise ShapeError(f"{name} has shape {arr.shape}, expected ({n},)")
        if self.class_labels.min() < 0 or self.class_labels.max() >= self.n_classes:
            raise LabelError(
                f"class labels must lie in [0, {self.n_classes}), "
                f"found range [{self.class_labels.min()}, {self.class_labels.max()}]"
            )
        if self.split_tags.min() < 0 or self.split_tags.max() >= len(SPLIT_NAMES):
            raise LabelError("split tags must be 0=train, 1=val, 2=test")
        if self.domain_labels is not None:
            if self.domain_labels.shape != (n,):
                raise ShapeError(f"domain_labels has shape {self.domain_labels.shape}")
            if self.n_domains == 0:
                raise LabelError("domain labels present but no domain names declared")
            if self.domain_labels.min() < 0 or self.domain_labels.max() >= self.n_domains:
                raise LabelError(
                    f"domain labels must lie in [0, {self.n_domains})"
                )

    def split_indices(self, split):
        """Row indices belonging to a named split ('train'|'val'|'test')."""
        if split not in SPLIT_TO_INT:
            raise LabelError(f"unknown split {split!r}")
        return np.flatnonzero(self.split_tags == SPLIT_TO_INT[split])

    def rows64(self, idx=None):
        """Rows (optionally a subset) as float64 for arithmetic."""
        sub = self.rows if idx is None else self.rows[idx]
        return np.asarray(sub, dtype=np.float64)


@dataclass
class PromptBank:
    """Text embeddings for every (domain, class) composition and class alone.

    domain_class_text is K x C x D (prompt "domain + class"); class_text is
    C x D (class name alone). All rows unit-norm.
    """

    dim: int
    domain_class_text: np.ndarray
    class_text: np.ndarray
    domain_names: list[str]
    class_names: list[str]

    def __post_init__(self):
        self.domain_class_text = np.ascontiguousarray(self.domain_class_text, dtype=np.float32)
        self.class_text = np.ascontiguousarray(self.class_text, dtype=np.float32)
        self.validate()

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def n_domains(self):
        return len(self.domain_names)

    def validate(self):
        k, c, d = len(self.domain_names), len(self.class_names), self.dim
        if self.domain_class_text.shape != (k, c, d):
            raise ShapeError(
                f"domain_class_text shape {self.domain_class_text.shape} != ({k}, {c}, {d})"
            )
        if self.class_text.shape != (c, d):
            raise ShapeError(f"class_text shape {self.class_text.shape} != ({c}, {d})")
        flat = self.domain_class_text.reshape(-1, d).astype(np.float64)
        all_rows = np.concatenate([flat, self.class_text.astype(np.float64)])
        norms = np.linalg.norm(all_rows, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-5:
            raise ShapeError("prompt bank rows must be unit-norm within 1e-5")

    def domain_index(self, name):
        try:
            return self.domain_names.index(name)
        except ValueError:
            raise_unknown_domain(name, self.domain_names)

    def domain_class64(self):
        return np.asarray(self.domain_class_text, dtype=np.float64)

    def class64(self):
        return np.asarray(self.class_text, dtype=np.float64)


def raise_unknown_domain(name, known):
    from .errors import UnknownDomainError

    raise UnknownDomainError(f"domain {name!r} not in bank (known: {known})")


# --------------------------------------------------------------------------
# binary container plumbing (shared by bundle / bank / net / probe files)
# --------------------------------------------------------------------------

_DTYPES = {"float32": np.float32, "int32": np.int32}


def write_container(path, magic, header, arrays):
    """Write magic + JSON header + raw arrays; atomic via temp file + rename.

    arrays is a list of (name, ndarray); dtype must be float32 or int32 and
    is recorded in the header together with the shape.
    """
    if len(magic) != 8:
        raise FormatError(f"magic must be 8 bytes, got {magic!r}")
    header = dict(header)
    header["arrays"] = [
        {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}
        for name, arr in arrays
    ]
    for name, arr in arrays:
        if str(arr.dtype) not in _DTYPES:
            raise FormatError(f"array {name!r} has unsupported dtype {arr.dtype}")
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).tobytes(order="C"))
    os.replace(tmp, path)


def read_container(path, magic):
    """Read a container written by write_container; returns (header, arrays)."""
    with open(path, "rb") as fh:
        got = fh.read(8)
        if got != magic:
            raise FormatError(f"bad magic {got!r} in {path} (expected {magic!r})")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise FormatError(f"truncated header length in {path}")
        (hlen,) = struct.unpack("<I", raw_len)
        blob = fh.read(hlen)
        if len(blob) != hlen:
            raise FormatError(f"truncated header in {path}")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"unparseable header in {path}: {exc}") from exc
        payload = fh.read()
    arrays = {}
    offset = 0
    for spec in header.get("arrays", []):
        dtype = _DTYPES.get(spec["dtype"])
        if dtype is None:
            raise FormatError(f"unsupported dtype {spec['dtype']} in {path}")
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ShapeError(
                f"array {spec['name']!r} in {path}: expected {nbytes} bytes, got {len(chunk)}"
            )
        arrays[spec["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise ShapeError(f"{len(payload) - offset} trailing bytes in {path}")
    return header, arrays


def save_bundle(bundle, path):
    """Serialize an EmbeddingBundle to the EMBNDL01 format."""
    bundle.validate()
    header = {
        "version": 1,
        "dim": bundle.dim,
        "n": bundle.n,
        "class_names": bundle.class_names,
        "domain_names": bundle.domain_names,
        "has_domain_labels": bundle.domain_labels is not None,
        "normalized": True,
    }
    arrays = [
        ("rows", bundle.rows),
        ("class_labels", bundle.class_labels),
        ("split_tags", bundle.split_tags),
    ]
    if bundle.domain_labels is not None:
        arrays.append(("domain_labels", bundle.domain_labels))
    write_container(path, BUNDLE_MAGIC, header, arrays)


def load_bundle(path):
    """Load an EMBNDL01 file; re-normalizes rows only if normalized=false."""
    header, arrays = read_container(path, BUNDLE_MAGIC)
    for key in ("dim", "n", "class_names", "normalized"):
        if key not in header:
            raise FormatError(f"missing header field {key!r} in {path}")
    rows = arrays.get("rows")
    if rows is None or rows.shape != (header["n"], header["dim"]):
        raise ShapeError(f"rows payload mismatch in {path}")
    if not header["normalized"]:
        rows = normalize_rows(rows).astype(np.float32)
    bundle = EmbeddingBundle(
        dim=int(header["dim"]),
        rows=rows,
        class_labels=arrays["class_labels"],
        split_tags=arrays["split_tags"],
        class_names=list(header["class_names"]),
        domain_names=list(header.get("domain_names", [])),
        domain_labels=arrays.get("domain_labels"),
    )
    norms = np.linalg.norm(bundle.rows64(), axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-5:
        raise ShapeError(f"loaded rows not unit-norm in {path}; set normalized=false to fix")
    return bundle


def save_bank(bank, path):
    """Serialize a PromptBank to the PRMBNK01 format."""
    bank.validate()
    header = {
        "version": 1,
        "dim": bank.dim,
        "class_names": bank.class_names,
        "domain_names": bank.domain_names,
    }
    write_container(
        path,
        BANK_MAGIC,
        header,
        [("domain_class_text", bank.domain_class_text), ("class_text", bank.class_text)],
    )


def load_bank(path):
    header, arrays = read_container(path, BANK_MAGIC)
    return PromptBank(
        dim=int(header["dim"]),
        domain_class_text=arrays["domain_class_text"],
        class_text=arrays["class_text"],
        domain_names=list(header["domain_names"]),
        class_names=list(header["class_names"]),
    )
