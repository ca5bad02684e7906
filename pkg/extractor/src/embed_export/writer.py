"""Standalone writers for the toolkit's binary container formats.

The wire contract (shared with the consumer toolkit, which validates it on
load): 8-byte magic, uint32 little-endian header length, UTF-8 JSON header
whose "arrays" entry lists (name, dtype, shape) in payload order, then the
raw little-endian arrays. Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

BUNDLE_MAGIC = b"EMBNDL01"
BANK_MAGIC = b"PRMBNK01"

SPLIT_TO_INT = {"train": 0, "val": 1, "test": 2}


def write_container(path, magic, header, arrays):
    header = dict(header)
    header["arrays"] = [
        {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}
        for name, arr in arrays
    ]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).tobytes(order="C"))
    os.replace(tmp, path)


def write_bundle(path, rows, class_labels, split_tags, class_names, domain_names,
                 domain_labels, model_id):
    rows = np.ascontiguousarray(rows, dtype=np.float32)
    header = {
        "version": 1,
        "dim": int(rows.shape[1]),
        "n": int(rows.shape[0]),
        "class_names": list(class_names),
        "domain_names": list(domain_names),
        "has_domain_labels": True,
        "normalized": True,
        "model_id": model_id,
    }
    arrays = [
        ("rows", rows),
        ("class_labels", np.ascontiguousarray(class_labels, dtype=np.int32)),
        ("split_tags", np.ascontiguousarray(split_tags, dtype=np.int32)),
        ("domain_labels", np.ascontiguousarray(domain_labels, dtype=np.int32)),
    ]
    write_container(path, BUNDLE_MAGIC, header, arrays)


def write_bank(path, domain_class_text, class_text, domain_names, class_names, model_id):
    domain_class_text = np.ascontiguousarray(domain_class_text, dtype=np.float32)
    class_text = np.ascontiguousarray(class_text, dtype=np.float32)
    header = {
        "version": 1,
        "dim": int(class_text.shape[1]),
        "class_names": list(class_names),
        "domain_names": list(domain_names),
        "model_id": model_id,
    }
    write_container(
        path,
        BANK_MAGIC,
        header,
        [("domain_class_text", domain_class_text), ("class_text", class_text)],
    )
