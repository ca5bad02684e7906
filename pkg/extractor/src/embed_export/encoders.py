"""Joint image/text encoders behind one small interface.

Two backends:

* ``hash:<dim>`` — a deterministic toy encoder for tests and dry runs. Images
  embed through fixed-seed random projection of their 16x16 grayscale pixels;
  text embeds through a blake2b-seeded Gaussian draw. No correspondence
  between modalities beyond determinism; useful only to exercise the export
  pipeline end to end.
* any other identifier — treated as a Hugging Face CLIP checkpoint (e.g.
  ``openai/clip-vit-large-patch14``) and loaded lazily through transformers.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image


def _l2(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


class HashEncoder:
    """Deterministic stand-in encoder; dim comes from the model id."""

    PIXEL_SIDE = 16

    def __init__(self, dim):
        self.dim = int(dim)
        if self.dim < 1:
            raise ValueError(f"hash encoder dim must be >= 1, got {dim}")
        proj_rng = np.random.default_rng(self.dim)
        self._proj = proj_rng.standard_normal((self.PIXEL_SIDE * self.PIXEL_SIDE, self.dim))

    def encode_images(self, paths, image_size=224):
        rows = np.zeros((len(paths), self.dim))
        for i, path in enumerate(paths):
            with Image.open(path) as img:
                small = img.convert("L").resize((self.PIXEL_SIDE, self.PIXEL_SIDE))
            pixels = np.asarray(small, dtype=np.float64).ravel() / 255.0
            rows[i] = pixels @ self._proj
        return _l2(rows)

    def encode_texts(self, texts):
        rows = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
            seed = int.from_bytes(digest, "little")
            rows[i] = np.random.default_rng(seed).standard_normal(self.dim)
        return _l2(rows)


class ClipEncoder:
    """Pretrained joint vision-language encoder via transformers."""

    def __init__(self, model_id, batch_size=64):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise RuntimeError(
                "the clip backend needs `pip install embed-export[clip]`"
            ) from exc
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_id).eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.batch_size = batch_size
        self.dim = int(self.model.config.projection_dim)

    def encode_images(self, paths, image_size=224):
        torch = self._torch
        out = []
        for start in range(0, len(paths), self.batch_size):
            chunk = paths[start : start + self.batch_size]
            images = []
            for path in chunk:
                with Image.open(path) as img:
                    images.append(img.convert("RGB").resize((image_size, image_size)))
            inputs = self.processor(images=images, return_tensors="pt")
            with torch.no_grad():
                feats = self.model.get_image_features(**inputs)
            out.append(feats.double().cpu().numpy())
        return _l2(np.concatenate(out))

    def encode_texts(self, texts):
        torch = self._torch
        out = []
        for start in range(0, len(texts), self.batch_size):
            chunk = list(texts[start : start + self.batch_size])
            inputs = self.processor(text=chunk, return_tensors="pt", padding=True)
            with torch.no_grad():
                feats = self.model.get_text_features(**inputs)
            out.append(feats.double().cpu().numpy())
        return _l2(np.concatenate(out))


def build_encoder(model_id, batch_size=64):
    if model_id.startswith("hash:"):
        return HashEncoder(model_id.split(":", 1)[1])
    return ClipEncoder(model_id, batch_size=batch_size)
