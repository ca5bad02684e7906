"""Embedding exporter: image trees + prompt templates in, bundle and
prompt-bank files out."""

from .encoders import ClipEncoder, HashEncoder, build_encoder
from .extract import ExtractionManifest, ManifestError, extract, scan_tree

__version__ = "0.1.0"
