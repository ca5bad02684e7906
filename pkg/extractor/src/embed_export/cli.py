"""Single-script entry point: embed-export <manifest.json>."""

from __future__ import annotations

import argparse
import json
import sys

from .extract import ExtractionManifest, ManifestError, extract


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Export image and prompt embeddings from a "
                    "<domain>/<class> image tree into bundle + prompt-bank files.",
    )
    parser.add_argument("manifest", help="path to the extraction manifest JSON")
    args = parser.parse_args(argv)
    try:
        manifest = ExtractionManifest.from_json(args.manifest)
        provenance = extract(manifest)
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(provenance, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
