"""Command-line entry point: featext extract --images DIR --out FILE."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractionManifest, extract_features


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="featext",
        description="Extract pooled CNN image features into an RSFT file.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="extract features for a directory of images")
    p.add_argument("--images", required=True, help="directory of image files")
    p.add_argument("--out", required=True, help="output RSFT path")
    p.add_argument("--dim", type=int, default=2048)
    p.add_argument("--model", default="resnet50")
    p.add_argument("--weights", default="pretrained",
                   help="'pretrained', 'random', or a state-dict path")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    manifest = ExtractionManifest(
        image_dir=args.images, output_path=args.out, model_name=args.model,
        expected_dim=args.dim, weights=args.weights,
        batch_size=args.batch_size, seed=args.seed,
    )
    try:
        count = extract_features(manifest)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"extract: {count} records, dim {manifest.expected_dim} "
          f"-> {manifest.output_path}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
