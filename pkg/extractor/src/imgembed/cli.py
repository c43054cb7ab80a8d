"""CLI: embed an image directory into the clustering toolkit's file format."""

from __future__ import annotations

import argparse
import sys

from .backbones import BACKBONES
from .extract import extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract",
        description="Embed a directory tree of images into an embedding file "
        "using a pretrained CNN backbone.",
    )
    parser.add_argument("--images", required=True, help="image directory root")
    parser.add_argument("--backbone", default="resnet50", choices=sorted(BACKBONES))
    parser.add_argument(
        "--labels-from-dirs", action="store_true",
        help="take class labels from each image's parent directory name",
    )
    parser.add_argument("--format", default="csv", choices=["csv", "binary"])
    parser.add_argument("--out", required=True, help="output embedding file")
    parser.add_argument(
        "--weights", default="auto",
        help="'auto' (pretrained, may download), 'none' (seeded untrained), or a state-dict path",
    )
    parser.add_argument("--batch-size", type=int, default=16)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = extract(
            args.images,
            backbone=args.backbone,
            output=args.out,
            format=args.format,
            labels_from_dirs=args.labels_from_dirs,
            weights=args.weights,
            batch_size=args.batch_size,
        )
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2
    print(f"embedded {report.extracted} images (d={report.dimension}) -> {args.out}")
    if report.failures:
        print(f"skipped {len(report.failures)} undecodable files (see report)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
