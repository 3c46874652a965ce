"""`wildcensus-infer`: manifest in, detections.jsonl out.

Exit codes mirror the main toolkit: 0 success, 1 validation error, 2 I/O.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .adapter import AdapterConfig, AdapterError, infer_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wildcensus-infer",
        description="Run a detector over a wildcensus manifest")
    parser.add_argument("--weights", required=True,
                        help=".pt (YOLO) or .json (blob detector) weights")
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--out", default="detections.jsonl")
    parser.add_argument("--imgsz", type=int, default=1280)
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--conf-floor", type=float, default=0.01)
    parser.add_argument("--image-root",
                        help="base for relative image paths (default: manifest dir)")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = AdapterConfig(
            weights=args.weights, imgsz=args.imgsz, batch_size=args.batch,
            confidence_floor=args.conf_floor, image_root=args.image_root)
        counters = infer_manifest(config, args.manifest, args.out)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    print(f"infer: {counters['detections']} detections over "
          f"{counters['images']} images ({counters['skipped']} skipped) "
          f"-> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
