#!/usr/bin/env python3
"""Reference fine-tuning configuration for the deer segmentation model.

Not part of the test surface: running it needs the ultralytics extra, GPU
time, and a prepared dataset export (see `wildcensus` training-set export).
Kept so the detector the adapter bridges can be rebuilt from scratch.

Configuration notes:
- base weights yolov8n-seg, images resized to 1280 x 1280;
- augmentation allows flips and rotation at any angle;
- masks are treated as non-overlapping (two deer instances never share
  pixels), hence overlap_mask=False;
- 440 epochs; in the original run the validation optimum landed at epoch
  340, so keep save_period low enough to recover intermediate checkpoints.
"""

import argparse


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", required=True, help="dataset YAML (YOLO layout)")
    parser.add_argument("--base", default="yolov8n-seg.pt")
    parser.add_argument("--epochs", type=int, default=440)
    parser.add_argument("--imgsz", type=int, default=1280)
    parser.add_argument("--out", default="runs/deer-seg")
    args = parser.parse_args()

    from ultralytics import YOLO

    model = YOLO(args.base)
    model.train(
        data=args.data,
        epochs=args.epochs,
        imgsz=args.imgsz,
        project=args.out,
        fliplr=0.5,
        flipud=0.5,
        degrees=180.0,      # any-angle rotation
        overlap_mask=False,  # instances do not overlap
        save_period=10,
    )


if __name__ == "__main__":
    main()
