"""Command-line front end: one video in, one embedding file out."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backbones import Backbone, TAP_LAST, TAP_THIRD, UnsupportedTap
from .extract import LayoutOutOfBounds, extract, load_frame_specs, load_layouts
from .video import VideoSource


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewembed",
        description="Crop lecture-video views and export backbone embeddings",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--video", required=True,
                        help="video file, or a directory of image frames")
    parser.add_argument("--fps", type=float, default=None,
                        help="frame rate override (required for frame directories)")
    parser.add_argument("--layout", required=True,
                        help="JSON sidecar with per-lecture camera/screen boxes")
    parser.add_argument("--lecture", required=True, help="lecture id to process")
    parser.add_argument("--specs", required=True,
                        help="frame-spec JSON-lines (lecture_id, time_s)")
    parser.add_argument("--backbone", choices=["alexnet", "vgg19", "resnet50"],
                        default="alexnet", help="feature extractor architecture")
    parser.add_argument("--tap", choices=[TAP_LAST, TAP_THIRD], default=TAP_LAST,
                        help="which representation to export")
    parser.add_argument("--weights", type=Path, default=None,
                        help="optional state-dict path; default is seeded init")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for the deterministic default weights")
    parser.add_argument("--out", required=True, help="embedding file to write")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level="WARNING", format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        layouts = load_layouts(Path(args.layout))
        if args.lecture not in layouts:
            print(f"UnknownLecture: {args.lecture} not in {args.layout}", file=sys.stderr)
            return 2
        specs = [s for s in load_frame_specs(Path(args.specs))
                 if s.lecture_id == args.lecture]
        backbone = Backbone.create(args.backbone, args.tap, args.weights, args.seed)
        with VideoSource(Path(args.video), fps=args.fps) as video:
            result = extract(video, layouts[args.lecture], backbone, specs,
                             Path(args.out))
        if result.skipped:
            errors_path = Path(f"{args.out}.errors.json")
            errors_path.write_text(json.dumps(result.skipped, indent=2,
                                              sort_keys=True) + "\n")
        print(f"wrote {result.accepted} frames x 2 views to {args.out} "
              f"({len(result.skipped)} skipped)")
        return 0
    except UnsupportedTap as exc:
        print(f"UnsupportedTap: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"MissingInput: {exc}", file=sys.stderr)
        return 2
    except LayoutOutOfBounds as exc:
        print(f"LayoutOutOfBounds: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
