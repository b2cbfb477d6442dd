"""CLI: export multi-scale features from a video or frame directory."""

from __future__ import annotations

import argparse
import sys

from vqa_export.backbone import build_backbone
from vqa_export.export import ExportError, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vqa-export",
        description="export per-frame multi-scale pooled features to a GSTF file",
    )
    parser.add_argument("--input", required=True,
                        help="video file or directory of frame images")
    parser.add_argument("--out", required=True, help="output feature file")
    parser.add_argument("--fps", type=float, default=None,
                        help="subsample videos to this frame rate (default: every frame)")
    parser.add_argument("--weights",
                        help="VGG16 state dict; omit to try the torchvision download")
    parser.add_argument("--video-id", help="id stored in the file (default: input stem)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        backbone = build_backbone(weights_path=args.weights)
    except Exception as err:  # noqa: BLE001 - weights loading has many failure modes
        print(f"error: cannot load backbone weights: {err}", file=sys.stderr)
        return 2
    try:
        frames = export(args.input, args.out, backbone, fps=args.fps,
                        video_id=args.video_id)
    except (ExportError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {args.out} ({frames} frames)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
