"""Frame decoding and the export pipeline.

Frames keep their native resolution; each is pushed through the backbone
one at a time (bitwise reproducible across batch compositions) and the
pooled vectors are written in frame order.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
import torch

from vqa_export.backbone import MIN_FRAME_SIDE, StagePoolingBackbone, normalize_frame
from vqa_export.gstf import write_gstf

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class ExportError(RuntimeError):
    pass


def _check_size(rgb: np.ndarray, origin: str):
    h, w = rgb.shape[:2]
    if min(h, w) < MIN_FRAME_SIDE:
        raise ExportError(
            f"{origin}: frame {w}x{h} too small for five pooling stages "
            f"(min side {MIN_FRAME_SIDE})"
        )


def iter_video_frames(path: Path, fps: float | None):
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise ExportError(f"cannot decode video: {path}")
    native = cap.get(cv2.CAP_PROP_FPS) or 0.0
    stride = 1
    if fps is not None:
        if native <= 0:
            raise ExportError(f"{path}: no frame rate metadata, cannot subsample")
        stride = max(1, round(native / fps))
    index = 0
    got_any = False
    try:
        while True:
            ok, bgr = cap.read()
            if not ok:
                break
            if index % stride == 0:
                got_any = True
                yield cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
            index += 1
    finally:
        cap.release()
    if not got_any:
        raise ExportError(f"no decodable frames in {path}")


def iter_directory_frames(path: Path, fps: float | None):
    if fps is not None:
        raise ExportError("--fps needs a video input; directories have no frame rate")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ExportError(f"no image frames found in {path}")
    for file in files:
        bgr = cv2.imread(str(file), cv2.IMREAD_COLOR)
        if bgr is None:
            raise ExportError(f"cannot decode frame {file}")
        yield cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def export(input_path, out_path, backbone: StagePoolingBackbone,
           fps: float | None = None, video_id: str | None = None) -> int:
    """Extract features for a video file or frame directory; returns T."""
    input_path = Path(input_path)
    if input_path.is_dir():
        frames = iter_directory_frames(input_path, fps)
    elif input_path.is_file():
        frames = iter_video_frames(input_path, fps)
    else:
        raise ExportError(f"input not found: {input_path}")
    means = []
    stds = []
    for rgb in frames:
        _check_size(rgb, str(input_path))
        tensor = normalize_frame(torch.from_numpy(np.ascontiguousarray(rgb)))
        mean_vec, std_vec = backbone(tensor)
        means.append(mean_vec.numpy())
        stds.append(np.maximum(std_vec.numpy(), 0.0))
    write_gstf(out_path, video_id or input_path.stem,
               np.stack(means), np.stack(stds))
    return len(means)
