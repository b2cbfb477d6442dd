"""Writer for the shared binary feature format.

Layout (little-endian): magic "GSTF" | version u32 = 1 | id_len u32 |
id utf-8 | T u32 | dim u32 = 1472 | T*dim f32 means | T*dim f32 stds.
"""

import struct

import numpy as np

MAGIC = b"GSTF"
VERSION = 1
FEATURE_DIM = 1472


def write_gstf(path, video_id: str, means: np.ndarray, stds: np.ndarray):
    means = np.ascontiguousarray(means, dtype=np.float32)
    stds = np.ascontiguousarray(stds, dtype=np.float32)
    if means.ndim != 2 or means.shape != stds.shape or means.shape[1] != FEATURE_DIM:
        raise ValueError(f"bad feature shapes: {means.shape} / {stds.shape}")
    if means.shape[0] < 1:
        raise ValueError("need at least one frame")
    if np.any(stds < 0):
        raise ValueError("std features must be nonnegative")
    ident = video_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(ident)))
        fh.write(ident)
        fh.write(struct.pack("<II", means.shape[0], FEATURE_DIM))
        fh.write(means.astype("<f4", copy=False).tobytes())
        fh.write(stds.astype("<f4", copy=False).tobytes())
