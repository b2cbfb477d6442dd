"""Per-video feature files, dataset manifests, and MOS label scaling.

Feature file layout (little-endian throughout):

    magic   4 bytes  b"GSTF"
    version u32      1
    id_len  u32      byte length of the utf-8 video id
    id      bytes
    T       u32      frame count, >= 1
    dim     u32      1472
    means   T*dim f32
    stds    T*dim f32   (elementwise >= 0)

Manifests are UTF-8 CSV with header ``video_id,feature_path,mos``;
relative feature paths resolve against the manifest's directory.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"GSTF"
VERSION = 1
# per-stage channel counts 64+128+256+512+512
FEATURE_DIM = 1472


class FormatError(ValueError):
    """Corrupt or non-conforming feature file; message carries a byte offset."""


class ManifestError(ValueError):
    pass


@dataclass
class FeatureSequence:
    """Mean- and std-pooled multi-scale features for one video's frames."""

    video_id: str
    mean_feats: np.ndarray  # (T, 1472) float32
    std_feats: np.ndarray  # (T, 1472) float32

    def __post_init__(self):
        self.mean_feats = np.ascontiguousarray(self.mean_feats, dtype=np.float32)
        self.std_feats = np.ascontiguousarray(self.std_feats, dtype=np.float32)
        if self.mean_feats.ndim != 2 or self.mean_feats.shape != self.std_feats.shape:
            raise FormatError(
                f"mean/std shapes differ: {self.mean_feats.shape} vs {self.std_feats.shape}"
            )
        if self.mean_feats.shape[1] != FEATURE_DIM:
            raise FormatError(
                f"feature dim must be {FEATURE_DIM}, got {self.mean_feats.shape[1]}"
            )
        if self.frame_count < 1:
            raise FormatError("feature sequence needs at least one frame")
        if np.any(self.std_feats < 0):
            raise FormatError("std features must be nonnegative")

    @property
    def frame_count(self) -> int:
        return self.mean_feats.shape[0]


def write_feature_file(path, seq: FeatureSequence):
    ident = seq.video_id.encode("utf-8")
    t = seq.frame_count
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(ident)))
        fh.write(ident)
        fh.write(struct.pack("<II", t, FEATURE_DIM))
        fh.write(seq.mean_feats.astype("<f4", copy=False).tobytes())
        fh.write(seq.std_feats.astype("<f4", copy=False).tobytes())


def read_feature_file(path) -> FeatureSequence:
    raw = Path(path).read_bytes()

    def need(n: int, offset: int, what: str) -> int:
        if offset + n > len(raw):
            raise FormatError(
                f"{path}: truncated while reading {what} at byte offset {offset}"
            )
        return offset + n

    off = need(4, 0, "magic")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte offset 0")
    off2 = need(4, off, "version")
    (version,) = struct.unpack_from("<I", raw, off)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset {off}")
    off = off2
    off2 = need(4, off, "id length")
    (id_len,) = struct.unpack_from("<I", raw, off)
    off = off2
    off2 = need(id_len, off, "video id")
    video_id = raw[off:off2].decode("utf-8")
    off = off2
    off2 = need(8, off, "frame count and dim")
    t, dim = struct.unpack_from("<II", raw, off)
    if dim != FEATURE_DIM:
        raise FormatError(
            f"{path}: feature dim {dim} != {FEATURE_DIM} at byte offset {off + 4}"
        )
    if t < 1:
        raise FormatError(f"{path}: frame count 0 at byte offset {off}")
    off = off2
    block = t * dim * 4
    off2 = need(block, off, "mean block")
    means = np.frombuffer(raw, dtype="<f4", count=t * dim, offset=off).reshape(t, dim)
    off = off2
    off2 = need(block, off, "std block")
    stds = np.frombuffer(raw, dtype="<f4", count=t * dim, offset=off).reshape(t, dim)
    if off2 != len(raw):
        raise FormatError(f"{path}: {len(raw) - off2} trailing bytes at offset {off2}")
    neg = np.argwhere(stds < 0)
    if neg.size:
        i, j = neg[0]
        raise FormatError(
            f"{path}: negative std entry at frame {i} channel {j}, "
            f"byte offset {off + (i * dim + j) * 4}"
        )
    return FeatureSequence(video_id, means.copy(), stds.copy())


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestRecord:
    video_id: str
    feature_path: Path
    mos: float


def load_manifest(path) -> list[ManifestRecord]:
    """Load a manifest CSV; iteration order equals file order."""
    path = Path(path)
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["video_id", "feature_path", "mos"]:
            raise ManifestError(
                f"{path}: expected header video_id,feature_path,mos, got {reader.fieldnames}"
            )
        for line, row in enumerate(reader, start=2):
            vid = row["video_id"]
            if vid in seen:
                raise ManifestError(f"{path}:{line}: duplicate video_id {vid!r}")
            seen.add(vid)
            feat = Path(row["feature_path"])
            if not feat.is_absolute():
                feat = path.parent / feat
            if not feat.is_file():
                raise ManifestError(f"{path}:{line}: feature file not found: {feat}")
            records.append(ManifestRecord(vid, feat, float(row["mos"])))
    return records


def write_manifest(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "feature_path", "mos"])
        for rec in records:
            writer.writerow([rec.video_id, str(rec.feature_path), repr(rec.mos)])


# ---------------------------------------------------------------------------
# label scaling
# ---------------------------------------------------------------------------

@dataclass
class MosScaler:
    """Affine map between raw MOS and the [0, 1] regression target."""

    y_min: float
    y_max: float

    def __post_init__(self):
        if not self.y_max > self.y_min:
            raise ValueError(f"y_max must exceed y_min, got [{self.y_min}, {self.y_max}]")

    @classmethod
    def fit(cls, raw_scores) -> "MosScaler":
        scores = np.asarray(list(raw_scores), dtype=np.float64)
        return cls(float(scores.min()), float(scores.max()))

    def normalize(self, raw: float) -> float:
        x = (raw - self.y_min) / (self.y_max - self.y_min)
        return float(min(1.0, max(0.0, x)))

    def denormalize(self, pred: float) -> float:
        return float(self.y_min + pred * (self.y_max - self.y_min))
