"""Synthetic feature datasets with known ground-truth quality.

Each video gets a latent quality q ~ U[0,1] and MOS = 100q.  A fixed set
of signal channels carries affine functions of q (plus per-frame noise
scaled by `noise_scale`); every other channel is per-frame noise.  Signal
and noise channels also differ in the temporal variance of their mean
features, so the attention path has something real to pick up.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nrvqa.features import (
    FEATURE_DIM,
    FeatureSequence,
    ManifestRecord,
    write_feature_file,
    write_manifest,
)

MOS_SCALE = 100.0


@dataclass
class SyntheticSpec:
    count: int = 250
    t_min: int = 8
    t_max: int = 64
    signal_channels: int = 64
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.t_min < 1 or self.t_max < self.t_min:
            raise ValueError(f"bad frame range [{self.t_min}, {self.t_max}]")
        if not 1 <= self.signal_channels <= FEATURE_DIM:
            raise ValueError(f"signal channels must be in [1, {FEATURE_DIM}]")
        if self.count < 1:
            raise ValueError("need at least one video")
        if self.noise_scale < 0:
            raise ValueError("noise scale must be nonnegative")


def synth_video(rng: np.random.Generator, spec: SyntheticSpec, signal: np.ndarray,
                video_id: str) -> tuple[FeatureSequence, float]:
    q = float(rng.uniform())
    t = int(rng.integers(spec.t_min, spec.t_max + 1))
    ns = spec.noise_scale
    means = ns * rng.standard_normal((t, FEATURE_DIM))
    stds = np.abs(ns * rng.standard_normal((t, FEATURE_DIM)))
    means[:, signal] = (0.5 + q) + 0.3 * ns * rng.standard_normal((t, len(signal)))
    stds[:, signal] = np.abs(
        0.5 + 1.5 * q + 0.5 * ns * rng.standard_normal((t, len(signal)))
    )
    return FeatureSequence(video_id, means, stds), MOS_SCALE * q


def generate(spec: SyntheticSpec, out_dir, holdout: int = 0):
    """Write feature files plus train (and optional holdout) manifests.

    Returns (train_manifest_path, holdout_manifest_path or None).  The
    holdout videos come from the same distribution as the tail of the run.
    """
    if not 0 <= holdout < spec.count:
        raise ValueError(f"holdout must be in [0, {spec.count})")
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    signal = np.sort(rng.choice(FEATURE_DIM, size=spec.signal_channels, replace=False))
    records = []
    for i in range(spec.count):
        video_id = f"syn-{i:05d}"
        seq, mos = synth_video(rng, spec, signal, video_id)
        write_feature_file(feat_dir / f"{video_id}.gstf", seq)
        # manifests carry paths relative to their own directory, so a
        # generated dataset is byte-identical wherever it lands
        records.append(ManifestRecord(video_id, Path("features") / f"{video_id}.gstf", mos))
    train_path = out_dir / "train.csv"
    write_manifest(train_path, records[: spec.count - holdout])
    holdout_path = None
    if holdout:
        holdout_path = out_dir / "holdout.csv"
        write_manifest(holdout_path, records[spec.count - holdout:])
    return train_path, holdout_path
