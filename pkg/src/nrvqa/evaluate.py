"""Checkpoint evaluation: per-video scores, fused scores, and agreement metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from nrvqa import autograd as ag
from nrvqa.features import read_feature_file
from nrvqa.metrics import logistic_fit, krocc, plcc_rmse, srocc
from nrvqa.model import forward
from nrvqa.pyramid import fuse_scores
from nrvqa.trainer import Checkpoint

SWEEP_GRID = [round(0.2 * i, 1) for i in range(10)]  # 0.0 .. 1.8


@dataclass
class VideoScores:
    video_id: str
    q_vid: float  # normalized scale
    q_reg: float
    mos: float  # raw scale


@dataclass
class EvalReport:
    fusion_lambda: float
    count: int
    srocc: float
    krocc: float
    plcc: float
    rmse: float
    beta: np.ndarray
    fit_converged: bool

    def rows(self):
        rows = [
            ("fusion_lambda", self.fusion_lambda),
            ("count", self.count),
            ("srocc", self.srocc),
            ("krocc", self.krocc),
            ("plcc", self.plcc),
            ("rmse", self.rmse),
        ]
        rows += [(f"beta{i + 1}", float(b)) for i, b in enumerate(self.beta)]
        rows.append(("fit_converged", int(self.fit_converged)))
        return rows


def score_videos(ckpt: Checkpoint, records) -> list[VideoScores]:
    out = []
    for rec in records:
        seq = read_feature_file(rec.feature_path)
        with ag.no_grad():
            result = forward(ckpt.params, seq)
        out.append(VideoScores(rec.video_id, result.q_vid.item(),
                               result.q_reg.item(), rec.mos))
    return out


def report_from_scores(scores, scaler, fusion_lambda: float) -> EvalReport:
    preds = np.array([
        scaler.denormalize(fuse_scores(s.q_vid, s.q_reg, fusion_lambda))
        for s in scores
    ])
    subjective = np.array([s.mos for s in scores])
    fit = logistic_fit(preds, subjective)
    plcc, rmse = plcc_rmse(preds, subjective, fit)
    return EvalReport(
        fusion_lambda=fusion_lambda,
        count=len(scores),
        srocc=srocc(preds, subjective),
        krocc=krocc(preds, subjective),
        plcc=plcc,
        rmse=rmse,
        beta=fit.beta,
        fit_converged=fit.converged,
    )


def evaluate(ckpt: Checkpoint, records, fusion_lambda: float = 0.0) -> EvalReport:
    return report_from_scores(score_videos(ckpt, records), ckpt.scaler, fusion_lambda)


def sweep(ckpt: Checkpoint, records) -> list[EvalReport]:
    """Reports over the fusion weight grid 0.0 to 1.8 in steps of 0.2."""
    scores = score_videos(ckpt, records)
    return [report_from_scores(scores, ckpt.scaler, lam) for lam in SWEEP_GRID]


def predict(ckpt: Checkpoint, feature_path, fusion_lambda: float | None = None) -> float:
    """Raw-scale score for one feature file (video head unless fusing)."""
    seq = read_feature_file(feature_path)
    with ag.no_grad():
        result = forward(ckpt.params, seq)
    if fusion_lambda is None:
        value = result.q_vid.item()
    else:
        value = fuse_scores(result.q_vid.item(), result.q_reg.item(), fusion_lambda)
    return ckpt.scaler.denormalize(value)


def write_report_csv(path, report: EvalReport):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in report.rows():
            writer.writerow([name, value])


def write_sweep_csv(path, reports):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "srocc", "krocc", "plcc", "rmse"])
        for r in reports:
            writer.writerow([r.fusion_lambda, r.srocc, r.krocc, r.plcc, r.rmse])
