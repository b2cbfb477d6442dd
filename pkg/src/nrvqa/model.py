"""Full quality model: parameters, forward pass, and ablation variants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nrvqa import autograd as ag
from nrvqa.autograd import Tensor
from nrvqa.attention import AttentionParams, attend
from nrvqa.encoder import EncoderParams, encode
from nrvqa.features import FEATURE_DIM, FeatureSequence
from nrvqa.pyramid import LEVELS, PyramidParams, aggregate_pyramid, frame_weights, q_vid, weight_frames
from nrvqa.regularizer import (
    FEATURE_LEN,
    SIGMA_FLOOR,
    DiscriminatorParams,
    average_features,
    q_reg,
)


@dataclass
class ModelConfig:
    """Structural switches; the defaults are the full model."""

    concat_no_attention: bool = False  # concatenate mean/std instead of attention
    no_distribution: bool = False  # drop the adversarial Gaussian regularization
    no_pyramid: bool = False  # level-1 (global average) aggregation only
    disc_widths: tuple = (16, 8)

    @property
    def encoder_input_dim(self) -> int:
        return 2 * FEATURE_DIM if self.concat_no_attention else FEATURE_DIM

    @property
    def pyramid_levels(self) -> int:
        return 1 if self.no_pyramid else LEVELS


@dataclass
class ModelParams:
    attention: AttentionParams
    encoder: EncoderParams
    pyramid: PyramidParams
    reg_mu: Tensor  # (32,)
    reg_rho: Tensor  # (32,); sigma = softplus(rho) + 1e-3
    disc: DiscriminatorParams
    config: ModelConfig = field(default_factory=ModelConfig)

    @classmethod
    def init(cls, seed: int, config: ModelConfig | None = None) -> "ModelParams":
        config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        rho0 = np.log(np.expm1(1.0 - SIGMA_FLOOR))  # softplus(rho0) + floor == 1
        return cls(
            attention=AttentionParams.init(rng),
            encoder=EncoderParams.init(rng, input_dim=config.encoder_input_dim),
            pyramid=PyramidParams.init(rng, levels=config.pyramid_levels),
            reg_mu=Tensor(np.zeros(FEATURE_LEN), requires_grad=True),
            reg_rho=Tensor(np.full(FEATURE_LEN, rho0), requires_grad=True),
            disc=DiscriminatorParams.init(rng, widths=config.disc_widths),
            config=config,
        )

    def sigma(self) -> Tensor:
        """Strictly positive kernel scale derived from the trained rho."""
        return ag.add(ag.softplus(self.reg_rho), SIGMA_FLOOR)

    def named_generator(self):
        return (self.attention.named() + self.encoder.named() + self.pyramid.named()
                + [("reg.mu", self.reg_mu), ("reg.rho", self.reg_rho)])

    def named_discriminator(self):
        return self.disc.named()

    def named_all(self):
        return self.named_generator() + self.named_discriminator()


@dataclass
class ForwardResult:
    q_vid: Tensor  # scalar
    q_reg: Tensor  # scalar in (0, 1]
    f_avg: Tensor  # (32,)
    f_gru: Tensor  # (T, 32)
    w_att: Tensor | None  # (1472,) or None in the concat variant
    w_gru: Tensor  # (T,)
    f_vid: Tensor  # (32, slots)


def forward(params: ModelParams, seq: FeatureSequence) -> ForwardResult:
    """Run the whole head on one video's features."""
    mean_feats = Tensor(seq.mean_feats)
    std_feats = Tensor(seq.std_feats)
    if params.config.concat_no_attention:
        f_q = ag.concat_cols(mean_feats, std_feats)
        w_att = None
    else:
        attended = attend(mean_feats, std_feats, params.attention)
        f_q = attended.quality
        w_att = attended.weights
    f_gru = encode(f_q, params.encoder)
    f_avg = average_features(f_gru)
    quality_reg = q_reg(f_avg, params.reg_mu, params.sigma())
    w_gru = frame_weights(f_gru, params.pyramid)
    f_wt = weight_frames(f_gru, w_gru)
    f_vid = aggregate_pyramid(f_wt, params.pyramid.levels)
    quality_vid = q_vid(f_vid, params.pyramid)
    return ForwardResult(
        q_vid=quality_vid, q_reg=quality_reg, f_avg=f_avg,
        f_gru=f_gru, w_att=w_att, w_gru=w_gru, f_vid=f_vid,
    )
