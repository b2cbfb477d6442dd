"""VGG16 backbone with per-stage spatial statistics pooling.

Stage outputs are tapped after the last ReLU of each convolution stage
(just before each max-pool), giving channel counts 64/128/256/512/512.
Convolutions use replicate padding instead of zero padding so spatially
constant inputs stay exactly constant through every stage; interior
activations are unchanged from the stock network.
"""

from __future__ import annotations

import torch
from torch import nn
from torchvision.models import vgg16

STAGE_CHANNELS = (64, 128, 256, 512, 512)
FEATURE_DIM = sum(STAGE_CHANNELS)  # 1472
MIN_FRAME_SIDE = 16  # five stages of pooling need 2^4 pixels

# ImageNet preprocessing used by the pretrained weights
_MEAN = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
_STD = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)


class StagePoolingBackbone(nn.Module):
    """Frozen feature extractor returning per-stage mean/std pooled vectors."""

    def __init__(self, features: nn.Sequential):
        super().__init__()
        self.features = features
        for p in self.features.parameters():
            p.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def forward(self, frame: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Pool one normalized frame (1, 3, H, W) into 1472-dim mean/std vectors."""
        x = frame
        means = []
        stds = []
        taps = 0
        for layer in self.features:
            if isinstance(layer, nn.MaxPool2d):
                means.append(x.mean(dim=(2, 3)))
                stds.append(x.std(dim=(2, 3), unbiased=False))
                taps += 1
            x = layer(x)
        if taps != len(STAGE_CHANNELS):
            raise RuntimeError(f"expected {len(STAGE_CHANNELS)} stages, saw {taps}")
        return torch.cat(means, dim=1)[0], torch.cat(stds, dim=1)[0]


def normalize_frame(rgb: torch.Tensor) -> torch.Tensor:
    """uint8 (H, W, 3) RGB -> normalized float32 (1, 3, H, W)."""
    x = rgb.permute(2, 0, 1).unsqueeze(0).float() / 255.0
    return (x - _MEAN) / _STD


def build_backbone(weights_path=None, random_seed=None) -> StagePoolingBackbone:
    """Assemble the extractor.

    `weights_path` points at a VGG16 state dict (the usual offline route).
    With `random_seed` the backbone is seeded randomly instead, which keeps
    exports deterministic without pretrained weights (test use).  With
    neither, torchvision's pretrained download is attempted.
    """
    if random_seed is not None:
        torch.manual_seed(random_seed)
        model = vgg16(weights=None)
    elif weights_path is not None:
        model = vgg16(weights=None)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    else:
        from torchvision.models import VGG16_Weights

        model = vgg16(weights=VGG16_Weights.IMAGENET1K_V1)
    features = model.features
    for layer in features:
        if isinstance(layer, nn.Conv2d):
            layer.padding_mode = "replicate"
    return StagePoolingBackbone(features)
