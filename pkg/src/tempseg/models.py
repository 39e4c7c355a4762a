"""Tiny reference segmentation networks and the ground-truth motion provider.

The segmentation nets are plain full-resolution conv stacks: a capacity gap
between the teacher and student presets is all that matters at desk scale.
Forward returns both the pre-classifier feature map and the per-pixel class
probabilities.  The motion provider replays exact synthetic flow instead of
a learned estimator and never produces gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from . import data as data_mod
from .errors import ValidationError

STUDENT_CHANNELS = (16, 32, 16)
TEACHER_CHANNELS = (32, 64, 64, 64, 32)


@dataclass
class SegNetConfig:
    channels: tuple[int, ...] = STUDENT_CHANNELS
    num_classes: int = 4
    in_channels: int = 1
    kernel: int = 3

    def validate(self) -> None:
        if len(self.channels) < 1:
            raise ValidationError("network needs at least one hidden conv layer")
        if self.num_classes < 2:
            raise ValidationError("need at least 2 classes")
        if self.kernel % 2 != 1:
            raise ValidationError("kernel size must be odd")
        if any(c < 1 for c in self.channels):
            raise ValidationError("channel counts must be positive")


class TinySegNet(nn.Module):
    """Full-resolution conv stack: features -> 1x1 classifier -> softmax."""

    def __init__(self, config: SegNetConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        layers = []
        prev = config.in_channels
        for ch in config.channels:
            layers.append(nn.Conv2d(prev, ch, config.kernel, padding=config.kernel // 2))
            prev = ch
        self.body = nn.ModuleList(layers)
        self.classifier = nn.Conv2d(prev, config.num_classes, 1)
        self._reset_parameters(seed)

    def _reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for conv in list(self.body) + [self.classifier]:
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            std = math.sqrt(2.0 / fan_in)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * std)
                conv.bias.zero_()

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, C_in, H, W) -> (features (B, C_f, H, W), probs (B, K, H, W))."""
        h = x
        for conv in self.body:
            h = F.relu(conv(h))
        logits = self.classifier(h)
        return h, torch.softmax(logits, dim=1)

    def predict_frame(self, frame: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Single-frame forward: (C_in, H, W) -> (features, probs), unbatched."""
        feats, probs = self.forward(frame.unsqueeze(0))
        return feats[0], probs[0]

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def tiny_net(config: SegNetConfig, seed: int = 0) -> TinySegNet:
    return TinySegNet(config, seed=seed)


def student_config(num_classes: int, in_channels: int = 1) -> SegNetConfig:
    return SegNetConfig(STUDENT_CHANNELS, num_classes, in_channels)


def teacher_config(num_classes: int, in_channels: int = 1) -> SegNetConfig:
    return SegNetConfig(TEACHER_CHANNELS, num_classes, in_channels)


class GroundTruthFlowEstimator:
    """Replays exact synthetic flow for frame pairs of one clip.

    ``flow(t, s)`` returns the motion from frame t to frame s (t <= s) as a
    fixed (2, H, W) tensor: the stored field for adjacent pairs, zero for
    t == s, and the chained composition for larger gaps.
    """

    def __init__(self, clip: data_mod.VideoClip):
        self.clip = clip

    def flow(self, t: int, s: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        if not (0 <= t < self.clip.length and 0 <= s < self.clip.length):
            raise ValidationError(
                f"frame pair ({t}, {s}) outside clip of length {self.clip.length}"
            )
        if s < t:
            raise ValidationError(
                "backward flow queries are not supported; query (earlier, later)"
            )
        arr = data_mod.chained_flow(self.clip, t, s)
        return torch.from_numpy(arr).to(dtype)
