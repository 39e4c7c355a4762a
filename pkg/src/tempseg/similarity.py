"""Pairwise cosine-similarity maps between pooled feature/probability grids.

The similarity map between two N x C grids is the N x N matrix of cosine
similarities between all location pairs.  It is used by the pair-wise
distillation terms and as the per-frame input to the recurrent encoder.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import ShapeMismatchError, ValidationError


def _normalize_rows(x: torch.Tensor) -> torch.Tensor:
    # Zero-norm rows map to zero with exactly zero gradient: both branches
    # of the torch.where select constants there.
    norms = x.norm(dim=1, keepdim=True)
    nonzero = norms > 0
    num = torch.where(nonzero, x, torch.zeros((), dtype=x.dtype))
    den = torch.where(nonzero, norms, torch.ones((), dtype=x.dtype))
    return num / den


def at_operator(x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
    """Cosine similarity between every row pair of two (N, C) grids -> (N, N)."""
    if x1.ndim != 2 or x2.ndim != 2:
        raise ShapeMismatchError("inputs must be (N, C) matrices")
    if x1.shape[1] != x2.shape[1]:
        raise ShapeMismatchError(
            f"channel counts differ: {x1.shape[1]} vs {x2.shape[1]}"
        )
    if x1.shape[0] != x2.shape[0]:
        raise ShapeMismatchError(
            f"location counts differ: {x1.shape[0]} vs {x2.shape[0]}"
        )
    return _normalize_rows(x1) @ _normalize_rows(x2).T


def pool_to_grid(feature_map: torch.Tensor, target: tuple[int, int]) -> torch.Tensor:
    """Average-pool a (C, H, W) map to target (ph, pw), flattened row-major to (N, C)."""
    if feature_map.ndim != 3:
        raise ShapeMismatchError(
            f"feature map must be (C, H, W), got {tuple(feature_map.shape)}"
        )
    c, h, w = feature_map.shape
    ph, pw = target
    if ph <= 0 or pw <= 0:
        raise ValidationError(f"pooled size must be positive, got {target}")
    if ph > h or pw > w:
        raise ValidationError(
            f"pooled size {target} exceeds input spatial extent {(h, w)}"
        )
    pooled = F.adaptive_avg_pool2d(feature_map.unsqueeze(0), (ph, pw))[0]
    return pooled.permute(1, 2, 0).reshape(ph * pw, c)


def self_similarity(feature_map: torch.Tensor, target: tuple[int, int]) -> torch.Tensor:
    """Pooled self-similarity map of one spatial feature map -> (N, N)."""
    grid = pool_to_grid(feature_map, target)
    return at_operator(grid, grid)
