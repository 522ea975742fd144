"""Pooling heads over the backbone's last convolutional feature map.

Global average pooling collapses each channel to one number, which mixes
features coming from different vertical stripes of the scan. The
position-preserving variant averages over the height axis only, so every
image column keeps its own feature vector: a rib shadow at column c stays a
dark feature at column c instead of just lowering a global mean. The final
linear layer then sees C*W' inputs instead of C, costing extra parameters.
"""

from __future__ import annotations

import torch
from torch import nn


def position_preserving_pool(f: torch.Tensor) -> torch.Tensor:
    """Average over the height axis only, flattened channel-major.

    (C, H, W) -> (C*W,) or (N, C, H, W) -> (N, C*W); out[c*W + w] is the mean
    over h of f[c, h, w].
    """
    if f.dim() == 3:
        return f.mean(dim=1).reshape(-1)
    if f.dim() == 4:
        return f.mean(dim=2).flatten(1)
    raise ValueError(f"expected 3-D or 4-D feature map, got {f.dim()}-D")


def global_average_pool(f: torch.Tensor) -> torch.Tensor:
    """Average over both spatial axes: (C, H, W) -> (C,) or (N, C, H, W) -> (N, C)."""
    if f.dim() == 3:
        return f.mean(dim=(1, 2))
    if f.dim() == 4:
        return f.mean(dim=(2, 3))
    raise ValueError(f"expected 3-D or 4-D feature map, got {f.dim()}-D")


class PositionPreservingPool(nn.Module):
    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return position_preserving_pool(f)


class GlobalAveragePool(nn.Module):
    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return global_average_pool(f)
