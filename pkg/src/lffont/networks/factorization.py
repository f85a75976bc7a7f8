"""Low-rank factorization of component-wise style features.

A feature f with d channels (optionally followed by spatial axes) is mapped
to a k x d factor by k per-channel affine maps,

    z[i] = w[i] * f + b[i],

and a style/component factor pair is recombined by summing their
element-wise product over the k axis.  Weights are shared over spatial
positions.
"""

from __future__ import annotations

import torch
import torch.nn as nn

__all__ = ["Factorizer", "factorize", "reconstruct_feature", "aggregate_localized_style"]


def factorize(weight: torch.Tensor, bias: torch.Tensor, f: torch.Tensor) -> torch.Tensor:
    """Map features (N, d, *spatial) to factors (N, k, d, *spatial)."""
    if weight.dim() != 2 or bias.shape != weight.shape[:1]:
        raise ValueError(f"weight must be (k, d) and bias (k,), got {tuple(weight.shape)} / {tuple(bias.shape)}")
    if f.dim() < 2 or f.shape[1] != weight.shape[1]:
        raise ValueError(f"feature channel dim {tuple(f.shape)[1:2]} does not match weight d={weight.shape[1]}")
    extra = f.dim() - 2
    w = weight.view(1, *weight.shape, *([1] * extra))
    b = bias.view(1, -1, *([1] * (extra + 1)))
    return w * f.unsqueeze(1) + b


def reconstruct_feature(z_style: torch.Tensor, z_comp: torch.Tensor) -> torch.Tensor:
    """Sum over the factor axis of the element-wise product: (N, k, ...) -> (N, ...)."""
    if z_style.shape[1] != z_comp.shape[1]:
        raise ValueError(f"factor size mismatch: k={z_style.shape[1]} vs k={z_comp.shape[1]}")
    if z_style.shape[2:] != z_comp.shape[2:]:
        raise ValueError(f"factor shapes differ: {tuple(z_style.shape)} vs {tuple(z_comp.shape)}")
    return (z_style * z_comp).sum(dim=1)


def aggregate_localized_style(features) -> torch.Tensor:
    """Sum component-wise features of one character (duplicates counted each time)."""
    features = list(features)
    if not features:
        raise ValueError("cannot aggregate an empty component list")
    out = features[0]
    for f in features[1:]:
        if f.shape != out.shape:
            raise ValueError(f"feature shape mismatch: {tuple(f.shape)} vs {tuple(out.shape)}")
        out = out + f
    return out


class Factorizer(nn.Module):
    """Learned per-channel affine maps producing a k x d factor."""

    def __init__(self, k: int, channels: int, role: str = "style"):
        super().__init__()
        if k < 1:
            raise ValueError("factor size k must be >= 1")
        self.k = k
        self.weight = nn.Parameter(torch.empty(k, channels))
        self.bias = nn.Parameter(torch.empty(k))
        # initialised so that reconstruct(F_s(f), F_u(f)) starts close to f
        if role == "style":
            nn.init.normal_(self.weight, 1.0 / k, 0.1 / k)
            nn.init.zeros_(self.bias)
        else:
            nn.init.normal_(self.weight, 0.0, 0.01)
            nn.init.ones_(self.bias)

    def forward(self, f):
        return factorize(self.weight, self.bias, f)
