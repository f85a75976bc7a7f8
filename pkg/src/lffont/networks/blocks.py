"""Building blocks shared by the encoders, generator and discriminator."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import spectral_norm


def init_weights(module: nn.Module) -> None:
    """Zero-mean Gaussian init with fan-in scaling (He init for ReLU-family nets)."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            weight = m.parametrizations.weight.original if hasattr(m, "parametrizations") else m.weight
            fan_in = weight[0].numel()
            nn.init.normal_(weight, 0.0, math.sqrt(2.0 / fan_in))
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def _norm(kind: str, ch: int) -> nn.Module:
    if kind == "in":
        return nn.InstanceNorm2d(ch, affine=True)
    if kind == "none":
        return nn.Identity()
    raise ValueError(f"unknown norm {kind!r}")


class ConvAct(nn.Module):
    def __init__(self, cin, cout, stride=1, kernel=3, act=True, sn=False, norm="none"):
        super().__init__()
        self.conv = _conv(cin, cout, kernel, stride, sn)
        self.norm = _norm(norm, cout)
        self.act = nn.LeakyReLU(0.2) if act else nn.Identity()

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


def _conv(cin, cout, kernel=3, stride=1, sn=False):
    conv = nn.Conv2d(cin, cout, kernel, stride, kernel // 2)
    return spectral_norm(conv) if sn else conv


class ResBlock(nn.Module):
    def __init__(self, ch, sn=False, norm="none"):
        super().__init__()
        self.n1 = _norm(norm, ch)
        self.c1 = _conv(ch, ch, sn=sn)
        self.n2 = _norm(norm, ch)
        self.c2 = _conv(ch, ch, sn=sn)

    def forward(self, x):
        h = self.c1(F.leaky_relu(self.n1(x), 0.2))
        h = self.c2(F.leaky_relu(self.n2(h), 0.2))
        return x + h


class ComponentConditioning(nn.Module):
    """Adds a learned per-component channel bias to a feature map.

    `comp_ids=None` skips the bias entirely (unconditioned pass).
    """

    def __init__(self, n_components: int, channels: int):
        super().__init__()
        self.bias = nn.Embedding(n_components, channels)
        nn.init.normal_(self.bias.weight, 0.0, 0.1)

    def forward(self, h, comp_ids=None):
        if comp_ids is None:
            return h
        if comp_ids.numel() and (int(comp_ids.min()) < 0 or int(comp_ids.max()) >= self.bias.num_embeddings):
            raise IndexError(f"component id out of range [0, {self.bias.num_embeddings})")
        return h + self.bias(comp_ids)[:, :, None, None]


class GlobalContext(nn.Module):
    """Global-context block: attention-pooled context, transformed and added back."""

    def __init__(self, ch, reduction=4):
        super().__init__()
        mid = max(1, ch // reduction)
        self.key = nn.Conv2d(ch, 1, 1)
        self.transform = nn.Sequential(
            nn.Conv2d(ch, mid, 1), nn.LayerNorm([mid, 1, 1]), nn.ReLU(), nn.Conv2d(mid, ch, 1)
        )

    def forward(self, x):
        n, c, h, w = x.shape
        attn = torch.softmax(self.key(x).view(n, 1, h * w), dim=-1)
        context = torch.bmm(x.view(n, c, h * w), attn.transpose(1, 2)).view(n, c, 1, 1)
        return x + self.transform(context)


class CBAM(nn.Module):
    """Channel attention followed by spatial attention."""

    def __init__(self, ch, reduction=4, kernel=7):
        super().__init__()
        mid = max(1, ch // reduction)
        self.mlp = nn.Sequential(nn.Linear(ch, mid), nn.ReLU(), nn.Linear(mid, ch))
        self.spatial = nn.Conv2d(2, 1, kernel, 1, kernel // 2)

    def forward(self, x):
        avg = self.mlp(x.mean(dim=(2, 3)))
        mx = self.mlp(x.amax(dim=(2, 3)))
        x = x * torch.sigmoid(avg + mx)[:, :, None, None]
        s = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return x * torch.sigmoid(self.spatial(s))
