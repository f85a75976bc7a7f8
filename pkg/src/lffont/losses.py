"""Training objectives.

Adversarial terms use the hinge formulation with the style head and the
character head summed.  Reconstruction terms are means over the batch; the
component-classification term sums cross-entropy over component
occurrences before averaging over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

__all__ = [
    "LossWeights",
    "adv_loss_d",
    "adv_loss_g",
    "l1_loss",
    "feature_matching_loss",
    "component_cls_loss",
    "consistency_loss",
    "group_consistency",
    "total_loss",
]


@dataclass
class LossWeights:
    lambda_l1: float = 1.0
    lambda_feat: float = 0.1
    lambda_cls: float = 0.1
    lambda_consist: float = 0.1

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")


def _heads(scores) -> list[torch.Tensor]:
    heads = list(scores) if isinstance(scores, (tuple, list)) else [scores]
    for h in heads:
        if h.numel() == 0:
            raise ValueError("adversarial loss on an empty batch")
    return heads


def adv_loss_d(real_scores, fake_scores) -> torch.Tensor:
    """mean[relu(1 - D(real))] + mean[relu(1 + D(fake))], summed over heads.

    Scores may be a tensor or a sequence of per-head tensors.
    """
    real, fake = _heads(real_scores), _heads(fake_scores)
    if len(real) != len(fake):
        raise ValueError("real and fake scores have a different number of heads")
    return sum(F.relu(1.0 - r).mean() + F.relu(1.0 + f).mean() for r, f in zip(real, fake))


def adv_loss_g(fake_scores) -> torch.Tensor:
    return sum(-f.mean() for f in _heads(fake_scores))


def l1_loss(generated: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if generated.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(generated.shape)} vs {tuple(target.shape)}")
    return (generated - target).abs().mean()


def feature_matching_loss(real_feats, fake_feats) -> torch.Tensor:
    """Sum over layers of the mean absolute feature difference (real side detached)."""
    real_feats, fake_feats = list(real_feats), list(fake_feats)
    if len(real_feats) != len(fake_feats):
        raise ValueError(f"layer count mismatch: {len(real_feats)} vs {len(fake_feats)}")
    if not real_feats:
        raise ValueError("feature matching needs at least one layer")
    return sum(l1_loss(f, r.detach()) for r, f in zip(real_feats, fake_feats))


def component_cls_loss(cls, features_from_references, ref_labels, features_from_generated,
                       gen_labels, batch_size: int | None = None) -> torch.Tensor:
    """Cross-entropy of `cls` on both feature sets, summed over occurrences.

    Divided by `batch_size` when given (mean over examples).
    """
    parts = []
    for feats, labels in ((features_from_references, ref_labels), (features_from_generated, gen_labels)):
        if feats is None or len(labels) == 0:
            continue
        logits = cls(feats)
        labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device)
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise IndexError(f"component label out of range [0, {logits.shape[1]})")
        parts.append(F.cross_entropy(logits, labels, reduction="sum"))
    if not parts:
        raise ValueError("no features to classify")
    loss = sum(parts)
    return loss / batch_size if batch_size else loss


def group_consistency(factors: torch.Tensor, groups) -> torch.Tensor:
    """Sum over groups of sum_i ||z_i - mean_group||^2."""
    groups = torch.as_tensor(groups, dtype=torch.long, device=factors.device)
    if factors.shape[0] != groups.shape[0]:
        raise ValueError("one group label per factor required")
    if factors.shape[0] == 0:
        raise ValueError("empty group")
    flat = factors.reshape(factors.shape[0], -1)
    uniq, inverse, counts = torch.unique(groups, return_inverse=True, return_counts=True)
    # shift each group by its first member: same value, and identical members give exactly 0
    first = torch.full((len(uniq),), flat.shape[0], dtype=torch.long, device=flat.device)
    first = first.scatter_reduce(0, inverse, torch.arange(flat.shape[0], device=flat.device), "amin")
    d = flat - flat[first][inverse]
    sums = torch.zeros(len(uniq), flat.shape[1], dtype=flat.dtype, device=flat.device)
    sums = sums.index_add(0, inverse, d)
    means = sums / counts[:, None].to(flat.dtype)
    return ((d - means[inverse]) ** 2).sum()


def consistency_loss(style_factors, style_groups, comp_factors, comp_groups,
                     reduction: str = "sum") -> torch.Tensor:
    """Factor consistency: squared distance of every factor to its group mean.

    Style factors are grouped by style label, component factors by component
    label.  `reduction="mean"` divides each side by its element count, which
    keeps the term's scale independent of batch and feature size.
    """
    ls = group_consistency(style_factors, style_groups)
    lu = group_consistency(comp_factors, comp_groups)
    if reduction == "mean":
        return ls / style_factors.numel() + lu / comp_factors.numel()
    if reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return ls + lu


def total_loss(parts: dict, weights: LossWeights, phase: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Weighted generator objective and the discriminator objective.

    `parts` holds adv_g, adv_d, l1, feat, cls, consist (missing keys count as 0).
    Phase 1 ignores the consistency term.
    """
    if phase not in (1, 2):
        raise ValueError(f"phase must be 1 or 2, got {phase}")
    lam_consist = weights.lambda_consist if phase == 2 else 0.0

    def get(name):
        return parts.get(name, 0.0)

    g_total = (
        get("adv_g")
        + weights.lambda_l1 * get("l1")
        + weights.lambda_feat * get("feat")
        + weights.lambda_cls * get("cls")
    )
    if lam_consist:
        g_total = g_total + lam_consist * get("consist")
    return g_total, get("adv_d")
