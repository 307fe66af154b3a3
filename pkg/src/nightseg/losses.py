"""Mask-classification losses: assignment, dice/BCE/CE, and the combined loss.

Ground truth is decomposed into one binary segment per class present.
Each segment is assigned to a distinct prototype by minimum-cost matching
(class probability + BCE + dice costs); matched prototypes are supervised
with dice and BCE on their mask plane, and all prototypes receive a
cross-entropy target (matched -> segment class, unmatched -> "no object").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "LossWeights",
    "hungarian_match",
    "dice_loss",
    "bce_loss",
    "ce_loss",
    "decompose_gt",
    "matching_costs",
    "total_loss",
]


@dataclass
class LossWeights:
    cls: float = 2.0
    bce: float = 5.0
    dice: float = 5.0


def hungarian_match(cost) -> np.ndarray:
    """Min-cost one-to-one assignment of G columns to distinct rows of cost[N, G].

    Returns proto_for_segment[G]. Shortest-augmenting-path form with row
    and column potentials; requires N >= G.
    """
    c = cost.data if isinstance(cost, Tensor) else np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"hungarian_match: expects a 2-D cost matrix, got shape {c.shape}")
    n, g = c.shape
    if g > n:
        raise ValueError(f"hungarian_match: more segments ({g}) than prototypes ({n})")
    if not np.all(np.isfinite(c)):
        raise ValueError("hungarian_match: cost matrix contains non-finite values")

    a = c.T  # rows = segments (the scarce side), cols = prototypes
    INF = np.inf
    u = np.zeros(g + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)   # p[j] = segment (1-based) matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, g + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    proto_for_segment = np.full(g, -1, dtype=np.int64)
    for j in range(1, n + 1):
        if p[j]:
            proto_for_segment[p[j] - 1] = j - 1
    return proto_for_segment


def dice_loss(pred: Tensor, target, eps: float = 1.0) -> Tensor:
    """1 - (2*sum(p*t)+eps) / (sum(p)+sum(t)+eps) on probabilities in [0,1]."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.data.dtype)
    if t.shape != pred.shape:
        raise ValueError(f"dice_loss: target shape {t.shape} != prediction shape {pred.shape}")
    if pred.data.min() < -1e-6 or pred.data.max() > 1 + 1e-6:
        raise ValueError("dice_loss: predictions must be probabilities in [0, 1]")
    tt = Tensor(t)
    inter = T.tsum(T.mul(pred, tt))
    denom = T.add(T.tsum(pred), T.tsum(tt))
    frac = T.mul(T.add_scalar(T.scale(inter, 2.0), eps), T.recip(T.add_scalar(denom, eps)))
    return T.add_scalar(T.neg(frac), 1.0)


def bce_loss(pred_logits: Tensor, target) -> Tensor:
    """Mean stable binary cross-entropy over all elements."""
    return T.tmean(T.bce_with_logits(pred_logits, target))


def ce_loss(class_logits: Tensor, class_indices) -> Tensor:
    """Mean cross-entropy of [N, K] logits against integer targets."""
    return T.ce_logits(class_logits, class_indices)


def decompose_gt(mask: np.ndarray, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Binary segment per class present in the mask.

    Returns (labels[G], targets[G, hw]); a single-class mask yields one
    segment. Rejects out-of-range labels.
    """
    m = np.asarray(mask)
    if m.min() < 0 or m.max() >= num_classes:
        raise ValueError(f"mask labels outside [0, {num_classes}): {sorted(np.unique(m))}")
    labels = np.unique(m)
    flat = m.reshape(-1)
    targets = np.stack([(flat == c).astype(np.float64) for c in labels])
    return labels.astype(np.int64), targets


def matching_costs(mask_logits: np.ndarray, class_logits: np.ndarray,
                   targets: np.ndarray, labels: np.ndarray,
                   weights: LossWeights) -> np.ndarray:
    """Assignment cost[N, G]; plain numpy, no gradients flow through matching."""
    n = class_logits.shape[0]
    z = mask_logits.reshape(-1, n).T.astype(np.float64)          # [N, hw]
    cz = class_logits.astype(np.float64)
    cmax = cz.max(axis=1, keepdims=True)
    probs = np.exp(cz - cmax)
    probs /= probs.sum(axis=1, keepdims=True)
    sig = 1.0 / (1.0 + np.exp(-np.clip(z, -60, 60)))

    g = targets.shape[0]
    cost = np.empty((n, g))
    for j in range(g):
        t = targets[j][None, :]
        bce = np.mean(np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z))), axis=1)
        inter = (sig * t).sum(axis=1)
        dice = 1.0 - (2.0 * inter + 1.0) / (sig.sum(axis=1) + t.sum() + 1.0)
        cost[:, j] = weights.cls * (-probs[:, labels[j]]) + weights.bce * bce + weights.dice * dice
    return cost


def total_loss(mask_logits: Tensor, class_logits: Tensor, gt_mask: np.ndarray,
               num_classes: int, weights: LossWeights = LossWeights()) -> Tensor:
    """Matched dice+BCE mask supervision plus weighted CE over all prototypes."""
    h, w, n = mask_logits.shape
    if class_logits.shape[0] != n:
        raise ValueError(
            f"total_loss: {n} mask planes vs {class_logits.shape[0]} class rows"
        )
    labels, targets = decompose_gt(gt_mask, num_classes)
    if gt_mask.shape != (h, w):
        raise ValueError(f"total_loss: ground truth {gt_mask.shape} != mask extents {(h, w)}")

    cost = matching_costs(mask_logits.data, class_logits.data, targets, labels, weights)
    proto_for_segment = hungarian_match(cost)

    ce_targets = np.full(n, num_classes, dtype=np.int64)  # final slot = "no object"
    ce_targets[proto_for_segment] = labels

    planes = T.transpose2d(T.reshape(mask_logits, (h * w, n)))   # [N, hw]
    matched = T.gather_rows(planes, proto_for_segment)           # [G, hw]
    tt = targets.astype(mask_logits.data.dtype)

    bce_per_seg = T.tmean(T.bce_with_logits(matched, tt), axis=1)          # [G]
    probs = T.sigmoid(matched)
    inter = T.tsum(T.mul(probs, Tensor(tt)), axis=1)
    denom = T.add(T.tsum(probs, axis=1), Tensor(tt.sum(axis=1)))
    dice_per_seg = T.add_scalar(
        T.neg(T.mul(T.add_scalar(T.scale(inter, 2.0), 1.0), T.recip(T.add_scalar(denom, 1.0)))),
        1.0,
    )
    mask_term = T.add(T.scale(T.tsum(bce_per_seg), weights.bce),
                      T.scale(T.tsum(dice_per_seg), weights.dice))
    return T.add(mask_term, T.scale(ce_loss(class_logits, ce_targets), weights.cls))
