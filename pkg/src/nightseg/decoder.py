"""Pixel-level texture amplification and coarse-to-fine feature fusion.

Backbone and phase features are projected to a shared width, a per-pixel
amplification map (channel sum of squared feature sums) reweights the
projected features, a self-attention layer aggregates context, and the
result is upsampled and fused additively with the next finer stage until
the output sits at 1/4 resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Linear, Params, TokenSelfAttention
from .phase import PhasePyramid
from .tensor import Tensor

__all__ = [
    "ATTENTION_TOKEN_BUDGET",
    "FeaturePyramid",
    "AmplifiedFeature",
    "CommonProjection",
    "project_common",
    "amplified_map",
    "amplify",
    "amplify_stage",
    "SelfAttentionBlock",
    "HierarchicalAmplifiedDecoder",
]

ATTENTION_TOKEN_BUDGET = 4096


@dataclass
class FeaturePyramid:
    """Backbone feature maps ordered coarse to fine; extents double per stage."""

    stages: list[Tensor]

    def __post_init__(self):
        for a, b in zip(self.stages, self.stages[1:]):
            if b.shape[0] != 2 * a.shape[0] or b.shape[1] != 2 * a.shape[1]:
                raise ValueError(
                    f"FeaturePyramid: stage extents {b.shape[:2]} are not 2x {a.shape[:2]}"
                )


@dataclass
class AmplifiedFeature:
    features: Tensor   # [h, w, C]
    amp_map: Tensor    # [h, w], nonnegative before normalization

    def __post_init__(self):
        if self.features.shape[:2] != self.amp_map.shape:
            raise ValueError(
                f"AmplifiedFeature: feature extents {self.features.shape[:2]} vs map {self.amp_map.shape}"
            )


class CommonProjection:
    """Two independent 1x1 projections mapping a stage pair to width C."""

    def __init__(self, rng: np.random.Generator, c_feat: int, c_phase: int,
                 width: int, dtype=np.float64):
        self.proj_f = Linear(rng, c_feat, width, dtype=dtype)
        self.proj_p = Linear(rng, c_phase, width, dtype=dtype)

    def project_features(self, f: Tensor) -> Tensor:
        return _project(f, self.proj_f)

    def project_phase(self, p: Tensor) -> Tensor:
        return _project(p, self.proj_p)

    def parameters(self) -> Params:
        out: Params = [("f." + n, p) for n, p in self.proj_f.parameters()]
        out += [("p." + n, p) for n, p in self.proj_p.parameters()]
        return out


def _project(x: Tensor, lin: Linear) -> Tensor:
    h, w, c = x.shape
    return T.reshape(lin(T.reshape(x, (h * w, c))), (h, w, lin.w.shape[1]))


def project_common(f: Tensor, phi: Tensor, proj: CommonProjection) -> tuple[Tensor, Tensor]:
    """Project a feature map and a phase map to the shared width."""
    if f.shape[:2] != phi.shape[:2]:
        raise ValueError(f"project_common: spatial extents differ, {f.shape[:2]} vs {phi.shape[:2]}")
    return proj.project_features(f), proj.project_phase(phi)


def amplified_map(fbar: Tensor, pbar: Tensor, normalize: bool = True) -> Tensor:
    """Per-pixel channel sum of (fbar + pbar)^2, optionally scaled to mean 1."""
    if fbar.shape != pbar.shape:
        raise ValueError(f"amplified_map: shape mismatch {fbar.shape} vs {pbar.shape}")
    s = T.add(fbar, pbar)
    raw = T.tsum(T.mul(s, s), axis=2)
    if not normalize:
        return raw
    # tiny epsilon keeps the all-zero map finite; mean-1 holds to ~1e-9 otherwise
    return T.mul_scalar_t(raw, T.recip(T.add_scalar(T.tmean(raw), 1e-12)))


def amplify(f: Tensor, a: Tensor) -> Tensor:
    """Scale every channel of pixel (i,j) by a[i,j]."""
    if f.shape[:2] != a.shape:
        raise ValueError(f"amplify: spatial extents differ, {f.shape[:2]} vs {a.shape}")
    return T.scale_pixels(f, a)


def amplify_stage(fbar: Tensor, pbar: Tensor, normalize: bool = True) -> AmplifiedFeature:
    """One amplification step: build the map from (fbar, pbar), reweight fbar."""
    amap = amplified_map(fbar, pbar, normalize=normalize)
    return AmplifiedFeature(features=amplify(fbar, amap), amp_map=amap)


class SelfAttentionBlock:
    """Spatial wrapper around token self-attention with a hard size budget."""

    def __init__(self, rng: np.random.Generator, width: int, dtype=np.float64):
        self.attn = TokenSelfAttention(rng, width, dtype)
        self.width = width

    def __call__(self, x: Tensor) -> Tensor:
        h, w, c = x.shape
        if h * w > ATTENTION_TOKEN_BUDGET:
            raise ValueError(
                f"self-attention: {h}x{w} = {h * w} tokens exceeds the budget of {ATTENTION_TOKEN_BUDGET}"
            )
        return T.reshape(self.attn(T.reshape(x, (h * w, c))), (h, w, c))

    def parameters(self) -> Params:
        return self.attn.parameters()


class HierarchicalAmplifiedDecoder:
    """Fuse the selected coarse stages into one high-resolution feature map.

    depth selects how many stages take part, always starting at the
    coarsest; the output always lands at the finest stage's extents
    (upsampling continues without fusion when depth < 4).
    """

    def __init__(self, rng: np.random.Generator, feat_widths: list[int],
                 phase_widths: list[int], width: int, depth: int = 4,
                 normalize_amp_map: bool = True, dtype=np.float64):
        if depth not in (1, 2, 3, 4):
            raise ValueError(f"decoder depth must be in 1..4, got {depth}")
        if len(feat_widths) != 4 or len(phase_widths) != 4:
            raise ValueError("decoder expects 4 stage widths, coarse to fine")
        self.projections = [
            CommonProjection(rng, feat_widths[i], phase_widths[i], width, dtype) for i in range(4)
        ]
        self.attention = [SelfAttentionBlock(rng, width, dtype) for _ in range(4)]
        self.width = width
        self.depth = depth
        self.normalize_amp_map = normalize_amp_map

    def __call__(self, fp: FeaturePyramid, pp: PhasePyramid | None) -> Tensor:
        if len(fp.stages) != 4:
            raise ValueError(f"decoder expects a 4-stage pyramid, got {len(fp.stages)}")
        if pp is not None:
            for f, p in zip(fp.stages, pp.stages):
                if f.shape[:2] != p.shape[:2]:
                    raise ValueError(
                        f"decoder: backbone stage {f.shape[:2]} misaligned with phase stage {p.shape[:2]}"
                    )

        x: Tensor | None = None
        for s in range(4):
            if s >= self.depth:
                x = T.upsample_bilinear2x(x)  # finer stages excluded from fusion
                continue
            proj = self.projections[s]
            fbar = proj.project_features(fp.stages[s])
            if x is not None:
                x = T.upsample_bilinear2x(x)
                fbar = T.add(x, fbar)
            if pp is not None:
                pbar = proj.project_phase(pp.stages[s])
                fbar = amplify_stage(fbar, pbar, self.normalize_amp_map).features
            x = self.attention[s](fbar)
        return x

    def parameters(self) -> Params:
        out: Params = []
        for i, proj in enumerate(self.projections):
            out += [(f"proj{i}." + n, p) for n, p in proj.parameters()]
        for i, attn in enumerate(self.attention):
            out += [(f"attn{i}." + n, p) for n, p in attn.parameters()]
        return out
