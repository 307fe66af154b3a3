"""Full segmentation network: backbone stub, decoder, matcher, and heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .decoder import FeaturePyramid, HierarchicalAmplifiedDecoder
from .layers import Conv2dLayer, Linear, Params
from .matcher import ReliableMatcher
from .phase import PhaseEncoder, PhasePyramid
from .tensor import Tensor, relu

__all__ = [
    "ModelConfig",
    "SegOutput",
    "BackboneStub",
    "segmentation_logits",
    "NightSegModel",
    "predict",
    "majority_pool",
]


@dataclass
class ModelConfig:
    num_classes: int = 4
    backbone_widths: tuple[int, int, int, int] = (16, 32, 48, 64)   # F2..F5 (fine to coarse)
    phase_widths: tuple[int, int, int, int] = (8, 16, 24, 32)       # 1/4..1/32 (fine to coarse)
    decoder_channels: int = 64
    decoder_depth: int = 4
    normalize_amp_map: bool = True
    enhance_op: str = "phase"        # phase | sobel | none
    prototypes: int = 8
    reliable_k: int = 16
    matcher_layers: int = 3
    matcher_mode: str = "reliable"   # reliable | vanilla
    renormalize: bool = False
    seed: int = 0
    dtype: object = field(default=np.float64)


@dataclass
class SegOutput:
    """Per-pixel mask logits (one plane per prototype) and per-prototype
    class logits whose final slot means "no object"."""

    mask_logits: Tensor    # [H/4, W/4, N]
    class_logits: Tensor   # [N, num_classes + 1]

    def __post_init__(self):
        if self.mask_logits.shape[2] != self.class_logits.shape[0]:
            raise ValueError(
                f"SegOutput: {self.mask_logits.shape[2]} mask planes vs "
                f"{self.class_logits.shape[0]} class rows"
            )


class BackboneStub:
    """Four strided conv stages with schedule {4,2,2,2}: F2 at 1/4 .. F5 at 1/32."""

    def __init__(self, rng: np.random.Generator, widths: tuple[int, int, int, int],
                 dtype=np.float64):
        w2, w3, w4, w5 = widths
        self.stage1 = Conv2dLayer(rng, 3, w2, 4, 4, 0, dtype)
        self.stage2 = Conv2dLayer(rng, w2, w3, 3, 2, 1, dtype)
        self.stage3 = Conv2dLayer(rng, w3, w4, 3, 2, 1, dtype)
        self.stage4 = Conv2dLayer(rng, w4, w5, 3, 2, 1, dtype)
        self.widths = widths

    def __call__(self, image: Tensor) -> FeaturePyramid:
        h, w = image.shape[:2]
        if h % 16 or w % 16:
            raise ValueError(f"backbone: extents {(h, w)} must be divisible by 16")
        f2 = relu(self.stage1(image))
        f3 = relu(self.stage2(f2))
        f4 = relu(self.stage3(f3))
        f5 = relu(self.stage4(f4))
        return FeaturePyramid(stages=[f5, f4, f3, f2])

    def parameters(self) -> Params:
        out: Params = []
        for i, st in enumerate((self.stage1, self.stage2, self.stage3, self.stage4)):
            out += [(f"stage{i + 1}." + n, p) for n, p in st.parameters()]
        return out


def segmentation_logits(e: Tensor, prototypes: Tensor) -> Tensor:
    """Per-pixel dot product of the feature map with every prototype."""
    h, w, c = e.shape
    if prototypes.shape[1] != c:
        raise ValueError(
            f"segmentation_logits: feature width {c} != prototype width {prototypes.shape[1]}"
        )
    flat = T.matmul(T.reshape(e, (h * w, c)), T.transpose2d(prototypes))
    return T.reshape(flat, (h, w, prototypes.shape[0]))


class NightSegModel:
    """Backbone + phase encoder + amplified decoder + reliable matcher + heads."""

    def __init__(self, cfg: ModelConfig):
        if cfg.prototypes < cfg.num_classes:
            raise ValueError(
                f"need at least {cfg.num_classes} prototypes, got {cfg.prototypes}"
            )
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        dtype = cfg.dtype
        bw = cfg.backbone_widths
        pw = cfg.phase_widths
        self.backbone = BackboneStub(rng, bw, dtype)
        self.phase_encoder = PhaseEncoder(rng, 3, pw, dtype=dtype) if cfg.enhance_op != "none" else None
        self.decoder = HierarchicalAmplifiedDecoder(
            rng,
            feat_widths=[bw[3], bw[2], bw[1], bw[0]],
            phase_widths=[pw[3], pw[2], pw[1], pw[0]],
            width=cfg.decoder_channels,
            depth=cfg.decoder_depth,
            normalize_amp_map=cfg.normalize_amp_map,
            dtype=dtype,
        )
        self.matcher = ReliableMatcher(
            rng,
            num_prototypes=cfg.prototypes,
            width=cfg.decoder_channels,
            k=cfg.reliable_k,
            num_layers=cfg.matcher_layers,
            mode=cfg.matcher_mode,
            renormalize=cfg.renormalize,
            dtype=dtype,
        )
        self.class_head = Linear(rng, cfg.decoder_channels, cfg.num_classes + 1, dtype=dtype)

    def __call__(self, image: Tensor, texture: Tensor | None) -> SegOutput:
        fp = self.backbone(image)
        pp: PhasePyramid | None = None
        if self.phase_encoder is not None:
            if texture is None:
                raise ValueError(f"enhance_op={self.cfg.enhance_op!r} requires a texture map")
            pp = self.phase_encoder(texture)
        e = self.decoder(fp, pp)
        h, w, c = e.shape
        fa = T.reshape(e, (h * w, c))
        p_tilde = self.matcher(fa)
        return SegOutput(
            mask_logits=segmentation_logits(e, p_tilde),
            class_logits=self.class_head(p_tilde),
        )

    def parameters(self) -> Params:
        out: Params = [("backbone." + n, p) for n, p in self.backbone.parameters()]
        if self.phase_encoder is not None:
            out += [("phase_encoder." + n, p) for n, p in self.phase_encoder.parameters()]
        out += [("decoder." + n, p) for n, p in self.decoder.parameters()]
        out += [("matcher." + n, p) for n, p in self.matcher.parameters()]
        out += [("class_head." + n, p) for n, p in self.class_head.parameters()]
        return out


def predict(out: SegOutput, num_classes: int) -> np.ndarray:
    """Per-pixel argmax of sum_n p_n(class) * sigmoid(mask_n); ties -> lowest class."""
    z = out.mask_logits.data
    cz = out.class_logits.data.astype(np.float64)
    cmax = cz.max(axis=1, keepdims=True)
    probs = np.exp(cz - cmax)
    probs /= probs.sum(axis=1, keepdims=True)
    masks = 1.0 / (1.0 + np.exp(-np.clip(z.astype(np.float64), -60, 60)))   # [h, w, N]
    scores = masks @ probs[:, :num_classes]                                  # [h, w, num_classes]
    return np.argmax(scores, axis=2).astype(np.int64)


def majority_pool(mask: np.ndarray, factor: int = 4) -> np.ndarray:
    """Most frequent label per factor x factor block; ties -> lowest label."""
    h, w = mask.shape
    if h % factor or w % factor:
        raise ValueError(f"mask extents {(h, w)} not divisible by {factor}")
    blocks = mask.reshape(h // factor, factor, w // factor, factor).swapaxes(1, 2)
    blocks = blocks.reshape(h // factor, w // factor, factor * factor)
    k = int(mask.max()) + 1
    counts = np.zeros((h // factor, w // factor, k), dtype=np.int64)
    for c in range(k):
        counts[:, :, c] = (blocks == c).sum(axis=2)
    return np.argmax(counts, axis=2).astype(np.int64)
