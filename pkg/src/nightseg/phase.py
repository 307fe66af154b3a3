"""Fourier phase texture extraction and the lightweight phase encoder.

A plane is decomposed into amplitude and phase; forcing the amplitude to
a constant and inverting the transform yields a texture map that keeps
structure while discarding intensity statistics. Under low-light inputs
this makes faint texture visible to the downstream encoder. A Sobel
gradient-magnitude map is provided as the baseline enhancing operation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fourier import ComplexPlane, dft2d_bruteforce, fft2d, idft2d_bruteforce, ifft2d, _is_pow2
from .layers import Conv2dLayer, Params
from .tensor import Tensor, relu

__all__ = [
    "Spectrum",
    "PhaseTextureMap",
    "PhasePyramid",
    "fourier_decompose",
    "choose_c_a",
    "phase_reconstruct",
    "sobel_texture_map",
    "minmax_normalize",
    "image_texture_stack",
    "PhaseEncoder",
]


@dataclass
class Spectrum:
    """Per-bin modulus and angle of a 2-D transform; phase in (-pi, pi]."""

    amplitude: Tensor
    phase: Tensor

    def __post_init__(self):
        if self.amplitude.shape != self.phase.shape:
            raise ValueError(f"Spectrum: amplitude {self.amplitude.shape} vs phase {self.phase.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.amplitude.shape

    def to_plane(self) -> ComplexPlane:
        a, p = self.amplitude.data, self.phase.data
        return ComplexPlane(a * np.cos(p), a * np.sin(p))


@dataclass
class PhaseTextureMap:
    """Real plane reconstructed from a constant-amplitude spectrum."""

    plane: Tensor
    c_a: float
    imag_residue: float  # max |imaginary part| discarded by the reconstruction


@dataclass
class PhasePyramid:
    """Phase feature maps ordered coarse to fine, aligned with the backbone stages."""

    stages: list[Tensor]

    def __post_init__(self):
        for a, b in zip(self.stages, self.stages[1:]):
            if b.shape[0] != 2 * a.shape[0] or b.shape[1] != 2 * a.shape[1]:
                raise ValueError(
                    f"PhasePyramid: stage extents {b.shape[:2]} are not 2x {a.shape[:2]}"
                )


def fourier_decompose(x: Tensor) -> Spectrum:
    """Split a real plane into amplitude and phase; zero bins get phase 0."""
    if x.data.ndim != 2:
        raise ValueError(f"fourier_decompose: expects a single-channel plane, got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise ValueError("fourier_decompose: input contains non-finite values")
    h, w = x.shape
    plane = fft2d(x) if _is_pow2(h) and _is_pow2(w) else dft2d_bruteforce(x)
    amp = np.hypot(plane.real, plane.imag)
    ph = np.where(amp == 0.0, 0.0, np.arctan2(plane.imag, plane.real))
    ph = np.where(ph == -np.pi, np.pi, ph)
    return Spectrum(Tensor(amp), Tensor(ph))


def choose_c_a(s: Spectrum) -> float:
    """The amplitude constant used for reconstruction: mean over all bins."""
    return float(np.mean(s.amplitude.data))


def phase_reconstruct(s: Spectrum, c_a: float) -> PhaseTextureMap:
    """Invert a spectrum whose amplitude is forced to the constant c_a."""
    if c_a <= 0:
        raise ValueError(f"phase_reconstruct: c_a must be positive, got {c_a}")
    h, w = s.shape
    p = s.phase.data
    flat = ComplexPlane(c_a * np.cos(p), c_a * np.sin(p))
    rec = ifft2d(flat) if _is_pow2(h) and _is_pow2(w) else idft2d_bruteforce(flat)
    return PhaseTextureMap(Tensor(rec.real.copy()), c_a, float(np.max(np.abs(rec.imag))))


def sobel_texture_map(x: Tensor) -> Tensor:
    """Gradient magnitude sqrt(Gx^2 + Gy^2) with the standard 3x3 pair.

    Edge padding plus the separable (smooth, then difference) form make
    constant inputs map to exactly zero: the differenced values are
    bitwise identical, so they cancel regardless of rounding.
    """
    if x.data.ndim != 2:
        raise ValueError(f"sobel_texture_map: expects a single-channel plane, got {x.shape}")
    h, w = x.shape
    xp = np.pad(x.data, 1, mode="edge")
    col_smooth = xp[:-2, :] + 2.0 * xp[1:-1, :] + xp[2:, :]   # (1,2,1) down columns
    row_smooth = xp[:, :-2] + 2.0 * xp[:, 1:-1] + xp[:, 2:]   # (1,2,1) along rows
    gx = col_smooth[:, 2:] - col_smooth[:, :-2]
    gy = row_smooth[2:, :] - row_smooth[:-2, :]
    assert gx.shape == (h, w) and gy.shape == (h, w)
    return Tensor(np.hypot(gx, gy))


def minmax_normalize(plane: np.ndarray) -> np.ndarray:
    lo, hi = plane.min(), plane.max()
    if hi <= lo:
        return np.zeros_like(plane)
    return (plane - lo) / (hi - lo)


def image_texture_stack(image: np.ndarray, mode: str = "phase",
                        c_a: float | None = None) -> np.ndarray:
    """Per-channel texture maps of an [H,W,3] image, min-max scaled to [0,1].

    mode "phase": constant-amplitude phase reconstruction per channel, with
    c_a defaulting to that channel's mean amplitude. mode "sobel": gradient
    magnitude per channel.
    """
    if image.ndim != 3:
        raise ValueError(f"image_texture_stack: expects [H,W,C], got {image.shape}")
    chans = []
    for c in range(image.shape[2]):
        plane = Tensor(image[:, :, c])
        if mode == "phase":
            spectrum = fourier_decompose(plane)
            const = c_a if c_a is not None else choose_c_a(spectrum)
            tex = phase_reconstruct(spectrum, const).plane.data
        elif mode == "sobel":
            tex = sobel_texture_map(plane).data
        else:
            raise ValueError(f"image_texture_stack: unknown mode {mode!r}")
        chans.append(minmax_normalize(tex))
    return np.stack(chans, axis=2)


class PhaseEncoder:
    """Strided conv encoder for texture maps, tapping stages at 1/4 .. 1/32.

    A stride-2 stem followed by four stride-2 stages; the taps after
    stages 1..4 match the backbone stage extents. Returned coarse to fine.
    """

    def __init__(self, rng: np.random.Generator, in_channels: int,
                 widths: tuple[int, int, int, int], stem_width: int | None = None,
                 dtype=np.float64):
        stem_width = stem_width or widths[0]
        self.stem = Conv2dLayer(rng, in_channels, stem_width, 3, 2, 1, dtype)
        w_in = [stem_width, widths[0], widths[1], widths[2]]
        self.stages = [Conv2dLayer(rng, w_in[i], widths[i], 3, 2, 1, dtype) for i in range(4)]
        self.widths = widths

    def __call__(self, texture: Tensor) -> PhasePyramid:
        h, w = texture.shape[:2]
        if h % 32 or w % 32:
            raise ValueError(f"phase encoder: extents {(h, w)} must be divisible by 32")
        x = relu(self.stem(texture))
        taps = []
        for stage in self.stages:
            x = relu(stage(x))
            taps.append(x)
        return PhasePyramid(stages=list(reversed(taps)))  # [1/32, 1/16, 1/8, 1/4]

    def parameters(self) -> Params:
        out: Params = [("stem." + n, p) for n, p in self.stem.parameters()]
        for i, stage in enumerate(self.stages):
            out += [(f"stage{i + 1}." + n, p) for n, p in stage.parameters()]
        return out
