"""Built-in verification: oracle equivalences and invariants, one line each.

Each check compares a shipped code path against an independent brute-force
evaluation (literal sums, nested loops, exhaustive enumeration) or asserts
a structural invariant. ``run_selftest`` prints PASS/FAIL per property and
returns the number of failures.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import tensor as T
from .decoder import SelfAttentionBlock, amplified_map, amplify
from .fourier import dft2d_bruteforce, fft2d, ifft2d
from .gradcheck import grad_check
from .layers import glorot_uniform
from .losses import LossWeights, hungarian_match, total_loss
from .matcher import (ProjectionWeights, bridged_similarity, cross_similarity,
                      reliable_scores, select_reliable, update_prototypes)
from .metrics import miou
from .model import ModelConfig, NightSegModel
from .phase import choose_c_a, fourier_decompose, phase_reconstruct, sobel_texture_map
from .tensor import Tensor

__all__ = ["run_selftest", "run_grad_suite", "CHECKS"]


def _rng(bump: int = 0) -> np.random.Generator:
    return np.random.default_rng(0xC0FFEE + bump)


def check_matmul_oracle():
    rng = _rng(1)
    for _ in range(10):
        a = rng.normal(size=(5, 4))
        b = rng.normal(size=(4, 3))
        got = T.matmul(Tensor(a), Tensor(b)).data
        want = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for k in range(4):
                    want[i, j] += a[i, k] * b[k, j]
        assert np.abs(got - want).max() < 1e-12


def check_conv2d_oracle():
    rng = _rng(2)
    for stride, pad in ((1, 0), (1, 1), (2, 1)):
        x = rng.normal(size=(6, 7, 3))
        w = rng.normal(size=(3, 3, 3, 2))
        got = T.conv2d(Tensor(x), Tensor(w), stride, pad).data
        xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
        ho = (x.shape[0] + 2 * pad - 3) // stride + 1
        wo = (x.shape[1] + 2 * pad - 3) // stride + 1
        want = np.zeros((ho, wo, 2))
        for oi in range(ho):
            for oj in range(wo):
                for oc in range(2):
                    s = 0.0
                    for ki in range(3):
                        for kj in range(3):
                            for c in range(3):
                                s += xp[oi * stride + ki, oj * stride + kj, c] * w[ki, kj, c, oc]
                    want[oi, oj, oc] = s
        assert np.abs(got - want).max() < 1e-10


def check_softmax_oracle():
    rng = _rng(3)
    x = rng.normal(size=12)
    got = T.softmax(Tensor(x), axis=0).data
    want = np.exp(x) / np.sum(np.exp(x))
    assert np.abs(got - want).max() < 1e-12
    big = T.softmax(Tensor([1000.0, 0.0, 0.0]), axis=0).data
    assert np.isfinite(big).all() and abs(big[0] - 1.0) < 1e-12


def check_softmax_rows_sum_to_one():
    rng = _rng(4)
    for _ in range(50):
        x = rng.normal(size=(5, 9)) * rng.uniform(0.1, 50)
        y = T.softmax(Tensor(x), axis=1).data
        assert np.abs(y.sum(axis=1) - 1.0).max() < 1e-6 and (y >= 0).all()


def check_upsample_oracle():
    rng = _rng(5)
    x = rng.normal(size=(4, 4, 2))
    got = T.upsample_bilinear2x(Tensor(x)).data
    want = np.zeros((8, 8, 2))
    for a in range(8):
        for b in range(8):
            sy, sx = (a + 0.5) / 2 - 0.5, (b + 0.5) / 2 - 0.5
            y0, x0 = math.floor(sy), math.floor(sx)
            ty, tx = sy - y0, sx - x0
            for (yy, wy) in ((y0, 1 - ty), (y0 + 1, ty)):
                for (xx, wx) in ((x0, 1 - tx), (x0 + 1, tx)):
                    want[a, b] += wy * wx * x[min(max(yy, 0), 3), min(max(xx, 0), 3)]
    assert np.abs(got - want).max() < 1e-12
    const = T.upsample_bilinear2x(Tensor(np.full((3, 5, 1), 7.0))).data
    assert np.abs(const - 7.0).max() < 1e-12


def check_fft_oracle():
    rng = _rng(6)
    for _ in range(50):
        x = rng.normal(size=(16, 16))
        fast = fft2d(x)
        brute = dft2d_bruteforce(x)
        scale = max(1.0, np.abs(brute.to_complex()).max())
        err = np.abs(fast.to_complex() - brute.to_complex()).max() / scale
        assert err < 1e-6


def check_fft_roundtrip():
    rng = _rng(7)
    for h, w in ((2, 2), (8, 4), (16, 16), (64, 64)):
        x = rng.normal(size=(h, w))
        back = ifft2d(fft2d(x))
        assert np.abs(back.real - x).max() / max(1.0, np.abs(x).max()) < 1e-9
        assert np.abs(back.imag).max() < 1e-9


def check_phase_amplitude_invariant():
    rng = _rng(8)
    for _ in range(20):
        x = rng.uniform(size=(8, 8))
        spectrum = fourier_decompose(Tensor(x))
        c_a = choose_c_a(spectrum)
        rec = phase_reconstruct(spectrum, c_a)
        # re-transform the reconstruction's complex spectrum by construction
        p = spectrum.phase.data
        mod = np.hypot(c_a * np.cos(p), c_a * np.sin(p))
        assert np.abs(mod - c_a).max() < 1e-6
        assert rec.imag_residue < 1e-9


def check_amplitude_shift_invariance():
    rng = _rng(9)
    for _ in range(10):
        x = rng.normal(size=(8, 8))
        a0 = fourier_decompose(Tensor(x)).amplitude.data
        shifted = np.roll(np.roll(x, 3, axis=0), 5, axis=1)
        a1 = fourier_decompose(Tensor(shifted)).amplitude.data
        assert np.abs(a0 - a1).max() / max(1.0, np.abs(a0).max()) < 1e-9


def check_sobel():
    assert np.abs(sobel_texture_map(Tensor(np.full((6, 6), 3.0))).data).max() == 0.0
    step = np.zeros((8, 8))
    step[:, 4:] = 1.0
    mag = sobel_texture_map(Tensor(step)).data
    assert np.abs(mag[2:6, 3] - 4.0).max() < 1e-12
    assert np.abs(mag[2:6, 4] - 4.0).max() < 1e-12


def check_amplified_map_oracle():
    rng = _rng(10)
    f = rng.normal(size=(3, 4, 5))
    p = rng.normal(size=(3, 4, 5))
    got = amplified_map(Tensor(f), Tensor(p), normalize=False).data
    want = ((f + p) ** 2).sum(axis=2)
    assert np.abs(got - want).max() < 1e-10 and (got >= 0).all()
    ones = np.ones((3, 4))
    out = amplify(Tensor(f), Tensor(ones)).data
    assert np.array_equal(out, f)


def check_attention_permutation():
    rng = _rng(11)
    blk = SelfAttentionBlock(np.random.default_rng(1), 6)
    x = rng.normal(size=(2, 3, 6))
    y = blk(Tensor(x)).data.reshape(6, 6)
    perm = np.array([3, 1, 4, 0, 5, 2])
    yp = blk(Tensor(x.reshape(6, 6)[perm].reshape(2, 3, 6))).data.reshape(6, 6)
    assert np.abs(yp - y[perm]).max() < 1e-9


def _random_projection(rng, c):
    init = np.random.default_rng(int(rng.integers(1 << 31)))
    return ProjectionWeights(
        wq=glorot_uniform(init, (c, c), c, c, np.float64),
        wk=glorot_uniform(init, (c, c), c, c, np.float64),
        wv=glorot_uniform(init, (c, c), c, c, np.float64),
    )


def check_matching_invariants():
    rng = _rng(12)
    for _ in range(1000):
        n, hw, c = 3, 10, 4
        k = int(rng.integers(1, hw + 1))
        p = Tensor(rng.normal(size=(n, c)))
        fa = Tensor(rng.normal(size=(hw, c)))
        w = _random_projection(rng, c)
        sim = cross_similarity(p, fa, w)
        assert np.abs(sim.data.sum(axis=1) - 1.0).max() < 1e-6
        scores = reliable_scores(sim)
        assert abs(scores.data.sum() - n) < 1e-5
        rs = select_reliable(scores, fa, k)
        order = np.lexsort((np.arange(hw), -scores.data))
        assert np.array_equal(rs.indices, order[:k])
        sb = bridged_similarity(p, fa, rs, w, sim=sim)
        assert np.abs(sb.sim_q.data.sum(axis=1) - 1.0).max() < 1e-6
        assert np.abs(sb.sim_k.data.sum(axis=1) - 1.0).max() < 1e-6
        assert sb.sim_qk.data.min() >= 0.0 and sb.sim_qk.data.max() <= 1.0 + 1e-9


def check_update_prototypes():
    rng = _rng(13)
    v = rng.normal(size=(6, 5))
    qk = np.zeros((3, 6))
    qk[0, 2] = qk[1, 4] = qk[2, 0] = 1.0
    assert np.abs(qk @ v - np.stack([v[2], v[4], v[0]])).max() == 0.0
    p = Tensor(rng.normal(size=(3, 4)))
    fa = Tensor(rng.normal(size=(6, 4)))
    w = _random_projection(rng, 4)
    bundle = bridged_similarity(p, fa, select_reliable(reliable_scores(cross_similarity(p, fa, w)), fa, 3), w)
    out = update_prototypes(bundle, Tensor(v)).data
    assert np.abs(out - bundle.sim_qk.data @ v).max() < 1e-12


def check_hungarian_oracle():
    rng = _rng(14)
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        g = int(rng.integers(1, n + 1))
        cost = rng.normal(size=(n, g))
        got = hungarian_match(cost)
        best = min(sum(cost[p[i], i] for i in range(g))
                   for p in itertools.permutations(range(n), g))
        total = sum(cost[got[i], i] for i in range(g))
        assert len(set(got.tolist())) == g
        assert abs(total - best) < 1e-9


def check_miou():
    pred = np.array([[0, 1], [1, 1]])
    gt = np.array([[0, 1], [0, 1]])
    per_class, mean = miou(pred, gt, 2)
    assert abs(per_class[0] - 0.5) < 1e-12
    assert abs(per_class[1] - 2 / 3) < 1e-12
    assert abs(mean - 7 / 12) < 1e-12
    rng = _rng(15)
    for _ in range(100):
        m = rng.integers(0, 4, size=(6, 9))
        _, mm = miou(m, m, 4)
        assert mm == 1.0


def run_grad_suite() -> list[tuple[str, float]]:
    """Finite-difference errors for every differentiable composition.

    Small random instances, 64-bit, h=1e-5; each entry reduces through a
    fixed random weighting so no check degenerates to a constant.
    """
    from .losses import bce_loss, ce_loss, dice_loss

    rng = _rng(16)
    results: list[tuple[str, float]] = []

    b = Tensor(rng.normal(size=(3, 5)))
    h1 = Tensor(rng.normal(size=(4, 5)))
    results.append(("matmul", grad_check(
        lambda x: T.tsum(T.mul(T.matmul(x, b), h1)), Tensor(rng.normal(size=(4, 3))))))

    w = Tensor(rng.normal(size=(3, 3, 2, 4)))
    h2 = Tensor(rng.normal(size=(2, 2, 4)))
    results.append(("conv2d (input)", grad_check(
        lambda x: T.tsum(T.mul(T.conv2d(x, w, 2, 1), h2)), Tensor(rng.normal(size=(4, 4, 2))))))
    x0 = Tensor(rng.normal(size=(4, 4, 2)))
    results.append(("conv2d (kernel)", grad_check(
        lambda k: T.tsum(T.mul(T.conv2d(x0, k, 2, 1), h2)), Tensor(rng.normal(size=(3, 3, 2, 4))))))

    h3 = Tensor(rng.normal(size=(3, 6)))
    results.append(("softmax", grad_check(
        lambda x: T.tsum(T.mul(T.softmax(x, axis=1), h3)), Tensor(rng.normal(size=(3, 6))))))

    blk = SelfAttentionBlock(np.random.default_rng(2), 4)
    h4 = Tensor(rng.normal(size=(2, 2, 4)))
    results.append(("self-attention block", grad_check(
        lambda x: T.tsum(T.mul(blk(x), h4)), Tensor(rng.normal(size=(2, 2, 4))))))

    phi = Tensor(rng.normal(size=(2, 3, 4)))
    h5 = Tensor(rng.normal(size=(2, 3, 4)))

    def amp_head(x):
        a = amplified_map(x, phi, normalize=True)
        return T.tsum(T.mul(amplify(x, a), h5))

    results.append(("amplified map + amplify", grad_check(amp_head, Tensor(rng.normal(size=(2, 3, 4))))))

    wproj = _random_projection(_rng(161), 4)
    fa0 = Tensor(rng.normal(size=(7, 4)))
    v0 = Tensor(rng.normal(size=(7, 4)))
    h6 = Tensor(rng.normal(size=(3, 4)))

    def bridge_head_p(p):
        sim = cross_similarity(p, fa0, wproj)
        rs = select_reliable(reliable_scores(sim), fa0, 3)
        sb = bridged_similarity(p, fa0, rs, wproj, sim=sim)
        return T.tsum(T.mul(update_prototypes(sb, v0), h6))

    results.append(("bridged similarity + update (prototypes)",
                    grad_check(bridge_head_p, Tensor(rng.normal(size=(3, 4))))))

    p0 = Tensor(rng.normal(size=(3, 4)))

    def bridge_head_f(fa):
        sim = cross_similarity(p0, fa, wproj)
        rs = select_reliable(reliable_scores(sim), fa, 3)
        sb = bridged_similarity(p0, fa, rs, wproj, sim=sim)
        return T.tsum(T.mul(update_prototypes(sb, T.matmul(fa, wproj.wv)), h6))

    results.append(("bridged similarity + update (pixels)",
                    grad_check(bridge_head_f, Tensor(rng.normal(size=(7, 4))))))

    tgt = (rng.random((4, 4)) > 0.5).astype(np.float64)
    results.append(("dice", grad_check(
        lambda x: dice_loss(T.sigmoid(x), tgt), Tensor(rng.normal(size=(4, 4))))))
    results.append(("bce", grad_check(
        lambda x: bce_loss(x, tgt), Tensor(rng.normal(size=(4, 4))))))
    results.append(("ce", grad_check(
        lambda x: ce_loss(x, np.array([1, 0, 2])), Tensor(rng.normal(size=(3, 4))))))

    gt = rng.integers(0, 3, size=(4, 4))
    cls0 = Tensor(rng.normal(size=(5, 4)))
    results.append(("total loss (mask logits)", grad_check(
        lambda m: total_loss(m, cls0, gt, 3, LossWeights()), Tensor(rng.normal(size=(4, 4, 5))))))
    m0 = Tensor(rng.normal(size=(4, 4, 5)))
    results.append(("total loss (class logits)", grad_check(
        lambda c: total_loss(m0, c, gt, 3, LossWeights()), Tensor(rng.normal(size=(5, 4))))))

    return results


def check_gradients():
    for name, err in run_grad_suite():
        assert err < 1e-4, f"{name}: max relative error {err}"


def check_end_to_end_gradient():
    rng = _rng(17)
    cfg = ModelConfig(num_classes=3, backbone_widths=(4, 5, 6, 7), phase_widths=(3, 4, 5, 6),
                      decoder_channels=8, prototypes=4, reliable_k=4, matcher_layers=1, seed=5)
    model = NightSegModel(cfg)
    # 64x64 keeps every attention block above one token, so no weight is
    # pinned at a structurally zero gradient
    image = rng.uniform(size=(64, 64, 3))
    texture = rng.uniform(size=(64, 64, 3))
    gt = rng.integers(0, 3, size=(16, 16))

    def loss_value() -> Tensor:
        out = model(Tensor(image), Tensor(texture))
        return total_loss(out.mask_logits, out.class_logits, gt, 3, LossWeights())

    from .tensor import Tape, backward

    with Tape():
        backward(loss_value())
    params = model.parameters()
    # every parameter participates in the backward pass; branches behind a
    # zero-initialized output projection legitimately hold exact-zero grads
    # until that projection moves
    missing = [n for n, p in params if p.grad is None]
    assert not missing, f"no gradient buffer for: {missing[:5]}"
    live = ("matcher.prototypes", "backbone.stage1.w", "phase_encoder.stem.w",
            "class_head.w", "decoder.proj0.f.w")
    by_name = dict(params)
    dead = [n for n in live if not np.any(by_name[n].grad)]
    assert not dead, f"zero gradient on always-live group: {dead}"

    # finite-difference spot check on one random coordinate in 3 groups
    h = 1e-5
    for name in ("matcher.prototypes", "backbone.stage1.w", "phase_encoder.stem.w"):
        p = by_name[name]
        coord = int(rng.integers(p.data.size))
        flat = p.data.reshape(-1)
        keep = flat[coord]
        flat[coord] = keep + h
        fp = loss_value().item()
        flat[coord] = keep - h
        fm = loss_value().item()
        flat[coord] = keep
        numeric = (fp - fm) / (2 * h)
        analytic = p.grad.reshape(-1)[coord]
        err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        assert err < 1e-4, f"{name}[{coord}]: {err}"
    for _, p in params:
        p.grad = None


CHECKS = [
    ("matmul matches triple-loop oracle", check_matmul_oracle),
    ("conv2d matches nested-loop oracle", check_conv2d_oracle),
    ("softmax matches direct formula and resists overflow", check_softmax_oracle),
    ("softmax rows sum to one", check_softmax_rows_sum_to_one),
    ("bilinear upsample matches per-pixel formula", check_upsample_oracle),
    ("fast transform matches brute-force sum (50x16x16)", check_fft_oracle),
    ("inverse transform restores the input", check_fft_roundtrip),
    ("constant-amplitude reconstruction keeps modulus c_a", check_phase_amplitude_invariant),
    ("amplitude plane invariant to circular shifts", check_amplitude_shift_invariance),
    ("sobel map: zero on constants, 4 on unit step", check_sobel),
    ("amplified map matches per-pixel loop and is nonnegative", check_amplified_map_oracle),
    ("self-attention is permutation-equivariant", check_attention_permutation),
    ("similarity invariants hold on 1000 random instances", check_matching_invariants),
    ("prototype update blends values by bridged similarity", check_update_prototypes),
    ("assignment matches exhaustive enumeration (1000 cases)", check_hungarian_oracle),
    ("mIoU hand example and self-comparison", check_miou),
    ("per-op gradients match finite differences", check_gradients),
    ("end-to-end loss gradients reach all parameter groups", check_end_to_end_gradient),
]


def run_selftest(verbose: bool = True) -> int:
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
            status = "PASS"
        except Exception as exc:  # noqa: BLE001 - report and continue
            failures += 1
            status = f"FAIL ({exc})"
        if verbose:
            print(f"{status:4s}  {name}" if status == "PASS" else f"{status}  {name}")
    if verbose:
        print(f"{len(CHECKS) - failures}/{len(CHECKS)} properties passed")
    return failures
