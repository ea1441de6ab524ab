"""Training objectives: reconstruction (L1 + SSIM), confidence sparsity,
Beta-entropy regularization, and the saliency ranking hinge, each with
analytic gradients so no autodiff framework is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import betaconf
from .core import ConfidenceField, LossWeights, SaliencyConfig

_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_WINDOW = 11
_SIGMA = 1.5


@dataclass
class LossBreakdown:
    total: float
    recon: float
    sparse: float
    entropy: float
    saliency: float
    weighted_sparse: float
    weighted_entropy: float
    weighted_saliency: float

    def as_row(self) -> dict:
        return {
            "total": self.total,
            "recon": self.recon,
            "sparse": self.sparse,
            "entropy": self.entropy,
            "saliency": self.saliency,
        }


@dataclass
class PairSample:
    pairs: np.ndarray      # (K, 2) int indices, i = high-saliency, j = low
    degenerate: bool = False  # saliency was all-equal; no pairs drawn


def _check_images(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) images, got {a.shape}")


def l1_loss(a: np.ndarray, b: np.ndarray):
    """Mean absolute difference and its subgradient w.r.t. `a` (0 at ties)."""
    _check_images(a, b)
    diff = a - b
    value = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return value, grad


def _gaussian_kernel() -> np.ndarray:
    half = _WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * _SIGMA**2))
    return k / k.sum()


_KERNEL = _gaussian_kernel()


def _filter_valid(x: np.ndarray) -> np.ndarray:
    """Separable 11x11 Gaussian filter, valid windows only. x: (H, W)."""
    h, w = x.shape
    tmp = np.zeros((h - _WINDOW + 1, w))
    for i in range(_WINDOW):
        tmp += _KERNEL[i] * x[i : h - _WINDOW + 1 + i, :]
    out = np.zeros((h - _WINDOW + 1, w - _WINDOW + 1))
    for j in range(_WINDOW):
        out += _KERNEL[j] * tmp[:, j : w - _WINDOW + 1 + j]
    return out


def _filter_adjoint(g: np.ndarray, shape) -> np.ndarray:
    """Adjoint of _filter_valid: scatters window gradients back to pixels."""
    h, w = shape
    tmp = np.zeros((g.shape[0], w))
    for j in range(_WINDOW):
        tmp[:, j : w - _WINDOW + 1 + j] += _KERNEL[j] * g
    out = np.zeros((h, w))
    for i in range(_WINDOW):
        out[i : h - _WINDOW + 1 + i, :] += _KERNEL[i] * tmp
    return out


def ssim(a: np.ndarray, b: np.ndarray):
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, [0,1] range)
    and channels, plus the analytic gradient with respect to `a`."""
    _check_images(a, b)
    h, w, _ = a.shape
    if h < _WINDOW or w < _WINDOW:
        raise ValueError(f"images must be at least {_WINDOW}x{_WINDOW}, got {h}x{w}")
    total = 0.0
    grad = np.zeros_like(a)
    n_maps = (h - _WINDOW + 1) * (w - _WINDOW + 1) * 3
    for ch in range(3):
        x, y = a[:, :, ch], b[:, :, ch]
        ma, mb = _filter_valid(x), _filter_valid(y)
        qa, qb, qab = _filter_valid(x * x), _filter_valid(y * y), _filter_valid(x * y)
        va = qa - ma * ma
        vb = qb - mb * mb
        vab = qab - ma * mb
        a1 = 2.0 * ma * mb + _SSIM_C1
        a2 = 2.0 * vab + _SSIM_C2
        b1 = ma * ma + mb * mb + _SSIM_C1
        b2 = va + vb + _SSIM_C2
        s = (a1 * a2) / (b1 * b2)
        total += float(s.sum())

        ds_da1 = a2 / (b1 * b2)
        ds_da2 = a1 / (b1 * b2)
        ds_db1 = -s / b1
        ds_db2 = -s / b2
        # ma feeds a1, b1 directly and va, vab through the variance identities
        ds_dma = 2.0 * mb * ds_da1 + 2.0 * ma * ds_db1 - 2.0 * mb * ds_da2 - 2.0 * ma * ds_db2
        ds_dqa = ds_db2
        ds_dqab = 2.0 * ds_da2
        grad[:, :, ch] = (
            _filter_adjoint(ds_dma, (h, w))
            + _filter_adjoint(ds_dqa, (h, w)) * 2.0 * x
            + _filter_adjoint(ds_dqab, (h, w)) * y
        ) / n_maps
    return total / n_maps, grad


def reconstruction_loss(render: np.ndarray, target: np.ndarray, mix: float = 0.2):
    """(1 - mix) * L1 + mix * (1 - SSIM), with gradient w.r.t. the render."""
    if not 0.0 <= mix <= 1.0:
        raise ValueError("mix must lie in [0, 1]")
    v1, g1 = l1_loss(render, target)
    if mix == 0.0:
        return v1, g1
    v2, g2 = ssim(render, target)
    return (1.0 - mix) * v1 + mix * (1.0 - v2), (1.0 - mix) * g1 - mix * g2


def sparsity_loss(confidences: np.ndarray):
    """Mean confidence (drives splats toward inactivity); gradient 1/N each."""
    confidences = np.asarray(confidences, dtype=np.float64)
    if confidences.size == 0:
        raise ValueError("sparsity_loss needs at least one splat")
    n = confidences.size
    return float(confidences.mean()), np.full(n, 1.0 / n)


def entropy_loss(field: ConfidenceField):
    """Mean negative Beta entropy over splats; gradients w.r.t. the raws."""
    a = betaconf.activate(field.raw_alpha)
    b = betaconf.activate(field.raw_beta)
    h = betaconf.beta_entropy(alpha=a, beta=b)
    da, db = betaconf.entropy_grad_raw(field.raw_alpha, field.raw_beta)
    n = len(field)
    return float(-np.mean(h)), -da / n, -db / n


def sample_saliency_pairs(
    saliency: np.ndarray, cfg: SaliencyConfig, rng_seed
) -> PairSample:
    """Draw (high, low) saliency index pairs for the ranking loss.

    Pools are the top/bottom `cfg.quantile` fraction by saliency (stable
    ties by index). Pairs whose saliency gap is below 1e-12 are redrawn,
    up to 10 * pairs_per_step attempts. All-equal saliency yields no pairs.
    """
    saliency = np.asarray(saliency, dtype=np.float64)
    n = saliency.size
    if n < 2:
        raise ValueError("need at least two splats to rank")
    if np.all(saliency == saliency[0]):
        return PairSample(np.empty((0, 2), dtype=np.int64), degenerate=True)
    pool = max(1, int(np.ceil(cfg.quantile * n)))
    ranked = np.argsort(saliency, kind="stable")
    bottom = ranked[:pool]
    top = ranked[n - pool :]
    rng = np.random.default_rng(rng_seed)
    pairs = []
    attempts = 0
    k = cfg.pairs_per_step
    while len(pairs) < k and attempts < 10 * k:
        i = int(top[rng.integers(pool)])
        j = int(bottom[rng.integers(pool)])
        attempts += 1
        if abs(saliency[i] - saliency[j]) < 1e-12:
            continue
        pairs.append((i, j))
    return PairSample(np.asarray(pairs, dtype=np.int64).reshape(-1, 2))


def saliency_ranking_loss(pairs: np.ndarray, confidences: np.ndarray):
    """Mean hinge max(0, 1 + c_j - c_i) over pairs; per-splat gradient."""
    confidences = np.asarray(confidences, dtype=np.float64)
    grad = np.zeros_like(confidences)
    if len(pairs) == 0:
        return 0.0, grad
    i = pairs[:, 0]
    j = pairs[:, 1]
    margins = 1.0 + confidences[j] - confidences[i]
    active = margins > 0.0
    k = len(pairs)
    value = float(np.sum(np.where(active, margins, 0.0)) / k)
    np.add.at(grad, i[active], -1.0 / k)
    np.add.at(grad, j[active], 1.0 / k)
    return value, grad


def total_loss(
    recon: float, sparse: float, entropy: float, saliency: float, weights: LossWeights
) -> LossBreakdown:
    ws = weights.lambda_sparse * sparse
    we = weights.lambda_entropy * entropy
    wl = weights.lambda_saliency * saliency
    return LossBreakdown(
        total=recon + ws + we + wl,
        recon=recon,
        sparse=sparse,
        entropy=entropy,
        saliency=saliency,
        weighted_sparse=ws,
        weighted_entropy=we,
        weighted_saliency=wl,
    )
