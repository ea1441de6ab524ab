"""Post-training knob: threshold pruning, quality metrics and sweep curves.

Pruning keeps splats whose confidence is >= tau ("remove splats less than a
certain confidence"), so tau=0 is the identity. The splats-to-quality ratio
is n / (n + psnr * scale) with the scale auto-derived from the decimal order
of the *unpruned* scene size.
"""

from __future__ import annotations

import concurrent.futures
import math
import os

import numpy as np

from . import losses, raster
from .core import Camera, ConfidenceField, SplatSet, SweepRow
from .raster import RenderSettings


def worker_count(n_jobs: int) -> int:
    """Worker cap: CONFSPLAT_THREADS env var, else cpu count, else 1."""
    env = os.environ.get("CONFSPLAT_THREADS")
    if env:
        try:
            return max(1, min(n_jobs, int(env)))
        except ValueError:
            pass
    return max(1, min(n_jobs, os.cpu_count() or 1))


def prune(scene: SplatSet, field: ConfidenceField, tau: float):
    """Keep exactly the splats with c_i >= tau, order preserved.

    Returns (pruned scene or None when empty, pruned field, kept indices)."""
    if len(field) != len(scene):
        raise ValueError("confidence field does not match the scene")
    conf = field.confidences()
    kept = np.flatnonzero(conf >= tau)
    if len(kept) == 0:
        return None, ConfidenceField(np.empty(0), np.empty(0)), kept
    return scene.take(kept), field.take(kept), kept


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) on [0,1] images; +inf when identical."""
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def default_sqr_scale(n_original: int) -> float:
    """Decimal order of the uncompressed scene size: 10^floor(log10 N)."""
    if n_original < 1:
        raise ValueError("scene size must be >= 1")
    return 10.0 ** math.floor(math.log10(n_original))


def sqr(num_splats: int, psnr_db: float, scale: float) -> float:
    """Splats-to-Quality Ratio: n / (n + psnr * scale), lower is better."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    if num_splats < 0:
        raise ValueError("splat count must be nonnegative")
    if math.isinf(psnr_db):
        return 0.0
    if psnr_db < 0:
        raise ValueError("psnr must be nonnegative")
    denom = num_splats + psnr_db * scale
    if denom == 0.0:
        return 1.0 if num_splats > 0 else 0.0
    return num_splats / denom


def acs(field: ConfidenceField) -> float:
    """Average Confidence Score: mean c_i (identical to the sparsity loss)."""
    if len(field) == 0:
        raise ValueError("empty confidence field")
    value, _ = losses.sparsity_loss(field.confidences())
    return value


def count_active(field: ConfidenceField) -> int:
    """Splats with confidence >= 0.5."""
    if len(field) == 0:
        raise ValueError("empty confidence field")
    return int(np.sum(field.confidences() >= 0.5))


def _render_views(scene, field, cameras, settings):
    conf = None if field is None else field.confidences()
    return [raster.render_scene(scene, cam, conf, settings)[0] for cam in cameras]


def evaluate_tau(
    scene: SplatSet,
    field: ConfidenceField,
    cameras: list[Camera],
    targets: list[np.ndarray],
    tau: float,
    settings: RenderSettings,
    scale: float,
) -> SweepRow:
    """One sweep row: prune at tau, render every view, average the metrics."""
    sub_scene, sub_field, kept = prune(scene, field, tau)
    if sub_scene is None:
        renders = [
            np.broadcast_to(settings.background, t.shape).copy() for t in targets
        ]
        row_acs = 0.0
    else:
        renders = _render_views(sub_scene, sub_field, cameras, settings)
        row_acs = acs(sub_field)
    psnrs = [psnr(r, t) for r, t in zip(renders, targets)]
    mean_psnr = math.inf if all(math.isinf(p) for p in psnrs) else float(
        np.mean([p for p in psnrs])
    )
    ssims = [losses.ssim(r, t)[0] for r, t in zip(renders, targets)]
    return SweepRow(
        tau=float(tau),
        kept=int(len(kept)),
        psnr=mean_psnr,
        ssim=float(np.mean(ssims)),
        sqr=sqr(len(kept), mean_psnr, scale),
        acs=row_acs,
    )


def sweep(
    scene: SplatSet,
    field: ConfidenceField,
    cameras: list[Camera],
    targets: list[np.ndarray],
    taus,
    settings: RenderSettings | None = None,
) -> list[SweepRow]:
    """Evaluate a sorted tau grid; rows come back in tau order.

    Taus evaluate independently over immutable snapshots, so they fan out
    over a thread pool capped by CONFSPLAT_THREADS.
    """
    taus = [float(t) for t in taus]
    if sorted(taus) != taus:
        raise ValueError("taus must be sorted ascending")
    if not cameras:
        raise ValueError("sweep needs at least one camera")
    if len(cameras) != len(targets):
        raise ValueError("camera/target count mismatch")
    settings = settings or RenderSettings()
    scale = default_sqr_scale(len(scene))
    workers = worker_count(len(taus))
    if workers == 1 or len(taus) == 1:
        return [
            evaluate_tau(scene, field, cameras, targets, t, settings, scale) for t in taus
        ]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [
            pool.submit(evaluate_tau, scene, field, cameras, targets, t, settings, scale)
            for t in taus
        ]
        return [f.result() for f in futs]


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6f}"


def sweep_csv(rows: list[SweepRow]) -> str:
    """CSV emission: tau,kept,psnr_db,ssim,sqr,acs at 6 decimal places."""
    lines = ["tau,kept,psnr_db,ssim,sqr,acs"]
    for r in rows:
        lines.append(
            f"{r.tau:.6f},{r.kept},{_fmt(r.psnr)},{r.ssim:.6f},{r.sqr:.6f},{r.acs:.6f}"
        )
    return "\n".join(lines) + "\n"


def sweep_report(rows: list[SweepRow], scene: SplatSet, config_hash: str, seed: int) -> dict:
    return {
        "n_splats": len(scene),
        "mode": scene.mode.value,
        "sh_degree": scene.sh_degree if scene.sh is not None else None,
        "config_hash": config_hash,
        "seed": seed,
        "rows": [
            {
                "tau": r.tau,
                "kept": r.kept,
                "psnr_db": "inf" if math.isinf(r.psnr) else r.psnr,
                "ssim": r.ssim,
                "sqr": r.sqr,
                "acs": r.acs,
            }
            for r in rows
        ],
    }
