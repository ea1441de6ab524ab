"""Optimization loops.

Mode A (`fit_2d`): jointly fit splat geometry, color, opacity and the
confidence raws to a single 2D target image. Mode B (`fit_confidence`): the
scene is frozen and only the per-splat (raw_alpha, raw_beta) pairs train,
against provided target views or self-supervised c=1 renders of the same
scene. Both loops are deterministic under a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import betaconf, losses, raster
from .core import (
    Camera,
    ConfidenceField,
    DivergenceError,
    SceneMode,
    SplatSet,
    TrainConfig,
)
from .raster import RenderSettings


@dataclass
class AdamState:
    """Bias-corrected Adam moments for one named parameter group."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One Adam update; returns the new parameter array, advances `state`."""
    if params.shape != grads.shape:
        raise ValueError(f"param/grad shape mismatch: {params.shape} vs {grads.shape}")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class HistoryRow:
    iteration: int
    total: float
    recon: float
    sparse: float
    entropy: float
    saliency: float
    active: int


@dataclass
class FitResult:
    scene: SplatSet
    field: ConfidenceField
    history: list[HistoryRow] = field(default_factory=list)


def _chain_cov_grads(scene: SplatSet, d_cov: np.ndarray):
    """Map d L/d cov2d to the 2D shape parameters (theta, log_scales)."""
    theta = scene.rotations
    c, s = np.cos(theta), np.sin(theta)
    r = np.empty((len(scene), 2, 2))
    r[:, 0, 0] = c
    r[:, 0, 1] = -s
    r[:, 1, 0] = s
    r[:, 1, 1] = c
    dr = np.empty_like(r)
    dr[:, 0, 0] = -s
    dr[:, 0, 1] = -c
    dr[:, 1, 0] = c
    dr[:, 1, 1] = -s
    d = np.exp(2.0 * scene.log_scales)  # (N, 2) diag entries
    # dSigma/dtheta = R' D R^T + R D R'^T
    rd = r * d[:, None, :]
    drd = dr * d[:, None, :]
    dsig_dtheta = np.einsum("nik,njk->nij", drd, r) + np.einsum("nik,njk->nij", rd, dr)
    g_theta = np.einsum("nij,nij->n", d_cov, dsig_dtheta)
    # dSigma/d ls_k = 2 e^{2 ls_k} (R e_k)(R e_k)^T
    g_ls = np.empty((len(scene), 2))
    for k in range(2):
        rk = r[:, :, k]
        outer = np.einsum("ni,nj->nij", rk, rk)
        g_ls[:, k] = 2.0 * d[:, k] * np.einsum("nij,nij->n", d_cov, outer)
    return g_theta, g_ls


def _gumbel_or_plain_confidence(field: ConfidenceField, cfg: TrainConfig, rng):
    """Confidence used for rendering this step, plus d(rendered)/d(plain c).

    With the Gumbel ablation off these are just c and 1. When on, the noised
    prediction sigmoid(z) replaces c in the renderer and the chain factor is
    sigmoid'(z) * dz/dc."""
    plain = field.confidences()
    if not cfg.gumbel.enabled:
        return plain, np.ones_like(plain)
    noise = betaconf.sample_gumbel(rng, size=len(field))
    temp = cfg.gumbel.temperature
    if cfg.gumbel.mode == "multiplicative":
        z = plain * noise / temp
        dz_dc = noise / temp
    else:
        z = plain + noise / temp
        dz_dc = np.ones_like(plain)
    noised = betaconf.sigmoid(z)
    return noised, noised * (1.0 - noised) * dz_dc


def _confidence_step_grads(
    field: ConfidenceField,
    d_conf: np.ndarray,
    saliency: np.ndarray,
    cfg: TrainConfig,
    pair_seed,
):
    """Assemble the full (raw_alpha, raw_beta) gradient of the Eq.-style
    combined objective: rendered-confidence + sparsity + entropy + ranking.

    Returns (grad_ra, grad_rb, breakdown parts, active pair count)."""
    conf = field.confidences()
    sparse_val, sparse_g = losses.sparsity_loss(conf)
    ent_val, ent_ga, ent_gb = losses.entropy_loss(field)
    if len(field) >= 2:
        sample = losses.sample_saliency_pairs(saliency, cfg.saliency, pair_seed)
        sal_val, sal_g = losses.saliency_ranking_loss(sample.pairs, conf)
    else:
        sal_val, sal_g = 0.0, np.zeros(len(field))

    w = cfg.weights
    d_conf_total = (
        d_conf + w.lambda_sparse * sparse_g + w.lambda_saliency * sal_g
    )
    dca, dcb = betaconf.confidence_grad(field.raw_alpha, field.raw_beta)
    grad_ra = d_conf_total * dca + w.lambda_entropy * ent_ga
    grad_rb = d_conf_total * dcb + w.lambda_entropy * ent_gb
    return grad_ra, grad_rb, sparse_val, ent_val, sal_val


def fit_2d(target: np.ndarray, n_splats: int, cfg: TrainConfig, settings: RenderSettings | None = None) -> FitResult:
    """Mode A: jointly optimize a fresh 2D scene plus confidences on a target.

    Splats start on a jittered grid with colors sampled from the target.
    """
    if n_splats < 1:
        raise ValueError("n_splats must be >= 1")
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 3 or target.shape[2] != 3:
        raise ValueError("target must be (H, W, 3)")
    settings = settings or RenderSettings()
    h, w, _ = target.shape
    rng = np.random.default_rng(cfg.seed)

    side = int(np.ceil(np.sqrt(n_splats)))
    gx, gy = np.meshgrid(
        (np.arange(side) + 0.5) * (w / side), (np.arange(side) + 0.5) * (h / side)
    )
    pos = np.column_stack([gx.ravel()[:n_splats], gy.ravel()[:n_splats]])
    pos += rng.uniform(-0.25, 0.25, size=pos.shape) * (w / side)
    pos[:, 0] = np.clip(pos[:, 0], 0.5, w - 0.5)
    pos[:, 1] = np.clip(pos[:, 1], 0.5, h - 0.5)
    px = np.clip(pos[:, 0].astype(int), 0, w - 1)
    py = np.clip(pos[:, 1].astype(int), 0, h - 1)
    scene = SplatSet(
        mode=SceneMode.TWO_D,
        positions=pos,
        log_scales=np.full((n_splats, 2), np.log(0.7 * w / side)),
        rotations=np.zeros(n_splats),
        opacity_logits=np.zeros(n_splats),
        colors=target[py, px].copy(),
    )
    conf_field = ConfidenceField.initial(n_splats)

    opts = {
        "pos": AdamState(cfg.lr_geometry),
        "ls": AdamState(cfg.lr_geometry * 0.5),
        "theta": AdamState(cfg.lr_geometry * 0.5),
        "color": AdamState(cfg.lr_color),
        "logit": AdamState(cfg.lr_opacity),
        "ra": AdamState(cfg.lr_confidence),
        "rb": AdamState(cfg.lr_confidence),
    }
    vp = raster.viewport(w, h)
    saliency_ema = np.zeros(n_splats)
    history: list[HistoryRow] = []

    for it in range(cfg.iterations):
        conf, conf_chain = _gumbel_or_plain_confidence(conf_field, cfg, rng)
        proj = raster.project_scene(scene, vp, settings)
        image, aux = raster.render_forward(proj, conf, scene.opacity_logits, settings)
        recon_val, pixel_g = losses.reconstruction_loss(image, target, cfg.weights.recon_ssim_mix)
        saliency_ema = raster.accumulate_saliency(
            aux, pixel_g, ema=saliency_ema, decay=cfg.saliency.ema_decay
        )
        grads = raster.render_backward(
            aux, pixel_g, proj, conf, scene.opacity_logits, settings, with_geometry=True
        )
        grad_ra, grad_rb, sparse_val, ent_val, sal_val = _confidence_step_grads(
            conf_field, grads.confidence * conf_chain, saliency_ema, cfg, [cfg.seed, it]
        )
        g_theta, g_ls = _chain_cov_grads(scene, grads.cov2d)

        breakdown = losses.total_loss(recon_val, sparse_val, ent_val, sal_val, cfg.weights)
        if not np.isfinite(breakdown.total):
            raise DivergenceError(f"non-finite loss at iteration {it}")

        scene.positions = adam_step(opts["pos"], scene.positions, grads.mean2d)
        scene.log_scales = adam_step(opts["ls"], scene.log_scales, g_ls)
        scene.rotations = adam_step(opts["theta"], scene.rotations, g_theta)
        scene.colors = adam_step(opts["color"], scene.colors, grads.color)
        scene.opacity_logits = adam_step(opts["logit"], scene.opacity_logits, grads.opacity_logit)
        conf_field.raw_alpha = adam_step(opts["ra"], conf_field.raw_alpha, grad_ra)
        conf_field.raw_beta = adam_step(opts["rb"], conf_field.raw_beta, grad_rb)
        np.clip(scene.positions[:, 0], -w, 2 * w, out=scene.positions[:, 0])
        np.clip(scene.positions[:, 1], -h, 2 * h, out=scene.positions[:, 1])
        np.clip(scene.log_scales, np.log(0.3), np.log(max(w, h)), out=scene.log_scales)

        if (it + 1) % cfg.snapshot_every == 0 or it == cfg.iterations - 1:
            if not history or history[-1].iteration != it + 1:
                active = int(np.sum(conf_field.confidences() >= 0.5))
                history.append(
                    HistoryRow(
                        it + 1,
                        breakdown.total,
                        breakdown.recon,
                        breakdown.sparse,
                        breakdown.entropy,
                        breakdown.saliency,
                        active,
                    )
                )
    return FitResult(scene, conf_field, history)


def fit_confidence(
    scene: SplatSet,
    cameras: list[Camera],
    cfg: TrainConfig,
    targets: list[np.ndarray] | None = None,
    settings: RenderSettings | None = None,
) -> FitResult:
    """Mode B: optimize only (raw_alpha, raw_beta) on a frozen scene.

    With targets=None the loop is self-supervised: targets are the frozen
    scene's own unmodulated (c = 1) renders, which exposes redundant splats
    without any external data.
    """
    if not cameras:
        raise ValueError("need at least one camera")
    settings = settings or RenderSettings()
    if targets is None:
        targets = [raster.render_scene(scene, cam, None, settings)[0] for cam in cameras]
    if len(targets) != len(cameras):
        raise ValueError(f"{len(cameras)} cameras but {len(targets)} targets")

    n = len(scene)
    conf_field = ConfidenceField.initial(n)
    rng = np.random.default_rng(cfg.seed)
    frozen = {
        "positions": scene.positions.copy(),
        "log_scales": scene.log_scales.copy(),
        "rotations": scene.rotations.copy(),
        "opacity_logits": scene.opacity_logits.copy(),
    }

    opt_ra = AdamState(cfg.lr_confidence)
    opt_rb = AdamState(cfg.lr_confidence)
    saliency_ema = np.zeros(n)
    history: list[HistoryRow] = []
    projections = [raster.project_scene(scene, cam, settings) for cam in cameras]

    for it in range(cfg.iterations):
        conf, conf_chain = _gumbel_or_plain_confidence(conf_field, cfg, rng)
        recon_val = 0.0
        d_conf = np.zeros(n)
        for pick in range(cfg.cameras_per_step):
            view = (it * cfg.cameras_per_step + pick) % len(cameras)
            proj = projections[view]
            image, aux = raster.render_forward(proj, conf, scene.opacity_logits, settings)
            r_val, pixel_g = losses.reconstruction_loss(
                image, targets[view], cfg.weights.recon_ssim_mix
            )
            saliency_ema = raster.accumulate_saliency(
                aux, pixel_g, ema=saliency_ema, decay=cfg.saliency.ema_decay
            )
            grads = raster.render_backward(
                aux, pixel_g, proj, conf, scene.opacity_logits, settings
            )
            recon_val += r_val
            d_conf += grads.confidence
        recon_val /= cfg.cameras_per_step
        d_conf /= cfg.cameras_per_step

        grad_ra, grad_rb, sparse_val, ent_val, sal_val = _confidence_step_grads(
            conf_field, d_conf * conf_chain, saliency_ema, cfg, [cfg.seed, it]
        )
        breakdown = losses.total_loss(recon_val, sparse_val, ent_val, sal_val, cfg.weights)
        if not np.isfinite(breakdown.total):
            raise DivergenceError(f"non-finite loss at iteration {it}")

        conf_field.raw_alpha = adam_step(opt_ra, conf_field.raw_alpha, grad_ra)
        conf_field.raw_beta = adam_step(opt_rb, conf_field.raw_beta, grad_rb)

        if (it + 1) % cfg.snapshot_every == 0 or it == cfg.iterations - 1:
            if not history or history[-1].iteration != it + 1:
                active = int(np.sum(conf_field.confidences() >= 0.5))
                history.append(
                    HistoryRow(
                        it + 1,
                        breakdown.total,
                        breakdown.recon,
                        breakdown.sparse,
                        breakdown.entropy,
                        breakdown.saliency,
                        active,
                    )
                )

    # the frozen parameter groups must be bit-identical after training
    assert np.array_equal(scene.positions, frozen["positions"])
    assert np.array_equal(scene.log_scales, frozen["log_scales"])
    assert np.array_equal(scene.rotations, frozen["rotations"])
    assert np.array_equal(scene.opacity_logits, frozen["opacity_logits"])
    return FitResult(scene, conf_field, history)


def history_csv(history: list[HistoryRow]) -> str:
    lines = ["iteration,total,recon,sparse,entropy,saliency,active"]
    for row in history:
        lines.append(
            f"{row.iteration},{row.total:.6f},{row.recon:.6f},{row.sparse:.6f},"
            f"{row.entropy:.6f},{row.saliency:.6f},{row.active}"
        )
    return "\n".join(lines) + "\n"
