"""Differentiable CPU splat rasterizer.

Forward: project splats (EWA-style covariance transform in 3D, identity in
2D), sort front-to-back, alpha-composite with confidence-modulated opacity
o_eff = sigmoid(opacity_logit) * c. Backward: reverse traversal over the
recorded contributions reconstructs the down-stack suffix sums and yields
analytic gradients for opacity logits, confidences, view colors and (2D
mode) means/covariances. Saliency accumulation reuses the same records.

The splat loop is vectorized over each splat's bounding-box pixels; records
are kept splat-major in depth order, which is exactly the traversal the
backward pass needs. Per-pixel compositing order matches a sequential
front-to-back loop, so outputs are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import betaconf
from .core import Camera, RenderAux, SceneMode, Splat, SplatSet

NEAR_PLANE = 0.01
_SINGULAR_DET = 1e-12

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


@dataclass
class RenderSettings:
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    alpha_min: float = 1.0 / 255.0
    alpha_max: float = 0.999
    transmittance_floor: float = 1e-4
    cov_dilation: float = 0.3

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        if not 0.0 < self.alpha_min < self.alpha_max <= 1.0:
            raise ValueError("need 0 < alpha_min < alpha_max <= 1")
        if not 0.0 < self.transmittance_floor < 0.1:
            raise ValueError("transmittance_floor must lie in (0, 0.1)")


@dataclass
class Projected2D:
    mean2d: np.ndarray    # (2,) pixels
    cov2d: np.ndarray     # (2,2) symmetric positive-definite
    depth: float          # view z in 3D mode, splat index in 2D mode
    view_color: np.ndarray  # (3,) rgb after SH evaluation


@dataclass
class ProjectedScene:
    """Batch of projected splats; `indices` maps rows to scene splat ids."""

    mean2d: np.ndarray      # (M, 2)
    cov2d: np.ndarray       # (M, 2, 2)
    depth: np.ndarray       # (M,)
    view_color: np.ndarray  # (M, 3)
    indices: np.ndarray     # (M,) original splat indices
    n_scene: int
    width: int
    height: int

    def __len__(self) -> int:
        return len(self.indices)

    def row(self, k: int) -> Projected2D:
        return Projected2D(
            self.mean2d[k].copy(), self.cov2d[k].copy(), float(self.depth[k]), self.view_color[k].copy()
        )


@dataclass
class GradientSet:
    opacity_logit: np.ndarray      # (N,)
    confidence: np.ndarray         # (N,)
    color: np.ndarray              # (N, 3) w.r.t. the view color
    mean2d: np.ndarray | None = None   # (N, 2), 2D mode
    cov2d: np.ndarray | None = None    # (N, 2, 2), 2D mode


def evaluate_sh(coeffs: np.ndarray, view_dir: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate real SH colors: sum_lm c_lm Y_lm(dir) + 0.5, clamped >= 0.

    coeffs: (K, 3) or (N, K, 3) with K = (degree+1)^2; view_dir (3,) or (N, 3).
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    single = coeffs.ndim == 2
    if single:
        coeffs = coeffs[None]
    d = np.asarray(view_dir, dtype=np.float64)
    if d.ndim == 1:
        d = np.broadcast_to(d, (coeffs.shape[0], 3))
    if degree not in (0, 1, 2, 3):
        raise ValueError("SH degree must be 0..3")
    want = (degree + 1) ** 2
    if coeffs.shape[1] != want:
        raise ValueError(f"SH block has {coeffs.shape[1]} coefficients, degree {degree} needs {want}")
    x, y, z = d[:, 0:1], d[:, 1:2], d[:, 2:3]
    out = SH_C0 * coeffs[:, 0]
    if degree >= 1:
        out = out - SH_C1 * y * coeffs[:, 1] + SH_C1 * z * coeffs[:, 2] - SH_C1 * x * coeffs[:, 3]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out = (
            out
            + SH_C2[0] * xy * coeffs[:, 4]
            + SH_C2[1] * yz * coeffs[:, 5]
            + SH_C2[2] * (2.0 * zz - xx - yy) * coeffs[:, 6]
            + SH_C2[3] * xz * coeffs[:, 7]
            + SH_C2[4] * (xx - yy) * coeffs[:, 8]
        )
    if degree >= 3:
        out = (
            out
            + SH_C3[0] * y * (3.0 * xx - yy) * coeffs[:, 9]
            + SH_C3[1] * xy * z * coeffs[:, 10]
            + SH_C3[2] * y * (4.0 * zz - xx - yy) * coeffs[:, 11]
            + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * coeffs[:, 12]
            + SH_C3[4] * x * (4.0 * zz - xx - yy) * coeffs[:, 13]
            + SH_C3[5] * z * (xx - yy) * coeffs[:, 14]
            + SH_C3[6] * x * (xx - 3.0 * yy) * coeffs[:, 15]
        )
    out = np.maximum(out + 0.5, 0.0)
    return out[0] if single else out


def _rot2d(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    r = np.empty(theta.shape + (2, 2))
    r[..., 0, 0] = c
    r[..., 0, 1] = -s
    r[..., 1, 0] = s
    r[..., 1, 1] = c
    return r


def cov2d_from_params(theta: np.ndarray, log_scales: np.ndarray, dilation: float) -> np.ndarray:
    """2D covariance R(theta) diag(e^{2 ls}) R(theta)^T + dilation * I."""
    r = _rot2d(np.asarray(theta, dtype=np.float64))
    d = np.exp(2.0 * np.asarray(log_scales, dtype=np.float64))
    cov = np.einsum("...ik,...k,...jk->...ij", r, d, r)
    cov[..., 0, 0] += dilation
    cov[..., 1, 1] += dilation
    return cov


def project_scene(
    scene: SplatSet, camera: Camera | None, settings: RenderSettings
) -> ProjectedScene:
    """Project every splat; culled splats (behind camera / off-screen) are
    dropped. In 2D mode the projection is the identity and depth is index."""
    n = len(scene)
    if scene.mode is SceneMode.TWO_D:
        # identity projection; a full Camera degrades to its viewport here
        if isinstance(camera, _Viewport):
            vp = camera
        elif isinstance(camera, Camera):
            vp = _Viewport(camera.width, camera.height)
        else:
            raise ValueError("2D projection needs a viewport or camera for the image size")
        mean2d = scene.positions.astype(np.float64)
        cov2d = cov2d_from_params(scene.rotations, scene.log_scales, settings.cov_dilation)
        depth = np.arange(n, dtype=np.float64)
        if scene.colors is not None:
            view_color = scene.colors.astype(np.float64)
        else:
            view_color = evaluate_sh(scene.sh, np.array([0.0, 0.0, 1.0]), scene.sh_degree)
        keep = _visible_mask(mean2d, cov2d, vp.width, vp.height)
        idx = np.flatnonzero(keep)
        return ProjectedScene(
            mean2d[idx], cov2d[idx], depth[idx], view_color[idx], idx, n, vp.width, vp.height
        )

    if camera is None:
        raise ValueError("3D scenes need a camera")
    r, t = camera.rotation, camera.translation
    view = scene.positions @ r.T + t
    z = view[:, 2]
    in_front = z > NEAR_PLANE
    zs = np.where(in_front, z, 1.0)
    u = camera.fx * view[:, 0] / zs + camera.cx
    v = camera.fy * view[:, 1] / zs + camera.cy
    mean2d = np.stack([u, v], axis=1)

    rot = _quat_matrices(scene.rotations)
    s = np.exp(scene.log_scales)
    m = rot * s[:, None, :]          # R @ diag(s)
    cov_world = m @ np.transpose(m, (0, 2, 1))
    cov_cam = np.einsum("ij,njk,lk->nil", r, cov_world, r)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = camera.fx / zs
    jac[:, 1, 1] = camera.fy / zs
    jac[:, 0, 2] = -camera.fx * view[:, 0] / zs**2
    jac[:, 1, 2] = -camera.fy * view[:, 1] / zs**2
    cov2d = np.einsum("nij,njk,nlk->nil", jac, cov_cam, jac)
    cov2d[:, 0, 0] += settings.cov_dilation
    cov2d[:, 1, 1] += settings.cov_dilation

    if scene.colors is not None:
        view_color = scene.colors.astype(np.float64)
    else:
        dirs = scene.positions - camera.center()
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        dirs = dirs / np.where(norms < 1e-12, 1.0, norms)
        view_color = evaluate_sh(scene.sh, dirs, scene.sh_degree)

    keep = in_front & _visible_mask(mean2d, cov2d, camera.width, camera.height)
    idx = np.flatnonzero(keep)
    return ProjectedScene(
        mean2d[idx], cov2d[idx], z[idx], view_color[idx], idx, n, camera.width, camera.height
    )


def _quat_matrices(q: np.ndarray) -> np.ndarray:
    from .core import quat_to_matrix

    return quat_to_matrix(q)


def _visible_mask(mean2d, cov2d, width, height):
    mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    disc = np.sqrt(np.maximum(0.25 * (cov2d[:, 0, 0] - cov2d[:, 1, 1]) ** 2 + cov2d[:, 0, 1] ** 2, 0.0))
    radius = 3.0 * np.sqrt(np.maximum(mid + disc, 0.0))
    return (
        (mean2d[:, 0] + radius >= 0.0)
        & (mean2d[:, 0] - radius <= width)
        & (mean2d[:, 1] + radius >= 0.0)
        & (mean2d[:, 1] - radius <= height)
    )


@dataclass
class _Viewport:
    width: int
    height: int


def viewport(width: int, height: int) -> _Viewport:
    """Identity 'camera' for 2D scenes: just the target image size."""
    return _Viewport(width, height)


def project_splat(splat: Splat, camera: Camera | _Viewport | None, settings: RenderSettings):
    """Single-splat projection contract; returns None when culled."""
    if isinstance(splat.rotation, float) or np.ndim(splat.rotation) == 0:
        scene = SplatSet(
            mode=SceneMode.TWO_D,
            positions=splat.position[None],
            log_scales=splat.log_scale[None],
            rotations=np.asarray([splat.rotation], dtype=np.float64),
            opacity_logits=np.asarray([splat.opacity_logit]),
            colors=np.asarray(splat.color, dtype=np.float64)[None]
            if np.ndim(splat.color) == 1
            else None,
            sh=None if np.ndim(splat.color) == 1 else np.asarray(splat.color)[None],
            sh_degree=0 if np.ndim(splat.color) == 1 else int(np.sqrt(len(splat.color))) - 1,
        )
    else:
        color = np.asarray(splat.color, dtype=np.float64)
        rgb = color.ndim == 1
        scene = SplatSet(
            mode=SceneMode.THREE_D,
            positions=splat.position[None],
            log_scales=splat.log_scale[None],
            rotations=np.asarray(splat.rotation, dtype=np.float64)[None],
            opacity_logits=np.asarray([splat.opacity_logit]),
            colors=color[None] if rgb else None,
            sh=None if rgb else color[None],
            sh_degree=0 if rgb else int(np.sqrt(color.shape[0])) - 1,
        )
    proj = project_scene(scene, camera, settings)
    if len(proj) == 0:
        return None
    return proj.row(0)


def render_forward(
    proj: ProjectedScene,
    confidences: np.ndarray,
    opacity_logits: np.ndarray,
    settings: RenderSettings,
):
    """Depth-ordered alpha compositing with confidence-modulated opacity.

    Returns the (H, W, 3) image and the RenderAux contribution records.
    """
    n = proj.n_scene
    confidences = np.asarray(confidences, dtype=np.float64)
    opacity_logits = np.asarray(opacity_logits, dtype=np.float64)
    if confidences.shape != (n,) or opacity_logits.shape != (n,):
        raise ValueError("confidences/opacity_logits must match the scene splat count")
    w_img, h_img = proj.width, proj.height
    order_rows = np.argsort(proj.depth, kind="stable")

    o_eff_all = betaconf.sigmoid(opacity_logits) * confidences

    image = np.zeros((h_img * w_img, 3))
    transmittance = np.ones(h_img * w_img)

    rec_splat, rec_pixel, rec_alpha, rec_trans, rec_gauss = [], [], [], [], []
    order_ids = []
    starts = [0]
    count = 0
    skipped_singular = 0

    for row in order_rows:
        orig = int(proj.indices[row])
        cov = proj.cov2d[row]
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
        if det < _SINGULAR_DET:
            skipped_singular += 1
            continue
        inv00 = cov[1, 1] / det
        inv01 = -cov[0, 1] / det
        inv11 = cov[0, 0] / det
        mx, my = proj.mean2d[row]
        mid = 0.5 * (cov[0, 0] + cov[1, 1])
        disc = np.sqrt(max(0.25 * (cov[0, 0] - cov[1, 1]) ** 2 + cov[0, 1] ** 2, 0.0))
        radius = 3.0 * np.sqrt(mid + disc)
        x0 = max(0, int(np.floor(mx - radius)))
        x1 = min(w_img - 1, int(np.ceil(mx + radius)))
        y0 = max(0, int(np.floor(my - radius)))
        y1 = min(h_img - 1, int(np.ceil(my + radius)))
        order_ids.append(orig)
        if x0 > x1 or y0 > y1:
            starts.append(count)
            continue
        xs = np.arange(x0, x1 + 1) + 0.5
        ys = np.arange(y0, y1 + 1) + 0.5
        dx = xs - mx
        dy = ys - my
        q = (
            inv00 * dx[None, :] ** 2
            + 2.0 * inv01 * dy[:, None] * dx[None, :]
            + inv11 * dy[:, None] ** 2
        )
        gauss = np.exp(-0.5 * q).ravel()
        alpha = np.minimum(o_eff_all[orig] * gauss, settings.alpha_max)
        pix = (
            (np.arange(y0, y1 + 1)[:, None] * w_img + np.arange(x0, x1 + 1)[None, :])
            .ravel()
        )
        t_here = transmittance[pix]
        active = (alpha >= settings.alpha_min) & (t_here >= settings.transmittance_floor)
        if np.any(active):
            pa = pix[active]
            aa = alpha[active]
            ta = t_here[active]
            rec_splat.append(np.full(len(pa), orig, dtype=np.int64))
            rec_pixel.append(pa.astype(np.int64))
            rec_alpha.append(aa)
            rec_trans.append(ta)
            rec_gauss.append(gauss[active])
            image[pa] += proj.view_color[row] * (aa * ta)[:, None]
            transmittance[pa] = ta * (1.0 - aa)
            count += len(pa)
        starts.append(count)

    image += transmittance[:, None] * settings.background

    cat = lambda parts, dtype: (
        np.concatenate(parts) if parts else np.empty(0, dtype=dtype)
    )
    aux = RenderAux(
        width=w_img,
        height=h_img,
        n_splats=n,
        order=np.asarray(order_ids, dtype=np.int64),
        start=np.asarray(starts, dtype=np.int64),
        splat_index=cat(rec_splat, np.int64),
        pixel_index=cat(rec_pixel, np.int64),
        alpha=cat(rec_alpha, np.float64),
        transmittance=cat(rec_trans, np.float64),
        gauss=cat(rec_gauss, np.float64),
        final_transmittance=transmittance,
        background=settings.background.copy(),
        singular_skipped=skipped_singular,
    )
    return image.reshape(h_img, w_img, 3), aux


def render_backward(
    aux: RenderAux,
    pixel_grads: np.ndarray,
    proj: ProjectedScene,
    confidences: np.ndarray,
    opacity_logits: np.ndarray,
    settings: RenderSettings,
    with_geometry: bool = False,
) -> GradientSet:
    """Gradients of sum(pixel_grads * image) for the matching forward pass."""
    n = proj.n_scene
    if aux.n_splats != n or (aux.height, aux.width) != (proj.height, proj.width):
        raise ValueError("aux does not match this projected scene")
    if pixel_grads.shape != (aux.height, aux.width, 3):
        raise ValueError("pixel_grads shape mismatch")
    confidences = np.asarray(confidences, dtype=np.float64)
    opacity_logits = np.asarray(opacity_logits, dtype=np.float64)

    row_of = np.full(n, -1, dtype=np.int64)
    row_of[proj.indices] = np.arange(len(proj))
    sig = betaconf.sigmoid(opacity_logits)

    d_img = pixel_grads.reshape(-1, 3)
    accum = aux.background[None, :] * aux.final_transmittance[:, None]

    g_logit = np.zeros(n)
    g_conf = np.zeros(n)
    g_color = np.zeros((n, 3))
    g_mean = np.zeros((n, 2)) if with_geometry else None
    g_cov = np.zeros((n, 2, 2)) if with_geometry else None

    for k in range(len(aux.order) - 1, -1, -1):
        lo, hi = aux.start[k], aux.start[k + 1]
        orig = int(aux.order[k])
        if hi == lo:
            continue
        row = row_of[orig]
        if row < 0:
            raise ValueError("aux references a splat missing from the projection")
        sl = slice(lo, hi)
        pix = aux.pixel_index[sl]
        a = aux.alpha[sl]
        t = aux.transmittance[sl]
        g = aux.gauss[sl]
        color = proj.view_color[row]
        dl = d_img[pix]

        w = a * t
        g_color[orig] += w @ dl

        dc_da = color[None, :] * t[:, None] - accum[pix] / (1.0 - a)[:, None]
        d_a = np.einsum("mc,mc->m", dl, dc_da)

        o_eff = sig[orig] * confidences[orig]
        not_clamped = (o_eff * g) <= settings.alpha_max
        d_oeff = np.sum(d_a * g * not_clamped)
        g_conf[orig] += d_oeff * sig[orig]
        g_logit[orig] += d_oeff * confidences[orig] * sig[orig] * (1.0 - sig[orig])

        if with_geometry:
            cov = proj.cov2d[row]
            det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
            inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det
            px = (pix % aux.width) + 0.5
            py = (pix // aux.width) + 0.5
            d_vec = np.stack([px, py], axis=1)
            d_vec[:, 0] -= proj.mean2d[row, 0]
            d_vec[:, 1] -= proj.mean2d[row, 1]
            u = d_vec @ inv
            d_g = d_a * o_eff * not_clamped * g
            g_mean[orig] += d_g @ u
            g_cov[orig] += 0.5 * np.einsum("m,mi,mj->ij", d_g, u, u)

        accum[pix] += color[None, :] * w[:, None]

    return GradientSet(
        opacity_logit=g_logit, confidence=g_conf, color=g_color, mean2d=g_mean, cov2d=g_cov
    )


def accumulate_saliency(
    aux: RenderAux,
    pixel_recon_grads: np.ndarray,
    ema: np.ndarray | None = None,
    decay: float = 0.0,
) -> np.ndarray:
    """Per-splat saliency s_i = sum_p w_i(p) * |dL/dC(p)|_1, detached.

    When `ema` is given the fresh values are merged as
    decay * ema + (1 - decay) * s; decay 0 disables smoothing.
    """
    if pixel_recon_grads.shape != (aux.height, aux.width, 3):
        raise ValueError("pixel gradient shape mismatch")
    mag = np.abs(pixel_recon_grads.reshape(-1, 3)).sum(axis=1)
    s = np.zeros(aux.n_splats)
    if len(aux.splat_index):
        np.add.at(s, aux.splat_index, aux.weights() * mag[aux.pixel_index])
    if ema is not None:
        s = decay * ema + (1.0 - decay) * s
    aux.saliency = s
    return s


# 16-anchor viridis ramp (dark purple at 0 to bright yellow at 1).
_VIRIDIS = np.array(
    [
        (0.267004, 0.004874, 0.329415),
        (0.282623, 0.140926, 0.457517),
        (0.253935, 0.265254, 0.529983),
        (0.206756, 0.371758, 0.553117),
        (0.163625, 0.471133, 0.558148),
        (0.127568, 0.566949, 0.550556),
        (0.134692, 0.658636, 0.517649),
        (0.266941, 0.748751, 0.440573),
        (0.477504, 0.821444, 0.318195),
        (0.741388, 0.873449, 0.149561),
        (0.993248, 0.906157, 0.143936),
    ]
)


def confidence_colormap(values: np.ndarray) -> np.ndarray:
    """Viridis-style lookup, linear between anchors; input clipped to [0,1]."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    pos = v * (len(_VIRIDIS) - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(_VIRIDIS) - 1)
    frac = (pos - lo)[..., None]
    return (1.0 - frac) * _VIRIDIS[lo] + frac * _VIRIDIS[hi]


def render_scene(
    scene: SplatSet,
    camera,
    confidences: np.ndarray | None,
    settings: RenderSettings,
    heatmap: bool = False,
):
    """Project + composite in one call. confidences=None means c = 1
    everywhere (the unmodulated baseline). heatmap=True swaps each splat's
    color for a colormap of its confidence."""
    n = len(scene)
    conf = np.ones(n) if confidences is None else np.asarray(confidences, dtype=np.float64)
    proj = project_scene(scene, camera, settings)
    if heatmap:
        proj.view_color = confidence_colormap(conf[proj.indices])
    return render_forward(proj, conf, scene.opacity_logits, settings)


def render_heatmap(scene: SplatSet, camera, confidences: np.ndarray, settings: RenderSettings):
    """Confidence heatmap render (viridis colormap of c_i per splat)."""
    image, _ = render_scene(scene, camera, confidences, settings, heatmap=True)
    return image
