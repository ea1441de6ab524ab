"""Shared domain types: splat scenes, confidence fields, cameras, configs.

Scenes are stored struct-of-arrays (float64 numpy) for vectorized math; the
per-splat `Splat` view exists for construction and inspection at boundaries.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

# Floor added after softplus so activated Beta parameters never reach zero
# (entropy and digamma diverge at 0).
EPSILON = 1e-4

# softplus^-1(1.0): every splat starts at Beta(1,1), c = 0.5, maximal entropy.
RAW_INIT = math.log(math.e - 1.0)  # ~0.5413248546129181


class SceneMode(enum.Enum):
    TWO_D = "2d"
    THREE_D = "3d"


class DivergenceError(RuntimeError):
    """Raised when an optimization loop produces a non-finite loss."""


class SchemaError(ValueError):
    """Raised for malformed external data (camera JSON, config TOML)."""


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ValueError("zero-norm rotation quaternion")
    return q / norm


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (..., 4) wxyz -> rotation matrices (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


@dataclass
class Splat:
    """One splat's attributes, as copied out of a SplatSet."""

    position: np.ndarray      # (3,) world units, (2,) pixels in 2D mode
    log_scale: np.ndarray     # (3,) or (2,)
    rotation: np.ndarray      # unit quaternion (4,) wxyz, or scalar angle in 2D
    color: np.ndarray         # (3,) rgb in [0,1] or ((deg+1)^2, 3) SH block
    opacity_logit: float


@dataclass
class SplatSet:
    """Ordered splat collection, struct-of-arrays.

    Exactly one of `colors` (N,3 plain rgb) and `sh` (N,(deg+1)^2,3 spherical
    harmonic coefficients) is set. 2D-mode rotations are scalar angles (N,);
    3D rotations are unit quaternions (N,4) wxyz.
    """

    mode: SceneMode
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray | None = None
    sh: np.ndarray | None = None
    sh_degree: int = 0

    def __post_init__(self):
        n = len(self.positions)
        if n < 1:
            raise ValueError("SplatSet needs at least one splat")
        if (self.colors is None) == (self.sh is None):
            raise ValueError("exactly one of colors/sh must be set")
        if self.sh is not None:
            if self.sh_degree not in (0, 1, 2, 3):
                raise ValueError(f"SH degree must be 0..3, got {self.sh_degree}")
            want = (self.sh_degree + 1) ** 2
            if self.sh.shape != (n, want, 3):
                raise ValueError(
                    f"sh shape {self.sh.shape} != ({n}, {want}, 3) for degree {self.sh_degree}"
                )
        dim = 2 if self.mode is SceneMode.TWO_D else 3
        if self.positions.shape != (n, dim):
            raise ValueError(f"positions shape {self.positions.shape}, expected ({n}, {dim})")
        if self.log_scales.shape != (n, dim):
            raise ValueError(f"log_scales shape {self.log_scales.shape}, expected ({n}, {dim})")
        if not np.all(np.isfinite(self.log_scales)):
            raise ValueError("log_scales must be finite")
        if self.mode is SceneMode.THREE_D:
            if self.rotations.shape != (n, 4):
                raise ValueError("3D rotations must be (N, 4) quaternions")
            norms = np.linalg.norm(self.rotations, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("rotation quaternions must have unit norm within 1e-6")
        else:
            if self.rotations.shape != (n,):
                raise ValueError("2D rotations must be (N,) angles")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def color_space(self) -> str:
        return "rgb" if self.colors is not None else "sh"

    def splat(self, i: int) -> Splat:
        color = self.colors[i] if self.colors is not None else self.sh[i]
        rot = self.rotations[i]
        return Splat(
            position=self.positions[i].copy(),
            log_scale=self.log_scales[i].copy(),
            rotation=rot.copy() if isinstance(rot, np.ndarray) else float(rot),
            color=np.array(color, copy=True),
            opacity_logit=float(self.opacity_logits[i]),
        )

    def take(self, indices: np.ndarray) -> "SplatSet":
        """New SplatSet keeping the given indices, order preserved."""
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            positions=self.positions[indices].copy(),
            log_scales=self.log_scales[indices].copy(),
            rotations=self.rotations[indices].copy(),
            opacity_logits=self.opacity_logits[indices].copy(),
            colors=None if self.colors is None else self.colors[indices].copy(),
            sh=None if self.sh is None else self.sh[indices].copy(),
        )

    def copy(self) -> "SplatSet":
        return self.take(np.arange(len(self)))


@dataclass
class ConfidenceField:
    """Raw pre-softplus Beta parameters, one (raw_alpha, raw_beta) per splat."""

    raw_alpha: np.ndarray
    raw_beta: np.ndarray

    def __post_init__(self):
        self.raw_alpha = np.asarray(self.raw_alpha, dtype=np.float64)
        self.raw_beta = np.asarray(self.raw_beta, dtype=np.float64)
        if self.raw_alpha.shape != self.raw_beta.shape or self.raw_alpha.ndim != 1:
            raise ValueError("raw_alpha/raw_beta must be matching 1-D arrays")
        if not (np.all(np.isfinite(self.raw_alpha)) and np.all(np.isfinite(self.raw_beta))):
            raise ValueError("confidence raws must be finite")

    def __len__(self) -> int:
        return len(self.raw_alpha)

    @classmethod
    def initial(cls, n: int) -> "ConfidenceField":
        return cls(np.full(n, RAW_INIT), np.full(n, RAW_INIT))

    def confidences(self) -> np.ndarray:
        from . import betaconf

        return betaconf.confidence(self.raw_alpha, self.raw_beta)

    def take(self, indices: np.ndarray) -> "ConfidenceField":
        indices = np.asarray(indices, dtype=np.int64)
        return ConfidenceField(self.raw_alpha[indices].copy(), self.raw_beta[indices].copy())

    def copy(self) -> "ConfidenceField":
        return ConfidenceField(self.raw_alpha.copy(), self.raw_beta.copy())


@dataclass
class Camera:
    """Pinhole camera. Convention: +z forward, y down, x right (COLMAP-style);
    view = R @ world + t, pixel u = fx*x/z + cx, v = fy*y/z + cy."""

    rotation: np.ndarray   # (3,3) world-to-camera
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    cam_id: int = 0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3):
            raise ValueError("camera rotation must be 3x3")
        drift = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if drift > 1e-6:
            raise ValueError(f"camera rotation not orthonormal (drift {drift:.2e})")
        if self.width < 1 or self.height < 1:
            raise ValueError("camera image size must be >= 1")

    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass
class LossWeights:
    """Weights of the combined objective; reconstruction is always weight 1."""

    lambda_sparse: float = 0.01
    lambda_entropy: float = 0.001
    lambda_saliency: float = 0.01
    recon_ssim_mix: float = 0.2

    def __post_init__(self):
        if min(self.lambda_sparse, self.lambda_entropy, self.lambda_saliency) < 0:
            raise ValueError("loss weights must be nonnegative")
        if not 0.0 <= self.recon_ssim_mix <= 1.0:
            raise ValueError("recon_ssim_mix must lie in [0, 1]")


@dataclass
class SaliencyConfig:
    pairs_per_step: int = 64
    quantile: float = 0.25
    ema_decay: float = 0.9

    def __post_init__(self):
        if self.pairs_per_step < 1:
            raise ValueError("pairs_per_step must be positive")
        if not 0.0 < self.quantile <= 0.5:
            raise ValueError("quantile must lie in (0, 0.5]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")


@dataclass
class RenderAux:
    """Per-frame compositing records, grouped contiguously by depth-sorted splat.

    Records exist for every surviving contribution: splat `splat_index[k]`
    touched pixel `pixel_index[k]` (row-major) with opacity `alpha[k]`,
    entering transmittance `transmittance[k]` and Gaussian falloff `gauss[k]`.
    `order` lists splat ids front-to-back; `start[j]:start[j+1]` slices the
    records of `order[j]`. Blend weight w = alpha * transmittance.
    """

    width: int
    height: int
    n_splats: int
    order: np.ndarray          # (S,) depth-sorted surviving splat ids
    start: np.ndarray          # (S+1,) record offsets per sorted splat
    splat_index: np.ndarray    # (M,)
    pixel_index: np.ndarray    # (M,)
    alpha: np.ndarray          # (M,)
    transmittance: np.ndarray  # (M,)
    gauss: np.ndarray          # (M,)
    final_transmittance: np.ndarray  # (H*W,)
    background: np.ndarray     # (3,)
    singular_skipped: int = 0
    saliency: np.ndarray | None = None

    def weights(self) -> np.ndarray:
        return self.alpha * self.transmittance

    def validate_indices(self):
        if len(self.splat_index) and self.splat_index.max() >= self.n_splats:
            raise ValueError("RenderAux splat index out of range")


@dataclass
class SweepRow:
    tau: float
    kept: int
    psnr: float
    ssim: float
    sqr: float
    acs: float


@dataclass
class GumbelConfig:
    enabled: bool = False
    mode: str = "additive"   # or "multiplicative"
    temperature: float = 2.0

    def __post_init__(self):
        if self.mode not in ("additive", "multiplicative"):
            raise ValueError("gumbel mode must be additive or multiplicative")
        if self.temperature <= 0:
            raise ValueError("gumbel temperature must be > 0")


@dataclass
class TrainConfig:
    iterations: int = 1000
    lr_confidence: float = 0.01
    lr_geometry: float = 0.02
    lr_color: float = 0.01
    lr_opacity: float = 0.05
    weights: LossWeights = field(default_factory=LossWeights)
    saliency: SaliencyConfig = field(default_factory=SaliencyConfig)
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)
    seed: int = 42
    snapshot_every: int = 50
    cameras_per_step: int = 1

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("lr_confidence", "lr_geometry", "lr_color", "lr_opacity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.cameras_per_step < 1:
            raise ValueError("cameras_per_step must be >= 1")
