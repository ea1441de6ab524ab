"""Shared synthetic scene builders for the test suite."""

from __future__ import annotations

import numpy as np

from confsplat.core import Camera, ConfidenceField, SceneMode, SplatSet
from confsplat.core import quat_normalize


def random_scene_2d(n=10, width=16, height=16, seed=0):
    rng = np.random.default_rng(seed)
    scene = SplatSet(
        mode=SceneMode.TWO_D,
        positions=rng.uniform(2.0, min(width, height) - 2.0, size=(n, 2)),
        log_scales=np.log(rng.uniform(0.8, 2.5, size=(n, 2))),
        rotations=rng.uniform(0.0, np.pi, size=n),
        opacity_logits=rng.uniform(-1.0, 2.0, size=n),
        colors=rng.uniform(0.2, 0.8, size=(n, 3)),
    )
    field = ConfidenceField(rng.normal(0.5, 0.5, size=n), rng.normal(0.5, 0.5, size=n))
    return scene, field


def random_scene_3d(n=10, width=16, height=16, seed=0, sh_degree=None):
    rng = np.random.default_rng(seed)
    kwargs = {}
    if sh_degree is None:
        kwargs["colors"] = rng.uniform(0.2, 0.8, size=(n, 3))
    else:
        k = (sh_degree + 1) ** 2
        sh = rng.uniform(-0.3, 0.3, size=(n, k, 3))
        sh[:, 0, :] = rng.uniform(-0.5, 0.5, size=(n, 3))
        kwargs["sh"] = sh
        kwargs["sh_degree"] = sh_degree
    scene = SplatSet(
        mode=SceneMode.THREE_D,
        positions=np.column_stack(
            [
                rng.uniform(-1.2, 1.2, size=n),
                rng.uniform(-1.2, 1.2, size=n),
                rng.uniform(3.0, 6.0, size=n),
            ]
        ),
        log_scales=np.log(rng.uniform(0.08, 0.35, size=(n, 3))),
        rotations=quat_normalize(rng.normal(size=(n, 4))),
        opacity_logits=rng.uniform(-1.0, 2.0, size=n),
        **kwargs,
    )
    field = ConfidenceField(rng.normal(0.5, 0.5, size=n), rng.normal(0.5, 0.5, size=n))
    return scene, field


def simple_camera(width=16, height=16, fx=20.0, fy=None, cam_id=0):
    return Camera(
        rotation=np.eye(3),
        translation=np.zeros(3),
        fx=fx,
        fy=fx if fy is None else fy,
        cx=width / 2.0,
        cy=height / 2.0,
        width=width,
        height=height,
        cam_id=cam_id,
    )


def occluded_duplicate_scene(nx=6, ny=5, seed=13):
    """Grid of camera-facing splats, each with an exact twin directly behind
    it along +z. Returns (full scene, visible-only scene, duplicate ids,
    frontal camera). Ground truth for Mode B = renders of the visible half."""
    rng = np.random.default_rng(seed)
    gx, gy = np.meshgrid(np.linspace(-1.0, 1.0, nx), np.linspace(-0.8, 0.8, ny))
    n = gx.size
    pos = np.column_stack([gx.ravel(), gy.ravel(), np.full(n, 4.0)])
    ls = np.log(rng.uniform(0.10, 0.14, (n, 3)))
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    logits = rng.uniform(5.0, 7.0, n)
    colors = rng.uniform(0.2, 0.8, (n, 3))
    visible = SplatSet(
        mode=SceneMode.THREE_D,
        positions=pos,
        log_scales=ls,
        rotations=rot,
        opacity_logits=logits,
        colors=colors,
    )
    full = SplatSet(
        mode=SceneMode.THREE_D,
        positions=np.vstack([pos, pos + [0.0, 0.0, 0.5]]),
        log_scales=np.vstack([ls, ls]),
        rotations=np.vstack([rot, rot]),
        opacity_logits=np.concatenate([logits, logits]),
        colors=np.vstack([colors, colors]),
    )
    camera = Camera(
        rotation=np.eye(3),
        translation=np.zeros(3),
        fx=30.0,
        fy=30.0,
        cx=16.0,
        cy=16.0,
        width=32,
        height=32,
    )
    return full, visible, np.arange(n, 2 * n), camera


def orbit_cameras(count, radius=5.0, width=16, height=16, fx=20.0):
    """Cameras on a horizontal circle, all looking at the origin."""
    cams = []
    for k in range(count):
        angle = 2.0 * np.pi * k / count
        center = np.array([radius * np.sin(angle), 0.0, -radius * np.cos(angle)])
        forward = -center / np.linalg.norm(center)  # toward origin (+z forward)
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(up, forward)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])  # world-to-cam rows
        cams.append(
            Camera(
                rotation=rot,
                translation=-rot @ center,
                fx=fx,
                fy=fx,
                cx=width / 2.0,
                cy=height / 2.0,
                width=width,
                height=height,
                cam_id=k,
            )
        )
    return cams
