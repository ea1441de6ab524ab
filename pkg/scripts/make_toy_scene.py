#!/usr/bin/env python3
"""Build a synthetic 3D scene with occluded-duplicate redundancy plus a
camera ring, render ground-truth views, and write everything to a directory
ready for the CLI:

    python3 scripts/make_toy_scene.py out/
    confsplat fit-confidence --scene out/scene.ply --cameras out/cameras.json \
        --out out/scene_conf.ply
    confsplat sweep --scene out/scene_conf.ply --cameras out/cameras.json \
        --taus 0:1:0.05 --csv out/sweep.csv
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from confsplat import raster, sceneio
from confsplat.core import Camera, SceneMode, SplatSet
from confsplat.raster import RenderSettings


def build_scene(rng, nx=7, ny=5, dup_fraction=1.0):
    gx, gy = np.meshgrid(np.linspace(-1.1, 1.1, nx), np.linspace(-0.85, 0.85, ny))
    n = gx.size
    pos = np.column_stack([gx.ravel(), gy.ravel(), np.full(n, 4.0)])
    pos[:, :2] += rng.uniform(-0.05, 0.05, (n, 2))
    ls = np.log(rng.uniform(0.09, 0.15, (n, 3)))
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    logits = rng.uniform(5.0, 7.0, n)
    colors = rng.uniform(0.15, 0.85, (n, 3))

    n_dup = int(dup_fraction * n)
    dup_pick = rng.permutation(n)[:n_dup]
    full = SplatSet(
        mode=SceneMode.THREE_D,
        positions=np.vstack([pos, pos[dup_pick] + [0.0, 0.0, 0.5]]),
        log_scales=np.vstack([ls, ls[dup_pick]]),
        rotations=np.vstack([rot, rot[dup_pick]]),
        opacity_logits=np.concatenate([logits, logits[dup_pick]]),
        colors=np.vstack([colors, colors[dup_pick]]),
    )
    visible = SplatSet(
        mode=SceneMode.THREE_D,
        positions=pos, log_scales=ls, rotations=rot,
        opacity_logits=logits, colors=colors,
    )
    return full, visible


def frontal_cameras(count, width=48, height=48, fx=40.0):
    cams = []
    for k in range(count):
        # small lateral offsets, all looking straight down +z
        offset = np.array([0.3 * (k - (count - 1) / 2.0), 0.0, 0.0])
        cams.append(
            Camera(
                rotation=np.eye(3),
                translation=-offset,
                fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                width=width, height=height, cam_id=k,
            )
        )
    return cams


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", help="output directory")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--cameras", type=int, default=3)
    args = parser.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    full, visible = build_scene(rng)
    cams = frontal_cameras(args.cameras)
    settings = RenderSettings()

    sceneio.save_ply(full, None, out / "scene.ply")
    entries = []
    for cam in cams:
        img, _ = raster.render_scene(visible, cam, None, settings)
        name = f"view_{cam.cam_id:02d}.png"
        sceneio.write_image(img, out / name)
        entries.append(
            {
                "id": cam.cam_id,
                "width": cam.width,
                "height": cam.height,
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "rotation": list(cam.rotation.ravel()),
                "translation": list(cam.translation),
                "image": name,
            }
        )
    (out / "cameras.json").write_text(json.dumps(entries, indent=2) + "\n")
    print(f"wrote {out}/scene.ply ({len(full)} splats, half redundant), "
          f"{args.cameras} cameras + ground-truth views")
    return 0


if __name__ == "__main__":
    sys.exit(main())
