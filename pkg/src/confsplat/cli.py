"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (parse/validation/file),
3 numerical divergence. All randomness flows from --seed (default 42).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import compress, raster, sceneio, train
from .core import DivergenceError, SchemaError, TrainConfig
from .raster import RenderSettings

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def parse_tau_range(spec: str) -> list[float]:
    """`start:stop:step` inclusive of both ends (1e-9 slack), or one value."""
    parts = spec.split(":")
    if len(parts) == 1:
        return [float(parts[0])]
    if len(parts) != 3:
        raise ValueError(f"bad tau range {spec!r}: expected start:stop:step")
    start, stop, step = (float(p) for p in parts)
    if step <= 0:
        raise ValueError("tau range step must be positive")
    taus = []
    t = start
    while t <= stop + 1e-9:
        taus.append(round(t, 12))
        t += step
    return taus


def _load_config(path) -> sceneio.Config:
    if path is None:
        return sceneio.Config(train=TrainConfig(), render=RenderSettings(), hash="defaults")
    return sceneio.load_config(path)


def _load_targets(cameras, image_paths):
    targets = []
    for cam, img_path in zip(cameras, image_paths):
        if img_path is None:
            return None
        img = sceneio.read_image(img_path)
        if img.shape[:2] != (cam.height, cam.width):
            raise SchemaError(
                f"target {img_path} is {img.shape[1]}x{img.shape[0]}, camera {cam.cam_id} "
                f"expects {cam.width}x{cam.height}"
            )
        targets.append(img)
    return targets


def _cmd_fit2d(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.iterations is not None:
        cfg.train.iterations = args.iterations
    target = sceneio.read_image(args.target)
    result = train.fit_2d(target, args.splats, cfg.train, cfg.render)
    sceneio.save_ply(result.scene, result.field, args.out, include_convenience_confidence=True)
    Path(args.out).with_suffix(".history.csv").write_text(train.history_csv(result.history))
    print(f"wrote {args.out} ({args.splats} splats, {cfg.train.iterations} iterations)")
    return EXIT_OK


def _cmd_fit_confidence(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.iterations is not None:
        cfg.train.iterations = args.iterations
    scene, _ = sceneio.load_ply(args.scene)
    cameras, image_paths = sceneio.load_cameras(args.cameras)
    targets = None if args.self_supervised else _load_targets(cameras, image_paths)
    if targets is None and not args.self_supervised:
        raise SchemaError(
            "cameras file lists no target images; pass --self-supervised to fit "
            "against the scene's own c=1 renders"
        )
    result = train.fit_confidence(scene, cameras, cfg.train, targets, cfg.render)
    sceneio.save_ply(result.scene, result.field, args.out, include_convenience_confidence=True)
    Path(args.out).with_suffix(".history.csv").write_text(train.history_csv(result.history))
    print(f"wrote {args.out} (confidence fitted over {len(cameras)} views)")
    return EXIT_OK


def _require_field(field, path):
    if field is None:
        raise SchemaError(f"{path} carries no confidence extension; run fit-confidence first")
    return field


def _cmd_prune(args) -> int:
    scene, field = sceneio.load_ply(args.scene)
    field = _require_field(field, args.scene)
    pruned_scene, pruned_field, kept = compress.prune(scene, field, args.tau)
    if pruned_scene is None:
        raise SchemaError(f"tau {args.tau} prunes every splat; nothing to write")
    sceneio.save_ply(pruned_scene, pruned_field, args.out, include_convenience_confidence=True)
    print(f"kept {len(kept)}/{len(scene)} splats at tau={args.tau}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    scene, field = sceneio.load_ply(args.scene)
    field = _require_field(field, args.scene)
    cfg = _load_config(args.config)
    cameras, image_paths = sceneio.load_cameras(args.cameras)
    targets = _load_targets(cameras, image_paths)
    if targets is None:
        targets = [
            raster.render_scene(scene, cam, None, cfg.render)[0] for cam in cameras
        ]
    taus = parse_tau_range(args.taus)
    rows = compress.sweep(scene, field, cameras, targets, taus, cfg.render)
    if args.csv:
        Path(args.csv).write_text(compress.sweep_csv(rows))
    if args.report:
        report = compress.sweep_report(rows, scene, cfg.hash, cfg.train.seed)
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    for row in rows:
        print(
            f"tau={row.tau:.3f} kept={row.kept} psnr={row.psnr:.3f} "
            f"ssim={row.ssim:.4f} sqr={row.sqr:.4f} acs={row.acs:.4f}"
        )
    return EXIT_OK


def _cmd_render(args) -> int:
    scene, field = sceneio.load_ply(args.scene)
    cfg = _load_config(args.config)
    cameras, _ = sceneio.load_cameras(args.cameras)
    by_id = {c.cam_id: c for c in cameras}
    if args.camera_id not in by_id:
        raise SchemaError(f"camera id {args.camera_id} not in {sorted(by_id)}")
    camera = by_id[args.camera_id]
    if args.tau is not None:
        field = _require_field(field, args.scene)
        scene, field, _ = compress.prune(scene, field, args.tau)
    if scene is None:
        image = np.broadcast_to(cfg.render.background, (camera.height, camera.width, 3)).copy()
    else:
        conf = None if field is None else field.confidences()
        image, _ = raster.render_scene(scene, camera, conf, cfg.render, heatmap=args.heatmap)
    sceneio.write_image(image, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    from . import serve

    cfg = _load_config(args.config)
    scene, field = sceneio.load_ply(args.scene)
    cameras, image_paths = sceneio.load_cameras(args.cameras)
    targets = _load_targets(cameras, image_paths)
    server = serve.build_server(
        scene, field, cameras, targets, cfg.render, host=args.host, port=args.port
    )
    print(f"serving on http://{args.host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="confsplat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit2d", help="jointly fit a 2D splat scene + confidences to a PNG")
    p.add_argument("--target", required=True)
    p.add_argument("--splats", type=int, required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=_cmd_fit2d)

    p = sub.add_parser("fit-confidence", help="fit confidences on a frozen scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--self-supervised", action="store_true")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=_cmd_fit_confidence)

    p = sub.add_parser("prune", help="threshold-prune a confidence-annotated scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser(
        "sweep",
        help="quality/size curve over a tau grid",
        description="Metrics compare against the cameras' target images when "
        "listed, else against the scene's own unmodulated (c=1) renders.",
    )
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--taus", required=True, help="start:stop:step or single value")
    p.add_argument("--csv")
    p.add_argument("--report")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("render", help="render one camera view to PNG")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--camera-id", type=int, required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--heatmap", action="store_true")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("serve", help="HTTP render/metrics service for the knob UI")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_serve)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (SchemaError, sceneio.PlyParseError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
