"""Persistence: the 3DGS-standard PLY vertex schema with an optional
confidence extension, camera JSON, 8-bit PNG images, and the TOML config.

PLY schema (all float32, binary little-endian on write, ASCII also accepted
on read):

    x y z nx ny nz f_dc_0..2 [f_rest_0..(3K-4)] opacity
    scale_0..2 rot_0..3 [conf_alpha_raw conf_beta_raw [confidence]]

f_rest is channel-major (all R coefficients, then G, then B) as in the
reference 3DGS exports; the SH degree is inferred from the f_rest count.
Confidence persists as the *raw* pre-softplus pair so training can resume
exactly; the derived `confidence` property is a convenience for third-party
viewers. 2D scenes reuse the same schema with z = 0, the in-plane rotation
encoded as a z-axis quaternion, and a header comment marking the mode.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import (
    Camera,
    ConfidenceField,
    GumbelConfig,
    LossWeights,
    SaliencyConfig,
    SceneMode,
    SchemaError,
    SplatSet,
    TrainConfig,
)
from .raster import RenderSettings

SH_C0 = 0.28209479177387814
_MODE_COMMENT = "confsplat_mode"
_REST_TO_DEGREE = {0: 0, 9: 1, 24: 2, 45: 3}


class PlyParseError(ValueError):
    """Malformed PLY; carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _base_properties(sh_degree: int) -> list[str]:
    n_rest = 3 * ((sh_degree + 1) ** 2 - 1)
    props = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    props += [f"f_rest_{i}" for i in range(n_rest)]
    props += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return props


def save_ply(
    scene: SplatSet,
    field: ConfidenceField | None,
    path,
    include_convenience_confidence: bool = False,
):
    """Write the scene (and confidence raws, if given) as binary PLY."""
    n = len(scene)
    if n == 0:
        raise ValueError("refusing to write an empty SplatSet")
    if field is not None and len(field) != n:
        raise ValueError("confidence field length does not match the scene")

    if scene.mode is SceneMode.TWO_D:
        xyz = np.column_stack([scene.positions, np.zeros(n)])
        scales = np.column_stack([scene.log_scales, np.zeros(n)])
        half = scene.rotations / 2.0
        rots = np.column_stack(
            [np.cos(half), np.zeros(n), np.zeros(n), np.sin(half)]
        )
    else:
        xyz = scene.positions
        scales = scene.log_scales
        rots = scene.rotations

    if scene.sh is not None:
        degree = scene.sh_degree
        dc = scene.sh[:, 0, :]
        rest = scene.sh[:, 1:, :]  # (N, K-1, 3)
        rest_flat = np.transpose(rest, (0, 2, 1)).reshape(n, -1)  # channel-major
    else:
        degree = 0
        dc = (scene.colors - 0.5) / SH_C0
        rest_flat = np.zeros((n, 0))

    cols = [
        xyz,
        np.zeros((n, 3)),  # normals, ignored by loaders
        dc,
        rest_flat,
        scene.opacity_logits[:, None],
        scales,
        rots,
    ]
    props = _base_properties(degree)
    if field is not None:
        props += ["conf_alpha_raw", "conf_beta_raw"]
        cols += [field.raw_alpha[:, None], field.raw_beta[:, None]]
        if include_convenience_confidence:
            props.append("confidence")
            cols.append(field.confidences()[:, None])
    data = np.ascontiguousarray(np.hstack(cols).astype(np.float32))

    header = ["ply", "format binary_little_endian 1.0"]
    if scene.mode is SceneMode.TWO_D:
        header.append(f"comment {_MODE_COMMENT} 2d")
    header.append(f"element vertex {n}")
    header += [f"property float {p}" for p in props]
    header.append("end_header")

    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def _parse_header(raw: bytes):
    end = raw.find(b"end_header\n")
    if end < 0:
        raise PlyParseError("missing end_header", offset=len(raw))
    body_start = end + len(b"end_header\n")
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("not a PLY file (missing 'ply' magic)", offset=0)
    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    comments: dict[str, str] = {}
    in_vertex = False
    for line in lines[1:]:
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "comment":
            if len(parts) >= 3:
                comments[parts[1]] = parts[2]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if len(parts) != 3:
                raise PlyParseError(f"unsupported property line: {line!r}")
            props.append((parts[2], parts[1]))  # (name, type)
    if fmt not in ("binary_little_endian", "ascii"):
        raise PlyParseError(f"unsupported PLY format {fmt!r}")
    if count is None:
        raise PlyParseError("no vertex element in header")
    return fmt, count, props, comments, body_start


def load_ply(path):
    """Parse a 3DGS-schema PLY; returns (SplatSet, ConfidenceField | None)."""
    raw = Path(path).read_bytes()
    fmt, count, props, comments, body_start = _parse_header(raw)
    names = [p[0] for p in props]
    for name, typ in props:
        if typ not in ("float", "float32"):
            raise PlyParseError(f"property {name} has unsupported type {typ}")

    if fmt == "binary_little_endian":
        stride = 4 * len(names)
        need = body_start + stride * count
        if len(raw) < need:
            have = (len(raw) - body_start) // stride
            raise PlyParseError(
                f"truncated file: vertex element {have} of {count} is incomplete",
                offset=len(raw),
            )
        table = np.frombuffer(
            raw, dtype="<f4", count=count * len(names), offset=body_start
        ).reshape(count, len(names))
    else:
        text = raw[body_start:].decode("ascii", errors="replace").split()
        need = count * len(names)
        if len(text) < need:
            raise PlyParseError(
                f"truncated file: vertex element {len(text) // len(names)} of {count} is incomplete",
                offset=len(raw),
            )
        table = np.asarray(text[:need], dtype=np.float64).astype(np.float32).reshape(
            count, len(names)
        )

    col = {name: table[:, i] for i, name in enumerate(names)}
    required = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    missing = [r for r in required if r not in col]
    if missing:
        raise PlyParseError(f"unknown property layout: missing {missing}")
    n_rest = sum(1 for name in names if name.startswith("f_rest_"))
    if n_rest not in _REST_TO_DEGREE:
        raise PlyParseError(f"unknown property layout: {n_rest} f_rest properties")
    degree = _REST_TO_DEGREE[n_rest]

    k = (degree + 1) ** 2
    sh = np.zeros((count, k, 3), dtype=np.float64)
    sh[:, 0, 0] = col["f_dc_0"]
    sh[:, 0, 1] = col["f_dc_1"]
    sh[:, 0, 2] = col["f_dc_2"]
    if k > 1:
        rest = np.stack([col[f"f_rest_{i}"] for i in range(n_rest)], axis=1)
        sh[:, 1:, :] = np.transpose(rest.reshape(count, 3, k - 1), (0, 2, 1))

    rots = np.column_stack([col["rot_0"], col["rot_1"], col["rot_2"], col["rot_3"]])
    mode2d = comments.get(_MODE_COMMENT) == "2d"
    if mode2d:
        theta = 2.0 * np.arctan2(rots[:, 3].astype(np.float64), rots[:, 0].astype(np.float64))
        scene = SplatSet(
            mode=SceneMode.TWO_D,
            positions=np.column_stack([col["x"], col["y"]]).astype(np.float64),
            log_scales=np.column_stack([col["scale_0"], col["scale_1"]]).astype(np.float64),
            rotations=theta,
            opacity_logits=col["opacity"].astype(np.float64),
            colors=sh[:, 0, :] * SH_C0 + 0.5 if degree == 0 else None,
            sh=None if degree == 0 else sh,
            sh_degree=degree,
        )
    else:
        from .core import quat_normalize

        scene = SplatSet(
            mode=SceneMode.THREE_D,
            positions=np.column_stack([col["x"], col["y"], col["z"]]).astype(np.float64),
            log_scales=np.column_stack(
                [col["scale_0"], col["scale_1"], col["scale_2"]]
            ).astype(np.float64),
            rotations=quat_normalize(rots.astype(np.float64)),
            opacity_logits=col["opacity"].astype(np.float64),
            sh=sh,
            sh_degree=degree,
        )

    field = None
    if "conf_alpha_raw" in col and "conf_beta_raw" in col:
        field = ConfidenceField(
            col["conf_alpha_raw"].astype(np.float64), col["conf_beta_raw"].astype(np.float64)
        )
    return scene, field


def load_cameras(path):
    """Camera JSON: array of {id, width, height, fx, fy, cx, cy,
    rotation: [9 row-major], translation: [3], image?: relative path}.

    Returns (cameras, target image paths aligned with cameras; None where
    absent). Rotations drifting up to 1e-3 from orthonormal are projected
    back; beyond that the entry is rejected."""
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid camera JSON: {e}") from e
    if not isinstance(spec, list):
        raise SchemaError("$: expected a JSON array of cameras")
    cameras, images = [], []
    for idx, entry in enumerate(spec):
        where = f"$[{idx}]"
        if not isinstance(entry, dict):
            raise SchemaError(f"{where}: expected an object")
        for key in ("id", "width", "height", "fx", "fy", "cx", "cy", "rotation", "translation"):
            if key not in entry:
                raise SchemaError(f"{where}.{key}: missing")
        rot = np.asarray(entry["rotation"], dtype=np.float64)
        if rot.shape != (9,):
            raise SchemaError(f"{where}.rotation: expected 9 floats, got shape {rot.shape}")
        rot = rot.reshape(3, 3)
        drift = np.abs(rot @ rot.T - np.eye(3)).max()
        if drift > 1e-3:
            raise SchemaError(f"{where}.rotation: not orthonormal (drift {drift:.2e})")
        if drift > 1e-9:
            u, _, vt = np.linalg.svd(rot)
            rot = u @ vt
        trans = np.asarray(entry["translation"], dtype=np.float64)
        if trans.shape != (3,):
            raise SchemaError(f"{where}.translation: expected 3 floats")
        try:
            cameras.append(
                Camera(
                    rotation=rot,
                    translation=trans,
                    fx=float(entry["fx"]),
                    fy=float(entry["fy"]),
                    cx=float(entry["cx"]),
                    cy=float(entry["cy"]),
                    width=int(entry["width"]),
                    height=int(entry["height"]),
                    cam_id=int(entry["id"]),
                )
            )
        except ValueError as e:
            raise SchemaError(f"{where}: {e}") from e
        images.append(str(path.parent / entry["image"]) if entry.get("image") else None)
    return cameras, images


def read_image(path):
    """8-bit RGB PNG -> float (H, W, 3) in [0, 1] (value / 255)."""
    with PILImage.open(path) as im:
        if im.format != "PNG":
            raise ValueError(f"unsupported format {im.format!r}: only 8-bit RGB PNG")
        if im.mode != "RGB":
            raise ValueError(f"unsupported PNG mode {im.mode!r}: only 8-bit RGB")
        arr = np.asarray(im, dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def encode_image(img: np.ndarray) -> bytes:
    """Encode to PNG bytes with round-half-up 8-bit quantization."""
    import io as _io

    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    buf = _io.BytesIO()
    PILImage.fromarray(q, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_image(img: np.ndarray, path):
    Path(path).write_bytes(encode_image(img))


_CONFIG_SCHEMA = {
    "seed": int,
    "train": {
        "iterations": int,
        "lr_confidence": float,
        "lr_geometry": float,
        "lr_color": float,
        "lr_opacity": float,
        "snapshot_every": int,
        "cameras_per_step": int,
    },
    "loss": {
        "lambda_sparse": float,
        "lambda_entropy": float,
        "lambda_saliency": float,
        "recon_ssim_mix": float,
    },
    "saliency": {
        "pairs_per_step": int,
        "quantile": float,
        "ema_decay": float,
    },
    "gumbel": {
        "enabled": bool,
        "mode": str,
        "temperature": float,
    },
    "render": {
        "background": list,
        "alpha_min": float,
        "alpha_max": float,
        "transmittance_floor": float,
        "cov_dilation": float,
    },
}


@dataclass
class Config:
    train: TrainConfig
    render: RenderSettings
    hash: str

    @property
    def weights(self) -> LossWeights:
        return self.train.weights


def _coerce(value, typ, where):
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if not isinstance(value, typ):
        raise SchemaError(f"{where}: expected {typ.__name__}, got {type(value).__name__}")
    return value


def _canonical(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def load_config(path) -> Config:
    """Parse the TOML config; unknown keys are rejected, every key has a
    documented default, and a stable content hash is recorded for reports."""
    raw = Path(path).read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise SchemaError(f"invalid TOML: {e}") from e

    values = {}
    for section, schema in _CONFIG_SCHEMA.items():
        if isinstance(schema, dict):
            sub = data.pop(section, {})
            if not isinstance(sub, dict):
                raise SchemaError(f"{section}: expected a table")
            out = {}
            for key, typ in schema.items():
                if key in sub:
                    out[key] = _coerce(sub.pop(key), typ, f"{section}.{key}")
            if sub:
                raise SchemaError(f"{section}: unknown keys {sorted(sub)}")
            values[section] = out
        else:
            if section in data:
                values[section] = _coerce(data.pop(section), schema, section)
    if data:
        raise SchemaError(f"unknown top-level keys {sorted(data)}")

    try:
        weights = LossWeights(**values.get("loss", {}))
        saliency = SaliencyConfig(**values.get("saliency", {}))
        gumbel = GumbelConfig(**values.get("gumbel", {}))
        train = TrainConfig(
            weights=weights,
            saliency=saliency,
            gumbel=gumbel,
            seed=values.get("seed", 42),
            **values.get("train", {}),
        )
        render_kwargs = dict(values.get("render", {}))
        if "background" in render_kwargs:
            bg = render_kwargs["background"]
            if len(bg) != 3 or not all(isinstance(v, (int, float)) for v in bg):
                raise SchemaError("render.background: expected 3 numbers")
            render_kwargs["background"] = np.asarray(bg, dtype=np.float64)
        render = RenderSettings(**render_kwargs)
    except ValueError as e:
        raise SchemaError(str(e)) from e

    canon = dict(values)
    if "render" in canon and "background" in canon["render"]:
        canon["render"] = dict(canon["render"])
        canon["render"]["background"] = [float(v) for v in canon["render"]["background"]]
    digest = hashlib.sha256(_canonical(canon).encode("utf-8")).hexdigest()[:16]
    return Config(train=train, render=render, hash=digest)
