"""Read-only HTTP service for the knob UI.

Routes (JSON unless noted):
    GET /api/info                         scene summary + camera list
    GET /api/render?cam=ID&tau=T[&heatmap=1]   PNG bytes
    GET /api/metrics?tau=T                kept/acs (+psnr/ssim/sqr with targets)

The scene snapshot is immutable; pruning builds fresh values. Responses are
cached per (camera, tau quantized to 1e-3, heatmap) in a bounded LRU. CORS
is answered for localhost origins so the viewer can be served separately.
"""

from __future__ import annotations

import json
import math
import threading
from collections import OrderedDict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import compress, losses, raster, sceneio
from .core import Camera, ConfidenceField, SplatSet
from .raster import RenderSettings

_CACHE_LIMIT = 64


class SceneService:
    """Immutable scene snapshot plus a synchronized render/metrics cache."""

    def __init__(
        self,
        scene: SplatSet,
        field: ConfidenceField | None,
        cameras: list[Camera],
        targets: list[np.ndarray] | None,
        settings: RenderSettings,
    ):
        if not cameras:
            raise ValueError("service needs at least one camera")
        if targets is not None and len(targets) != len(cameras):
            raise ValueError("camera/target count mismatch")
        self.scene = scene
        self.field = field if field is not None else ConfidenceField.initial(len(scene))
        self.cameras = {cam.cam_id: cam for cam in cameras}
        self.camera_order = [cam.cam_id for cam in cameras]
        self.targets = (
            {cam.cam_id: t for cam, t in zip(cameras, targets)} if targets else None
        )
        self.settings = settings
        self.sqr_scale = compress.default_sqr_scale(len(scene))
        self._render_cache: OrderedDict[tuple, bytes] = OrderedDict()
        self._metrics_cache: OrderedDict[float, dict] = OrderedDict()
        self._lock = threading.Lock()

    @staticmethod
    def _quantize(tau: float) -> float:
        return round(tau, 3)

    def info(self) -> dict:
        return {
            "n_splats": len(self.scene),
            "sh_degree": self.scene.sh_degree if self.scene.sh is not None else 0,
            "acs": compress.acs(self.field),
            "active_count": compress.count_active(self.field),
            "cameras": [
                {
                    "id": cid,
                    "width": self.cameras[cid].width,
                    "height": self.cameras[cid].height,
                }
                for cid in self.camera_order
            ],
        }

    def _cache_get(self, cache, key):
        with self._lock:
            if key in cache:
                cache.move_to_end(key)
                return cache[key]
        return None

    def _cache_put(self, cache, key, value):
        with self._lock:
            cache[key] = value
            cache.move_to_end(key)
            while len(cache) > _CACHE_LIMIT:
                cache.popitem(last=False)

    def render_png(self, cam_id: int, tau: float, heatmap: bool) -> bytes:
        key = (cam_id, self._quantize(tau), heatmap)
        hit = self._cache_get(self._render_cache, key)
        if hit is not None:
            return hit
        camera = self.cameras[cam_id]
        scene, field, _ = compress.prune(self.scene, self.field, tau)
        if scene is None:
            image = np.broadcast_to(
                self.settings.background, (camera.height, camera.width, 3)
            ).copy()
        else:
            image, _ = raster.render_scene(
                scene, camera, field.confidences(), self.settings, heatmap=heatmap
            )
        png = sceneio.encode_image(image)
        self._cache_put(self._render_cache, key, png)
        return png

    def metrics(self, tau: float) -> dict:
        key = self._quantize(tau)
        hit = self._cache_get(self._metrics_cache, key)
        if hit is not None:
            return hit
        scene, field, kept = compress.prune(self.scene, self.field, tau)
        out = {
            "tau": tau,
            "kept": int(len(kept)),
            "acs": compress.acs(field) if len(field) else 0.0,
        }
        if self.targets is not None:
            psnrs, ssims = [], []
            for cid in self.camera_order:
                camera = self.cameras[cid]
                target = self.targets[cid]
                if scene is None:
                    image = np.broadcast_to(
                        self.settings.background, (camera.height, camera.width, 3)
                    ).copy()
                else:
                    image, _ = raster.render_scene(
                        scene, camera, field.confidences(), self.settings
                    )
                psnrs.append(compress.psnr(image, target))
                ssims.append(losses.ssim(image, target)[0])
            mean_psnr = float(np.mean(psnrs)) if not any(math.isinf(p) for p in psnrs) else math.inf
            out["psnr"] = "inf" if math.isinf(mean_psnr) else mean_psnr
            out["ssim"] = float(np.mean(ssims))
            out["sqr"] = compress.sqr(len(kept), mean_psnr, self.sqr_scale)
        self._cache_put(self._metrics_cache, key, out)
        return out


def _parse_tau(params) -> float:
    raw = params.get("tau", ["0"])[0]
    tau = float(raw)
    if not 0.0 <= tau <= 1.0 or math.isnan(tau):
        raise ValueError(f"tau {tau} out of [0, 1]")
    return tau


class _Handler(BaseHTTPRequestHandler):
    service: SceneService = None  # injected by build_server

    def log_message(self, *args):  # quiet by default
        pass

    def _cors_headers(self):
        origin = self.headers.get("Origin", "")
        if origin.startswith("http://localhost") or origin.startswith("http://127.0.0.1"):
            self.send_header("Access-Control-Allow-Origin", origin)
            self.send_header("Vary", "Origin")

    def _send(self, code: int, body: bytes, content_type: str):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self._cors_headers()
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, code: int, payload: dict):
        self._send(code, json.dumps(payload).encode("utf-8"), "application/json; charset=utf-8")

    def do_GET(self):
        url = urlparse(self.path)
        params = parse_qs(url.query)
        try:
            if url.path == "/api/info":
                self._send_json(200, self.service.info())
            elif url.path == "/api/render":
                cam_id = int(params.get("cam", ["-1"])[0])
                if cam_id not in self.service.cameras:
                    self._send_json(404, {"error": f"unknown camera {cam_id}"})
                    return
                try:
                    tau = _parse_tau(params)
                except ValueError as e:
                    self._send_json(400, {"error": str(e)})
                    return
                heatmap = params.get("heatmap", ["0"])[0] in ("1", "true")
                self._send(200, self.service.render_png(cam_id, tau, heatmap), "image/png")
            elif url.path == "/api/metrics":
                try:
                    tau = _parse_tau(params)
                except ValueError as e:
                    self._send_json(400, {"error": str(e)})
                    return
                self._send_json(200, self.service.metrics(tau))
            else:
                self._send_json(404, {"error": f"no route {url.path}"})
        except BrokenPipeError:
            pass
        except Exception as e:  # pragma: no cover - defensive last resort
            self._send_json(500, {"error": str(e)})


def build_server(
    scene: SplatSet,
    field: ConfidenceField | None,
    cameras: list[Camera],
    targets: list[np.ndarray] | None,
    settings: RenderSettings,
    host: str = "127.0.0.1",
    port: int = 8080,
) -> ThreadingHTTPServer:
    service = SceneService(scene, field, cameras, targets, settings)
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)
