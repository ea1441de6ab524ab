import json
import threading
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np
import pytest

from confsplat import compress, raster, sceneio, serve
from confsplat.raster import RenderSettings

from scenes import orbit_cameras, random_scene_3d

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def service_url():
    scene, field = random_scene_3d(n=18, seed=44)
    cams = orbit_cameras(2, radius=6.0)
    settings = RenderSettings()
    targets = [raster.render_scene(scene, c, None, settings)[0] for c in cams]
    server = serve.build_server(scene, field, cams, targets, settings, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}", scene, field
    server.shutdown()
    server.server_close()


def _get(url):
    with urllib.request.urlopen(url, timeout=10) as resp:
        return resp.status, resp.headers.get_content_type(), resp.read()


def _get_json(url):
    status, ctype, body = _get(url)
    assert ctype == "application/json"
    return status, json.loads(body)


class TestInfo:
    def test_scene_summary(self, service_url):
        url, scene, field = service_url
        status, info = _get_json(f"{url}/api/info")
        assert status == 200
        assert info["n_splats"] == 18
        assert info["acs"] == pytest.approx(compress.acs(field), abs=1e-12)
        assert info["active_count"] == compress.count_active(field)
        assert [c["id"] for c in info["cameras"]] == [0, 1]
        assert info["cameras"][0]["width"] == 16

    def test_unknown_route_404(self, service_url):
        url, _, _ = service_url
        with pytest.raises(urllib.error.HTTPError) as err:
            _get(f"{url}/api/nope")
        assert err.value.code == 404


class TestRenderEndpoint:
    def test_png_response(self, service_url):
        url, _, _ = service_url
        status, ctype, body = _get(f"{url}/api/render?cam=0&tau=0")
        assert status == 200
        assert ctype == "image/png"
        assert body[:8] == b"\x89PNG\r\n\x1a\n"

    def test_tau_zero_matches_direct_render(self, service_url):
        url, scene, field = service_url
        _, _, body = _get(f"{url}/api/render?cam=0&tau=0")
        cams = orbit_cameras(2, radius=6.0)
        settings = RenderSettings()
        img, _ = raster.render_scene(scene, cams[0], field.confidences(), settings)
        assert body == sceneio.encode_image(img)

    def test_tau_one_background_only(self, service_url):
        url, _, _ = service_url
        _, _, body = _get(f"{url}/api/render?cam=0&tau=1")
        settings = RenderSettings()
        expected = np.broadcast_to(settings.background, (16, 16, 3)).copy()
        assert body == sceneio.encode_image(expected)

    def test_unknown_camera_404(self, service_url):
        url, _, _ = service_url
        with pytest.raises(urllib.error.HTTPError) as err:
            _get(f"{url}/api/render?cam=9&tau=0")
        assert err.value.code == 404

    def test_bad_tau_400(self, service_url):
        url, _, _ = service_url
        with pytest.raises(urllib.error.HTTPError) as err:
            _get(f"{url}/api/render?cam=0&tau=1.5")
        assert err.value.code == 400

    def test_identical_requests_identical_bytes(self, service_url):
        url, _, _ = service_url
        _, _, a = _get(f"{url}/api/render?cam=1&tau=0.4")
        _, _, b = _get(f"{url}/api/render?cam=1&tau=0.4")
        assert a == b

    def test_heatmap_flag(self, service_url):
        url, _, _ = service_url
        _, _, plain = _get(f"{url}/api/render?cam=0&tau=0")
        _, _, heat = _get(f"{url}/api/render?cam=0&tau=0&heatmap=1")
        assert plain != heat


class TestMetricsEndpoint:
    def test_tau_zero_kept_counts(self, service_url):
        url, scene, _ = service_url
        _, metrics = _get_json(f"{url}/api/metrics?tau=0")
        assert metrics["kept"] == 18
        assert "psnr" in metrics and "ssim" in metrics and "sqr" in metrics

    def test_kept_monotone(self, service_url):
        url, _, _ = service_url
        kept = []
        for tau in [0.0, 0.25, 0.5, 0.75, 1.0]:
            _, metrics = _get_json(f"{url}/api/metrics?tau={tau}")
            kept.append(metrics["kept"])
        assert all(a >= b for a, b in zip(kept, kept[1:]))
        assert kept[-1] == 0

    def test_bad_tau_400(self, service_url):
        url, _, _ = service_url
        with pytest.raises(urllib.error.HTTPError) as err:
            _get(f"{url}/api/metrics?tau=-0.2")
        assert err.value.code == 400


class TestNoTargets:
    def test_metrics_omit_quality_keys(self):
        scene, field = random_scene_3d(n=6, seed=45)
        cams = orbit_cameras(1, radius=6.0)
        service = serve.SceneService(scene, field, cams, None, RenderSettings())
        metrics = service.metrics(0.0)
        assert metrics["kept"] == 6
        assert "psnr" not in metrics
        assert "ssim" not in metrics
        assert "sqr" not in metrics
        assert "acs" in metrics


class TestCors:
    def test_localhost_origin_echoed(self, service_url):
        url, _, _ = service_url
        req = urllib.request.Request(f"{url}/api/info", headers={"Origin": "http://localhost:5173"})
        with urllib.request.urlopen(req, timeout=10) as resp:
            assert resp.headers["Access-Control-Allow-Origin"] == "http://localhost:5173"

    def test_foreign_origin_not_echoed(self, service_url):
        url, _, _ = service_url
        req = urllib.request.Request(f"{url}/api/info", headers={"Origin": "http://evil.example"})
        with urllib.request.urlopen(req, timeout=10) as resp:
            assert resp.headers.get("Access-Control-Allow-Origin") is None


class TestRenderCache:
    def test_lru_bounded(self):
        scene, field = random_scene_3d(n=5, seed=46)
        cams = orbit_cameras(1, radius=6.0)
        service = serve.SceneService(scene, field, cams, None, RenderSettings())
        for k in range(80):
            service.render_png(0, k / 100.0, False)
        assert len(service._render_cache) <= 64

    def test_quantized_keys_shared(self):
        scene, field = random_scene_3d(n=5, seed=47)
        cams = orbit_cameras(1, radius=6.0)
        service = serve.SceneService(scene, field, cams, None, RenderSettings())
        a = service.render_png(0, 0.30000002, False)
        cached = len(service._render_cache)
        b = service.render_png(0, 0.3, False)
        assert a == b
        assert len(service._render_cache) == cached


class TestConcurrency:
    def test_parallel_requests_consistent(self, service_url):
        # concurrent callers must never observe partially pruned state:
        # identical requests return identical bytes under contention
        import concurrent.futures

        url, _, _ = service_url
        taus = [0.0, 0.2, 0.4, 0.6, 0.8]

        def fetch(tau):
            _, _, body = _get(f"{url}/api/render?cam=0&tau={tau}")
            _, metrics = _get_json(f"{url}/api/metrics?tau={tau}")
            return tau, body, metrics["kept"]

        with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(fetch, taus * 4))
        by_tau = {}
        for tau, body, kept in results:
            if tau in by_tau:
                assert by_tau[tau] == (body, kept), f"divergent responses at tau={tau}"
            else:
                by_tau[tau] = (body, kept)
        kept_sorted = [by_tau[t][1] for t in taus]
        assert all(a >= b for a, b in zip(kept_sorted, kept_sorted[1:]))


class TestCliParity:
    def test_tau_zero_bytes_equal_cli_render(self, tmp_path):
        # both paths must go through the same PLY (float32) and encoder
        import json as _json

        from confsplat import cli

        scene, field = random_scene_3d(n=10, seed=48)
        scene_path = tmp_path / "scene.ply"
        sceneio.save_ply(scene, field, scene_path)
        cams = orbit_cameras(1, radius=6.0)
        cam_entries = [{
            "id": 0, "width": 16, "height": 16, "fx": cams[0].fx, "fy": cams[0].fy,
            "cx": cams[0].cx, "cy": cams[0].cy,
            "rotation": list(cams[0].rotation.ravel()),
            "translation": list(cams[0].translation),
        }]
        cam_path = tmp_path / "cams.json"
        cam_path.write_text(_json.dumps(cam_entries))
        out = tmp_path / "cli.png"
        assert cli.dispatch(
            ["render", "--scene", str(scene_path), "--cameras", str(cam_path),
             "--camera-id", "0", "--tau", "0", "--out", str(out)]
        ) == cli.EXIT_OK

        loaded_scene, loaded_field = sceneio.load_ply(scene_path)
        service = serve.SceneService(loaded_scene, loaded_field, cams, None, RenderSettings())
        assert service.render_png(0, 0.0, False) == out.read_bytes()


class TestGoldenScene:
    def test_info_on_golden(self):
        scene, field = sceneio.load_ply(DATA / "golden_two_splats.ply")
        cams = orbit_cameras(1, radius=6.0)
        service = serve.SceneService(scene, field, cams, None, RenderSettings())
        info = service.info()
        assert info["n_splats"] == 2
        assert info["acs"] == pytest.approx(compress.acs(field), abs=1e-15)
