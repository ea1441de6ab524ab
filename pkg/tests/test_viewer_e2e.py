"""Criterion 10 (secondary): viewer end-to-end smoke against a live service
on the golden scene. Skips when node or the built frontend is absent, so the
primary suite stands alone.
"""

import shutil
import subprocess
import threading
from pathlib import Path

import pytest

from confsplat import sceneio, serve
from confsplat.raster import RenderSettings

from scenes import orbit_cameras

ROOT = Path(__file__).resolve().parent.parent
FRONTEND = ROOT / "frontend"
E2E = FRONTEND / "dist" / "test" / "e2e_smoke.js"
DATA = Path(__file__).parent / "data"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not E2E.exists(),
    reason="secondary component not built (node or frontend/dist missing)",
)


def test_criterion_10_viewer_e2e_smoke():
    scene, field = sceneio.load_ply(DATA / "golden_two_splats.ply")
    cams = orbit_cameras(1, radius=8.0, width=24, height=24, fx=30.0)
    server = serve.build_server(scene, field, cams, None, RenderSettings(), port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}"
        # brute-force filter oracle for the tau = 0.5 kept readout
        expected_mid = int((field.confidences() >= 0.5).sum())
        proc = subprocess.run(
            ["node", str(E2E)],
            env={
                "SERVICE_URL": url,
                "EXPECTED_KEPT_MID": str(expected_mid),
                "PATH": "/usr/bin:/bin:/usr/local/bin",
            },
            capture_output=True,
            text=True,
            timeout=120,
        )
        assert proc.returncode == 0, f"e2e failed:\n{proc.stdout}\n{proc.stderr}"
        assert "E2E PASS" in proc.stdout
        print(f"ACCEPTANCE 10: PASS  {proc.stdout.strip().splitlines()[-1]}")
    finally:
        server.shutdown()
        server.server_close()
