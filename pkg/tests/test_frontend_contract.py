"""Drives the built frontend's client modules against a live review server.

Skipped unless the frontend has been built for tests (``npm test`` inside
frontend/ produces dist-test/); the primary suite stays fully runnable
without it.
"""

import os
import shutil
import subprocess
import threading

import numpy as np
import pytest

from hepatex.config import Config
from hepatex.detection import Box3D, DetectionCandidate
from hepatex.harvest import SessionStore, harvest_study
from hepatex.server import make_server
from hepatex.volume import PHASES, Volume

FRONTEND = os.path.join(os.path.dirname(__file__), "..", "frontend")
DIST_TEST = os.path.join(FRONTEND, "dist-test", "src", "api.js")

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not os.path.exists(DIST_TEST),
    reason="needs node and a built frontend (run `npm test` in frontend/)")


def test_ui_contract_against_live_server(tmp_path):
    rng = np.random.default_rng(0)
    volumes = {p: Volume(rng.normal(60, 20, (40, 40, 8)).astype(np.float32),
                         (1, 1, 5), p) for p in PHASES}
    cfg = Config()
    store = SessionStore(str(tmp_path / "sessions"))
    cands = [DetectionCandidate(0.9, Box3D(10, 10, 2, 20, 20, 6), "A"),
             DetectionCandidate(0.6, Box3D(25, 25, 2, 33, 33, 6), "V")]
    harvest_study("s1", volumes, cands, None, cfg, store)
    harvest_study("s2", volumes, cands, None, cfg, store)

    httpd = make_server(str(tmp_path / "sessions"), None, cfg, port=0)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    try:
        base = f"http://127.0.0.1:{httpd.server_address[1]}"
        proc = subprocess.run(
            ["node", os.path.join("test-live", "contract.mjs")],
            cwd=FRONTEND, capture_output=True, text=True,
            env=dict(os.environ, REVIEW_API_BASE=base), timeout=120)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert "all checks passed" in proc.stdout
    finally:
        httpd.shutdown()
        httpd.server_close()
