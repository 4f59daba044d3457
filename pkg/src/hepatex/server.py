"""HTTP review API consumed by the QA frontend.

    GET  /api/sessions                     -> session summaries
    GET  /api/sessions/{id}                -> detail + montage cell geometry
    GET  /api/sessions/{id}/montage?level=L&width=W -> PGM raster
    POST /api/sessions/{id}/verdicts       -> record one verdict (409 if closed)
    POST /api/sessions/{id}/finalize       -> finalized | needs_manual
    GET  /api/report                       -> labor report (409 while sessions open)

Every JSON response carries ``schema_version``. Verdict writes serialize
per session; reads are concurrent.
"""

from __future__ import annotations

import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from . import formats, pipeline
from .config import Config
from .harvest import (
    QASession,
    SessionStateError,
    SessionStore,
    finalize,
    labor_report,
    record_verdict,
    render_montage,
)
from .synth import Manifest

SCHEMA_VERSION = 1


class ReviewService:
    """In-memory session registry over the on-disk store, with per-session
    write locks."""

    def __init__(self, sessions_dir: str, manifest: Manifest | None, cfg: Config):
        self.store = SessionStore(sessions_dir)
        self.cfg = cfg
        self.manifest = manifest
        self.records = ({r.study_id: r for r in manifest.studies}
                        if manifest is not None else {})
        self.sessions: dict[str, QASession] = {
            s.session_id: s for s in self.store.load_all()}
        self.locks = {sid: threading.Lock() for sid in self.sessions}
        self.registry_lock = threading.Lock()

    def summary(self) -> list[dict]:
        out = []
        for sid in sorted(self.sessions):
            s = self.sessions[sid]
            out.append({"session_id": s.session_id, "study_id": s.study_id,
                        "status": s.status, "n_candidates": len(s.candidates),
                        "n_reviewed": s.n_reviewed})
        return out

    def detail(self, session_id: str) -> dict:
        s = self._get(session_id)
        return {
            "session_id": s.session_id, "study_id": s.study_id,
            "status": s.status, "n_candidates": len(s.candidates),
            "n_reviewed": s.n_reviewed,
            "cell_geometry": s.cell_geometry,
            "candidates": [{
                "candidate_id": c.candidate_id, "score": c.score,
                "box": list(c.box), "phase": c.phase, "key_z": c.key_z,
                "verdict": s.verdicts[c.candidate_id],
            } for c in s.candidates],
        }

    def _get(self, session_id: str) -> QASession:
        if session_id not in self.sessions:
            raise KeyError(session_id)
        return self.sessions[session_id]

    def montage_bytes(self, session_id: str, level: float | None,
                      width: float | None) -> bytes:
        s = self._get(session_id)
        if level is None and width is None:
            if s.montage_path is None:
                raise FileNotFoundError("session has no montage")
            with open(s.montage_path, "rb") as f:
                return f.read()
        if self.manifest is None:
            raise SessionStateError("re-windowing needs a corpus (--corpus)")
        record = self.records[s.study_id]
        volumes = pipeline.load_volumes(self.manifest, record)
        level = self.cfg.window_level if level is None else level
        width = self.cfg.window_width if width is None else width
        m = render_montage(volumes, s.candidates, (level, width),
                           self.cfg.montage_cell)
        return formats.pgm_bytes(m.raster)

    def submit_verdict(self, session_id: str, candidate_id: str, verdict: str) -> dict:
        with self.locks[session_id]:
            s = self._get(session_id)
            record_verdict(s, candidate_id, verdict, self.store)
        return self.detail(session_id)

    def finalize_session(self, session_id: str) -> dict:
        with self.locks[session_id]:
            s = self._get(session_id)
            finalize(s, self.store)
        return self.detail(session_id)

    def report(self) -> dict:
        rep = labor_report(list(self.sessions.values()),
                           self.cfg.qa_minutes_per_study,
                           self.cfg.manual_minutes_per_study)
        return {
            "n_studies": rep.n_studies, "n_qa_minutes": rep.n_qa_minutes,
            "n_manual_studies": rep.n_manual_studies,
            "n_manual_minutes": rep.n_manual_minutes,
            "total_minutes": rep.total_minutes,
            "baseline_minutes": rep.baseline_minutes,
            "savings_fraction": rep.savings_fraction,
        }


class ReviewHandler(BaseHTTPRequestHandler):
    service: ReviewService = None
    ui_dir: str | None = None

    def log_message(self, fmt, *args):   # quiet by default
        pass

    def _json(self, payload: dict, status: int = 200):
        payload = {"schema_version": SCHEMA_VERSION, **payload}
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, code: str, message: str):
        self._json({"error": code, "message": message}, status=status)

    def _bytes(self, data: bytes, content_type: str):
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_GET(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            if parts[:2] == ["api", "sessions"] and len(parts) == 2:
                return self._json({"sessions": self.service.summary()})
            if parts[:2] == ["api", "sessions"] and len(parts) == 3:
                return self._json(self.service.detail(parts[2]))
            if parts[:2] == ["api", "sessions"] and len(parts) == 4 and parts[3] == "montage":
                q = parse_qs(url.query)
                level = float(q["level"][0]) if "level" in q else None
                width = float(q["width"][0]) if "width" in q else None
                data = self.service.montage_bytes(parts[2], level, width)
                return self._bytes(data, "image/x-portable-graymap")
            if parts == ["api", "report"]:
                return self._json(self.service.report())
            if not parts or parts[0] != "api":
                return self._static(url.path)
            return self._error(404, "not-found", self.path)
        except KeyError as e:
            return self._error(404, "unknown-session", str(e))
        except FileNotFoundError as e:
            return self._error(404, "no-montage", str(e))
        except SessionStateError as e:
            return self._error(409, "conflict", str(e))
        except ValueError as e:
            return self._error(400, "bad-request", str(e))

    def do_POST(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            length = int(self.headers.get("Content-Length") or 0)
            body = json.loads(self.rfile.read(length) or b"{}")
            if parts[:2] == ["api", "sessions"] and len(parts) == 4:
                sid = parts[2]
                if parts[3] == "verdicts":
                    detail = self.service.submit_verdict(
                        sid, body.get("candidate_id", ""), body.get("verdict", ""))
                    return self._json(detail)
                if parts[3] == "finalize":
                    return self._json(self.service.finalize_session(sid))
            return self._error(404, "not-found", self.path)
        except KeyError as e:
            return self._error(404, "unknown-candidate", str(e))
        except SessionStateError as e:
            return self._error(409, "conflict", str(e))
        except (ValueError, json.JSONDecodeError) as e:
            return self._error(400, "bad-request", str(e))

    def _static(self, path: str):
        if self.ui_dir is None:
            return self._error(404, "no-ui", "no frontend directory configured")
        rel = path.lstrip("/") or "index.html"
        full = os.path.normpath(os.path.join(self.ui_dir, rel))
        if not full.startswith(os.path.abspath(self.ui_dir)) or not os.path.isfile(full):
            return self._error(404, "not-found", path)
        ctype = {"html": "text/html", "js": "text/javascript",
                 "css": "text/css", "map": "application/json"}.get(
                     full.rsplit(".", 1)[-1], "application/octet-stream")
        with open(full, "rb") as f:
            return self._bytes(f.read(), ctype)


def make_server(sessions_dir: str, manifest: Manifest | None, cfg: Config,
                port: int = 0, ui_dir: str | None = None) -> ThreadingHTTPServer:
    service = ReviewService(sessions_dir, manifest, cfg)
    handler = type("BoundReviewHandler", (ReviewHandler,),
                   {"service": service,
                    "ui_dir": os.path.abspath(ui_dir) if ui_dir else None})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve(sessions_dir: str, manifest: Manifest | None, cfg: Config,
          port: int = 8765, ui_dir: str | None = None) -> None:
    httpd = make_server(sessions_dir, manifest, cfg, port=port, ui_dir=ui_dir)
    print(f"review API listening on http://127.0.0.1:{httpd.server_address[1]}/")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
