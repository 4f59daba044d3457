"""Semi-automated candidate harvesting with human QA.

The detector runs over weakly-labeled studies; merged candidates are
rendered into a grid montage (rows = candidates, columns = the four
contrast phases) that a reviewer triages with single clicks. Sessions are
a small state machine: open -> finalized (at least one true positive) or
open -> needs_manual (every candidate rejected, or none found). Verdicts
persist as an append-only tab-separated log per session and session state
is derived by replay, so a crashed reviewer loses nothing.

Labor accounting follows the curation arithmetic: one QA minute per
study, fifteen minutes for each study that falls back to manual
annotation, against an all-manual baseline.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import formats
from .config import Config
from .detection import Box3D, DetectionCandidate, iou3d
from .pts import mask_stack, select_key_slice, NoEvidenceError
from .volume import PHASES, Volume

VERDICTS = ("unreviewed", "true_positive", "false_positive")
SESSION_SCHEMA = 1


@dataclass
class CandidateEntry:
    candidate_id: str
    score: float
    box: tuple[float, float, float, float, float, float]
    phase: str
    key_z: int

    def box3d(self) -> Box3D:
        return Box3D(*self.box)


@dataclass
class QASession:
    session_id: str
    study_id: str
    candidates: list[CandidateEntry]
    verdicts: dict[str, str] = field(default_factory=dict)
    status: str = "open"
    montage_path: str | None = None
    cell_geometry: dict | None = None

    def __post_init__(self):
        for c in self.candidates:
            self.verdicts.setdefault(c.candidate_id, "unreviewed")

    @property
    def n_reviewed(self) -> int:
        return sum(1 for v in self.verdicts.values() if v != "unreviewed")


class SessionStateError(RuntimeError):
    pass


def hu_window(values: np.ndarray, level: float, width: float) -> np.ndarray:
    """Linear CT windowing to 8-bit: clamp((hu-(level-width/2))/width,0,1)*255,
    rounded half-up."""
    if width <= 0:
        raise ValueError("window width must be positive")
    lo = level - width / 2.0
    frac = np.clip((values - lo) / width, 0.0, 1.0)
    return np.floor(frac * 255.0 + 0.5).astype(np.uint8)


def _cell_crop(plane: np.ndarray, box: Box3D, cell: int) -> np.ndarray:
    """Native-resolution crop of the box neighborhood, centered on a cell."""
    W, H = plane.shape
    cx, cy = (box.x1 + box.x2) / 2.0, (box.y1 + box.y2) / 2.0
    out = np.full((cell, cell), -1000.0, dtype=np.float64)
    x_lo = int(round(cx - cell / 2.0))
    y_lo = int(round(cy - cell / 2.0))
    sx0, sx1 = max(0, x_lo), min(W, x_lo + cell)
    sy0, sy1 = max(0, y_lo), min(H, y_lo + cell)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y_lo:sy1 - y_lo, sx0 - x_lo:sx1 - x_lo] = plane[sx0:sx1, sy0:sy1].T
    return out


@dataclass
class Montage:
    raster: np.ndarray          # uint8, rows*cell x 4*cell
    cell_geometry: dict


def render_montage(volumes: dict[str, Volume], candidates: list[CandidateEntry],
                   window: tuple[float, float], cell: int = 64) -> Montage:
    """One row per candidate, one column per phase; each cell shows the
    candidate's key slice windowed to 8-bit."""
    if not candidates:
        raise ValueError("montage needs at least one candidate")
    level, width = window
    rows = []
    for entry in candidates:
        cells = []
        for phase in PHASES:
            plane = volumes[phase].data[:, :, entry.key_z]
            cells.append(hu_window(_cell_crop(plane, entry.box3d(), cell), level, width))
        rows.append(np.concatenate(cells, axis=1))
    raster = np.concatenate(rows, axis=0)
    geometry = {
        "cell_w": cell, "cell_h": cell, "phases": list(PHASES),
        "rows": [{"row": i, "candidate_id": c.candidate_id}
                 for i, c in enumerate(candidates)],
    }
    return Montage(raster=raster, cell_geometry=geometry)


def record_verdict(session: QASession, candidate_id: str, verdict: str,
                   store: "SessionStore | None" = None) -> QASession:
    """Idempotent per (candidate, verdict); rejected once the session closed."""
    if session.status != "open":
        raise SessionStateError(f"session {session.session_id} is {session.status}")
    if candidate_id not in session.verdicts:
        raise KeyError(f"unknown candidate {candidate_id!r} in session "
                       f"{session.session_id}")
    if verdict not in VERDICTS:
        raise ValueError(f"unknown verdict {verdict!r}")
    if session.verdicts[candidate_id] != verdict:
        session.verdicts[candidate_id] = verdict
        if store is not None:
            store.append_verdict(session.session_id, candidate_id, verdict)
    return session


def finalize(session: QASession, store: "SessionStore | None" = None) -> QASession:
    """open -> finalized when any true positive was confirmed, else
    needs_manual (including the empty-candidate case). Closed sessions
    pass through unchanged."""
    if session.status != "open":
        return session
    unreviewed = [cid for cid, v in session.verdicts.items() if v == "unreviewed"]
    if unreviewed:
        raise SessionStateError(
            f"session {session.session_id} still has unreviewed candidates: "
            f"{unreviewed[:4]}")
    any_tp = any(v == "true_positive" for v in session.verdicts.values())
    session.status = "finalized" if any_tp else "needs_manual"
    if store is not None:
        store.write_status(session.session_id, session.status)
    return session


@dataclass
class LaborReport:
    n_studies: int
    n_qa_minutes: float
    n_manual_studies: int
    n_manual_minutes: float
    total_minutes: float
    baseline_minutes: float
    savings_fraction: float


def labor_report(sessions: list[QASession], qa_minutes: float = 1.0,
                 manual_minutes: float = 15.0) -> LaborReport:
    """QA time accrues per study; manual annotation per fallback study.
    Negative savings clamp to zero (with a warning)."""
    open_ids = [s.session_id for s in sessions if s.status == "open"]
    if open_ids:
        raise SessionStateError(f"open sessions present: {open_ids[:4]}")
    if not sessions:
        raise ValueError("no sessions to report on")
    n = len(sessions)
    n_manual = sum(1 for s in sessions if s.status == "needs_manual")
    total = n * qa_minutes + n_manual * manual_minutes
    baseline = n * manual_minutes
    savings = 1.0 - total / baseline
    if savings < 0:
        warnings.warn("curation took longer than the all-manual baseline; "
                      "clamping savings to 0", stacklevel=2)
        savings = 0.0
    return LaborReport(n_studies=n, n_qa_minutes=n * qa_minutes,
                       n_manual_studies=n_manual,
                       n_manual_minutes=n_manual * manual_minutes,
                       total_minutes=total, baseline_minutes=baseline,
                       savings_fraction=savings)


class SessionStore:
    """One directory per session: an immutable session.json, the montage
    raster, an append-only verdict log, and a status file."""

    def __init__(self, root: str):
        self.root = formats.ensure_dir(root)

    def _dir(self, session_id: str) -> str:
        return os.path.join(self.root, session_id)

    def session_ids(self) -> list[str]:
        return sorted(d for d in os.listdir(self.root)
                      if os.path.isfile(os.path.join(self.root, d, "session.json")))

    def create(self, session: QASession, montage: Montage | None) -> None:
        d = formats.ensure_dir(self._dir(session.session_id))
        if montage is not None:
            session.montage_path = os.path.join(d, "montage.pgm")
            session.cell_geometry = montage.cell_geometry
            formats.write_pgm(session.montage_path, montage.raster)
        formats.write_json(os.path.join(d, "session.json"), {
            "schema_version": SESSION_SCHEMA,
            "session_id": session.session_id,
            "study_id": session.study_id,
            "candidates": [{
                "candidate_id": c.candidate_id, "score": c.score,
                "box": list(c.box), "phase": c.phase, "key_z": c.key_z,
            } for c in session.candidates],
            "cell_geometry": session.cell_geometry,
        })
        self.write_status(session.session_id, session.status)

    def append_verdict(self, session_id: str, candidate_id: str, verdict: str) -> None:
        stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        with open(os.path.join(self._dir(session_id), "verdicts.log"), "a") as f:
            f.write(f"{candidate_id}\t{verdict}\t{stamp}\n")

    def write_status(self, session_id: str, status: str) -> None:
        with open(os.path.join(self._dir(session_id), "status"), "w") as f:
            f.write(status + "\n")

    def load(self, session_id: str) -> QASession:
        d = self._dir(session_id)
        data = formats.read_json(os.path.join(d, "session.json"))
        session = QASession(
            session_id=data["session_id"], study_id=data["study_id"],
            candidates=[CandidateEntry(c["candidate_id"], c["score"],
                                       tuple(c["box"]), c["phase"], c["key_z"])
                        for c in data["candidates"]],
            montage_path=os.path.join(d, "montage.pgm"),
            cell_geometry=data.get("cell_geometry"))
        if not os.path.exists(session.montage_path):
            session.montage_path = None
        log = os.path.join(d, "verdicts.log")
        if os.path.exists(log):
            with open(log) as f:
                for line in f:
                    cid, verdict, _stamp = line.rstrip("\n").split("\t")
                    if cid in session.verdicts:
                        session.verdicts[cid] = verdict
        status_path = os.path.join(d, "status")
        if os.path.exists(status_path):
            session.status = open(status_path).read().strip()
        return session

    def load_all(self) -> list[QASession]:
        return [self.load(sid) for sid in self.session_ids()]


def harvest_study(study_id: str, volumes: dict[str, Volume],
                  candidates: list[DetectionCandidate], mask: np.ndarray | None,
                  cfg: Config, store: SessionStore) -> QASession:
    """Build (and persist) one QA session from merged detector output."""
    kept = [c for c in candidates if c.score >= cfg.harvest_min_score]
    entries = []
    for rank, cand in enumerate(kept):
        if mask is not None:
            try:
                key_z = select_key_slice(f"c{rank:02d}", mask_stack(cand.box, mask))
            except NoEvidenceError:
                key_z = int(round((cand.box.z1 + cand.box.z2) / 2.0 - 0.5))
        else:
            key_z = int(round((cand.box.z1 + cand.box.z2) / 2.0 - 0.5))
        key_z = int(np.clip(key_z, 0, volumes[PHASES[0]].shape[2] - 1))
        entries.append(CandidateEntry(
            candidate_id=f"c{rank:02d}", score=float(cand.score),
            box=cand.box.astuple(), phase=cand.phase, key_z=key_z))

    session = QASession(session_id=f"qa_{study_id}", study_id=study_id,
                        candidates=entries)
    if entries:
        montage = render_montage(volumes, entries,
                                 (cfg.window_level, cfg.window_width),
                                 cfg.montage_cell)
        store.create(session, montage)
    else:
        session.status = "needs_manual"
        store.create(session, None)
    return session


def auto_review(session: QASession, primary_boxes: list[Box3D], hit_iou: float,
                store: SessionStore | None = None) -> QASession:
    """Oracle reviewer: a candidate is a true positive iff it reaches
    ``hit_iou`` with any primary ground-truth box."""
    if session.status != "open":
        return session
    for entry in session.candidates:
        hit = any(iou3d(entry.box3d(), tb) >= hit_iou for tb in primary_boxes)
        record_verdict(session, entry.candidate_id,
                       "true_positive" if hit else "false_positive", store)
    return finalize(session, store)
