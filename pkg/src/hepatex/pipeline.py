"""End-to-end orchestration: dataset assembly from manifests and QA
sessions, corpus-wide detection, harvesting, primary-slice selection,
classification, and the evaluation report.

The flow mirrors the curation-then-characterization workflow: detect
per phase and merge, harvest candidates into QA sessions, train the
binary key-slice filter on reviewed true/false positives, select the
primary key slice per study, and classify its masked texture encoding.
"""

from __future__ import annotations

import os

import numpy as np

from . import classifier as clf
from . import formats
from .config import CLASS_NAMES, Config
from .detection import Box3D, DetectionCandidate, iou3d
from .detector import DetectorParams, detect_study
from .harvest import QASession, SessionStore, auto_review, harvest_study, labor_report
from .metrics import accuracy, f1_one_vs_all, mean_f1, p1td, tally_from_pairs
from .pts import PtsResult, build_key_slice, pts_pipeline, top_area_slices
from .synth import Manifest, StudyRecord
from .volume import PHASES, Volume


def load_volumes(manifest: Manifest, record: StudyRecord) -> dict[str, Volume]:
    return {p: formats.read_volume(manifest.path(record.volumes[p])) for p in PHASES}


def load_mask(manifest: Manifest, record: StudyRecord) -> np.ndarray:
    return formats.read_volume(manifest.path(record.mask)).data


def primary_boxes(record: StudyRecord) -> list[Box3D]:
    return [tb.box for tb in record.boxes if tb.primary]


def records_for_split(manifest: Manifest, split: str) -> list[StudyRecord]:
    if split == "all":
        return list(manifest.studies)
    return manifest.split_records(split)


def truth_roi_samples(manifest: Manifest, split: str, cfg: Config, mode: str,
                      top_k_slices: int) -> list[clf.Sample]:
    """Classification samples from ground-truth primary boxes: the
    ``top_k_slices`` largest-area slices per study (1 at test time)."""
    samples = []
    for record in records_for_split(manifest, split):
        volumes = load_volumes(manifest, record)
        mask = load_mask(manifest, record)
        for tb in record.boxes:
            if not tb.primary:
                continue
            for z in top_area_slices(mask, tb.box, top_k_slices):
                ks = build_key_slice("truth", tb.box, z, volumes, mask, cfg)
                samples.append(clf.sample_from_key_slice(ks, record.label, mode, cfg))
    return samples


def detect_corpus(manifest: Manifest, params: DetectorParams, cfg: Config,
                  split: str = "all", log=None):
    """Merged candidates per study, plus flat rows for the candidate file."""
    per_study: dict[str, list[DetectionCandidate]] = {}
    rows = []
    for record in records_for_split(manifest, split):
        missing = [p for p in PHASES if p not in record.volumes]
        if missing:
            if log:
                log(f"skipping {record.study_id}: missing phases {missing}")
            continue
        cands = detect_study(load_volumes(manifest, record), params, cfg)
        per_study[record.study_id] = cands
        for c in cands:
            rows.append({"study_id": record.study_id, "phase": c.phase,
                         "score": c.score, "x1": c.box.x1, "y1": c.box.y1,
                         "z1": c.box.z1, "x2": c.box.x2, "y2": c.box.y2,
                         "z2": c.box.z2})
    return per_study, rows


def candidates_from_rows(rows: list[dict]) -> dict[str, list[DetectionCandidate]]:
    out: dict[str, list[DetectionCandidate]] = {}
    for row in rows:
        cand = DetectionCandidate(
            score=row["score"],
            box=Box3D(row["x1"], row["y1"], row["z1"], row["x2"], row["y2"], row["z2"]),
            phase=row["phase"])
        out.setdefault(row["study_id"], []).append(cand)
    for cands in out.values():
        cands.sort(key=lambda c: -c.score)
    return out


def run_harvest(manifest: Manifest, candidates: dict[str, list[DetectionCandidate]],
                cfg: Config, sessions_dir: str, auto: bool = False,
                log=None) -> list[QASession]:
    store = SessionStore(sessions_dir)
    sessions = []
    for record in sorted(manifest.studies, key=lambda r: r.study_id):
        volumes = load_volumes(manifest, record)
        mask = load_mask(manifest, record)
        session = harvest_study(record.study_id, volumes,
                                candidates.get(record.study_id, []), mask, cfg, store)
        if auto:
            auto_review(session, primary_boxes(record), cfg.hit_iou, store)
            if session.status == "needs_manual":
                # the manual-annotation fallback imports boxes from a sidecar
                sidecar = [{"x1": b.x1, "y1": b.y1, "z1": b.z1,
                            "x2": b.x2, "y2": b.y2, "z2": b.z2}
                           for b in primary_boxes(record)]
                formats.write_json(os.path.join(sessions_dir, session.session_id,
                                                "manual_boxes.json"),
                                   {"schema_version": 1, "boxes": sidecar})
        sessions.append(session)
        if log:
            log(f"{session.session_id}: {session.status} "
                f"({len(session.candidates)} candidates)")
    return sessions


def ksf_samples_from_sessions(manifest: Manifest, store: SessionStore, split: str,
                              cfg: Config) -> list[clf.Sample]:
    """Binary training set from reviewed sessions: every verdicted candidate
    becomes a Primary / NonPrimary key-slice sample."""
    by_id = {r.study_id: r for r in records_for_split(manifest, split)}
    samples = []
    for sid in store.session_ids():
        session = store.load(sid)
        record = by_id.get(session.study_id)
        if record is None or session.status == "open":
            continue
        volumes = load_volumes(manifest, record)
        mask = load_mask(manifest, record)
        for entry in session.candidates:
            verdict = session.verdicts.get(entry.candidate_id, "unreviewed")
            if verdict == "unreviewed":
                continue
            label = "Primary" if verdict == "true_positive" else "NonPrimary"
            ks = build_key_slice(entry.candidate_id, entry.box3d(), entry.key_z,
                                 volumes, mask, cfg)
            samples.append(clf.sample_from_key_slice(ks, label, "ksf", cfg))
    return samples


def run_pts(manifest: Manifest, candidates: dict[str, list[DetectionCandidate]],
            ksf_params: clf.ClassifierParams | None, cfg: Config,
            split: str = "all") -> dict:
    """Primary key slice per study. Returns a JSON-ready mapping."""
    classify_primary = None
    if ksf_params is not None:
        primary_idx = ksf_params.classes.index("Primary")

        def classify_primary(ks):
            sample = clf.sample_from_key_slice(ks, "Primary", "ksf", cfg)
            return float(clf.predict_probs(ksf_params, [sample])[0, primary_idx])

    results = {}
    for record in records_for_split(manifest, split):
        volumes = load_volumes(manifest, record)
        mask = load_mask(manifest, record)
        cands = candidates.get(record.study_id, [])[:cfg.topk]
        res: PtsResult = pts_pipeline(volumes, cands, mask, classify_primary, cfg)
        entry = {"status": res.status, "fallback_used": res.fallback_used}
        if res.key_slice is not None:
            chosen = cands[int(res.candidate_id[1:])]
            entry.update({
                "candidate_id": res.candidate_id,
                "z_index": res.key_slice.z_index,
                "detection_score": chosen.score,
                "box": list(chosen.box.astuple()),
            })
        if res.decisions:
            entry["decisions"] = [
                {"candidate_id": d.candidate_id, "is_primary": d.is_primary,
                 "classifier_score": d.classifier_score,
                 "detection_score": d.detection_score}
                for d in res.decisions]
        results[record.study_id] = entry
    return results


def run_classify(manifest: Manifest, pts_records: dict,
                 models: list[clf.ClassifierParams], cfg: Config,
                 split: str = "all") -> dict:
    """One label per study, majority-voted across models."""
    if not models:
        raise ValueError("classify needs at least one model")
    classes = models[0].classes
    train_labels = [r.label for r in manifest.split_records("train")]
    fallback_label = max(classes, key=lambda c: (train_labels.count(c),
                                                 -classes.index(c)))

    predictions = {}
    for record in records_for_split(manifest, split):
        entry = pts_records.get(record.study_id, {"status": "no_detection"})
        if "box" not in entry:
            predictions[record.study_id] = {
                "label": fallback_label, "fallback": True, "truth": record.label}
            continue
        volumes = load_volumes(manifest, record)
        mask = load_mask(manifest, record)
        box = Box3D(*entry["box"])
        ks = build_key_slice(entry.get("candidate_id", "c00"), box,
                             int(entry["z_index"]), volumes, mask, cfg)
        votes, probs = [], []
        for model in models:
            sample = clf.sample_from_key_slice(ks, record.label, model.mode, cfg)
            p = clf.predict_probs(model, [sample])[0]
            votes.append(int(np.argmax(p)))
            probs.append(p)
        choice = clf.majority_vote(votes, probs)
        predictions[record.study_id] = {
            "label": classes[choice], "fallback": False, "truth": record.label,
            "probs": [float(x) for x in np.mean(probs, axis=0)]}
    return predictions


def run_eval(manifest: Manifest, cfg: Config,
             predictions: dict | None = None,
             candidates: dict[str, list[DetectionCandidate]] | None = None,
             pts_records: dict | None = None,
             sessions: list[QASession] | None = None,
             split: str = "test") -> dict:
    """Flat metric report over the chosen split (detection metrics use all
    studies present in the candidate set)."""
    report: dict = {"split": split}

    if predictions is not None:
        pairs = []
        for record in records_for_split(manifest, split):
            pred = predictions.get(record.study_id)
            if pred is not None:
                pairs.append((record.label, pred["label"]))
        tally = tally_from_pairs(pairs, list(CLASS_NAMES))
        report["classification_n"] = len(pairs)
        report["accuracy"] = accuracy(tally)
        report["mean_f1"] = mean_f1(tally)
        for c in CLASS_NAMES:
            report[f"f1_{c.lower()}"] = f1_one_vs_all(tally, c)

    if candidates is not None:
        per_study = []
        for record in manifest.studies:
            if record.study_id not in candidates:
                continue
            ranked = [c.box for c in candidates[record.study_id]]
            per_study.append((primary_boxes(record), ranked))
        if per_study:
            report["p1td_1"] = p1td(per_study, 1, cfg.hit_iou)
            report["p1td_10"] = p1td(per_study, 10, cfg.hit_iou)
            report["detection_n"] = len(per_study)

    if pts_records is not None:
        by_id = {r.study_id: r for r in manifest.studies}
        hits, total = 0, 0
        ksf_pairs = []
        for sid, entry in pts_records.items():
            record = by_id.get(sid)
            if record is None:
                continue
            mask = load_mask(manifest, record)
            if "box" in entry:
                total += 1
                z = int(entry["z_index"])
                x0, x1 = int(max(0, entry["box"][0])), int(min(mask.shape[0], entry["box"][3]))
                y0, y1 = int(max(0, entry["box"][1])), int(min(mask.shape[1], entry["box"][4]))
                if mask[x0:x1, y0:y1, z].sum() > 0:
                    hits += 1
            for d in entry.get("decisions", []):
                truth_primary = False
                cand_list = candidates.get(sid, []) if candidates else []
                idx = int(d["candidate_id"][1:])
                if idx < len(cand_list):
                    truth_primary = any(
                        iou3d(cand_list[idx].box, tb) >= cfg.hit_iou
                        for tb in primary_boxes(record))
                ksf_pairs.append(("Primary" if truth_primary else "NonPrimary",
                                  "Primary" if d["is_primary"] else "NonPrimary"))
        if total:
            report["key_slice_hit_rate"] = hits / total
            report["pts_n"] = total
        if ksf_pairs:
            ktally = tally_from_pairs(ksf_pairs, ["NonPrimary", "Primary"])
            report["ksf_accuracy"] = accuracy(ktally)
            report["ksf_f1_primary"] = f1_one_vs_all(ktally, "Primary")

    if sessions is not None:
        rep = labor_report(sessions, cfg.qa_minutes_per_study,
                           cfg.manual_minutes_per_study)
        report["labor_total_minutes"] = rep.total_minutes
        report["labor_baseline_minutes"] = rep.baseline_minutes
        report["labor_savings_fraction"] = rep.savings_fraction
        report["n_manual_studies"] = rep.n_manual_studies

    return report
