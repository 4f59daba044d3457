"""Train the desk-scale detector on a small corpus, detect, harvest
candidates into QA sessions, and print the labor report.

Uses a reduced configuration so the whole script runs in about a minute;
see the README for the full 60-study experiment.
"""

import os
import tempfile

from hepatex import formats, pipeline
from hepatex.config import Config
from hepatex.detector import detect_study, train_detector
from hepatex.harvest import SessionStore, labor_report
from hepatex.metrics import p1td
from hepatex.synth import generate_corpus
from hepatex.volume import PHASES

work = tempfile.mkdtemp(prefix="hepatex_demo_")
cfg = Config(seed=0, detector_epochs=8)
manifest = generate_corpus(16, [0.25, 0.25, 0.25, 0.25], seed=3,
                           out_dir=os.path.join(work, "corpus"))
print(f"corpus: {len(manifest.studies)} studies under {work}/corpus")

params = train_detector(manifest, cfg)
per_study = []
for rec in manifest.studies:
    vols = {p: formats.read_volume(manifest.path(rec.volumes[p])) for p in PHASES}
    cands = detect_study(vols, params, cfg)
    truths = [tb.box for tb in rec.boxes if tb.primary]
    per_study.append((truths, [c.box for c in cands]))
print(f"P1TD-1 {p1td(per_study, 1, cfg.hit_iou):.2f}   "
      f"P1TD-10 {p1td(per_study, 10, cfg.hit_iou):.2f}")

candidates, _ = pipeline.detect_corpus(manifest, params, cfg)
sessions = pipeline.run_harvest(manifest, candidates, cfg,
                                os.path.join(work, "sessions"), auto=True)
n_manual = sum(1 for s in sessions if s.status == "needs_manual")
print(f"\nharvest: {len(sessions)} sessions, {n_manual} fell back to manual")
print(f"montages + verdict logs under {work}/sessions/<session_id>/")

rep = labor_report(sessions, cfg.qa_minutes_per_study, cfg.manual_minutes_per_study)
print(f"labor: {rep.total_minutes:.0f} min vs all-manual "
      f"{rep.baseline_minutes:.0f} min -> savings {rep.savings_fraction:.1%}")

store = SessionStore(os.path.join(work, "sessions"))
first = store.load(store.session_ids()[0])
print(f"\nreplayed session {first.session_id}: status {first.status}, "
      f"verdicts {dict(list(first.verdicts.items())[:3])} ...")
print(f"\nto review by hand instead, drop --auto-review and run:\n"
      f"  hepatex review-serve --sessions {work}/sessions "
      f"--corpus {work}/corpus --port 8765")
