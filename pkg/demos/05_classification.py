"""Primary tumor selection plus the two texture-classification modes.

Trains the masked native-resolution classifier and the resized baseline
on ground-truth ROIs of a small corpus and compares test accuracy, then
runs the primary-slice selection on detector output.

Reduced sizes keep this under ~2 minutes; the full experiment lives in
tests/test_acceptance.py.
"""

import os
import tempfile

import numpy as np

from hepatex import classifier as clf
from hepatex import pipeline
from hepatex.config import CLASS_NAMES, Config
from hepatex.detector import train_detector
from hepatex.harvest import SessionStore
from hepatex.synth import generate_corpus

work = tempfile.mkdtemp(prefix="hepatex_demo_")
balanced = {c: 1.0 for c in CLASS_NAMES}
cfg = Config(seed=0, epochs=10, head_epochs=150, detector_epochs=8,
             class_weights=balanced, deepten_size=128)
manifest = generate_corpus(24, [0.25, 0.25, 0.25, 0.25], seed=7,
                           out_dir=os.path.join(work, "corpus"))


def accuracy(params, samples):
    probs = clf.predict_probs(params, samples)
    return float(np.mean([CLASS_NAMES[int(np.argmax(p))] == s.label
                          for p, s in zip(probs, samples)]))


models = {}
for mode in ("sadt", "deepten"):
    train = pipeline.truth_roi_samples(manifest, "train", cfg, mode, cfg.train_slices)
    test = pipeline.truth_roi_samples(manifest, "test", cfg, mode, 1)
    models[mode], history = clf.train_classifier(train, CLASS_NAMES, cfg, mode)
    print(f"{mode}: {len(train)} train slices, loss {history[0]:.2f} -> "
          f"{history[-1]:.3f}, train acc {accuracy(models[mode], train):.2f}, "
          f"test acc {accuracy(models[mode], test):.2f}")

print("\nmasked native-resolution encoding vs resized unmasked baseline: "
      "the baseline loses the physical texture scale and aggregates the "
      "misleading context inside the box corners.")

# the automated path: detector -> harvest (oracle QA) -> binary filter -> pts
detector = train_detector(manifest, cfg)
candidates, _ = pipeline.detect_corpus(manifest, detector, cfg)
pipeline.run_harvest(manifest, candidates, cfg, os.path.join(work, "sessions"),
                     auto=True)
store = SessionStore(os.path.join(work, "sessions"))
ksf_samples = pipeline.ksf_samples_from_sessions(manifest, store, "train", cfg)
ksf, _ = clf.train_classifier(ksf_samples, clf.KSF_CLASSES, cfg, "ksf")
pts_records = pipeline.run_pts(manifest, candidates, ksf, cfg)
ok = sum(1 for e in pts_records.values() if e["status"] == "ok")
print(f"\npts: {ok}/{len(pts_records)} studies with a classifier-confirmed "
      f"primary key slice")

preds = pipeline.run_classify(manifest, pts_records, [models["sadt"]], cfg,
                              split="all")
agree = sum(1 for p in preds.values() if p["label"] == p["truth"])
print(f"pipeline classification agreement over all {len(preds)} studies: "
      f"{agree}/{len(preds)} (exactly one prediction per study)")
