"""Command-line surface for the whole pipeline.

Every subcommand exits nonzero with a one-line machine-parsable reason
(``error: <code>: <message>`` on stderr) on failure, and is reproducible
from (inputs, config, seed).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import classifier as clf
from . import formats, gradchecks, pipeline
from .config import CLASS_NAMES, Config, load_config
from .detector import load_detector, save_detector, train_detector
from .harvest import SessionStore
from .synth import generate_corpus, load_manifest


class CliError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _cfg(args) -> Config:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "topk", None) is not None:
        overrides["topk"] = args.topk
    return load_config(getattr(args, "config", None), overrides)


def _manifest(args):
    path = os.path.join(args.corpus, "manifest.json")
    if not os.path.exists(path):
        raise CliError("no-manifest", f"no manifest at {path}")
    return load_manifest(path)


def cmd_gen(args) -> int:
    mix = [float(x) for x in args.mix.split(",")]
    if len(mix) != len(CLASS_NAMES):
        raise CliError("bad-mix", f"expected {len(CLASS_NAMES)} fractions, got {len(mix)}")
    manifest = generate_corpus(args.n, mix, args.seed, args.out)
    print(f"generated {len(manifest.studies)} studies under {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    ok, results = gradchecks.run_all(n_seeds=args.seeds, plant_bug=args.plant_bug)
    for name in sorted(results):
        status = "ok" if results[name] < 1e-4 else "FAIL"
        print(f"{status}  {name}  max_rel_err={results[name]:.3e}")
    return 0 if ok else 1


def cmd_train_detector(args) -> int:
    cfg = _cfg(args)
    manifest = _manifest(args)
    params = train_detector(manifest, cfg,
                            log=print if args.verbose else None)
    save_detector(args.out, params, cfg)
    print(f"detector checkpoint written to {args.out}")
    return 0


def cmd_detect(args) -> int:
    cfg = _cfg(args)
    manifest = _manifest(args)
    params = load_detector(args.detector)
    _, rows = pipeline.detect_corpus(manifest, params, cfg, split=args.split,
                                     log=print if args.verbose else None)
    formats.write_candidates(args.out, rows)
    print(f"{len(rows)} candidates written to {args.out}")
    return 0


def cmd_harvest(args) -> int:
    cfg = _cfg(args)
    manifest = _manifest(args)
    candidates = pipeline.candidates_from_rows(formats.read_candidates(args.candidates))
    sessions = pipeline.run_harvest(manifest, candidates, cfg, args.out,
                                    auto=args.auto_review,
                                    log=print if args.verbose else None)
    n_open = sum(1 for s in sessions if s.status == "open")
    n_manual = sum(1 for s in sessions if s.status == "needs_manual")
    print(f"{len(sessions)} sessions in {args.out} "
          f"({n_open} open, {n_manual} needs_manual)")
    return 0


def cmd_train_classifier(args) -> int:
    cfg = _cfg(args)
    manifest = _manifest(args)
    if args.mode == "ksf":
        if not args.sessions:
            raise CliError("no-sessions", "ksf mode needs --sessions with reviewed QA")
        store = SessionStore(args.sessions)
        samples = pipeline.ksf_samples_from_sessions(manifest, store, "train", cfg)
        classes = clf.KSF_CLASSES
    else:
        samples = pipeline.truth_roi_samples(manifest, "train", cfg, args.mode,
                                             cfg.train_slices)
        classes = CLASS_NAMES
    if not samples:
        raise CliError("no-samples", "training set is empty")
    params, history = clf.train_classifier(samples, classes, cfg, args.mode,
                                           log=print if args.verbose else None)
    clf.save_classifier(args.out, params, cfg)
    print(f"{args.mode} classifier ({len(samples)} samples, "
          f"final loss {history[-1]:.4f}) written to {args.out}")
    return 0


def cmd_pts(args) -> int:
    cfg = _cfg(args)
    manifest = _manifest(args)
    candidates = pipeline.candidates_from_rows(formats.read_candidates(args.candidates))
    ksf_params = clf.load_classifier(args.ksf) if args.ksf else None
    records = pipeline.run_pts(manifest, candidates, ksf_params, cfg, split=args.split)
    formats.write_json(args.out, {"schema_version": 1, "studies": records})
    n_ok = sum(1 for r in records.values() if r["status"] == "ok")
    print(f"pts: {n_ok}/{len(records)} studies with a primary key slice -> {args.out}")
    return 0


def cmd_classify(args) -> int:
    cfg = _cfg(args)
    manifest = _manifest(args)
    pts_records = formats.read_json(args.pts)["studies"]
    paths = []
    for spec in args.model:
        if "{i}" in spec:
            paths.extend(spec.format(i=i) for i in range(args.ensemble))
        else:
            paths.append(spec)
    models = [clf.load_classifier(p) for p in paths]
    predictions = pipeline.run_classify(manifest, pts_records, models, cfg,
                                        split=args.split)
    formats.write_json(args.out, {"schema_version": 1, "predictions": predictions})
    print(f"{len(predictions)} predictions ({len(models)} model(s)) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _cfg(args)
    manifest = _manifest(args)
    predictions = candidates = pts_records = sessions = None
    if args.predictions:
        predictions = formats.read_json(args.predictions)["predictions"]
    if args.candidates:
        candidates = pipeline.candidates_from_rows(formats.read_candidates(args.candidates))
    if args.pts:
        pts_records = formats.read_json(args.pts)["studies"]
    if args.sessions:
        sessions = SessionStore(args.sessions).load_all()
    report = pipeline.run_eval(manifest, cfg, predictions=predictions,
                               candidates=candidates, pts_records=pts_records,
                               sessions=sessions, split=args.split)
    formats.write_report(args.out, report)
    for k in sorted(report):
        print(f"{k} = {formats.format_value(report[k])}")
    return 0


def cmd_review_serve(args) -> int:
    from .server import serve

    cfg = _cfg(args)
    manifest = _manifest(args) if args.corpus else None
    serve(args.sessions, manifest, cfg, port=args.port, ui_dir=args.ui)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hepatex",
        description="Multi-phase CT lesion pipeline on synthetic data")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corpus=True):
        p.add_argument("--config", help="JSON config file (unknown keys rejected)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--verbose", action="store_true")
        if corpus:
            p.add_argument("--corpus", required=True, help="corpus directory")

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mix", default="0.25,0.25,0.25,0.25",
                   help="class fractions HCC,ICC,Benign,Metastasis")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("gradcheck", help="verify every backward pass")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--plant-bug", help="corrupt one check to verify detection")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("train-detector", help="fit the detection heads")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_detector)

    p = sub.add_parser("detect", help="candidates per study")
    common(p)
    p.add_argument("--detector", required=True)
    p.add_argument("--topk", type=int)
    p.add_argument("--split", default="all", choices=["all", "train", "val", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("harvest", help="QA sessions + montages")
    common(p)
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--auto-review", action="store_true",
                   help="oracle reviewer (uses ground truth)")
    p.set_defaults(fn=cmd_harvest)

    p = sub.add_parser("train-classifier", help="texture classifier checkpoints")
    common(p)
    p.add_argument("--mode", required=True, choices=["sadt", "deepten", "ksf"])
    p.add_argument("--sessions", help="reviewed sessions (ksf mode)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_classifier)

    p = sub.add_parser("pts", help="primary key slice per study")
    common(p)
    p.add_argument("--candidates", required=True)
    p.add_argument("--ksf", help="binary key-slice filter checkpoint")
    p.add_argument("--split", default="all", choices=["all", "train", "val", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pts)

    p = sub.add_parser("classify", help="one label per study")
    common(p)
    p.add_argument("--pts", required=True)
    p.add_argument("--model", required=True, nargs="+",
                   help="checkpoint path(s); '{i}' expands over --ensemble")
    p.add_argument("--ensemble", type=int, default=1)
    p.add_argument("--split", default="all", choices=["all", "train", "val", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("eval", help="metrics report")
    common(p)
    p.add_argument("--predictions")
    p.add_argument("--candidates")
    p.add_argument("--pts")
    p.add_argument("--sessions")
    p.add_argument("--split", default="test", choices=["all", "train", "val", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("review-serve", help="HTTP review API for the QA frontend")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--corpus", help="corpus directory (for re-windowed montages)")
    p.add_argument("--sessions", required=True)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--ui", help="static frontend directory to serve at /")
    p.set_defaults(fn=cmd_review_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e.code}: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
