"""Command-line entry point.

Exit codes: 0 success, 1 usage error (argparse), 2 data/validation
failure, 3 numeric failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import evaluate, pipeline
from .dataio import (SyntheticSpec, export_dataset, generate_synthetic,
                     load_manifest, validate_expression)
from .errors import DataError, NumericError
from .gaze import GazeConfig, camera_to_image, gaze_heatmap, load_trace
from .language import RESERVED, Vocab, build_vocab
from .model import (ModelConfig, TrainHyper, init_model, load_checkpoint,
                    rank_candidates, save_checkpoint, train)
from .proposals import CandidateSet

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit 1 (2 is reserved for data
    failures)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    return [int(x) for x in text.split(",")]


def _mod_set(text):
    letters = {"I": "image", "D": "depth", "O": "motion", "G": "gaze"}
    return tuple(letters[ch] for ch in text)


def build_parser():
    parser = _Parser(
        prog="gazeref",
        description="Gaze-assisted object referring: synthesize data, "
                    "train, score, and evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--ambiguity", default="none")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--candidates", type=int, default=12)
    p.add_argument("--gaze-noise", type=float, default=2.0)
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--embed", type=int, default=32)
    p.add_argument("--track-len", type=int, default=8)
    p.add_argument("--patch-grid", type=int, default=2)
    p.add_argument("--gaze-pooling", default="max_over_frames")
    p.add_argument("--modalities", type=_mod_set, default=("image", "depth",
                                                           "motion", "gaze"))
    p.add_argument("--early-stop-nll", type=float, default=None)

    p = sub.add_parser("score", help="rank candidates for one scene")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--expr", default=None,
                   help="expression (defaults to the annotated one)")

    p = sub.add_parser("eval", help="run the benchmark on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--M", type=int, default=30)
    p.add_argument("--k", type=_int_list, default=[1])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="report JSON path")

    p = sub.add_parser("ablate", help="train/evaluate over modality sets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sets", default="I,IO,IDO,IDOG",
                   help="comma-separated letter sets, e.g. I,IO,IDOG")
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--candidates", type=int, default=12)
    p.add_argument("--out", default=None)

    p = sub.add_parser("gazemap", help="render a gaze heatmap as PPM")
    p.add_argument("--trace", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--sigma-frac", type=float, default=0.10)
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="QC-check a manifest")
    p.add_argument("--manifest", required=True)
    return parser


def _cmd_synth(args):
    spec = SyntheticSpec(
        num_scenes=args.scenes, image_w=args.width, image_h=args.height,
        frames=args.frames, ambiguity=args.ambiguity,
        gaze_noise_sd=args.gaze_noise, outlier_rate=args.outlier_rate,
        num_candidates=args.candidates)
    dataset = generate_synthetic(spec, seed=args.seed)
    path = export_dataset(dataset, args.out)
    print(json.dumps({"manifest": path, "scenes": len(dataset)}))
    return EXIT_OK


def _cmd_train(args):
    scenes = load_manifest(args.manifest)
    vocab = build_vocab([s.expression_text for s in scenes])
    cfg = ModelConfig(
        vocab_size=len(vocab), embed_dim=args.embed,
        lang_hidden=args.hidden, visual_hidden=args.hidden,
        fusion_hidden=args.hidden, track_len=args.track_len,
        patch_grid=args.patch_grid, gaze_pooling=args.gaze_pooling,
        modalities=args.modalities)
    model = init_model(cfg, seed=args.seed)
    samples = pipeline.training_samples(scenes, cfg, vocab)
    hyper = TrainHyper(epochs=args.epochs, batch_size=args.batch_size,
                       lr=args.lr, seed=args.seed,
                       early_stop_nll=args.early_stop_nll)
    log = train(model, samples, hyper)
    save_checkpoint(args.out, model,
                    extra={"vocab": vocab.id_to_token[len(RESERVED):]})
    print(json.dumps({"checkpoint": args.out, "epochs_run": len(log),
                      "final_nll": log[-1]}))
    return EXIT_OK


def _load_model_and_vocab(ckpt):
    model, extra = load_checkpoint(ckpt)
    vocab = Vocab()
    for tok in (extra or {}).get("vocab", []):
        vocab.token_to_id[tok] = len(vocab.id_to_token)
        vocab.id_to_token.append(tok)
    return model, vocab


def _cmd_score(args):
    model, vocab = _load_model_and_vocab(args.ckpt)
    scenes = load_manifest(args.manifest)
    by_id = {s.scene_id: s for s in scenes}
    if args.scene not in by_id:
        raise DataError(f"scene {args.scene!r} not in manifest")
    scene = by_id[args.scene]
    candidates = scene.candidates
    if candidates is None:
        raise DataError(f"scene {args.scene!r} carries no proposals")
    tracks = pipeline.candidate_tracks(scene, candidates)
    prep = pipeline.ScenePrep(scene, model.config)
    bundles = [prep.bundle(t) for t in tracks]
    expr = vocab.expression(args.expr or scene.expression_text)
    ranked = rank_candidates(model, bundles, expr)
    print(json.dumps([{
        "box": list(candidates.boxes[s.index].as_tuple()),
        "log_score": s.log_score,
        "index": s.index,
    } for s in ranked]))
    return EXIT_OK


def _cmd_eval(args):
    model, vocab = _load_model_and_vocab(args.ckpt)
    scenes = load_manifest(args.manifest)
    report = evaluate.run_benchmark(model, vocab, scenes,
                                    num_candidates=args.M,
                                    k_list=tuple(args.k), seed=args.seed)
    if args.out:
        evaluate.save_report(args.out, report)
    print(json.dumps(report.to_dict()))
    print(report.to_text(), file=sys.stderr)
    return EXIT_OK


def _cmd_ablate(args):
    scenes = load_manifest(args.manifest)
    sets = [_mod_set(s) for s in args.sets.split(",")]
    base_cfg = ModelConfig(
        vocab_size=4, embed_dim=16, lang_hidden=args.hidden,
        visual_hidden=args.hidden, fusion_hidden=args.hidden,
        track_len=4, patch_grid=2)
    hyper = TrainHyper(epochs=args.epochs, early_stop_nll=0.05)
    rows = evaluate.ablation_report(scenes, sets, base_cfg, hyper,
                                    args.seeds, args.candidates)
    doc = evaluate.ablation_to_dict(rows)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
    print(json.dumps(doc))
    print(evaluate.ablation_to_text(rows), file=sys.stderr)
    return EXIT_OK


def _cmd_gazemap(args):
    trace = load_trace(args.trace)
    valid = [s for s in trace.samples if s.valid]
    if not 0 <= args.index < len(valid):
        raise DataError(f"sample index {args.index} out of range "
                        f"({len(valid)} valid samples)")
    sample = valid[args.index]
    px, py = camera_to_image(sample.gx_cm, sample.gy_cm, trace.device)
    cfg = GazeConfig(sigma_frac=args.sigma_frac)
    heat = gaze_heatmap(px, py, args.width, args.height, cfg)
    image = np.stack([heat, heat * 0.4, 1.0 - heat], axis=-1)
    evaluate.write_ppm(args.out, image)
    print(json.dumps({"out": args.out, "px": px, "py": py}))
    return EXIT_OK


def _cmd_validate(args):
    scenes_ok = True
    results = []
    with open(args.manifest) as fh:
        doc = json.load(fh)
    for entry in doc.get("scenes", []):
        report = validate_expression(entry.get("expression", ""))
        results.append({
            "id": entry.get("id"),
            "pass": report.passed,
            "violations": [{"rule": r, "message": m}
                           for r, m in report.violations],
        })
        scenes_ok = scenes_ok and report.passed
    print(json.dumps({"pass": scenes_ok,
                      "unimplemented_rules": list(
                          ("html5-spellcheck", "no-copy-paste")),
                      "scenes": results}))
    if not scenes_ok:
        for r in results:
            for v in r["violations"]:
                print(f"QC-FAIL {r['id']}: rule {v['rule']}: "
                      f"{v['message']}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "score": _cmd_score,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "gazemap": _cmd_gazemap,
    "validate": _cmd_validate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"NUMERIC-ERROR {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"DATA-ERROR {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
