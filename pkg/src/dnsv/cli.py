"""Command-line interface: ``dnsv <subcommand> ...``.

On failure every subcommand exits non-zero after printing one JSON line
``{"error": <type>, "message": <text>}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .backend import PLDA, PldaModel, cosine_rows, inner_product_rows, length_normalize, plda_score_rows
from .embedding import extract_all, read_embeddings, write_embeddings
from .exceptions import ConfigError, DnsvError, FormatError
from .features import LogMelExtractor, read_features, read_wav_dir, write_features
from .metrics import (DcfParams, align_scores, alpha_lower_bound, det_points, evaluate, read_scores,
                      read_trials, write_det, write_report, write_scores)
from .nn.model import Model
from .nn.train import TrainConfig, train
from .pipeline import format_table, run_pipeline
from .synth import SynthSpec, generate, load_spec, read_labels, write_corpus

log = logging.getLogger("dnsv")

SEED_ENV = "DNSV_SEED"


def _env_seed():
    value = os.environ.get(SEED_ENV)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {value!r}") from exc


def _require(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"input not found: {path}")
    return path


def _parent(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, obj):
    with open(_parent(path), "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_features(args):
    wavs = read_wav_dir(_require(args.in_wav_dir))
    if not wavs:
        raise ConfigError(f"no .wav files in {args.in_wav_dir}")
    extractor = LogMelExtractor(n_mels=args.n_mels, frame_len_ms=args.frame_ms, hop_ms=args.hop_ms,
                                vad=not args.no_vad, vad_offset=args.vad_offset,
                                cmn_window_ms=args.cmn_window_ms)
    feats = extractor.transform(wavs)
    write_features(_parent(args.out), feats, binary=args.binary)
    print(f"wrote {len(feats)} utterances to {args.out}")


def cmd_synth(args):
    spec = load_spec(_require(args.spec)) if args.spec else SynthSpec()
    seed = _env_seed()
    if args.seed is not None:
        seed = args.seed
    if seed is not None:
        spec = replace(spec, rng_seed=seed)
    paths = write_corpus(generate(spec), args.out_dir, binary=args.binary)
    _write_json(Path(args.out_dir) / "spec.json", spec.to_dict())
    print(json.dumps(paths, sort_keys=True))


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_json(_require(args.config)) if args.config else TrainConfig()
    overrides = {}
    for key in ("epochs", "batch_size", "alpha", "embedding_dim", "encoder", "L_min", "L_max",
                "momentum", "weight_decay"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "lr", None):
        overrides["lr_schedule"] = tuple(args.lr)
    if getattr(args, "no_norm", False):
        overrides["normalize"] = False
    if getattr(args, "train_alpha", False):
        overrides["alpha_trainable"] = True
    if getattr(args, "seed", None) is not None:
        overrides["rng_seed"] = args.seed
    else:
        env = _env_seed()
        if env is not None:
            overrides["rng_seed"] = env
    return replace(cfg, **overrides) if overrides else cfg


def cmd_train(args):
    cfg = _load_config(args)
    feats = read_features(_require(args.feats))
    labels = read_labels(_require(args.labels))
    missing = [f.utt_id for f in feats if f.utt_id not in labels]
    if missing:
        raise FormatError(f"{len(missing)} utterances lack labels, e.g. {missing[0]}")
    speakers = sorted({labels[f.utt_id] for f in feats})
    index = {s: i for i, s in enumerate(speakers)}
    model, stats = train(cfg, [f.frames for f in feats], [index[labels[f.utt_id]] for f in feats])
    model.save(_parent(args.out))
    _write_json(f"{args.out}.stats.json", {"config": cfg.to_dict(), "classes": speakers,
                                           "stats": stats.to_dict()})
    print(f"final loss {stats.loss[-1]:.6f} accuracy {stats.accuracy[-1]:.4f} alpha {model.alpha}")


def cmd_extract(args):
    model = Model.load(_require(args.model))
    feats = read_features(_require(args.feats))
    emb = extract_all(model, feats, args.tap_point, jobs=args.jobs)
    write_embeddings(_parent(args.out), emb, binary=args.binary)
    print(f"wrote {len(emb)} {emb.tap_point} embeddings (dim {emb.dim}) to {args.out}")


def cmd_plda(args):
    emb = read_embeddings(_require(args.emb))
    labels = read_labels(_require(args.labels))
    ids = sorted(u for u in emb.entries if u in labels)
    if not ids:
        raise FormatError("no embeddings have speaker labels")
    est = PLDA(n_iter=args.iters, l2norm=args.l2norm).fit(emb.matrix(ids), [labels[u] for u in ids])
    est.model_.save(_parent(args.out))
    sidecar = Path(f"{args.out}.json")
    info = json.loads(sidecar.read_text())
    info["preprocess"] = {"l2norm": bool(args.l2norm), "center": est.center_.tolist()}
    info["log_likelihood"] = est.log_likelihood_
    sidecar.write_text(json.dumps(info, indent=2) + "\n")
    print(f"PLDA trained on {len(ids)} embeddings; final log-likelihood {est.log_likelihood_[-1]:.6f}")


def _plda_preprocess(model_path, want_l2norm):
    sidecar = Path(f"{model_path}.json")
    pre = {}
    if sidecar.exists():
        pre = json.loads(sidecar.read_text()).get("preprocess", {})
    if bool(pre.get("l2norm", False)) != bool(want_l2norm):
        raise ConfigError("--l2norm must match how the PLDA model was trained")
    if not want_l2norm:
        return lambda X: X
    center = np.asarray(pre["center"])
    return lambda X: length_normalize(X - center)


def cmd_score(args):
    emb = read_embeddings(_require(args.emb))
    trials = read_trials(_require(args.trials))
    missing = {u for _, a, b in trials for u in (a, b) if u not in emb.entries}
    if missing:
        raise FormatError(f"{len(missing)} trial utterances have no embedding, e.g. {sorted(missing)[0]}")
    A = emb.matrix([t[1] for t in trials])
    B = emb.matrix([t[2] for t in trials])
    if args.backend == "inner":
        scores = inner_product_rows(A, B)
    elif args.backend == "cosine":
        scores = cosine_rows(A, B)
    else:
        if not args.plda_model:
            raise ConfigError("--plda-model is required for the plda backend")
        prep = _plda_preprocess(_require(args.plda_model), args.l2norm)
        scores = plda_score_rows(PldaModel.load(args.plda_model), prep(A), prep(B))
    write_scores(_parent(args.out), [(t[1], t[2], s) for t, s in zip(trials, scores)])
    print(f"wrote {len(trials)} scores to {args.out}")


def cmd_eval(args):
    trials = read_trials(_require(args.trials))
    scores, labels = align_scores(trials, read_scores(_require(args.scores)))
    params = [DcfParams(p, args.c_miss, args.c_fa) for p in args.p_target]
    report = evaluate(scores, labels, params)
    write_report(_parent(args.out), report)
    det_path = args.det or f"{os.path.splitext(args.out)[0]}.det.txt"
    write_det(_parent(det_path), det_points(scores, labels))
    print(json.dumps(report, sort_keys=True))


def cmd_alpha_bound(args):
    print(f"{alpha_lower_bound(args.p, args.C):.6f}")


def cmd_pipeline(args):
    spec = load_spec(_require(args.spec)) if args.spec else SynthSpec()
    cfg = _load_config(args) if args.config else TrainConfig(epochs=args.epochs or 20)
    if args.config and args.epochs:
        cfg = replace(cfg, epochs=args.epochs)
    if args.alpha is not None:
        cfg = replace(cfg, alpha=args.alpha)
    seed = args.seed if args.seed is not None else _env_seed()
    result = run_pipeline(args.out_dir, spec, cfg, seed=seed, plda_iters=args.plda_iters,
                          jobs=args.jobs)
    sys.stdout.write(format_table(result["systems"]))


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnsv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("features", help="WAV directory -> log-mel feature file")
    s.add_argument("in_wav_dir")
    s.add_argument("out")
    s.add_argument("--n-mels", type=int, default=64)
    s.add_argument("--frame-ms", type=float, default=25.0)
    s.add_argument("--hop-ms", type=float, default=10.0)
    s.add_argument("--vad-offset", type=float, default=0.0)
    s.add_argument("--no-vad", action="store_true")
    s.add_argument("--cmn-window-ms", type=float, default=3000.0)
    s.add_argument("--binary", action="store_true")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("synth", help="generate a synthetic speaker corpus")
    s.add_argument("out_dir")
    s.add_argument("--spec", help="SynthSpec JSON file")
    s.add_argument("--seed", type=int)
    s.add_argument("--binary", action="store_true")
    s.set_defaults(func=cmd_synth)

    def train_flags(s):
        s.add_argument("--config", help="TrainConfig JSON file")
        s.add_argument("--epochs", type=int)
        s.add_argument("--batch-size", dest="batch_size", type=int)
        s.add_argument("--alpha", type=float)
        s.add_argument("--embedding-dim", dest="embedding_dim", type=int)
        s.add_argument("--encoder", choices=["tdnn", "resnet"])
        s.add_argument("--L-min", dest="L_min", type=int)
        s.add_argument("--L-max", dest="L_max", type=int)
        s.add_argument("--momentum", type=float)
        s.add_argument("--weight-decay", dest="weight_decay", type=float)
        s.add_argument("--lr", type=float, nargs="+", help="learning-rate schedule")
        s.add_argument("--seed", type=int)

    s = sub.add_parser("train", help="train an embedding network")
    s.add_argument("feats")
    s.add_argument("labels", help="'<utt_id> <speaker_id>' per line")
    s.add_argument("out")
    train_flags(s)
    s.add_argument("--no-norm", action="store_true", help="baseline network without length normalization")
    s.add_argument("--train-alpha", action="store_true", help="learn the scale instead of fixing it")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("extract", help="extract utterance embeddings")
    s.add_argument("model")
    s.add_argument("feats")
    s.add_argument("out")
    s.add_argument("--tap-point", choices=["penultimate", "post_norm"])
    s.add_argument("--binary", action="store_true")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("plda", help="train a two-covariance PLDA back-end")
    s.add_argument("emb")
    s.add_argument("labels")
    s.add_argument("out")
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--l2norm", action="store_true", help="center and length-normalize first")
    s.set_defaults(func=cmd_plda)

    s = sub.add_parser("score", help="score a trial list")
    s.add_argument("emb")
    s.add_argument("trials")
    s.add_argument("out")
    s.add_argument("--backend", choices=["inner", "cosine", "plda"], default="cosine")
    s.add_argument("--plda-model")
    s.add_argument("--l2norm", action="store_true")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("eval", help="EER / minDCF report and DET points")
    s.add_argument("scores")
    s.add_argument("trials")
    s.add_argument("out", help="report JSON path")
    s.add_argument("--det", help="DET points output (default: <out>.det.txt)")
    s.add_argument("--p-target", type=float, nargs="+", default=[0.01, 0.001])
    s.add_argument("--c-miss", type=float, default=1.0)
    s.add_argument("--c-fa", type=float, default=1.0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("alpha-bound", help="lower bound on the normalization scale")
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--C", type=int, required=True)
    s.set_defaults(func=cmd_alpha_bound)

    s = sub.add_parser("pipeline", help="synth -> train -> extract -> score -> eval, six systems")
    s.add_argument("out_dir")
    s.add_argument("--spec", help="SynthSpec JSON file")
    s.add_argument("--config", help="TrainConfig JSON file")
    s.add_argument("--epochs", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--plda-iters", type=int, default=10)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except (DnsvError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
