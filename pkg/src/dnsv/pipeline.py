"""End-to-end desk-scale comparison: synthetic corpus -> baseline and
length-normalized networks -> inner/cosine/PLDA scoring -> metrics."""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .backend import PLDA, cosine_rows, inner_product_rows
from .embedding import extract_all, write_embeddings
from .metrics import evaluate, write_det, det_points, write_report, write_scores
from .nn.train import TrainConfig, train
from .synth import SynthSpec, generate, write_corpus

log = logging.getLogger(__name__)

# (name, model, backend, extra length normalization before PLDA)
SYSTEMS = (
    ("baseline+inner", "baseline", "inner", False),
    ("baseline+cosine", "baseline", "cosine", False),
    ("baseline+plda", "baseline", "plda", False),
    ("baseline+l2norm+plda", "baseline", "plda", True),
    ("l2norm_net+inner", "normalized", "inner", False),
    ("l2norm_net+plda", "normalized", "plda", False),
)

DEFAULT_EPOCHS = 20


def score_trials(backend, emb, trials, plda=None):
    A = emb.matrix([t[1] for t in trials])
    B = emb.matrix([t[2] for t in trials])
    if backend == "inner":
        return inner_product_rows(A, B)
    if backend == "cosine":
        return cosine_rows(A, B)
    if backend == "plda":
        return plda.score_pairs(A, B)
    raise ValueError(f"unknown backend {backend!r}")


def run_pipeline(out_dir=None, spec: SynthSpec | None = None, config: TrainConfig | None = None,
                 seed: int | None = None, plda_iters: int = 10, jobs: int = 1) -> dict:
    """Run all six systems and return ``{system: report}``.

    ``seed`` (when given) overrides both the corpus and the training seeds.
    With ``out_dir`` every intermediate artifact is written there.
    """
    spec = spec or SynthSpec()
    config = config or TrainConfig(epochs=DEFAULT_EPOCHS)
    if seed is not None:
        spec = replace(spec, rng_seed=seed)
        config = replace(config, rng_seed=seed)
    out = Path(out_dir) if out_dir is not None else None

    corpus = generate(spec)
    if out is not None:
        write_corpus(corpus, out / "data")

    speakers = sorted(set(corpus.train_labels.values()))
    index = {s: i for i, s in enumerate(speakers)}
    seqs = [f.frames for f in corpus.train]
    labels = [index[corpus.train_labels[f.utt_id]] for f in corpus.train]
    train_spk = [corpus.train_labels[f.utt_id] for f in corpus.train]

    models, stats = {}, {}
    models["baseline"], stats["baseline"] = train(replace(config, normalize=False), seqs, labels)
    models["normalized"], stats["normalized"] = train(replace(config, normalize=True), seqs, labels)

    test_emb, train_emb = {}, {}
    for name, model in models.items():
        test_emb[name] = extract_all(model, corpus.test, jobs=jobs)
        train_emb[name] = extract_all(model, corpus.train, jobs=jobs)
        if out is not None:
            (out / "models").mkdir(parents=True, exist_ok=True)
            model.save(out / "models" / f"{name}.dnsv")
            with open(out / "models" / f"{name}.stats.json", "w", encoding="utf-8") as fh:
                json.dump(stats[name].to_dict(), fh, indent=2)
                fh.write("\n")
            write_embeddings(out / "models" / f"{name}.test.emb", test_emb[name])

    trial_labels = np.array([t[0] for t in corpus.trials], dtype=bool)
    reports = {}
    plda_cache = {}
    for system, model_name, backend, l2 in SYSTEMS:
        plda = None
        if backend == "plda":
            key = (model_name, l2)
            if key not in plda_cache:
                emb = train_emb[model_name]
                X = emb.matrix([f.utt_id for f in corpus.train])
                plda_cache[key] = PLDA(n_iter=plda_iters, l2norm=l2).fit(X, train_spk)
            plda = plda_cache[key]
        scores = score_trials(backend, test_emb[model_name], corpus.trials, plda)
        report = evaluate(scores, trial_labels)
        reports[system] = report
        if out is not None:
            sdir = out / "scores"
            sdir.mkdir(parents=True, exist_ok=True)
            write_scores(sdir / f"{system}.txt", [(t[1], t[2], s) for t, s in zip(corpus.trials, scores)])
            write_report(sdir / f"{system}.report.json", report)
            write_det(sdir / f"{system}.det.txt", det_points(scores, trial_labels))
        log.info("%s: EER %.4f", system, report["eer"])

    result = {"systems": reports,
              "final_train_loss": {k: v.loss[-1] for k, v in stats.items()},
              "alpha": models["normalized"].alpha}
    if out is not None:
        write_report(out / "table.json", result)
        with open(out / "table.txt", "w", encoding="utf-8") as fh:
            fh.write(format_table(reports))
    return result


def format_table(reports: dict) -> str:
    lines = [f"{'system':<24} {'minDCF1e-2':>10} {'minDCF1e-3':>10} {'EER(%)':>8}"]
    for name, rep in reports.items():
        dcf = {d["p_target"]: d["value"] for d in rep["min_dcf"]}
        lines.append(f"{name:<24} {dcf.get(0.01, float('nan')):>10.3f} "
                     f"{dcf.get(0.001, float('nan')):>10.3f} {100 * rep['eer']:>8.2f}")
    return "\n".join(lines) + "\n"
