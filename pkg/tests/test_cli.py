import json

import numpy as np
import pytest

from dnsv.cli import main
from dnsv.embedding import read_embeddings
from dnsv.features import Waveform, read_features, write_wav
from dnsv.metrics import read_scores

SPEC = dict(n_speakers=4, utts_per_speaker=4, n_test_speakers=3, test_utts_per_speaker=3,
            frames_min=30, frames_max=40, feature_dim=5)
TRAIN_ARGS = ["--epochs", "2", "--batch-size", "8", "--L-min", "20", "--L-max", "25",
              "--embedding-dim", "6"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SPEC))
    assert main(["synth", str(root / "data"), "--spec", str(root / "spec.json")]) == 0
    return root


@pytest.fixture(scope="module")
def trained(corpus):
    d = corpus / "data"
    for name, extra in (("norm", []), ("base", ["--no-norm"])):
        assert main(["train", str(d / "train.feat"), str(d / "train.utt2spk"),
                     str(corpus / f"{name}.dnsv"), *TRAIN_ARGS, *extra]) == 0
        for split in ("train", "test"):
            assert main(["extract", str(corpus / f"{name}.dnsv"), str(d / f"{split}.feat"),
                         str(corpus / f"{name}.{split}.emb")]) == 0
    return corpus


def test_features(tmp_path, capsys):
    rng = np.random.default_rng(0)
    wav_dir = tmp_path / "wav"
    wav_dir.mkdir()
    for i in range(2):
        samples = np.round(3000 * rng.normal(size=8000)).astype(np.int16)
        write_wav(wav_dir / f"utt{i}.wav", Waveform(samples / 32768.0, 16000))
    out = tmp_path / "f.feat"
    assert main(["features", str(wav_dir), str(out), "--n-mels", "40"]) == 0
    feats = read_features(out)
    assert [f.utt_id for f in feats] == ["utt0", "utt1"]
    assert all(f.frames.shape[1] == 40 for f in feats)


def test_synth_outputs(corpus):
    d = corpus / "data"
    for name in ("train.feat", "test.feat", "train.utt2spk", "test.utt2spk", "trials.txt", "spec.json"):
        assert (d / name).exists()


def test_train_extract(trained):
    stats = json.loads((trained / "norm.dnsv.stats.json").read_text())
    assert len(stats["stats"]["loss"]) == 2
    emb = read_embeddings(trained / "norm.test.emb")
    assert emb.tap_point == "post_norm"
    np.testing.assert_allclose([np.linalg.norm(v) for v in emb.entries.values()], 12.0, rtol=1e-6)
    assert read_embeddings(trained / "base.test.emb").tap_point == "penultimate"


def test_extract_tap_unavailable(trained, capsys):
    rc = main(["extract", str(trained / "base.dnsv"), str(trained / "data" / "test.feat"),
               str(trained / "x.emb"), "--tap-point", "post_norm"])
    assert rc == 1
    assert json.loads(capsys.readouterr().err)["error"] == "TapPointUnavailable"


@pytest.mark.parametrize("backend,l2", [("inner", False), ("cosine", False), ("plda", False), ("plda", True)])
def test_score_and_eval(trained, backend, l2, capsys):
    d = trained / "data"
    extra = []
    if backend == "plda":
        model = trained / f"plda{int(l2)}.bin"
        args = ["plda", str(trained / "base.train.emb"), str(d / "train.utt2spk"), str(model), "--iters", "3"]
        assert main(args + (["--l2norm"] if l2 else [])) == 0
        extra = ["--plda-model", str(model)] + (["--l2norm"] if l2 else [])
    scores = trained / f"s_{backend}{int(l2)}.txt"
    assert main(["score", str(trained / "base.test.emb"), str(d / "trials.txt"), str(scores),
                 "--backend", backend, *extra]) == 0
    assert len(read_scores(scores)) == len((d / "trials.txt").read_text().splitlines())
    capsys.readouterr()
    report = trained / f"r_{backend}{int(l2)}.json"
    assert main(["eval", str(scores), str(d / "trials.txt"), str(report)]) == 0
    rep = json.loads(report.read_text())
    assert 0.0 <= rep["eer"] <= 1.0
    assert [m["p_target"] for m in rep["min_dcf"]] == [0.01, 0.001]
    assert (trained / f"r_{backend}{int(l2)}.det.txt").exists()


def test_plda_l2norm_mismatch(trained, capsys):
    d = trained / "data"
    model = trained / "plda_plain.bin"
    assert main(["plda", str(trained / "base.train.emb"), str(d / "train.utt2spk"), str(model)]) == 0
    rc = main(["score", str(trained / "base.test.emb"), str(d / "trials.txt"), str(trained / "s.txt"),
               "--backend", "plda", "--plda-model", str(model), "--l2norm"])
    assert rc == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "ConfigError"


def test_eval_perfect(tmp_path):
    (tmp_path / "t.txt").write_text("1 a b\n1 c d\n0 a c\n0 b d\n")
    (tmp_path / "s.txt").write_text("a b 5\nc d 4\na c -1\nb d -2\n")
    assert main(["eval", str(tmp_path / "s.txt"), str(tmp_path / "t.txt"), str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["eer"] == 0.0
    assert all(m["value"] == 0.0 for m in rep["min_dcf"])


def test_alpha_bound(capsys):
    assert main(["alpha-bound", "--p", "0.9", "--C", "1211"]) == 0
    assert capsys.readouterr().out.strip() == "9.294773"
    assert main(["alpha-bound", "--p", "0.5", "--C", "2"]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "DomainError"


def test_missing_input(tmp_path, capsys):
    assert main(["eval", str(tmp_path / "nope"), str(tmp_path / "nope2"), str(tmp_path / "r.json")]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "FileNotFoundError"


def test_seed_env(tmp_path, monkeypatch):
    monkeypatch.setenv("DNSV_SEED", "5")
    (tmp_path / "spec.json").write_text(json.dumps(SPEC))
    assert main(["synth", str(tmp_path / "a"), "--spec", str(tmp_path / "spec.json")]) == 0
    assert json.loads((tmp_path / "a" / "spec.json").read_text())["rng_seed"] == 5
    monkeypatch.setenv("DNSV_SEED", "x")
    assert main(["synth", str(tmp_path / "b")]) == 1


def test_pipeline(tmp_path, capsys):
    (tmp_path / "spec.json").write_text(json.dumps(SPEC))
    (tmp_path / "cfg.json").write_text(json.dumps({"epochs": 2, "batch_size": 8, "L_min": 20,
                                                   "L_max": 25, "embedding_dim": 6}))
    assert main(["pipeline", str(tmp_path / "run"), "--spec", str(tmp_path / "spec.json"),
                 "--config", str(tmp_path / "cfg.json"), "--plda-iters", "2"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split()[0] == "system"
    assert len(out.splitlines()) == 7
    table = json.loads((tmp_path / "run" / "table.json").read_text())
    assert len(table["systems"]) == 6
    assert (tmp_path / "run" / "scores" / "l2norm_net+plda.txt").exists()
