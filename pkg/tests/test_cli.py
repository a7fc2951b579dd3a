import csv
import json

import numpy as np
import pytest

from metacal import SceneConfig, generate_scene, save_scene
from metacal.cli import main
from metacal.meta import write_feature_file


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def small_corpus(root, ks_train=(0.4, 0.8, 1.5, 2.5, 0.6, 1.1), ks_test=(1.0, 2.0), size=16):
    root.mkdir(parents=True, exist_ok=True)
    man = {"format": "metacal.corpus/1", "seed": 0, "parameters": {}, "train": [], "test": []}
    for split, ks in (("train", ks_train), ("test", ks_test)):
        for i, k in enumerate(ks):
            sid = f"{split}_{i:03d}"
            cfg = SceneConfig(height=size, width=size, k=k, seed=100 * (split == "test") + i)
            save_scene(generate_scene(cfg), root / f"{sid}.json")
            man[split].append({"id": sid, "file": f"{sid}.json", "seed": cfg.seed, "k": k})
    (root / "manifest.json").write_text(json.dumps(man))
    return root


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return small_corpus(tmp_path_factory.mktemp("corpus") / "c", size=64)


@pytest.fixture(scope="module")
def model(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert main(["fit-basis", "--corpus", str(corpus), "--curves", "6", "--out", str(out / "basis.json")]) == 0
    args = ["train-meta", "--corpus", str(corpus), "--basis", str(out / "basis.json"), "--seed", "0"]
    assert main(args + ["--epochs", "300", "--out", str(out / "model.json"), "--loss-trace", str(out / "loss.csv")]) == 0
    return out


class TestGenCorpus:
    def test_files_and_determinism(self, tmp_path):
        args = ["gen-corpus", "--train", "3", "--test", "2", "--seed", "7", "--height", "8", "--width", "8"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert len(files) == 6 and "manifest.json" in files
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        man = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert man["seed"] == 7 and len(man["train"]) == 3 and len(man["test"]) == 2
        assert len({e["seed"] for e in man["train"] + man["test"]}) == 5

    def test_zero_train_is_validation_error(self, tmp_path, capsys):
        assert main(["gen-corpus", "--train", "0", "--test", "1", "--seed", "1", "--out", str(tmp_path)]) == 1
        assert "train" in capsys.readouterr().err

    def test_seed_required(self, tmp_path):
        assert main(["gen-corpus", "--train", "2", "--test", "1", "--out", str(tmp_path)]) == 1

    def test_unwritable_path(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code = main(["gen-corpus", "--train", "1", "--test", "0", "--seed", "1", "--out", str(blocker / "sub")])
        assert code == 2
        out = capsys.readouterr()
        assert out.out == "" and "error" in out.err


class TestEval:
    def test_oracle_and_identity(self, corpus, tmp_path):
        assert main(["eval", "--corpus", str(corpus), "--mode", "oracle", "--mode", "identity", "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "metrics.csv")
        assert len(rows) == 2 * 3 * 2
        assert list(rows[0]) == ["scene", "channel", "cal_err_uncal", "cal_err_cal", "nll_uncal", "nll_cal", "mode"]
        for r in rows:
            uncal, cal = float(r["cal_err_uncal"]), float(r["cal_err_cal"])
            if r["scene"] == "test_000":  # k = 1
                assert uncal <= 5e-4 and cal <= 5e-4
            elif r["mode"] == "oracle":  # k = 2
                assert cal <= 0.1 * uncal
            if r["mode"] == "identity":
                assert r["cal_err_cal"] == r["cal_err_uncal"] and r["nll_cal"] == r["nll_uncal"]
        curve = read_csv(tmp_path / "curves" / "test_001_G_oracle.csv")
        assert len(curve) == 384 and list(curve[0]) == ["p", "p_hat_uncalibrated", "p_hat_calibrated"]

    def test_nine_significant_digits(self, corpus, tmp_path):
        main(["eval", "--corpus", str(corpus), "--mode", "identity", "--out", str(tmp_path)])
        for r in read_csv(tmp_path / "metrics.csv"):
            digits = r["nll_uncal"].lstrip("-").split("e")[0].replace(".", "").lstrip("0")
            assert len(digits) <= 9

    def test_meta_mode(self, corpus, model, tmp_path):
        assert main(["eval", "--corpus", str(corpus), "--model", str(model / "model.json"), "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "metrics.csv")
        assert len(rows) == 2 * 3 * 3
        assert {r["mode"] for r in rows} == {"oracle", "meta", "identity"}

    def test_meta_without_model(self, corpus, tmp_path):
        assert main(["eval", "--corpus", str(corpus), "--mode", "meta", "--out", str(tmp_path)]) == 1

    def test_missing_model_file(self, corpus, tmp_path):
        assert main(["eval", "--corpus", str(corpus), "--model", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2

    def test_missing_corpus(self, tmp_path):
        assert main(["eval", "--corpus", str(tmp_path / "nothing"), "--out", str(tmp_path)]) == 2

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / "c").mkdir()
        (tmp_path / "c" / "manifest.json").write_text("{not json")
        assert main(["eval", "--corpus", str(tmp_path / "c"), "--out", str(tmp_path / "o")]) == 1


class TestModelCommands:
    def test_basis_and_training_outputs(self, model):
        basis = json.loads((model / "basis.json").read_text())
        assert len(basis["components"]) == 3
        trace = read_csv(model / "loss.csv")
        assert len(trace) == 300 and float(trace[-1]["loss"]) < float(trace[0]["loss"])

    def test_training_is_deterministic(self, corpus, model, tmp_path):
        args = ["train-meta", "--corpus", str(corpus), "--basis", str(model / "basis.json"), "--seed", "0"]
        main(args + ["--epochs", "300", "--out", str(tmp_path / "m.json"), "--loss-trace", str(tmp_path / "l.csv")])
        assert (tmp_path / "l.csv").read_bytes() == (model / "loss.csv").read_bytes()

    def test_train_needs_seed(self, corpus, model, tmp_path):
        args = ["train-meta", "--corpus", str(corpus), "--basis", str(model / "basis.json"), "--out", str(tmp_path / "m.json")]
        assert main(args) == 1

    def test_external_features(self, corpus, model, tmp_path):
        feats = np.random.default_rng(0).random((6, 78))
        write_feature_file(tmp_path / "f.csv", feats)
        args = ["train-meta", "--corpus", str(corpus), "--basis", str(model / "basis.json"), "--seed", "1"]
        assert main(args + ["--epochs", "20", "--features", str(tmp_path / "f.csv"), "--out", str(tmp_path / "m.json")]) == 0
        write_feature_file(tmp_path / "short.csv", feats[:4])
        assert main(args + ["--features", str(tmp_path / "short.csv"), "--out", str(tmp_path / "m2.json")]) == 1

    def test_too_few_curves(self, corpus, tmp_path):
        assert main(["fit-basis", "--corpus", str(corpus), "--curves", "3", "--out", str(tmp_path / "b.json")]) == 1

    def test_predict(self, corpus, model, tmp_path):
        args = ["predict", "--model", str(model / "model.json"), "--scene", str(corpus / "test_001.json")]
        assert main(args + ["--out", str(tmp_path / "map.json")]) == 0
        m = json.loads((tmp_path / "map.json").read_text())
        assert m["inputs"][0] == 0.0 and m["outputs"][-1] == 1.0
        assert np.all(np.diff(m["outputs"]) >= 0)
        write_feature_file(tmp_path / "one.csv", np.random.default_rng(0).random((1, 78)))
        assert main(args + ["--features", str(tmp_path / "one.csv"), "--out", str(tmp_path / "map2.json")]) == 0


class TestPlanAndDemos:
    def test_plan(self, corpus, tmp_path):
        assert main(["plan", "--corpus", str(corpus), "--out", str(tmp_path / "ig.csv"), "--log", str(tmp_path / "log.csv")]) == 0
        rows = read_csv(tmp_path / "ig.csv")
        assert len(rows) == 2 * 11
        np.testing.assert_allclose(sorted({float(r["gamma"]) for r in rows}), np.linspace(0, 0.5, 11))
        log = read_csv(tmp_path / "log.csv")
        assert sum(int(r["selected"]) for r in log) == 1
        assert [r["view"] for r in log if r["selected"] == "1"] == ["test_001"]

    def test_demo_train_overfit(self, tmp_path):
        assert main(["demo-train-overfit", "--seed", "0", "--height", "32", "--width", "32", "--out", str(tmp_path / "o.csv")]) == 0
        rows = read_csv(tmp_path / "o.csv")
        assert len(rows) == 3
        assert all(float(r["cal_err_train_fit"]) > float(r["cal_err_identity"]) for r in rows)

    def test_bench_rows(self, capsys):
        assert main(["bench-iqr", "--seed", "0", "--sampling-reps", "3", "--samples", "1000"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "method,seconds_per_pixel,ratio_to_iqr"
        assert [line.split(",")[0] for line in out[1:]] == ["iqr_interpolation", "variance_sampling", "variance_integration"]

    def test_bench_needs_enough_reps(self):
        assert main(["bench-iqr", "--seed", "0", "--reps", "10"]) == 1

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1
