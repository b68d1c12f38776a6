import math

import numpy as np
import pytest

import misd


def test_worked_report():
    r = misd.full_report([0.9, 0.8, 0.7, 0.6], [1, 2, 0, 3], [1, 0, 0, 3])
    assert r["acc"] == pytest.approx(75.0)
    assert round(r["aurc"], 2) == 270.83
    assert round(r["aupr_s"], 2) == 80.56
    assert round(r["auroc"], 2) == 33.33


def test_perfect_predictor_has_no_auroc():
    r = misd.full_report([0.9, 0.7], [1, 0], [1, 0])
    assert r["auroc"] is None
    assert r["notes"]


def test_binary_metrics_match_brute_force():
    rng = np.random.default_rng(3)
    conf = rng.integers(1, 6, size=40) / 6.0
    ok = rng.random(40) < 0.6
    pos, neg = conf[ok], conf[~ok]
    pairs = [(p > n) + 0.5 * (p == n) for p in pos for n in neg]
    assert misd.auroc(conf, ok) == pytest.approx(np.mean(pairs), abs=1e-12)
    rep = misd.binary_report(conf, ok)
    assert rep["acc"] is None
    assert rep["auroc"] == pytest.approx(100 * misd.auroc(conf, ok))


def test_errors_are_typed():
    with pytest.raises(misd.ShapeError):
        misd.full_report([0.5, 0.5], [1], [1, 1])
    with pytest.raises(misd.Error):
        misd.aupr([0.5], [True], polarity="sideways")


def test_embedding_round_trip(tmp_path):
    views = np.arange(18, dtype=np.float64).reshape(3, 2, 3) / 7.0
    misd.write_embeddings(tmp_path / "a.emb", views, [1, 0, 1], ["cat", "dog"])
    back = misd.read_embeddings(tmp_path / "a.emb")
    np.testing.assert_array_equal(back["views"], views.astype(np.float32).astype(np.float64))
    assert list(back["labels"]) == [1, 0, 1]
    assert back["class_names"] == ["cat", "dog"]
    (tmp_path / "bad.emb").write_bytes(b"MISDEMBX")
    with pytest.raises(misd.Error):
        misd.read_embeddings(tmp_path / "bad.emb")


def test_gen_synth_shapes():
    d = misd.gen_synth(3, 4, seed=1)
    assert d["images"].shape == (12, 32, 32, 3)
    assert sorted(set(d["labels"])) == [0, 1, 2]
    with pytest.raises(misd.DegenerateTaskError):
        misd.gen_synth(1, 4)


def test_gradcheck():
    r = misd.gradcheck(trials=5)
    assert r["passed"]
    assert r["worst_relative_error"] < 1e-4


def test_train_evaluate_and_cli(tmp_path):
    code, _, err = misd.cli(["gen-synth", "--classes", "3", "--per-class", "5",
                             "--train-per-class", "8", "--out", str(tmp_path / "data")])
    assert code == 0, err
    model = misd.Model.train(tmp_path / "data" / "train.img", shots=4, epochs=5, seed=2)
    assert len(model.loss_trace) == 5
    assert all(math.isfinite(r["total"]) for r in model.loss_trace)
    out = model.evaluate(tmp_path / "data" / "val.img")
    assert len(out["confidence"]) == 15
    assert 0.0 <= out["report"]["acc"] <= 100.0

    model.save(tmp_path / "model.json")
    again = misd.Model.load(tmp_path / "model.json")
    assert again.class_names == model.class_names
    emb = misd.read_embeddings(tmp_path / "data" / "val.emb")
    conf, pred = again.predict(emb["views"][:, 0, :])
    np.testing.assert_allclose(conf, misd.Model.load(tmp_path / "model.json").evaluate(
        tmp_path / "data" / "val.emb")["confidence"], atol=1e-12)
    assert pred.shape == (15,)

    with pytest.raises(misd.ConfigError):
        misd.Model.train(tmp_path / "data" / "train.img", shots=4, bogus=1)
    assert misd.cli(["gradcheck", "--trials", "0"])[0] == 2
