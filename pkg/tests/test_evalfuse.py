import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA
from oracles import brute_force_metrics
from sexism_detect import corpus as C
from sexism_detect import evalfuse as E
from sexism_detect.evalfuse import RunPrediction


def truth_ds(labels, task="task1"):
    key = "task1" if task == "task1" else "task2"
    return C.LabeledDataset(tuple(
        C.Post(id=str(i), language="en", text="x", source="twitter", **{key: lab})
        for i, lab in enumerate(labels)))


def run(name, probs, task="task1", ids=None):
    probs = np.asarray(probs, dtype=float)
    return RunPrediction(name, task, ids or tuple(str(i) for i in range(len(probs))), probs)


def test_run_prediction_invariants():
    with pytest.raises(E.PredictionError, match="sum"):
        run("r", [[0.5, 0.6]])
    with pytest.raises(E.PredictionError, match="negative"):
        run("r", [[-0.1, 1.1]])
    with pytest.raises(E.PredictionError, match="duplicate"):
        run("r", [[0.5, 0.5], [1, 0]], ids=("a", "a"))
    with pytest.raises(E.PredictionError):
        run("r", [[0.5, 0.5]], ids=("a", "b"))


def test_late_fuse_hand_sum():
    f = E.late_fuse([run("a", [[0.6, 0.4]]), run("b", [[0.3, 0.7]])])
    np.testing.assert_allclose(f.probs, [[0.45, 0.55]], atol=1e-15)
    assert f.label_indices().tolist() == [1]


def test_late_fuse_majority_of_one_hots():
    eye = np.eye(6)
    runs = [run(n, [eye[k]], task="task2") for n, k in (("a", 3), ("b", 3), ("c", 1))]
    assert E.late_fuse(runs).label_indices().tolist() == [3]


def test_late_fuse_ties_go_low():
    f = E.late_fuse([run("a", [[1.0, 0.0]]), run("b", [[0.0, 1.0]])])
    assert f.label_indices().tolist() == [0]


def test_late_fuse_aligns_ids():
    a = run("a", [[0.9, 0.1], [0.2, 0.8]], ids=("x", "y"))
    b = run("b", [[0.6, 0.4], [0.1, 0.9]], ids=("y", "x"))
    f = E.late_fuse([a, b])
    assert f.ids == ("x", "y")
    np.testing.assert_allclose(f.probs, [[0.5, 0.5], [0.4, 0.6]], atol=1e-15)


def test_late_fuse_errors():
    a = run("a", [[0.5, 0.5]], ids=("x",))
    with pytest.raises(E.PredictionError, match="at least two"):
        E.late_fuse([a])
    with pytest.raises(E.PredictionError, match="y, z"):
        E.late_fuse([run("b", [[0.5, 0.5], [1, 0]], ids=("x", "y")),
                     run("c", [[1, 0], [1, 0]], ids=("x", "z"))])
    with pytest.raises(E.PredictionError, match="tasks"):
        E.late_fuse([a, run("b", [np.eye(6)[0]], task="task2", ids=("x",))])


probs6 = st.lists(st.floats(0.01, 1.0), min_size=6, max_size=6).map(
    lambda v: np.asarray(v) / sum(v))
runs_strategy = st.lists(st.lists(probs6, min_size=4, max_size=4), min_size=2, max_size=4)


@settings(max_examples=100)
@given(runs_strategy)
def test_fusion_permutation_invariant(raw):
    runs = [run(f"r{i}", rows, task="task2") for i, rows in enumerate(raw)]
    ref = E.late_fuse(runs).label_indices()
    for perm in itertools.permutations(runs):
        assert np.array_equal(E.late_fuse(list(perm)).label_indices(), ref)


@settings(max_examples=100)
@given(st.lists(probs6, min_size=3, max_size=3))
def test_fusion_doubling_keeps_argmax(rows):
    r = run("r", rows, task="task2")
    assert np.array_equal(E.late_fuse([r, r]).label_indices(), r.label_indices())


@settings(max_examples=100)
@given(runs_strategy, st.integers(2, 4))
def test_fusion_uniform_scaling_keeps_argmax(raw, k):
    # listing every run k times scales the whole sum by k before renormalising
    runs = [run(f"r{i}", rows, task="task2") for i, rows in enumerate(raw)]
    base = E.late_fuse(runs)
    scaled = E.late_fuse([r for r in runs for _ in range(k)])
    assert np.array_equal(base.label_indices(), scaled.label_indices())
    np.testing.assert_allclose(base.probs, scaled.probs, rtol=0, atol=1e-12)


def test_evaluate_hand_fixture():
    truth = truth_ds(["sexist", "sexist", "non-sexist", "non-sexist"])
    pred = {"0": "sexist", "1": "non-sexist", "2": "non-sexist", "3": "non-sexist"}
    rep = E.evaluate(pred, truth, "task1")
    assert rep.accuracy == 0.75
    assert rep.f1.tolist() == pytest.approx([2 / 3, 0.8], abs=1e-15)
    assert rep.macro_f1 == pytest.approx((2 / 3 + 0.8) / 2, abs=1e-15)
    assert round(rep.macro_f1, 4) == 0.7333
    assert rep.confusion.tolist() == [[1, 1], [0, 2]]


def test_evaluate_perfect_and_constant():
    truth = truth_ds(["sexist", "non-sexist"] * 3)
    perfect = E.evaluate({p.id: p.task1 for p in truth}, truth, "task1")
    assert (perfect.accuracy, perfect.macro_f1) == (1.0, 1.0)
    const = E.evaluate({p.id: "sexist" for p in truth}, truth, "task1")
    assert const.accuracy == 0.5 and const.macro_f1 == pytest.approx(1 / 3, abs=1e-15)


def test_macro_f1_counts_absent_classes():
    truth = truth_ds(["objectification", "objectification"], task="task2")
    rep = E.evaluate({"0": "objectification", "1": "objectification"}, truth, "task2")
    assert rep.macro_f1 == pytest.approx(1 / 6, abs=1e-15)


def test_evaluate_errors():
    truth = truth_ds(["sexist"])
    with pytest.raises(E.PredictionError, match="'9'"):
        E.evaluate({"9": "sexist"}, truth, "task1")
    with pytest.raises(E.PredictionError, match="unknown"):
        E.evaluate({"0": "maybe"}, truth, "task1")


def test_evaluate_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        k = int(rng.choice([2, 6]))
        task = "task1" if k == 2 else "task2"
        n = int(rng.integers(1, 40))
        t, p = rng.integers(0, k, n), rng.integers(0, k, n)
        classes = C.classes_for(task)
        truth = truth_ds([classes[i].value for i in t], task)
        rep = E.evaluate({str(i): classes[j] for i, j in enumerate(p)}, truth, task)
        acc, f1s, macro = brute_force_metrics(t.tolist(), p.tolist(), k)
        assert abs(rep.accuracy - acc) <= 1e-12 and abs(rep.macro_f1 - macro) <= 1e-12
        assert np.max(np.abs(rep.f1 - f1s)) <= 1e-12
        assert rep.accuracy == np.trace(rep.confusion) / n


def test_random_predictor_macro_f1_converges():
    # balanced k classes, uniform random guesses: every P and R is 1/k, so F1 = 1/k
    rng = np.random.default_rng(1)
    k, n = 6, 60000
    t = np.repeat(np.arange(k), n // k)
    p = rng.integers(0, k, n)
    _, _, f1 = E.scores_from_indices(t, p, k)[1:]
    assert abs(f1.mean() - 1 / k) < 0.01


def test_majority_baseline():
    train = truth_ds(["non-sexist"] * 3 + ["sexist"])
    val = truth_ds(["sexist", "non-sexist"])
    rep = E.majority_baseline(train, val, "task1")
    assert rep.accuracy == 0.5 and rep.macro_f1 == pytest.approx(1 / 3)


def test_prediction_file_round_trip(tmp_path):
    r = run("alpha", [[0.25, 0.75], [1.0, 0.0]], ids=("p1", "p2"))
    path = tmp_path / "p.jsonl"
    E.write_predictions(r, path)
    text = path.read_text(encoding="utf-8")
    assert text.splitlines()[0] == "# run=alpha task=task1 classes=sexist,non-sexist"
    back = E.read_predictions(path)
    assert back.run_name == "alpha" and back.ids == r.ids
    assert np.array_equal(back.probs, r.probs)
    path.write_text(text + "{bad json\n", encoding="utf-8")
    with pytest.raises(E.PredictionError, match="line 4"):
        E.read_predictions(path)


def test_submission_round_trip(tmp_path):
    eye = np.eye(6)
    r = run("s", [eye[0], eye[5]], task="task2", ids=("a", "b"))
    path = tmp_path / "sub.tsv"
    E.write_submission(r, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines == ["test_case\tid\tlabel", "EXIST2021\ta\tideological-inequality",
                     "EXIST2021\tb\tnon-sexist"]
    back = E.read_submission(path, "task2")
    assert back == r.hard_labels()
    t1 = run("t", [[0.9, 0.1], [0.2, 0.8]], ids=("a", "b"))
    E.write_submission(t1, path)
    assert [ln.split("\t")[2] for ln in path.read_text().splitlines()[1:]] == \
        ["sexist", "non-sexist"]


def test_bundled_fixture_pair():
    truth = C.load_tsv(DATA / "fixture_truth.tsv")
    rep = E.evaluate(E.read_predictions(DATA / "fixture_pred.jsonl"), truth, "task1")
    assert rep.accuracy == 0.75 and round(rep.macro_f1, 4) == 0.7333


def test_report_formats():
    truth = truth_ds(["sexist", "non-sexist"])
    rep = E.evaluate({"0": "sexist", "1": "sexist"}, truth, "task1")
    d = rep.to_dict()
    assert d["per_class"]["sexist"]["recall"] == 1.0 and d["n_instances"] == 2
    assert "macro F1" in rep.format_table()
