import random

import numpy as np
import pandas as pd
import pytest

from taxorag import (
    DatasetMismatch, DivisionByZero, EvaluationError, LengthMismatch,
    MetricsReport, MissingLog, UnknownLabel, compare, decay_rates, evaluate,
    f1_macro, format_comparison, format_table, hit_at_k, long_tail_profile,
    misclassified, per_class_f1, write_per_class_csv)


def confusion_f1(golds, predictions, space):
    """F1-macro from an explicit confusion matrix."""
    position = {label: i for i, label in enumerate(space)}
    matrix = np.zeros((len(space), len(space)), dtype=int)
    for gold, predicted in zip(golds, predictions):
        matrix[position[gold], position[predicted]] += 1

    scores = []
    for i in range(len(space)):
        true_positive = matrix[i, i]
        false_positive = matrix[:, i].sum() - true_positive
        false_negative = matrix[i, :].sum() - true_positive
        denominator = 2 * true_positive + false_positive + false_negative
        scores.append(2 * true_positive / denominator if denominator else 0.0)
    return sum(scores) / len(scores)


def test_f1_macro_examples():
    assert f1_macro(["a", "b", "a"], ["a", "b", "a"], ["a", "b"]) == 1.0
    # b is never predicted and never correct
    assert f1_macro(["a", "a"], ["a", "a"], ["a", "b"]) == 0.5
    assert f1_macro(["a"], ["a"], ["a"]) == 1.0
    assert f1_macro([], [], ["a", "b"]) == 0.0


def test_f1_macro_matches_confusion_matrix():
    rng = random.Random(77)
    for _ in range(1000):
        space = ["c{}".format(i) for i in range(rng.randint(1, 10))]
        size = rng.randint(1, 500)
        golds = [rng.choice(space) for _ in range(size)]
        predictions = [rng.choice(space) for _ in range(size)]
        assert f1_macro(golds, predictions, space) == pytest.approx(
            confusion_f1(golds, predictions, space), abs=1e-9)


def test_f1_macro_relabeling_invariant():
    rng = random.Random(3)
    space = ["c{}".format(i) for i in range(6)]
    golds = [rng.choice(space) for _ in range(200)]
    predictions = [rng.choice(space) for _ in range(200)]
    renamed = dict(zip(space, reversed(["z{}".format(i) for i in range(6)])))
    assert f1_macro(golds, predictions, space) == pytest.approx(f1_macro(
        [renamed[g] for g in golds], [renamed[p] for p in predictions],
        [renamed[label] for label in space]), abs=1e-12)


def test_f1_macro_errors():
    with pytest.raises(LengthMismatch):
        f1_macro(["a", "b"], ["a"], ["a", "b"])
    with pytest.raises(UnknownLabel):
        f1_macro(["a"], ["c"], ["a", "b"])


def test_per_class_f1():
    frame = per_class_f1(["a", "a", "b", "b"], ["a", "a", "a", "b"],
                         ["a", "b", "c"])
    assert list(frame.columns) == ["label", "support", "predicted",
                                   "precision", "recall", "f1"]
    assert list(frame.label) == ["a", "b", "c"]
    assert list(frame.support) == [2, 2, 0]
    assert list(frame.predicted) == [3, 1, 0]
    assert frame.f1.tolist() == pytest.approx([0.8, 2 / 3, 0.0])


def test_decay_rates():
    decays, average = decay_rates([0.8, 0.4])
    assert decays == pytest.approx((0.5,))
    assert average == pytest.approx(0.5)

    assert decay_rates([0.5, 0.5, 0.5]) == ((0.0, 0.0), 0.0)

    decays, average = decay_rates([0.754, 0.178, 0.129])
    assert decays == pytest.approx((0.7639, 0.2753), abs=1e-4)
    assert average == pytest.approx(0.5196, abs=5e-4)

    # A zero in the last level is fine, it is never a denominator
    assert decay_rates([0.5, 0.0])[0] == (1.0,)

    with pytest.raises(DivisionByZero):
        decay_rates([0.5, 0.0, 0.0])
    with pytest.raises(ValueError):
        decay_rates([0.5])


@pytest.fixture
def logged():
    golds = {
        "d0": ("pets", "dogs"),
        "d1": ("pets", "cats"),
        "d2": ("toys", "games"),
        "d3": ("toys", "outdoor"),
    }
    predictions = {
        "d0": ("pets", "dogs"),
        "d1": ("pets", "dogs"),
        "d2": ("toys", "outdoor"),
        "d3": ("toys", "outdoor"),
    }
    logs = {
        "d0": {2: ["dogs", "cats"]},
        "d1": {2: ["dogs", "cats"]},
        "d2": {2: ["outdoor", "dogs"]},
        "d3": {2: ["outdoor", "games"]},
    }
    return golds, predictions, logs


def test_hit_at_k(logged):
    golds, predictions, logs = logged
    assert hit_at_k(logs, golds, 2) == 0.75
    assert hit_at_k(logs, golds, 2, k=1) == 0.5

    wrong = misclassified(golds, predictions, 2)
    assert wrong == ["d1", "d2"]
    assert hit_at_k(logs, golds, 2, wrong) == 0.5
    assert misclassified(golds, predictions, 1) == []
    assert hit_at_k(logs, golds, 2, []) is None

    with pytest.raises(MissingLog):
        hit_at_k(logs, golds, 1)
    with pytest.raises(MissingLog):
        hit_at_k({"d0": {2: ["dogs"]}}, golds, 2)


def test_hit_at_k_monotone():
    rng = random.Random(11)
    space = ["c{}".format(i) for i in range(30)]
    golds = {n: (rng.choice(space),) for n in range(300)}
    logs = {n: {1: rng.sample(space, 20)} for n in golds}
    hits = [hit_at_k(logs, golds, 1, k=k) for k in range(1, 21)]
    assert hits == sorted(hits)
    assert all(0.0 <= hit <= 1.0 for hit in hits)


def test_long_tail_profile():
    golds = ["a"] * 8 + ["b"] * 4 + ["c"] * 2 + ["d"] * 1
    profile = long_tail_profile(golds, ["a", "b", "c", "d", "e"],
                                head_fraction=0.2, tail_fraction=0.4)
    assert profile.classes == 5
    assert profile.instances == 15
    # One head class, two tail classes (d and the unseen e)
    assert profile.head_share == pytest.approx(8 / 15)
    assert profile.tail_share == pytest.approx(1 / 15)

    empty = long_tail_profile([])
    assert (empty.classes, empty.head_share, empty.tail_share) == (0, 0.0, 0.0)


def level(number, label, retrieved=()):
    return {"level": number, "label": label, "retrieved": list(retrieved)}


@pytest.fixture
def records():
    return [
        {"id": "d0", "gold": ["pets", "dogs", "dog food"], "failed": False,
         "levels": [level(1, "pets", ["pets", "toys"]),
                    level(2, "dogs", ["dogs", "cats"]),
                    level(3, "dog food", ["dog food"])]},
        {"id": "d1", "gold": ["pets", "cats", "cat flaps"], "failed": False,
         "levels": [level(1, "pets", ["pets"]),
                    level(2, "cats", ["dogs"]),
                    level(3, "cat flaps", ["cat flaps", "cat food"])]},
        {"id": "d2", "gold": ["toys", "outdoor", "kites"], "failed": False,
         "levels": [level(1, "toys", ["toys"]),
                    level(2, "outdoor", ["outdoor"]),
                    level(3, "kites", ["board games"])]},
        {"id": "d3", "gold": ["health", "supplements", "vitamins"],
         "failed": False,
         "levels": [level(1, "health", ["health"]),
                    level(2, "personal care", ["personal care",
                                               "supplements"]),
                    level(3, "shaving", ["shaving"])]},
        {"id": "d4", "gold": ["health", "personal care", "shaving"],
         "failed": True, "error": "timed out",
         "levels": [level(1, "health", ["health"])]},
    ]


def test_evaluate(pets, records):
    report = evaluate(records, pets, dataset="pets", mode="kg-htc")
    assert (report.documents, report.failed, report.depth) == (4, 1, 3)

    # Level 2: three of six classes are perfect, level 3: three of nine
    assert report.per_level_f1_macro == pytest.approx([1.0, 0.5, 1 / 3])
    assert report.decay_per_level == pytest.approx([0.5, 1 / 3])
    assert report.decay_avg == pytest.approx(5 / 12)

    assert report.per_class_f1[2]["games"] == 0.0
    assert report.per_class_f1[2]["dogs"] == 1.0
    assert report.support[3]["vitamins"] == 1
    assert report.support[3]["shaving"] == 0
    assert report.per_class[3]["shaving"].predicted == 1
    assert len(report.per_class[3]) == 9

    assert report.hit_at_k == pytest.approx({1: 1.0, 2: 0.75, 3: 0.5})
    assert report.hit_at_k_misclassified[1] is None
    assert report.hit_at_k_misclassified[2] == 1.0
    assert report.hit_at_k_misclassified[3] == 0.0
    assert report.hit_at_k_curve[3][1] == 0.5
    assert report.long_tail[1].instances == 4


def test_evaluate_without_retrieval(pets, records):
    for record in records:
        for entry in record["levels"]:
            entry["retrieved"] = []
    report = evaluate(records, pets)
    assert report.hit_at_k == {}
    assert report.hit_at_k_curve == {}


def test_evaluate_zero_f1_level(pets, records):
    for record in records:
        record["levels"][0]["label"] = "health"
        record["levels"][1]["label"] = "games"
    report = evaluate(records, pets)
    assert report.per_level_f1_macro[1] == 0.0
    assert report.decay_per_level[1] is None
    assert report.decay_avg is None
    assert "-" in format_table(report)


def test_evaluate_errors(pets, records):
    with pytest.raises(EvaluationError):
        evaluate([records[4]], pets)
    records[0]["levels"][2]["label"] = "no such label"
    with pytest.raises(UnknownLabel):
        evaluate(records, pets)


def test_report_file(tmpdir, pets, records):
    report = evaluate(records, pets, dataset="pets", mode="kg-htc")
    path = str(tmpdir.join("metrics.json"))
    report.write(path)
    loaded = MetricsReport.load(path)
    assert loaded == report
    assert loaded.to_json() == report.to_json()

    table = format_table(report)
    assert "documents: 4" in table
    assert "0.5000" in table


def test_per_class_csv(tmpdir, pets, records):
    report = evaluate(records, pets)
    path = str(tmpdir.join("per_class.csv"))
    write_per_class_csv(report, path)

    frame = pd.read_csv(path, keep_default_na=False)
    assert list(frame.columns) == ["level", "label", "support", "predicted",
                                   "precision", "recall", "f1"]
    assert len(frame) == 3 + 6 + 9
    assert list(frame.support) == sorted(frame.support, reverse=True)
    assert tuple(frame.iloc[0][["level", "label", "support"]]) == (
        1, "pets", 2)


def test_compare(pets, records):
    report = evaluate(records, pets, dataset="pets")
    same = compare(report, report)
    assert all(row.f1_delta == 0 for row in same.levels)
    assert all(row.decay_delta in (None, 0) for row in same.levels)
    assert same.decay_avg_delta == 0

    # Swap one wrong level 2 prediction for the right one
    records[3]["levels"][1]["label"] = "supplements"
    better = evaluate(records, pets, dataset="pets")
    comparison = compare(report, better, "before", "after")
    assert comparison.levels[1].f1_delta == pytest.approx(
        better.per_level_f1_macro[1] - report.per_level_f1_macro[1])
    assert comparison.levels[1].f1_delta > 0
    assert comparison.levels[0].f1_delta == 0

    text = format_comparison(comparison)
    assert "F1 befor" in text and "F1 after" in text
    assert len(text.split("\n")) == 5

    with pytest.raises(DatasetMismatch):
        compare(report, evaluate(records, pets, dataset="other"))
    shallow = report.model_copy(update={"depth": 2})
    with pytest.raises(DatasetMismatch):
        compare(report, shallow)
