"""
Scoring classification runs: per-level F1-macro and per-class F1 over the
full label space of each level, decay of F1 from level to level, Hit@K of
the retrieval stage and the long-tail shape of the gold labels.

Everything here works on label *names* and on run-report records (see
:py:meth:`~taxorag.classifier.Prediction.to_record`).
"""

import collections
import json
import math
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from sklearn.metrics import f1_score, precision_recall_fscore_support

from taxorag.errors import (
    DatasetMismatch, DivisionByZero, EvaluationError, LengthMismatch,
    MissingLog, UnknownLabel)

__all__ = [
    "f1_macro",
    "per_class_f1",
    "decay_rates",
    "misclassified",
    "hit_at_k",
    "long_tail_profile",
    "ClassStats",
    "LongTailProfile",
    "MetricsReport",
    "evaluate",
    "format_table",
    "write_per_class_csv",
    "LevelComparison",
    "Comparison",
    "compare",
    "format_comparison",
]

HIT_AT_K_CURVE = (1, 5, 10, 20, 40)

CONVENTIONS = {
    "macro_average_over": "full label space of each level",
    "zero_support_zero_predictions_f1": "0",
    "failed_documents": "excluded",
}


def _check_inputs(golds, predictions, label_space):
    golds = list(golds)
    predictions = list(predictions)
    if len(golds) != len(predictions):
        raise LengthMismatch("{} gold labels but {} predictions".format(
            len(golds), len(predictions)))
    space = list(dict.fromkeys(label_space))
    known = set(space)
    for label in golds + predictions:
        if label not in known:
            raise UnknownLabel("{!r} is not in the label space".format(label))
    return golds, predictions, space


def f1_macro(golds, predictions, label_space):
    """
    The unweighted mean of the per-class F1 of every class in
    ``label_space``. Classes never predicted and never correct count as 0.

    Raises
    ------
    LengthMismatch
    UnknownLabel
    """
    golds, predictions, space = _check_inputs(golds, predictions, label_space)
    if not golds or not space:
        return 0.0
    return float(f1_score(golds, predictions, labels=space, average="macro",
                          zero_division=0))


def per_class_f1(golds, predictions, label_space):
    """
    Per-class statistics over ``label_space``.

    Returns
    -------
    pandas.DataFrame
        Columns ``label``, ``support``, ``predicted``, ``precision``,
        ``recall`` and ``f1``; one row per class in ``label_space`` order.

    Raises
    ------
    LengthMismatch
    UnknownLabel
    """
    golds, predictions, space = _check_inputs(golds, predictions, label_space)
    predicted = collections.Counter(predictions)
    if golds:
        precision, recall, f1, support = precision_recall_fscore_support(
            golds, predictions, labels=space, average=None, zero_division=0)
    else:
        precision = recall = f1 = np.zeros(len(space))
        support = np.zeros(len(space), dtype=int)

    return pd.DataFrame({
        "label": space,
        "support": [int(s) for s in support],
        "predicted": [predicted[label] for label in space],
        "precision": [float(p) for p in precision],
        "recall": [float(r) for r in recall],
        "f1": [float(f) for f in f1],
    })


def decay_rates(per_level_f1):
    """
    Relative drop of F1 from each level to the next.

    Parameters
    ----------
    per_level_f1 : sequence of float
        F1-macro of levels 1..L, ``L >= 2``.

    Returns
    -------
    (decays, average)
        ``decays[i]`` is ``(F1[i] - F1[i + 1]) / F1[i]`` (levels 2..L) and
        ``average`` their mean.

    Raises
    ------
    DivisionByZero
        If a level other than the last has an F1 of zero.
    """
    per_level_f1 = list(per_level_f1)
    if len(per_level_f1) < 2:
        raise ValueError("decay needs at least two levels")

    decays = []
    for level, (above, below) in enumerate(
            zip(per_level_f1, per_level_f1[1:]), 2):
        if above == 0:
            raise DivisionByZero(
                "level {} has an F1 of zero, so the decay to level {} is "
                "undefined".format(level - 1, level))
        decays.append((above - below) / above)

    return tuple(decays), sum(decays) / len(decays)


def misclassified(golds, predictions, level):
    """
    The documents whose prediction at ``level`` differs from the gold label.

    Parameters
    ----------
    golds, predictions : {document_id: (name, ...)}

    Returns
    -------
    [document_id, ...]
        In ``golds`` order.
    """
    return [
        document_id for document_id, gold in golds.items()
        if document_id in predictions and
        predictions[document_id][level - 1] != gold[level - 1]
    ]


def hit_at_k(retrieval_logs, golds, level, subset=None, k=None):
    """
    The fraction of documents whose gold label at ``level`` was retrieved.

    Parameters
    ----------
    retrieval_logs : {document_id: {level: [name, ...]}}
        The retrieved candidates of each document, nearest first.
    golds : {document_id: (name, ...)}
    level : int
    subset : iterable of document_id or None
        The documents to count, e.g. the output of :py:func:`misclassified`.
        Defaults to every document of ``golds``.
    k : int or None
        Only count the first ``k`` logged candidates.

    Returns
    -------
    float or None
        ``None`` when ``subset`` is empty.

    Raises
    ------
    MissingLog
    """
    subset = list(golds if subset is None else subset)
    if not subset:
        return None

    hits = 0
    for document_id in subset:
        log = retrieval_logs.get(document_id)
        if log is None or level not in log:
            raise MissingLog("no level {} candidates logged for {!r}".format(
                level, document_id))
        retrieved = list(log[level])
        if k is not None:
            retrieved = retrieved[:k]
        hits += golds[document_id][level - 1] in retrieved

    return hits / len(subset)


class LongTailProfile(BaseModel):
    classes: int
    instances: int
    head_fraction: float
    head_share: float
    tail_fraction: float
    tail_share: float


def _class_count(fraction, classes):
    return max(1, math.ceil(round(fraction * classes, 9)))


def long_tail_profile(golds, label_space=None, head_fraction=0.15,
                      tail_fraction=0.5):
    """
    How concentrated the gold labels of one level are: the share of
    instances belonging to the most frequent ``head_fraction`` of classes
    and to the least frequent ``tail_fraction`` of them.

    Classes of ``label_space`` with no instances count (as the rarest).
    """
    counts = collections.Counter(golds)
    for label in label_space or ():
        counts.setdefault(label, 0)
    ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    sizes = [count for _, count in ordered]
    instances = sum(sizes)

    def share(selected):
        return sum(selected) / instances if instances else 0.0

    classes = len(sizes)
    return LongTailProfile(
        classes=classes,
        instances=instances,
        head_fraction=head_fraction,
        head_share=share(sizes[:_class_count(head_fraction, classes)]),
        tail_fraction=tail_fraction,
        tail_share=share(sizes[-_class_count(tail_fraction, classes):]
                         if classes else []),
    )


class ClassStats(BaseModel):
    support: int
    predicted: int
    precision: float
    recall: float
    f1: float


class MetricsReport(BaseModel):
    """
    The scores of one run. Written to ``metrics.json``.

    ``decay_per_level`` covers levels 2..L; a decay relative to a level
    with an F1 of zero is ``None``, as is ``decay_avg`` then. Hit@K maps
    are empty for runs without retrieval.
    """

    dataset: Optional[str] = None
    mode: Optional[str] = None
    depth: int
    documents: int
    failed: int = 0
    conventions: Dict[str, str] = Field(
        default_factory=lambda: dict(CONVENTIONS))
    per_level_f1_macro: List[float]
    decay_per_level: List[Optional[float]] = Field(default_factory=list)
    decay_avg: Optional[float] = None
    per_class: Dict[int, Dict[str, ClassStats]] = Field(default_factory=dict)
    hit_at_k: Dict[int, Optional[float]] = Field(default_factory=dict)
    hit_at_k_misclassified: Dict[int, Optional[float]] = Field(
        default_factory=dict)
    hit_at_k_curve: Dict[int, Dict[int, Optional[float]]] = Field(
        default_factory=dict)
    long_tail: Dict[int, LongTailProfile] = Field(default_factory=dict)

    @property
    def per_class_f1(self):
        return {
            level: {label: stats.f1 for label, stats in classes.items()}
            for level, classes in self.per_class.items()
        }

    @property
    def support(self):
        return {
            level: {label: stats.support for label, stats in classes.items()}
            for level, classes in self.per_class.items()
        }

    def to_json(self):
        return json.dumps(self.model_dump(mode="json"), sort_keys=True,
                          indent=2) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.model_validate_json(f.read())


def _decays(per_level_f1):
    if len(per_level_f1) < 2:
        return [], None
    try:
        decays, average = decay_rates(per_level_f1)
        return list(decays), average
    except DivisionByZero:
        decays = [
            (above - below) / above if above else None
            for above, below in zip(per_level_f1, per_level_f1[1:])
        ]
        return decays, None


def evaluate(records, taxonomy, dataset=None, mode=None):
    """
    Score run-report records against their gold labels.

    Failed documents and documents without gold labels are left out of
    every metric; the failed count is reported.

    Parameters
    ----------
    records : iterable of dict
        Run-report records.
    taxonomy : :py:class:`~taxorag.taxonomy.Taxonomy`
        Supplies the label space of each level.

    Returns
    -------
    :py:class:`MetricsReport`

    Raises
    ------
    EvaluationError
        If no record is usable.
    UnknownLabel
    """
    records = list(records)
    failed = sum(1 for record in records if record.get("failed"))
    usable = [
        record for record in records
        if not record.get("failed") and record.get("gold") is not None
    ]
    if not usable:
        raise EvaluationError("no completed documents with gold labels")

    golds = {record["id"]: tuple(record["gold"]) for record in usable}
    predictions = {
        record["id"]: tuple(level["label"] for level in record["levels"])
        for record in usable
    }
    for document_id, gold in golds.items():
        if len(gold) != taxonomy.depth:
            raise EvaluationError(
                "document {!r} has {} gold labels for a {} level "
                "taxonomy".format(document_id, len(gold), taxonomy.depth))

    # Runs without retrieval (weak-baseline) log nothing at any level
    retrieval_logs = {}
    if any(level.get("retrieved") for record in usable
           for level in record["levels"]):
        retrieval_logs = {
            record["id"]: {level["level"]: level.get("retrieved") or []
                           for level in record["levels"]}
            for record in usable
        }

    report = dict(dataset=dataset, mode=mode, depth=taxonomy.depth,
                  documents=len(usable), failed=failed,
                  per_level_f1_macro=[], per_class={}, hit_at_k={},
                  hit_at_k_misclassified={}, hit_at_k_curve={}, long_tail={})

    for level in range(1, taxonomy.depth + 1):
        space = [label.name for label in taxonomy.labels_at_level(level)]
        gold_names = [gold[level - 1] for gold in golds.values()]
        predicted_names = [predictions[i][level - 1] for i in golds]

        report["per_level_f1_macro"].append(
            f1_macro(gold_names, predicted_names, space))
        frame = per_class_f1(gold_names, predicted_names, space)
        report["per_class"][level] = {
            row.label: ClassStats(support=int(row.support),
                                  predicted=int(row.predicted),
                                  precision=float(row.precision),
                                  recall=float(row.recall), f1=float(row.f1))
            for row in frame.itertuples(index=False)
        }
        report["long_tail"][level] = long_tail_profile(gold_names, space)

        if retrieval_logs:
            report["hit_at_k"][level] = hit_at_k(retrieval_logs, golds, level)
            report["hit_at_k_misclassified"][level] = hit_at_k(
                retrieval_logs, golds, level,
                misclassified(golds, predictions, level))
            report["hit_at_k_curve"][level] = {
                k: hit_at_k(retrieval_logs, golds, level, k=k)
                for k in HIT_AT_K_CURVE
            }

    report["decay_per_level"], report["decay_avg"] = _decays(
        report["per_level_f1_macro"])
    return MetricsReport(**report)


def _number(value, width=8):
    if value is None:
        return "-".rjust(width)
    return "{:.4f}".format(value).rjust(width)


def format_table(report):
    """Render a :py:class:`MetricsReport` as a plain text table."""
    lines = [
        "dataset: {}  mode: {}  documents: {}  failed: {}".format(
            report.dataset or "-", report.mode or "-", report.documents,
            report.failed),
        "{:>5}  {:>8}  {:>8}  {:>8}  {:>8}".format(
            "level", "F1", "decay", "hit@k", "hit@k/x"),
    ]
    for level, f1 in enumerate(report.per_level_f1_macro, 1):
        decay = report.decay_per_level[level - 2] if level > 1 else None
        lines.append("{:>5}  {}  {}  {}  {}".format(
            level, _number(f1), _number(decay),
            _number(report.hit_at_k.get(level)),
            _number(report.hit_at_k_misclassified.get(level))))
    lines.append("average decay: {}".format(_number(report.decay_avg, 0)))
    return "\n".join(lines)


def write_per_class_csv(report, path):
    """
    Write every class of every level with its support, predicted count,
    precision, recall and F1, most supported first.
    """
    rows = [
        dict(level=level, label=label, **stats.model_dump())
        for level, classes in report.per_class.items()
        for label, stats in classes.items()
    ]
    columns = ["level", "label", "support", "predicted", "precision",
               "recall", "f1"]
    frame = pd.DataFrame(rows, columns=columns)
    frame = frame.sort_values(["support", "level", "label"],
                              ascending=[False, True, True], kind="mergesort")
    frame.to_csv(path, index=False)


class LevelComparison(BaseModel):
    level: int
    f1_a: float
    f1_b: float
    f1_delta: float
    decay_a: Optional[float] = None
    decay_b: Optional[float] = None
    decay_delta: Optional[float] = None


class Comparison(BaseModel):
    label_a: str
    label_b: str
    levels: List[LevelComparison]
    decay_avg_a: Optional[float] = None
    decay_avg_b: Optional[float] = None
    decay_avg_delta: Optional[float] = None


def _delta(a, b):
    return None if a is None or b is None else b - a


def compare(report_a, report_b, label_a="a", label_b="b"):
    """
    Put two :py:class:`MetricsReport`\\ s side by side. Deltas are ``b - a``.

    Raises
    ------
    DatasetMismatch
        If the reports name different datasets or cover different numbers
        of levels.
    """
    if (report_a.dataset is not None and report_b.dataset is not None and
            report_a.dataset != report_b.dataset):
        raise DatasetMismatch("cannot compare {!r} with {!r}".format(
            report_a.dataset, report_b.dataset))
    if report_a.depth != report_b.depth:
        raise DatasetMismatch("cannot compare {} levels with {}".format(
            report_a.depth, report_b.depth))

    levels = []
    for level in range(1, report_a.depth + 1):
        f1_a = report_a.per_level_f1_macro[level - 1]
        f1_b = report_b.per_level_f1_macro[level - 1]
        decay_a = decay_b = None
        if level > 1:
            decay_a = report_a.decay_per_level[level - 2]
            decay_b = report_b.decay_per_level[level - 2]
        levels.append(LevelComparison(
            level=level, f1_a=f1_a, f1_b=f1_b, f1_delta=f1_b - f1_a,
            decay_a=decay_a, decay_b=decay_b,
            decay_delta=_delta(decay_a, decay_b)))

    return Comparison(
        label_a=label_a, label_b=label_b, levels=levels,
        decay_avg_a=report_a.decay_avg, decay_avg_b=report_b.decay_avg,
        decay_avg_delta=_delta(report_a.decay_avg, report_b.decay_avg))


def format_comparison(comparison):
    """Render a :py:class:`Comparison` as a plain text table."""
    a, b = comparison.label_a[:8], comparison.label_b[:8]
    lines = ["{:>5}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}".format(
        "level", "F1 " + a[:5], "F1 " + b[:5], "delta",
        "dec " + a[:4], "dec " + b[:4], "delta")]
    for row in comparison.levels:
        lines.append("{:>5}  {}  {}  {}  {}  {}  {}".format(
            row.level, _number(row.f1_a), _number(row.f1_b),
            _number(row.f1_delta), _number(row.decay_a), _number(row.decay_b),
            _number(row.decay_delta)))
    lines.append("{:>5}  {:>8}  {:>8}  {:>8}  {}  {}  {}".format(
        "avg", "", "", "", _number(comparison.decay_avg_a),
        _number(comparison.decay_avg_b), _number(comparison.decay_avg_delta)))
    return "\n".join(lines)
