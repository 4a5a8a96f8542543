"""
Reading labelled document collections and label taxonomies from disk.

Delimited files (CSV/TSV with a header row) and JSON-lines files are
supported. A document's text is taken from one or more columns, its gold
labels from one column per level; without an explicit taxonomy file the
taxonomy is induced from the gold columns.
"""

import json
import logging
import os
import re
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, PositiveInt

from taxorag.classifier import Document
from taxorag.errors import ConfigError, ParseError, UnknownLabel
from taxorag.prompt import PATH_SEPARATOR
from taxorag.taxonomy import load_taxonomy, normalize_name

__all__ = [
    "DatasetPreset",
    "PRESETS",
    "detect_format",
    "ingest",
    "read_taxonomy_file",
    "sample_documents",
]

logger = logging.getLogger(__name__)

SAMPLE_SEED = 42


class DatasetPreset(BaseModel):
    """Column layout and run defaults of a well known dataset."""

    name: str
    text_columns: List[str]
    gold_columns: List[str]
    text_separator: str = " "
    id_column: Optional[str] = None
    task_description: str = "the text"
    k_per_level: Dict[int, PositiveInt] = Field(default_factory=dict)


PRESETS = {
    # 6/64/510 labels
    "amazon": DatasetPreset(
        name="amazon",
        text_columns=["Title", "Text"],
        gold_columns=["Cat1", "Cat2", "Cat3"],
        task_description="the review of a product",
        k_per_level={2: 10, 3: 40},
    ),
    # 9/70/219 labels
    "dbpedia": DatasetPreset(
        name="dbpedia",
        text_columns=["text"],
        gold_columns=["l1", "l2", "l3"],
        task_description="the article",
        k_per_level={2: 10, 3: 40},
    ),
    # 7/134 labels
    "wos": DatasetPreset(
        name="wos",
        text_columns=["Abstract"],
        gold_columns=["Domain", "area"],
        task_description="the abstract of a scientific paper",
        k_per_level={2: 20},
    ),
}

_FORMATS = {
    ".csv": "csv",
    ".tsv": "tsv",
    ".tab": "tsv",
    ".jsonl": "jsonl",
    ".ndjson": "jsonl",
    ".txt": "paths",
}


def detect_format(path):
    """Guess a file's format from its suffix."""
    suffix = os.path.splitext(str(path))[1].lower()
    try:
        return _FORMATS[suffix]
    except KeyError:
        raise ConfigError(
            "cannot tell the format of {!r}; name one of csv, tsv, "
            "jsonl".format(str(path))) from None


_PANDAS_LINE = re.compile(r"line (\d+)")


def _read_delimited(path, fmt, header=True):
    """
    Yield ``(line number, record)``. Line numbers are physical: newlines
    inside quoted fields are counted. Without a ``header`` records are keyed
    by column position.
    """
    try:
        frame = pd.read_csv(path, sep="\t" if fmt == "tsv" else ",",
                            header=0 if header else None,
                            dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ParseError("{} is empty".format(path), 1) from None
    except pd.errors.ParserError as e:
        match = _PANDAS_LINE.search(str(e))
        raise ParseError(str(e), int(match.group(1)) if match else None) \
            from None

    number = 1
    if header:
        number += sum(str(column).count("\n") for column in frame.columns) + 1
    for record in frame.to_dict("records"):
        yield number, record
        number += 1 + sum(value.count("\n") for value in record.values()
                          if isinstance(value, str))


def _read_jsonl(path):
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError("invalid JSON: {}".format(e.msg), number) \
                    from None
            if not isinstance(record, dict):
                raise ParseError("expected a JSON object", number)
            yield number, record


def _field(record, column, line):
    try:
        value = record[column]
    except KeyError:
        raise ParseError("no {!r} field".format(column), line) from None
    return "" if value is None else str(value).strip()


def ingest(path, fmt=None, text_columns=("text",), gold_columns=(),
           id_column=None, text_separator=" ", taxonomy=None):
    """
    Read a labelled document collection.

    Parameters
    ----------
    path : str
    fmt : "csv", "tsv", "jsonl" or None
        Guessed from the file suffix if not given.
    text_columns : [str, ...]
        Joined (skipping empty values) with ``text_separator`` to form the
        document text.
    gold_columns : [str, ...]
        One column per level, level 1 first. May be empty for unlabelled
        collections, in which case ``taxonomy`` is required.
    id_column : str or None
        If ``None`` documents are numbered from 0 in file order.
    taxonomy : :py:class:`~taxorag.taxonomy.Taxonomy` or None
        Gold labels are checked against it. If ``None`` the taxonomy is
        induced from the gold labels.

    Returns
    -------
    ([:py:class:`~taxorag.classifier.Document`, ...],
     :py:class:`~taxorag.taxonomy.Taxonomy`)

    Raises
    ------
    ParseError
        Naming the offending line.
    ConflictingParent
        If the gold labels do not form a taxonomy.
    UnknownLabel
        If a gold path is not part of ``taxonomy``.
    """
    fmt = fmt or detect_format(path)
    if fmt in ("csv", "tsv"):
        records = _read_delimited(path, fmt)
    elif fmt == "jsonl":
        records = _read_jsonl(path)
    else:
        raise ConfigError("unsupported dataset format {!r}".format(fmt))

    text_columns = list(text_columns)
    gold_columns = list(gold_columns)
    if not gold_columns and taxonomy is None:
        raise ConfigError("an unlabelled dataset needs a taxonomy file")

    documents = []
    seen_ids = set()
    lines = {}
    for number, record in records:
        parts = [_field(record, column, number) for column in text_columns]
        text = text_separator.join(part for part in parts if part)
        if not text:
            raise ParseError("document has no text", number)

        gold = None
        if gold_columns:
            gold = tuple(normalize_name(_field(record, column, number))
                         for column in gold_columns)
            if not all(gold):
                raise ParseError("missing gold label", number)

        document_id = (_field(record, id_column, number)
                       if id_column is not None else str(len(documents)))
        if document_id in seen_ids:
            raise ParseError("duplicate document id {!r}".format(document_id),
                             number)
        seen_ids.add(document_id)
        lines[document_id] = number
        documents.append(Document(document_id, text, gold))

    if not documents:
        raise ParseError("{} holds no documents".format(path))

    if taxonomy is None:
        taxonomy = load_taxonomy(document.gold for document in documents)
    elif gold_columns:
        paths = taxonomy.rows()
        for document in documents:
            if document.gold not in paths:
                raise UnknownLabel("line {}: {} is not a path of the "
                                   "taxonomy".format(
                                       lines[document.id],
                                       PATH_SEPARATOR.join(document.gold)))

    logger.info("read %d documents from %s; taxonomy %r", len(documents),
                path, taxonomy)
    return documents, taxonomy


def read_taxonomy_file(path, fmt=None, header=True):
    """
    Read a taxonomy from a file of label paths.

    Either a delimited file with one column per level, or a text file with
    one ``"a -> b -> c"`` path per line. The first row of a delimited file
    is a header unless ``header`` is false.

    Raises
    ------
    ParseError
    ConflictingParent, RaggedRow, EmptyInput
    """
    fmt = fmt or detect_format(path)
    if fmt in ("csv", "tsv"):
        rows = [tuple(record.values())
                for _, record in _read_delimited(path, fmt, header)]
    elif fmt == "paths":
        with open(path, encoding="utf-8") as f:
            rows = [tuple(line.strip().split(PATH_SEPARATOR.strip()))
                    for line in f if line.strip()]
    else:
        raise ConfigError("unsupported taxonomy format {!r}".format(fmt))

    taxonomy = load_taxonomy(rows)
    logger.info("read taxonomy %r from %s", taxonomy, path)
    return taxonomy


def sample_documents(documents, size=None, seed=SAMPLE_SEED):
    """
    Pick ``size`` documents at random, reproducibly.

    The same ``(len(documents), size, seed)`` always selects the same
    positions. The sample keeps the original document order. ``None`` (or a
    size of at least ``len(documents)``) selects everything.
    """
    documents = list(documents)
    if size is None or size >= len(documents):
        return documents
    if size < 1:
        raise ValueError("sample size must be positive")
    chosen = np.random.RandomState(seed).choice(
        len(documents), size=size, replace=False)
    return [documents[i] for i in sorted(chosen)]
