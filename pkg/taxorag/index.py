"""
The per-level label index: one embedding per taxonomy label, searched
exactly (a linear scan) for the labels nearest to an input text.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Literal

import numpy as np
from pydantic import BaseModel, Field, PositiveInt, field_validator

from taxorag.embedding import as_vector
from taxorag.errors import (
    ConfigError, IndexNotBuilt, LevelOutOfRange, ZeroVector)

__all__ = [
    "RetrievalConfig",
    "Candidate",
    "CandidateSet",
    "LevelIndex",
    "label_text",
    "build_index",
    "query_candidates",
]

logger = logging.getLogger(__name__)


class RetrievalConfig(BaseModel):
    """
    How candidate labels are retrieved at each level.

    In ``"top-k"`` mode the ``k`` nearest labels are returned, in
    ``"threshold"`` mode every label within cosine distance ``tau``. Level 1
    may be omitted from either map, in which case all of level 1 is
    retrieved.
    """

    mode: Literal["top-k", "threshold"] = "top-k"
    k_per_level: Dict[int, PositiveInt] = Field(default_factory=dict)
    tau_per_level: Dict[int, float] = Field(default_factory=dict)

    @field_validator("tau_per_level")
    @classmethod
    def _tau_in_range(cls, value):
        for level, tau in value.items():
            if not 0.0 <= tau <= 2.0:
                raise ValueError(
                    "tau for level {} must lie in [0, 2], got {}".format(
                        level, tau))
        return value

    @classmethod
    def defaults_for(cls, depth):
        """
        Fixed candidate counts: 20 at level 2 of a two level taxonomy;
        otherwise 10 at level 2 and 40 at every deeper level.
        """
        if depth <= 1:
            return cls()
        if depth == 2:
            return cls(k_per_level={2: 20})
        k = {2: 10}
        k.update({level: 40 for level in range(3, depth + 1)})
        return cls(k_per_level=k)

    def check_levels(self, depth):
        """
        Raise :py:class:`~taxorag.errors.ConfigError` unless a k (or tau) is
        configured for every level from 2 to ``depth``.
        """
        given = self.k_per_level if self.mode == "top-k" else self.tau_per_level
        missing = [level for level in range(2, depth + 1) if level not in given]
        if missing:
            raise ConfigError("{} mode needs a value for level(s) {}".format(
                self.mode, ", ".join(map(str, missing))))


@dataclass(frozen=True)
class Candidate:
    label: object
    distance: float


@dataclass(frozen=True)
class CandidateSet:
    """
    The labels retrieved at one level, nearest first (ties by label id).

    Attributes
    ----------
    level : int
    members : (:py:class:`Candidate`, ...)
    """
    level: int
    members: tuple

    @property
    def labels(self):
        return tuple(member.label for member in self.members)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, label):
        return any(member.label == label for member in self.members)


class LevelIndex(object):
    """
    Label embeddings grouped by level. Immutable once built.

    Each level keeps its embeddings as one matrix plus a row-normalised copy,
    so a query is a single matrix-vector product.

    Parameters
    ----------
    entries : {level: [(:py:class:`~taxorag.taxonomy.Label`, vector), ...]}
    depth : int
        The depth of the taxonomy the index was built over.

    Raises
    ------
    ZeroVector
        If a label's embedding is all zeros.
    DimMismatch
        If the embeddings differ in length.
    """

    def __init__(self, entries, depth):
        self.depth = depth
        self.dim = None
        self._levels = {}
        for level, pairs in entries.items():
            pairs = sorted(pairs, key=lambda pair: pair[0].id)
            labels = tuple(label for label, _ in pairs)
            if not labels:
                self._levels[level] = (labels, None, None)
                continue
            matrix = np.array([as_vector(vector, self.dim)
                               for _, vector in pairs])
            if self.dim is None:
                self.dim = matrix.shape[1]
            norms = np.linalg.norm(matrix, axis=1)
            if np.any(norms == 0.0):
                zero = labels[int(np.argmax(norms == 0.0))]
                raise ZeroVector("label {!r} has an all-zero embedding".format(
                    zero.name))
            self._levels[level] = (labels, matrix, matrix / norms[:, None])

    @property
    def levels(self):
        return tuple(sorted(self._levels))

    def __len__(self):
        return sum(len(entry[0]) for entry in self._levels.values())

    def labels(self, level):
        """The indexed labels of ``level``, in id order."""
        return self._entry(level)[0]

    def vector(self, label):
        """The stored embedding of ``label``."""
        labels, matrix, _ = self._entry(label.level)
        return matrix[labels.index(label)]

    def _entry(self, level):
        if not 1 <= level <= self.depth:
            raise LevelOutOfRange("level {} is outside 1..{}".format(
                level, self.depth))
        entry = self._levels.get(level)
        if entry is None or not len(entry[0]):
            raise IndexNotBuilt("no label embeddings for level {}".format(level))
        return entry

    def distances(self, level, x_emb):
        """
        Return the indexed labels of ``level`` and their cosine distances
        from ``x_emb`` (in [0, 2]), both in id order.

        Raises
        ------
        DimMismatch
            If ``x_emb`` does not have the index's dimensionality.
        ZeroVector
            If ``x_emb`` is all zeros.
        """
        labels, _, unit = self._entry(level)
        x_emb = as_vector(x_emb, self.dim)
        norm = float(np.linalg.norm(x_emb))
        if norm == 0.0:
            raise ZeroVector("cosine distance from an all-zero vector")
        return labels, np.clip(1.0 - unit @ (x_emb / norm), 0.0, 2.0)


def label_text(taxonomy, label, contextual=False):
    """
    The text embedded for ``label``: its name or, when ``contextual``, its
    root path joined with ``" -> "``.
    """
    if contextual:
        return " -> ".join(node.name for node in taxonomy.ancestry(label))
    return label.name


async def build_index(taxonomy, embedder, contextual=False):
    """
    Embed every label of ``taxonomy``.

    Parameters
    ----------
    taxonomy : :py:class:`~taxorag.taxonomy.Taxonomy`
    embedder : :py:class:`~taxorag.embedding.EmbeddingProvider`
        Normally a :py:class:`~taxorag.cache.CachedEmbedder`, which makes a
        partially completed build resumable.
    contextual : bool
        Embed root paths rather than bare names.

    Returns
    -------
    :py:class:`LevelIndex`
    """
    labels = taxonomy.labels
    vectors = await embedder.embed_batch(
        [label_text(taxonomy, label, contextual) for label in labels])

    entries = {level: [] for level in range(1, taxonomy.depth + 1)}
    for label, vector in zip(labels, vectors):
        entries[label.level].append((label, vector))

    index = LevelIndex(entries, taxonomy.depth)
    logger.info("indexed %d labels over %d levels", len(index), taxonomy.depth)
    return index


def query_candidates(index, x_emb, level, config):
    """
    Retrieve the candidate labels of ``level`` for an input embedding.

    Parameters
    ----------
    index : :py:class:`LevelIndex`
    x_emb : numpy.ndarray
    level : int
    config : :py:class:`RetrievalConfig`

    Returns
    -------
    :py:class:`CandidateSet`
        In top-k mode the ``k`` nearest labels (the whole level if ``k``
        exceeds its size); in threshold mode all labels with distance at most
        ``tau``. Sorted by ascending distance, ties by ascending label id.
        A level absent from the config's map returns the whole level.

    Raises
    ------
    LevelOutOfRange
    IndexNotBuilt
    """
    labels, distances = index.distances(level, x_emb)
    ids = np.array([label.id for label in labels])
    order = np.lexsort((ids, distances))

    if config.mode == "top-k":
        k = config.k_per_level.get(level)
        if k is not None:
            order = order[:k]
    else:
        tau = config.tau_per_level.get(level)
        if tau is not None:
            order = order[distances[order] <= tau]

    return CandidateSet(level, tuple(
        Candidate(labels[i], float(distances[i])) for i in order))
