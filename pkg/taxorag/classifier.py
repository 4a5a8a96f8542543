"""
Level-wise zero-shot classification.

For each document the classifier retrieves candidate labels and the
relevant taxonomy subgraph once, then asks the chat model for one label per
level, top down. Below level 1 the model is offered the children of its
previous answer followed by the retrieved candidates of that level, and the
serialized subgraph paths are shown as background knowledge.
"""

import asyncio
import enum
import logging
import random
import re
from dataclasses import dataclass
from typing import Optional

from pydantic import BaseModel, Field

from taxorag.embedding import embed
from taxorag.errors import NoCandidates, ProviderError
from taxorag.index import RetrievalConfig
from taxorag.llm import ChatRequest, GenerationConfig
from taxorag.prompt import (
    PromptTemplate, build_prompt, enumerate_paths, serialize_paths,
    taxonomy_paths)
from taxorag.subgraph import retrieve_candidates, subgraph_from_candidates
from taxorag.taxonomy import normalize_name

__all__ = [
    "Mode",
    "MatchKind",
    "Document",
    "LevelPrediction",
    "Prediction",
    "ClassifierConfig",
    "FallbackSampler",
    "candidate_set_for_level",
    "match_output",
    "map_output_to_label",
    "Classifier",
    "classify_document",
]

logger = logging.getLogger(__name__)

FALLBACK_SEED = 42


class Mode(str, enum.Enum):
    """
    ``kg-htc``
        Retrieved subgraph paths as knowledge; children of the previous
        answer plus retrieved candidates as choices.
    ``full-kg``
        As ``kg-htc`` but every path of the taxonomy is shown.
    ``weak-baseline``
        No knowledge; every label of the level is offered.
    """
    KG_HTC = "kg-htc"
    FULL_KG = "full-kg"
    WEAK_BASELINE = "weak-baseline"


class MatchKind(str, enum.Enum):
    EXACT = "exact"
    CONTAINMENT = "containment"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class Document:
    """
    A text to classify.

    Attributes
    ----------
    id : str
    text : str
    gold : (str, ...) or None
        Normalized gold label names, level 1 first.
    """
    id: str
    text: str
    gold: Optional[tuple] = None

    def __post_init__(self):
        if not str(self.text).strip():
            raise ValueError("document {!r} has no text".format(self.id))


@dataclass(frozen=True)
class LevelPrediction:
    """The outcome, and provenance, of one level of one document."""
    level: int
    raw_output: str
    label: object
    match_kind: MatchKind
    candidates: tuple
    retrieved: tuple
    prompt_hash: str

    def to_record(self):
        return {
            "level": self.level,
            "raw_output": self.raw_output,
            "label": self.label.name,
            "match_kind": self.match_kind.value,
            "candidate_count": len(self.candidates),
            "candidates": [label.name for label in self.candidates],
            "retrieved": [label.name for label in self.retrieved],
            "prompt_hash": self.prompt_hash,
        }


@dataclass(frozen=True)
class Prediction:
    """
    The labels assigned to one document, one :py:class:`LevelPrediction` per
    level. A failed prediction holds the levels completed before the
    provider gave up.
    """
    document_id: str
    levels: tuple
    gold: Optional[tuple] = None
    subgraph_edges: int = 0
    paths: int = 0
    failed: bool = False
    error: Optional[str] = None

    @property
    def labels(self):
        return tuple(level.label for level in self.levels)

    def to_record(self):
        return {
            "id": self.document_id,
            "gold": list(self.gold) if self.gold is not None else None,
            "failed": self.failed,
            "error": self.error,
            "subgraph_edges": self.subgraph_edges,
            "paths": self.paths,
            "levels": [level.to_record() for level in self.levels],
        }


class ClassifierConfig(BaseModel):
    """Everything that shapes a classification run besides its inputs."""

    mode: Mode = Mode.KG_HTC
    retrieval: Optional[RetrievalConfig] = None
    generation: GenerationConfig = Field(default_factory=GenerationConfig)
    template: PromptTemplate = Field(default_factory=PromptTemplate)
    containment_match: bool = True
    fallback_seed: int = FALLBACK_SEED


class FallbackSampler(object):
    """
    The run's single source of fallback randomness.

    Draws are made with one :py:class:`random.Random` seeded once, and are
    ordered by (document index, level) whatever order documents complete
    in: a document may only draw once every earlier document has called
    :py:meth:`finish`. Document indices must be handed out 0, 1, 2, ... and
    documents must be started in index order.
    """

    def __init__(self, seed=FALLBACK_SEED):
        self.seed = seed
        self._rng = random.Random(seed)
        self._finished = set()
        self._next = 0
        self._condition = asyncio.Condition()

    def choice(self, labels):
        """Draw uniformly from ``labels`` (taken in id order), immediately."""
        return self._rng.choice(sorted(labels))

    async def draw(self, document_index, labels):
        """Draw once every document before ``document_index`` finished."""
        async with self._condition:
            await self._condition.wait_for(
                lambda: self._next >= document_index)
            return self.choice(labels)

    async def finish(self, document_index):
        """Mark a document as done drawing."""
        async with self._condition:
            self._finished.add(document_index)
            while self._next in self._finished:
                self._finished.remove(self._next)
                self._next += 1
            self._condition.notify_all()


def candidate_set_for_level(taxonomy, level, previous_prediction, retrieved,
                            mode):
    """
    The ordered labels offered to the model at ``level``.

    * Level 1, and every level in ``weak-baseline`` mode: all labels of the
      level, in id order.
    * Otherwise: the children of ``previous_prediction`` (id order), then
      the ``retrieved`` labels not already offered (retrieval order). If
      that leaves nothing, all labels of the level.

    Parameters
    ----------
    retrieved : :py:class:`~taxorag.index.CandidateSet`, iterable of labels or None
    """
    mode = Mode(mode)
    level_labels = list(taxonomy.labels_at_level(level))
    if level == 1 or mode is Mode.WEAK_BASELINE:
        return level_labels
    if previous_prediction is None:
        raise ValueError("levels below 1 need the previous level's label")

    offered = list(taxonomy.children(previous_prediction))
    seen = set(offered)
    for label in getattr(retrieved, "labels", retrieved or ()):
        if label not in seen:
            offered.append(label)
            seen.add(label)

    return offered or level_labels


def _contains(haystack, needle):
    """Does ``needle`` appear in ``haystack`` as a run of whole words?"""
    pattern = r"(?<!\w){}(?!\w)".format(re.escape(needle))
    return re.search(pattern, haystack) is not None


def match_output(raw_output, candidates, containment=True):
    """
    Match model output against the offered labels.

    Returns ``(label, MatchKind.EXACT)`` when the normalized output equals a
    candidate name, ``(label, MatchKind.CONTAINMENT)`` when exactly one
    candidate name occurs in the output as whole words (or the output occurs
    in exactly one name), otherwise ``(None, None)``.
    """
    output = normalize_name(raw_output)
    for candidate in candidates:
        if candidate.name == output:
            return candidate, MatchKind.EXACT

    if containment and output:
        hits = list(dict.fromkeys(
            candidate for candidate in candidates
            if _contains(output, candidate.name) or
            _contains(candidate.name, output)))
        if len(hits) == 1:
            return hits[0], MatchKind.CONTAINMENT

    return None, None


def map_output_to_label(raw_output, candidates, level_labels, fallback_rng,
                        containment=True):
    """
    Turn model output into a label of the level.

    Tries :py:func:`match_output`; failing that draws uniformly from
    ``level_labels`` (in id order) with ``fallback_rng.choice``.

    Parameters
    ----------
    fallback_rng : :py:class:`random.Random` or :py:class:`FallbackSampler`

    Returns
    -------
    (:py:class:`~taxorag.taxonomy.Label`, :py:class:`MatchKind`)

    Raises
    ------
    NoCandidates
    """
    candidates = list(candidates)
    if not candidates:
        raise NoCandidates("no candidates to match against")
    label, kind = match_output(raw_output, candidates, containment)
    if label is None:
        return fallback_rng.choice(sorted(level_labels)), MatchKind.FALLBACK
    return label, kind


class Classifier(object):
    """
    Classifies documents against one taxonomy.

    One instance corresponds to one run: it owns the run's
    :py:class:`FallbackSampler` and numbers documents in the order they are
    started.

    Parameters
    ----------
    taxonomy : :py:class:`~taxorag.taxonomy.Taxonomy`
    index : :py:class:`~taxorag.index.LevelIndex` or None
        Needed except in ``weak-baseline`` mode.
    embedder : :py:class:`~taxorag.embedding.EmbeddingProvider` or None
        Embeds document texts; must match the one the index was built with.
    llm : :py:class:`~taxorag.llm.ChatProvider`
    config : :py:class:`ClassifierConfig` or None
    audit : :py:class:`~taxorag.llm.AuditLog` or None
    """

    def __init__(self, taxonomy, index, embedder, llm, config=None,
                 audit=None):
        self.taxonomy = taxonomy
        self.index = index
        self.embedder = embedder
        self.llm = llm
        self.config = config or ClassifierConfig()
        self.mode = Mode(self.config.mode)
        self.retrieval = (self.config.retrieval or
                          RetrievalConfig.defaults_for(taxonomy.depth))
        self.audit = audit
        self.sampler = FallbackSampler(self.config.fallback_seed)
        self._next_index = 0

        if self.mode is not Mode.WEAK_BASELINE:
            if index is None or embedder is None:
                raise ValueError("{} mode needs an index and an embedder".format(
                    self.mode.value))
            self.retrieval.check_levels(taxonomy.depth)

        self._full_paths = None
        if self.mode is Mode.FULL_KG:
            self._full_paths = taxonomy_paths(taxonomy)
            self._full_knowledge = serialize_paths(self._full_paths)

    def _claim_indices(self, count):
        start = self._next_index
        self._next_index += count
        return start

    async def _context(self, document):
        """Retrieved candidates, knowledge block and subgraph statistics."""
        if self.mode is Mode.WEAK_BASELINE:
            return {}, "", 0, 0

        x_emb = await embed(self.embedder, document.text)
        candidates = retrieve_candidates(
            self.taxonomy, self.index, x_emb, self.retrieval)

        if self.mode is Mode.FULL_KG:
            return (candidates, self._full_knowledge,
                    len(self.taxonomy.edges()), len(self._full_paths))

        subgraph = subgraph_from_candidates(self.taxonomy, candidates)
        paths = enumerate_paths(subgraph, self.taxonomy.depth)
        return candidates, serialize_paths(paths), len(subgraph), len(paths)

    async def _classify_levels(self, document, document_index, levels):
        candidates, knowledge, edge_count, path_count = await self._context(
            document)

        previous = None
        for level in range(1, self.taxonomy.depth + 1):
            retrieved = candidates.get(level)
            offered = candidate_set_for_level(
                self.taxonomy, level, previous, retrieved, self.mode)
            bundle = build_prompt(
                None, offered, knowledge, self.config.template)

            exchange = await self.llm.complete(
                ChatRequest(
                    system_text=bundle.text,
                    user_text=document.text,
                    candidates=tuple(label.name for label in offered),
                    document_id=document.id,
                    level=level),
                self.config.generation)
            if self.audit is not None:
                await self.audit.record(exchange)

            label, kind = match_output(
                exchange.response_text, offered, self.config.containment_match)
            if label is None:
                label = await self.sampler.draw(
                    document_index, self.taxonomy.labels_at_level(level))
                kind = MatchKind.FALLBACK
                logger.warning(
                    "document %r level %d: output %r matches no candidate, "
                    "sampled %r", document.id, level, exchange.response_text,
                    label.name)

            levels.append(LevelPrediction(
                level=level,
                raw_output=exchange.response_text,
                label=label,
                match_kind=kind,
                candidates=tuple(offered),
                retrieved=retrieved.labels if retrieved is not None else (),
                prompt_hash=bundle.prompt_hash,
            ))
            previous = label

        return edge_count, path_count

    async def classify_document(self, document, document_index=None):
        """
        Classify one document.

        Provider failures do not propagate: they produce a
        :py:class:`Prediction` with ``failed`` set.

        Parameters
        ----------
        document : :py:class:`Document`
        document_index : int or None
            Position in the run, used to order fallback draws. Allocated
            automatically if not given.

        Returns
        -------
        :py:class:`Prediction`
        """
        if document_index is None:
            document_index = self._claim_indices(1)

        levels = []
        try:
            edge_count, path_count = await self._classify_levels(
                document, document_index, levels)
        except ProviderError as e:
            logger.warning("document %r failed: %s", document.id, e)
            return Prediction(document.id, tuple(levels), document.gold,
                              failed=True, error=str(e))
        finally:
            await self.sampler.finish(document_index)

        return Prediction(document.id, tuple(levels), document.gold,
                          subgraph_edges=edge_count, paths=path_count)

    async def classify_all(self, documents, workers=1, on_prediction=None):
        """
        Classify ``documents`` with a pool of ``workers`` tasks which take
        documents in order.

        If a worker raises (including from ``on_prediction``) the whole pool
        is cancelled and the exception propagates. Documents which were
        never started are still marked finished with the fallback sampler,
        so later draws on this classifier do not wait for them.

        Parameters
        ----------
        on_prediction : callable or None
            Called with ``(position, prediction)`` as each document
            completes, e.g. to keep partial results on interruption. It may
            raise to stop the run.

        Returns
        -------
        [:py:class:`Prediction`, ...]
            In document order.
        """
        documents = list(documents)
        start = self._claim_indices(len(documents))
        queue = asyncio.Queue()
        for position, document in enumerate(documents):
            queue.put_nowait((position, document))
        results = [None] * len(documents)

        async def worker():
            while True:
                try:
                    position, document = queue.get_nowait()
                except asyncio.QueueEmpty:
                    return
                prediction = await self.classify_document(
                    document, start + position)
                results[position] = prediction
                if on_prediction is not None:
                    on_prediction(position, prediction)

        tasks = [
            asyncio.ensure_future(worker())
            for _ in range(max(1, min(workers, len(documents))))
        ]
        try:
            await asyncio.gather(*tasks)
        finally:
            for task in tasks:
                task.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)
            while not queue.empty():
                position, _ = queue.get_nowait()
                await self.sampler.finish(start + position)
        return results


async def classify_document(document, taxonomy, index, embedder, llm,
                            config=None, mode=None):
    """
    Classify a single document with a one-off :py:class:`Classifier`.

    ``mode``, if given, overrides ``config.mode``.
    """
    config = config or ClassifierConfig()
    if mode is not None:
        config = config.model_copy(update={"mode": Mode(mode)})
    classifier = Classifier(taxonomy, index, embedder, llm, config)
    return await classifier.classify_document(document)
