"""
End-to-end orchestration: turn a :py:class:`~taxorag.config.RunConfig` into
providers, an index and a classified, scored run directory.
"""

import json
import logging
import os
from dataclasses import dataclass

from taxorag.cache import CachedEmbedder, EmbeddingCache
from taxorag.classifier import Classifier, Mode
from taxorag.config import api_key
from taxorag.datasets import ingest, read_taxonomy_file, sample_documents
from taxorag.embedding import HashingEmbedder, OpenAIEmbedder, embed
from taxorag.errors import ConfigError, ParseError, RunAborted
from taxorag.evaluation import evaluate, write_per_class_csv
from taxorag.index import build_index
from taxorag.llm import (
    AuditLog, CandidateEchoProvider, OpenAIChatProvider, ScriptedProvider)
from taxorag.prompt import build_prompt, enumerate_paths, serialize_paths
from taxorag.subgraph import retrieve_candidates, subgraph_from_candidates
from taxorag.throttle import Throttle

__all__ = [
    "CONFIG_FILE",
    "RUN_REPORT_FILE",
    "METRICS_FILE",
    "PER_CLASS_FILE",
    "AUDIT_FILE",
    "make_embedder",
    "make_chat_provider",
    "load_dataset",
    "build_run_index",
    "write_run_report",
    "read_run_report",
    "RunResult",
    "run",
    "evaluate_run",
    "RetrievalTrace",
    "retrieve_debug",
]

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
RUN_REPORT_FILE = "run-report.jsonl"
METRICS_FILE = "metrics.json"
PER_CLASS_FILE = "per-class.csv"
AUDIT_FILE = "audit.jsonl"


def make_embedder(settings, provider=None, http_client=None):
    """
    Build the (cached) embedder described by ``settings``.

    Parameters
    ----------
    settings : :py:class:`~taxorag.config.EmbeddingSettings`
    provider : :py:class:`~taxorag.embedding.EmbeddingProvider` or None
        Use this provider instead of the configured one; it is still
        wrapped in the configured cache.

    Returns
    -------
    :py:class:`~taxorag.cache.CachedEmbedder`
    """
    if provider is None:
        if settings.provider == "hashing":
            provider = HashingEmbedder(settings.dim)
        else:
            provider = OpenAIEmbedder(
                model=settings.model,
                api_key=api_key(settings.api_key_env),
                base_url=settings.base_url,
                max_tries=settings.max_tries,
                base_delay=settings.base_delay,
                max_delay=settings.max_delay,
                timeout=settings.timeout,
                throttle=Throttle(settings.max_in_flight, settings.rate),
                http_client=http_client,
            )
    return CachedEmbedder(
        provider, EmbeddingCache(settings.cache_dir),
        batch_size=settings.batch_size,
        max_in_flight=settings.max_in_flight or 4)


def _load_script(path):
    with open(path, encoding="utf-8") as f:
        try:
            script = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError("{} is not valid JSON: {}".format(path, e)) \
                from None
    responses = {
        (str(document_id), level): answer
        for document_id, answers in script.get("responses", {}).items()
        for level, answer in enumerate(answers, 1)
    }
    return ScriptedProvider(responses, default=script.get("default"))


def make_chat_provider(settings, http_client=None):
    """Build the chat provider described by a
    :py:class:`~taxorag.config.ChatSettings`.
    """
    if settings.provider == "candidate-echo":
        return CandidateEchoProvider()
    if settings.provider == "scripted":
        return _load_script(settings.script)
    return OpenAIChatProvider(
        api_key=api_key(settings.api_key_env),
        base_url=settings.base_url,
        max_tries=settings.max_tries,
        base_delay=settings.base_delay,
        max_delay=settings.max_delay,
        timeout=settings.timeout,
        throttle=Throttle(settings.max_in_flight, settings.rate),
        http_client=http_client,
    )


def load_dataset(config):
    """
    Read the configured documents (not yet sampled) and taxonomy.

    Returns
    -------
    (documents, taxonomy)
    """
    dataset = config.dataset.resolved()
    taxonomy = None
    if dataset.taxonomy_path is not None:
        taxonomy = read_taxonomy_file(
            dataset.taxonomy_path, header=dataset.taxonomy_header)
    return ingest(
        dataset.path, dataset.format,
        text_columns=dataset.text_columns,
        gold_columns=dataset.gold_columns,
        id_column=dataset.id_column,
        text_separator=dataset.text_separator,
        taxonomy=taxonomy)


async def build_run_index(config, taxonomy, embedder):
    """Embed the taxonomy's labels (through the cache)."""
    calls = embedder.provider_calls
    index = await build_index(taxonomy, embedder, config.embedding.contextual)
    logger.info("index ready: %d labels, %d provider calls", len(index),
                embedder.provider_calls - calls)
    return index


def write_run_report(path, predictions):
    """Write one JSON line per :py:class:`~taxorag.classifier.Prediction`."""
    with open(path, "w", encoding="utf-8") as f:
        for prediction in predictions:
            f.write(json.dumps(prediction.to_record(), sort_keys=True) + "\n")


def read_run_report(path):
    """
    Read the records of a run report.

    Raises
    ------
    ParseError
    """
    records = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ParseError("invalid JSON: {}".format(e.msg), number) \
                    from None
    return records


@dataclass
class RunResult:
    output_dir: str
    predictions: list
    metrics: object = None

    @property
    def failed(self):
        return sum(1 for prediction in self.predictions if prediction.failed)


async def run(config, chat_provider=None, embedding_provider=None):
    """
    Execute a full run: ingest, sample, build the index, classify and score.

    Writes ``config.json``, ``run-report.jsonl``, ``metrics.json``,
    ``per-class.csv`` and (if enabled) ``audit.jsonl`` into
    ``config.output_dir``. The run report is written even if classification
    is interrupted.

    Parameters
    ----------
    config : :py:class:`~taxorag.config.RunConfig`
    chat_provider : :py:class:`~taxorag.llm.ChatProvider` or None
        Overrides ``config.chat``.
    embedding_provider : :py:class:`~taxorag.embedding.EmbeddingProvider` or None
        Overrides the provider (not the cache) of ``config.embedding``.

    Returns
    -------
    :py:class:`RunResult`

    Raises
    ------
    RunAborted
        As soon as more than ``config.failure_threshold`` of the documents
        have failed at the provider; documents not yet started are never
        sent. The run report of the documents completed so far has been
        written by then.
    """
    documents, taxonomy = load_dataset(config)
    dataset = config.dataset.resolved()
    documents = sample_documents(documents, dataset.sample_size,
                                 dataset.sample_seed)
    output_dir = config.output_dir
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, CONFIG_FILE), "w",
              encoding="utf-8") as f:
        f.write(config.snapshot(taxonomy.depth))
    logger.info("run of %d documents in %s mode into %s", len(documents),
                config.mode.value, output_dir)

    embedder = index = None
    if config.mode is not Mode.WEAK_BASELINE:
        embedder = make_embedder(config.embedding, embedding_provider)
        index = await build_run_index(config, taxonomy, embedder)

    audit = None
    if config.chat.audit:
        audit_path = os.path.join(output_dir, AUDIT_FILE)
        if os.path.exists(audit_path):
            os.remove(audit_path)
        audit = AuditLog(audit_path)

    classifier = Classifier(
        taxonomy, index, embedder,
        chat_provider or make_chat_provider(config.chat),
        config.classifier_config(taxonomy.depth), audit)

    completed = [None] * len(documents)
    failed = 0
    allowed = config.failure_threshold * len(documents)

    def keep(position, prediction):
        nonlocal failed
        completed[position] = prediction
        if prediction.failed:
            failed += 1
            if failed > allowed:
                raise RunAborted(failed, len(documents),
                                 config.failure_threshold)

    try:
        await classifier.classify_all(documents, config.workers, keep)
    except RunAborted:
        logger.error("%d of %d documents failed at the provider; stopping",
                     failed, len(documents))
        raise
    finally:
        predictions = [p for p in completed if p is not None]
        write_run_report(os.path.join(output_dir, RUN_REPORT_FILE),
                         predictions)
        if len(predictions) < len(documents):
            logger.warning("run interrupted: %d of %d documents written",
                           len(predictions), len(documents))

    result = RunResult(output_dir, predictions)

    if dataset.gold_columns:
        result.metrics = evaluate(
            [prediction.to_record() for prediction in predictions], taxonomy,
            dataset=dataset.name, mode=config.mode.value)
        result.metrics.write(os.path.join(output_dir, METRICS_FILE))
        write_per_class_csv(result.metrics,
                            os.path.join(output_dir, PER_CLASS_FILE))
        logger.info("F1-macro per level: %s", ", ".join(
            "{:.4f}".format(f1) for f1 in result.metrics.per_level_f1_macro))

    return result


def evaluate_run(config, report_path=None):
    """
    Re-score an existing run report (by default the one in
    ``config.output_dir``) and rewrite its metrics files.

    Returns
    -------
    :py:class:`~taxorag.evaluation.MetricsReport`
    """
    _, taxonomy = load_dataset(config)
    dataset = config.dataset.resolved()
    report_path = report_path or os.path.join(config.output_dir,
                                              RUN_REPORT_FILE)
    metrics = evaluate(read_run_report(report_path), taxonomy,
                       dataset=dataset.name, mode=config.mode.value)
    output_dir = os.path.dirname(report_path) or "."
    metrics.write(os.path.join(output_dir, METRICS_FILE))
    write_per_class_csv(metrics, os.path.join(output_dir, PER_CLASS_FILE))
    return metrics


@dataclass
class RetrievalTrace:
    """What the classifier would see for one text."""
    candidates: dict
    subgraph: object
    paths: frozenset
    prompt: str

    def format(self):
        lines = []
        for level, candidate_set in sorted(self.candidates.items()):
            lines.append("level {} candidates:".format(level))
            lines.extend("  {:.6f}  {}".format(member.distance,
                                                member.label.name)
                         for member in candidate_set)
        lines.append("subgraph ({} edges):".format(len(self.subgraph)))
        lines.extend("  " + line
                     for line in self.subgraph.format_edges().splitlines())
        lines.append("paths ({}):".format(len(self.paths)))
        lines.extend("  " + line
                     for line in serialize_paths(self.paths).splitlines())
        lines.append("level 1 prompt:")
        lines.append(self.prompt)
        return "\n".join(lines)


async def retrieve_debug(config, text, embedding_provider=None):
    """
    Retrieve candidates, subgraph and paths for ``text`` and build its level
    1 prompt, without calling a chat model.

    Returns
    -------
    :py:class:`RetrievalTrace`
    """
    _, taxonomy = load_dataset(config)
    embedder = make_embedder(config.embedding, embedding_provider)
    index = await build_run_index(config, taxonomy, embedder)
    retrieval = config.retrieval_for(taxonomy.depth)

    candidates = retrieve_candidates(
        taxonomy, index, await embed(embedder, text), retrieval)
    subgraph = subgraph_from_candidates(taxonomy, candidates)
    paths = enumerate_paths(subgraph, taxonomy.depth)
    template = config.resolved(taxonomy.depth).prompt
    prompt = build_prompt(None, taxonomy.labels_at_level(1),
                          serialize_paths(paths), template)
    return RetrievalTrace(candidates, subgraph, paths, prompt.text)
