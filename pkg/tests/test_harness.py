import json
import os
import random

import pytest

from taxorag import (
    AUDIT_FILE, CONFIG_FILE, METRICS_FILE, PER_CLASS_FILE, RUN_REPORT_FILE,
    CachedEmbedder, Document, HashingEmbedder, MetricsReport, ParseError,
    RetrievalConfig, RunAborted, ScriptedProvider, build_index,
    evaluate_run, ingest, load_config, query_candidates, read_run_report,
    retrieve_debug, run)

from conftest import random_taxonomy, synthetic_corpus, write_jsonl


class CountingEmbedder(HashingEmbedder):

    def __init__(self, dim=64):
        super().__init__(dim)
        self.calls = 0

    async def embed_batch(self, texts):
        self.calls += 1
        return await super().embed_batch(texts)


def make_config(tmpdir, dataset, name="run", **overrides):
    settings = {
        "dataset.path": dataset,
        "dataset.gold_columns": ["l1", "l2", "l3"],
        "dataset.id_column": "id",
        "embedding.provider": "hashing",
        "chat.provider": "candidate-echo",
        "output_dir": str(tmpdir.join(name)),
    }
    settings.update(overrides)
    return load_config(overrides=settings)


def read(path):
    with open(path) as f:
        return f.read()


@pytest.fixture
def pets_dataset(tmpdir, pet_documents):
    path = str(tmpdir.join("pets.jsonl"))
    write_jsonl(path, pet_documents)
    return path


@pytest.fixture
def pets_script(tmpdir, pet_documents):
    path = str(tmpdir.join("script.json"))
    with open(path, "w") as f:
        json.dump({"responses": {d.id: list(d.gold) for d in pet_documents}},
                  f)
    return path


@pytest.mark.asyncio
async def test_closed_loop_run(tmpdir, pets_dataset, pets_script):
    config = make_config(tmpdir, pets_dataset, **{
        "chat.provider": "scripted", "chat.script": pets_script,
        "chat.audit": True})
    result = await run(config)

    assert result.failed == 0
    assert result.metrics.per_level_f1_macro == [1.0, 1.0, 1.0]
    assert result.metrics.decay_avg == 0.0
    assert result.metrics.dataset == "pets"

    for name in (CONFIG_FILE, RUN_REPORT_FILE, METRICS_FILE, PER_CLASS_FILE,
                 AUDIT_FILE):
        assert os.path.exists(os.path.join(config.output_dir, name))

    records = read_run_report(os.path.join(config.output_dir,
                                           RUN_REPORT_FILE))
    assert [r["id"] for r in records] == ["d0", "d1", "d2", "d3", "d4"]
    assert all("latency" not in json.dumps(r) for r in records)

    with open(os.path.join(config.output_dir, AUDIT_FILE)) as f:
        audit = [json.loads(line) for line in f]
    assert len(audit) == 15
    assert all("latency" in entry for entry in audit)

    snapshot = json.loads(read(os.path.join(config.output_dir, CONFIG_FILE)))
    assert snapshot["retrieval"]["k_per_level"] == {"2": 10, "3": 40}
    assert snapshot["prompt"]["task_description"] == "the text"

    # Re-scoring the report gives the same metrics
    os.remove(os.path.join(config.output_dir, METRICS_FILE))
    assert evaluate_run(config) == result.metrics
    assert MetricsReport.load(
        os.path.join(config.output_dir, METRICS_FILE)) == result.metrics


@pytest.mark.asyncio
async def test_run_aborts_on_failures(tmpdir, pets_dataset, pet_documents):
    # d2 and d3 have no answers at all
    script = str(tmpdir.join("partial.json"))
    with open(script, "w") as f:
        json.dump({"responses": {d.id: list(d.gold) for d in pet_documents
                                 if d.id not in ("d2", "d3")}}, f)

    config = make_config(tmpdir, pets_dataset, workers=1, **{
        "chat.provider": "scripted", "chat.script": script})
    with pytest.raises(RunAborted) as excinfo:
        await run(config)
    # One failure in five is already over 10%, so d3 and d4 are never sent
    assert (excinfo.value.failed, excinfo.value.total) == (1, 5)

    # The report holds what was done, the failure included
    records = read_run_report(os.path.join(config.output_dir,
                                           RUN_REPORT_FILE))
    assert [r["id"] for r in records] == ["d0", "d1", "d2"]
    assert [r["id"] for r in records if r["failed"]] == ["d2"]
    assert not os.path.exists(os.path.join(config.output_dir, METRICS_FILE))

    # A looser threshold scores the rest
    config = make_config(tmpdir, pets_dataset, "loose", **{
        "chat.provider": "scripted", "chat.script": script,
        "failure_threshold": 0.5})
    result = await run(config)
    assert (result.metrics.documents, result.metrics.failed) == (3, 2)


@pytest.mark.asyncio
@pytest.mark.parametrize("workers", [1, 4])
async def test_run_stops_sending_once_aborted(tmpdir, pet_documents, workers):
    documents = [Document("x{}".format(i), d.text, d.gold)
                 for i, d in enumerate(pet_documents * 4)]
    path = str(tmpdir.join("twenty.jsonl"))
    write_jsonl(path, documents)

    # Every call fails; 10% of 20 allows two failures
    llm = ScriptedProvider([])
    config = make_config(tmpdir, path, mode="weak-baseline", workers=workers)
    with pytest.raises(RunAborted) as excinfo:
        await run(config, chat_provider=llm)

    assert excinfo.value.total == 20
    if workers == 1:
        assert excinfo.value.failed == 3
        assert len(llm.requests) == 3
    else:
        # At most one document in flight per other worker
        assert len(llm.requests) <= 3 + (workers - 1)
    records = read_run_report(os.path.join(config.output_dir,
                                           RUN_REPORT_FILE))
    assert 3 <= len(records) <= len(llm.requests)
    assert all(record["failed"] for record in records)


@pytest.mark.asyncio
async def test_weak_baseline_run(tmpdir, pets_dataset):
    config = make_config(tmpdir, pets_dataset, mode="weak-baseline")
    embedder = CountingEmbedder()
    result = await run(config, embedding_provider=embedder)
    assert embedder.calls == 0
    assert result.metrics.hit_at_k == {}
    assert len(result.predictions) == 5


@pytest.fixture
def synthetic(tmpdir):
    rng = random.Random(8)
    taxonomy = random_taxonomy(rng, 3)
    documents = synthetic_corpus(rng, taxonomy, 500)
    path = str(tmpdir.join("corpus.jsonl"))
    write_jsonl(path, documents)
    # The run induces its taxonomy from the gold labels actually used
    _, taxonomy = ingest(path, gold_columns=["l1", "l2", "l3"],
                         id_column="id")
    return path, taxonomy, documents


@pytest.mark.asyncio
async def test_synthetic_run_is_deterministic(tmpdir, synthetic):
    path, taxonomy, documents = synthetic
    first = await run(make_config(tmpdir, path, "first"))
    second = await run(make_config(tmpdir, path, "second", workers=7))

    assert read(os.path.join(first.output_dir, METRICS_FILE)) == read(
        os.path.join(second.output_dir, METRICS_FILE))
    assert read(os.path.join(first.output_dir, RUN_REPORT_FILE)) == read(
        os.path.join(second.output_dir, RUN_REPORT_FILE))
    assert first.metrics.documents == 500


@pytest.mark.asyncio
async def test_synthetic_level_2_accuracy(tmpdir, synthetic):
    path, taxonomy, documents = synthetic
    result = await run(make_config(tmpdir, path))
    records = read_run_report(os.path.join(result.output_dir,
                                           RUN_REPORT_FILE))

    # Each level 2 name occurs in its own documents only, so the echo mock
    # is right exactly when the gold label was offered
    hashing = HashingEmbedder(dim=64)
    index = await build_index(taxonomy, CachedEmbedder(hashing))
    retrieval = RetrievalConfig.defaults_for(3)
    included = correct = 0
    for document, record in zip(documents, records):
        predicted = taxonomy.lookup(1, record["levels"][0]["label"])
        offered = {label.name for label in taxonomy.children(predicted)}
        offered |= {label.name for label in query_candidates(
            index, hashing.vector(document.text), 2, retrieval).labels}
        included += document.gold[1] in offered
        correct += record["levels"][1]["label"] == document.gold[1]

    assert correct == included
    assert 0 < included < len(documents)


@pytest.mark.asyncio
async def test_mode_sweep_reuses_cache(tmpdir, pets_dataset):
    cache_dir = str(tmpdir.join("cache"))
    embedder = CountingEmbedder()
    first = await run(make_config(tmpdir, pets_dataset, "kg-htc", **{
        "embedding.cache_dir": cache_dir}), embedding_provider=embedder)
    assert embedder.calls > 0

    for mode in ("full-kg", "kg-htc"):
        embedder = CountingEmbedder()
        result = await run(make_config(tmpdir, pets_dataset, mode + "-again",
                                       mode=mode,
                                       **{"embedding.cache_dir": cache_dir}),
                           embedding_provider=embedder)
        assert embedder.calls == 0

    assert result.metrics == first.metrics


@pytest.mark.asyncio
async def test_retrieve_debug(tmpdir, pets_dataset):
    config = make_config(tmpdir, pets_dataset)
    trace = await retrieve_debug(config, "kibble for my dog food bowl")

    assert sorted(trace.candidates) == [1, 2, 3]
    assert trace.prompt.startswith("Classify the text into")
    for path in trace.paths:
        assert str(path) in trace.prompt

    text = trace.format()
    assert "level 3 candidates:" in text
    assert "level 1 prompt:" in text


def test_read_run_report_errors(tmpdir):
    path = tmpdir.join("report.jsonl")
    path.write('{"id": "d0"}\n\n{"id": \n')
    with pytest.raises(ParseError) as excinfo:
        read_run_report(str(path))
    assert excinfo.value.line == 3
