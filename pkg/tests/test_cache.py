import os

import numpy as np
import pytest

from taxorag import (
    CachedEmbedder, EmbeddingCache, EmbeddingProvider, HashingEmbedder,
    Missing)


class CountingEmbedder(EmbeddingProvider):
    """Wraps a HashingEmbedder, recording every batch it is asked for."""

    provider_id = "counting"

    def __init__(self, dim=8):
        self.inner = HashingEmbedder(dim)
        self.model = self.inner.model
        self.dim = dim
        self.batches = []

    async def embed_batch(self, texts):
        self.batches.append(list(texts))
        return await self.inner.embed_batch(texts)


@pytest.mark.asyncio
async def test_in_memory_cache():
    cache = EmbeddingCache()
    assert cache.get("p", "m", "text") is Missing
    assert cache.get("p", "m", "text", None) is None

    await cache.put_many("p", "m", [("some  text", [1.0, 2.0])])
    assert np.array_equal(cache.get("p", "m", "some text"), [1.0, 2.0])
    assert len(cache) == 1

    # Keys include the provider and model
    assert cache.get("q", "m", "some text") is Missing
    assert cache.get("p", "n", "some text") is Missing

    # One dimension per provider and model
    with pytest.raises(ValueError):
        await cache.put_many("p", "m", [("other", [1.0, 2.0, 3.0])])


@pytest.mark.asyncio
async def test_persistent_cache(tmpdir):
    directory = str(tmpdir.join("cache"))
    cache = EmbeddingCache(directory)
    await cache.put_many("p", "m", [("a", [1.0, 0.5]), ("b\tc", [0.25, 4.0])])

    # Contents should be restored from disk
    reloaded = EmbeddingCache(directory)
    assert len(reloaded) == 2
    assert reloaded.dropped == 0
    assert np.array_equal(reloaded.get("p", "m", "a"), [1.0, 0.5])
    assert np.array_equal(reloaded.get("p", "m", "b c"), [0.25, 4.0])

    # Appending keeps earlier records
    await reloaded.put_many("p", "m", [("d", [3.0, 3.0])])
    assert len(EmbeddingCache(directory)) == 3


@pytest.mark.asyncio
async def test_corrupt_records_dropped(tmpdir):
    directory = str(tmpdir.join("cache"))
    cache = EmbeddingCache(directory)
    await cache.put_many("p", "m", [("a", [1.0, 0.5]), ("b", [2.0, 0.5])])

    with open(os.path.join(directory, EmbeddingCache.MANIFEST_FILE), "a") as f:
        f.write("not a record\n")
        f.write("4096\t2\tp\tm\tbeyond the end\n")
    # Truncate the second vector
    data_path = os.path.join(directory, EmbeddingCache.DATA_FILE)
    with open(data_path, "rb+") as f:
        f.truncate(os.path.getsize(data_path) - 8)

    reloaded = EmbeddingCache(directory)
    assert reloaded.dropped == 3
    assert len(reloaded) == 1
    assert reloaded.get("p", "m", "b") is Missing


@pytest.mark.asyncio
async def test_cached_embedder(tmpdir):
    provider = CountingEmbedder()
    directory = str(tmpdir.join("cache"))
    embedder = CachedEmbedder(provider, EmbeddingCache(directory),
                              batch_size=2)

    texts = ["one", "two", "three", "two", "four  five"]
    vectors = await embedder.embed_batch(texts)
    assert len(vectors) == 5
    assert np.array_equal(vectors[0], provider.inner.vector("one"))
    assert np.array_equal(vectors[1], vectors[3])

    # Duplicates are embedded once, in batches of two
    assert sorted(t for batch in provider.batches for t in batch) == sorted(
        ["one", "two", "three", "four five"])
    assert embedder.provider_calls == 2

    # Only new texts reach the provider
    await embedder.embed_batch(["one", "six"])
    assert provider.batches[-1] == ["six"]
    assert embedder.provider_calls == 3

    # A fresh embedder over the same directory needs no provider calls
    again = CachedEmbedder(CountingEmbedder(), EmbeddingCache(directory))
    again_vectors = await again.embed_batch(texts)
    assert again.provider_calls == 0
    for a, b in zip(vectors, again_vectors):
        assert np.array_equal(a, b)
