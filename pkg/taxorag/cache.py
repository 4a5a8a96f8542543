"""
A file-backed embedding cache, making index builds against paid providers
resumable and repeated runs free.

On-disk layout (inside the cache directory):

``embeddings.bin``
    Concatenated vectors, each stored as ``dim`` little-endian float64s.
``manifest.tsv``
    One line per vector: ``offset<TAB>dim<TAB>provider<TAB>model<TAB>text``
    where ``offset`` is the byte offset into ``embeddings.bin``. Lines
    starting with ``#`` are comments.

Vectors are appended to the data file before their manifest line is written,
so an interrupted build loses at most the batch in progress. Manifest lines
which cannot be parsed, or which point outside the data file or at
non-finite/all-zero data, are dropped with a warning.
"""

import asyncio
import logging
import os

import numpy as np
import sentinel

from taxorag.embedding import EmbeddingProvider, as_vector, normalize_text

__all__ = [
    "Missing",
    "EmbeddingCache",
    "CachedEmbedder",
]

logger = logging.getLogger(__name__)

Missing = sentinel.create("Missing")
"""
Returned by :py:meth:`EmbeddingCache.get` when no vector is cached.
"""

_DTYPE = np.dtype("<f8")

_HEADER = "# taxorag embedding cache v1: offset, dim, provider, model, text\n"


class EmbeddingCache(object):
    """
    Embedding vectors keyed by (provider id, model id, normalized text).

    Parameters
    ----------
    directory : str or None
        Where to persist the cache. If ``None`` the cache lives in memory
        only. The directory is created on first write.
    """

    DATA_FILE = "embeddings.bin"
    MANIFEST_FILE = "manifest.tsv"

    def __init__(self, directory=None):
        self.directory = directory
        self._entries = {}
        self._dims = {}
        self._lock = asyncio.Lock()
        self.dropped = 0
        if directory is not None:
            self._load()

    @property
    def data_path(self):
        return os.path.join(self.directory, self.DATA_FILE)

    @property
    def manifest_path(self):
        return os.path.join(self.directory, self.MANIFEST_FILE)

    def _load(self):
        try:
            with open(self.manifest_path, "r", encoding="utf-8") as f:
                lines = f.readlines()
        except FileNotFoundError:
            return

        try:
            with open(self.data_path, "rb") as f:
                data = f.read()
        except FileNotFoundError:
            data = b""

        for number, line in enumerate(lines, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                fields = line.rstrip("\n").split("\t", 4)
                if len(fields) != 5:
                    raise ValueError("expected 5 fields, got {}".format(
                        len(fields)))
                offset, dim, provider_id, model, text = fields
                offset = int(offset)
                dim = int(dim)
                if offset < 0 or dim < 1 or offset + dim * _DTYPE.itemsize > len(data):
                    raise ValueError("record lies outside the data file")
                vector = np.frombuffer(
                    data, dtype=_DTYPE, count=dim, offset=offset
                ).astype(np.float64)
                as_vector(vector)
                if not np.any(vector):
                    raise ValueError("all-zero vector")
                known_dim = self._dims.setdefault((provider_id, model), dim)
                if known_dim != dim:
                    raise ValueError("dimension {} differs from {}".format(
                        dim, known_dim))
            except ValueError as e:
                self.dropped += 1
                logger.warning(
                    "dropping corrupt embedding cache record at %s:%d (%s)",
                    self.manifest_path, number, e)
                continue
            self._entries[(provider_id, model, text)] = vector

        logger.info("loaded %d cached embeddings from %s",
                    len(self._entries), self.directory)

    def __len__(self):
        return len(self._entries)

    def __contains__(self, key):
        return key in self._entries

    def get(self, provider_id, model, text, default=Missing):
        """Return the cached vector for ``text``, or ``default``."""
        return self._entries.get(
            (provider_id, model, normalize_text(text)), default)

    async def put_many(self, provider_id, model, items):
        """
        Store ``(text, vector)`` pairs, appending them to disk (if
        persistent) through a single serialized writer.
        """
        for field in (provider_id, model):
            if "\t" in field or "\n" in field:
                raise ValueError("provider and model ids may not contain "
                                 "tabs or newlines")

        async with self._lock:
            new = []
            for text, vector in items:
                text = normalize_text(text)
                vector = as_vector(vector)
                key = (provider_id, model, text)
                dim = self._dims.setdefault((provider_id, model), vector.shape[0])
                if dim != vector.shape[0]:
                    raise ValueError("dimension {} differs from {}".format(
                        vector.shape[0], dim))
                if key not in self._entries:
                    new.append((key, vector))

            if new and self.directory is not None:
                self._append(new)

            for key, vector in new:
                self._entries[key] = vector

    def _append(self, new):
        os.makedirs(self.directory, exist_ok=True)
        records = []
        with open(self.data_path, "ab") as f:
            offset = f.seek(0, os.SEEK_END)
            for (provider_id, model, text), vector in new:
                raw = vector.astype(_DTYPE).tobytes()
                f.write(raw)
                records.append("{}\t{}\t{}\t{}\t{}\n".format(
                    offset, vector.shape[0], provider_id, model, text))
                offset += len(raw)
            f.flush()
            os.fsync(f.fileno())

        write_header = not os.path.exists(self.manifest_path)
        with open(self.manifest_path, "a", encoding="utf-8") as f:
            if write_header:
                f.write(_HEADER)
            f.writelines(records)


class CachedEmbedder(EmbeddingProvider):
    """
    Wraps an :py:class:`~taxorag.embedding.EmbeddingProvider` with an
    :py:class:`EmbeddingCache`, only sending uncached texts to the provider.

    Uncached texts are embedded in batches of ``batch_size``, at most
    ``max_in_flight`` batches at once, and every batch is written to the cache
    as soon as it arrives.

    Attributes
    ----------
    provider_calls : int
        The number of batches sent to the wrapped provider.
    """

    def __init__(self, provider, cache=None, batch_size=64, max_in_flight=4):
        if batch_size < 1 or max_in_flight < 1:
            raise ValueError("batch_size and max_in_flight must be positive")
        self.provider = provider
        self.cache = cache if cache is not None else EmbeddingCache()
        self.batch_size = batch_size
        self.max_in_flight = max_in_flight
        self.provider_calls = 0

    @property
    def provider_id(self):
        return self.provider.provider_id

    @property
    def model(self):
        return self.provider.model

    @property
    def dim(self):
        return self.provider.dim

    async def embed_batch(self, texts):
        texts = [normalize_text(text) for text in texts]
        missing = list(dict.fromkeys(
            text for text in texts
            if self.cache.get(self.provider_id, self.model, text) is Missing))

        if missing:
            semaphore = asyncio.Semaphore(self.max_in_flight)

            async def fetch(batch):
                async with semaphore:
                    self.provider_calls += 1
                    vectors = await self.provider.embed_batch(batch)
                await self.cache.put_many(
                    self.provider_id, self.model, zip(batch, vectors))

            batches = [
                missing[i:i + self.batch_size]
                for i in range(0, len(missing), self.batch_size)
            ]
            logger.debug("embedding %d uncached texts in %d batches",
                         len(missing), len(batches))
            await asyncio.gather(*(fetch(batch) for batch in batches))

        return [self.cache.get(self.provider_id, self.model, text)
                for text in texts]
