"""
Text embeddings: vector helpers, the cosine measures used for retrieval and
the embedding providers (a deterministic hashing embedder for offline use and
an OpenAI-compatible HTTP embedder).
"""

import abc
import hashlib
import logging
import math
import re

import numpy as np
import openai

from taxorag.errors import (
    EmptyText, DimMismatch, ZeroVector, ProviderError, ProviderExhausted,
    AuthError, MalformedResponse)
from taxorag.throttle import Throttle, RetryLog, retrying

__all__ = [
    "as_vector",
    "cosine_similarity",
    "cosine_distance",
    "normalize_text",
    "EmbeddingProvider",
    "HashingEmbedder",
    "OpenAIEmbedder",
    "embed",
]

logger = logging.getLogger(__name__)

# openai failures worth retrying
TRANSIENT_ERRORS = (
    openai.RateLimitError,
    openai.InternalServerError,
    openai.APIConnectionError,
)


def as_vector(values, dim=None):
    """
    Convert ``values`` into a 1-D float64 numpy array, checking that every
    entry is finite and (optionally) that it has ``dim`` entries.

    Raises
    ------
    DimMismatch
    ValueError
        For non-finite entries or a non 1-D input.
    """
    vector = np.asarray(values, dtype=np.float64)
    if vector.ndim != 1 or vector.size == 0:
        raise ValueError("embedding vectors must be non-empty and 1-D")
    if dim is not None and vector.shape[0] != dim:
        raise DimMismatch("expected {} dimensions, got {}".format(
            dim, vector.shape[0]))
    if not np.all(np.isfinite(vector)):
        raise ValueError("embedding vectors must be finite")
    return vector


def cosine_similarity(a, b):
    """
    The cosine of the angle between ``a`` and ``b``, clipped to [-1, 1].

    Raises
    ------
    DimMismatch
        If the vectors differ in length.
    ZeroVector
        If either vector is all zeros.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch("cannot compare {} and {} dimensional vectors".format(
            a.shape[0], b.shape[0]))

    norms = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if norms == 0.0:
        raise ZeroVector("cosine similarity of an all-zero vector")

    return min(1.0, max(-1.0, float(np.dot(a, b)) / norms))


def cosine_distance(x_emb, label_emb):
    """``1 - cosine_similarity``, in [0, 2]."""
    return 1.0 - cosine_similarity(x_emb, label_emb)


def normalize_text(text):
    """Collapse whitespace: the form in which texts are embedded and cached."""
    return " ".join(str(text).split())


class EmbeddingProvider(abc.ABC):
    """
    Turns batches of texts into embedding vectors.

    Subclasses define :py:attr:`provider_id`, :py:attr:`model` and
    :py:meth:`embed_batch`.
    """

    provider_id = None
    model = None

    #: Declared dimensionality, if known ahead of the first call.
    dim = None

    @abc.abstractmethod
    async def embed_batch(self, texts):
        """
        Embed a list of non-empty, whitespace-normalized texts.

        Returns
        -------
        [numpy.ndarray, ...]
            One vector per text, in order.
        """


class HashingEmbedder(EmbeddingProvider):
    """
    A deterministic bag-of-tokens embedder needing no network access.

    Every lowercased word token hashes (with BLAKE2b, so results do not depend
    on Python's per-process hash seed) to one of ``dim`` buckets; the vector is
    the L2-normalized bucket count. Texts with no word tokens hash as a whole
    so the vector is never all zeros. Texts sharing words get a positive
    cosine similarity, which is enough lexical signal for synthetic corpora.
    """

    provider_id = "hashing"

    _TOKEN = re.compile(r"\w+")

    def __init__(self, dim=64):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.model = "bag-of-tokens-{}".format(dim)

    def _bucket(self, token):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def vector(self, text):
        """Embed one text synchronously."""
        counts = np.zeros(self.dim, dtype=np.float64)
        tokens = self._TOKEN.findall(text.lower()) or [text]
        for token in tokens:
            counts[self._bucket(token)] += 1.0
        return counts / math.sqrt(float(np.dot(counts, counts)))

    async def embed_batch(self, texts):
        return [self.vector(text) for text in texts]


class OpenAIEmbedder(EmbeddingProvider):
    """
    Embeddings from an endpoint speaking the OpenAI embeddings API.

    Parameters
    ----------
    model : str
    api_key : str or None
    base_url : str or None
        Defaults to the official endpoint.
    max_tries : int
        Attempts per batch, including the first.
    base_delay, max_delay : float
        Backoff schedule, see :py:func:`taxorag.throttle.retrying`.
    throttle : :py:class:`taxorag.throttle.Throttle` or None
    http_client : httpx.AsyncClient or None
        Custom transport (used by the tests).
    """

    provider_id = "openai"

    def __init__(self, model="text-embedding-ada-002", api_key=None,
                 base_url=None, max_tries=5, base_delay=0.5, max_delay=8.0,
                 timeout=30.0, throttle=None, http_client=None):
        self.model = model
        self.max_tries = max_tries
        self.base_delay = base_delay
        self.max_delay = max_delay
        self.throttle = throttle or Throttle()
        self._client = openai.AsyncOpenAI(
            api_key=api_key or "unset",
            base_url=base_url,
            timeout=timeout,
            max_retries=0,
            http_client=http_client,
        )

    async def _request(self, texts):
        async with self.throttle:
            return await self._client.embeddings.create(
                model=self.model, input=list(texts))

    async def embed_batch(self, texts):
        log = RetryLog()
        try:
            response = await retrying(
                lambda: self._request(texts),
                TRANSIENT_ERRORS,
                log=log,
                max_tries=self.max_tries,
                base_delay=self.base_delay,
                max_delay=self.max_delay,
                description="embedding request")
        except openai.AuthenticationError as e:
            raise AuthError(str(e), log.retries, e.status_code) from e
        except TRANSIENT_ERRORS as e:
            raise ProviderExhausted(
                "embedding request failed after {} retries: {}".format(
                    log.retries, e),
                log.retries, getattr(e, "status_code", None)) from e
        except openai.APIError as e:
            raise ProviderError(
                str(e), log.retries, getattr(e, "status_code", None)) from e

        data = sorted(response.data, key=lambda item: item.index)
        if len(data) != len(texts):
            raise MalformedResponse("asked for {} embeddings, got {}".format(
                len(texts), len(data)), log.retries)
        try:
            vectors = [as_vector(item.embedding, self.dim) for item in data]
        except (ValueError, DimMismatch) as e:
            raise MalformedResponse(str(e), log.retries) from e
        if self.dim is None:
            self.dim = vectors[0].shape[0]
        logger.debug("embedded %d texts (%d retries)", len(texts), log.retries)
        return vectors


async def embed(provider, text):
    """
    Embed a single text.

    The text is whitespace-normalized first, so texts differing only in
    spacing share one embedding.

    Raises
    ------
    EmptyText
    ZeroVector
        If the provider returned an all-zero vector.
    ProviderError
    """
    text = normalize_text(text)
    if not text:
        raise EmptyText("cannot embed an empty text")
    vector = as_vector((await provider.embed_batch([text]))[0], provider.dim)
    if not np.any(vector):
        raise ZeroVector("provider {!r} returned an all-zero vector".format(
            provider.provider_id))
    return vector
