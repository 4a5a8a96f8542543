"""
Chat completion providers: an OpenAI-compatible HTTP client with retries and
rate limiting, plus two deterministic offline providers.
"""

import abc
import asyncio
import collections
import collections.abc
import json
import logging
import re
from dataclasses import dataclass, field

import openai
from pydantic import BaseModel, Field, PositiveInt

from taxorag.errors import (
    ProviderError, ProviderExhausted, AuthError, MalformedResponse)
from taxorag.throttle import Throttle, RetryLog, retrying

__all__ = [
    "GenerationConfig",
    "ChatRequest",
    "ChatExchange",
    "ChatProvider",
    "ScriptedProvider",
    "CandidateEchoProvider",
    "OpenAIChatProvider",
    "complete",
    "AuditLog",
]

logger = logging.getLogger(__name__)

TRANSIENT_ERRORS = (
    openai.RateLimitError,
    openai.InternalServerError,
    openai.APIConnectionError,
)


class GenerationConfig(BaseModel):
    """Sampling parameters sent with every chat request."""

    temperature: float = Field(0.4, ge=0.0)
    top_p: float = Field(0.4, gt=0.0, le=1.0)
    max_tokens: PositiveInt = 32
    model: str = "gpt-3.5-turbo"


@dataclass(frozen=True)
class ChatRequest:
    """
    One chat call. ``candidates``, ``document_id`` and ``level`` are context
    for logging and for the offline providers; they are never sent over the
    wire.
    """
    system_text: str
    user_text: str
    candidates: tuple = ()
    document_id: object = None
    level: object = None


@dataclass(frozen=True)
class ChatExchange:
    """
    A completed chat call. ``response_text`` is the provider's output
    verbatim.
    """
    system_text: str
    user_text: str
    response_text: str
    latency: float
    provider_meta: dict = field(default_factory=dict)
    document_id: object = None
    level: object = None

    def to_record(self):
        return {
            "document_id": self.document_id,
            "level": self.level,
            "system": self.system_text,
            "user": self.user_text,
            "response": self.response_text,
            "latency": self.latency,
            "provider_meta": self.provider_meta,
        }


class ChatProvider(abc.ABC):
    """
    Base class of chat providers. Subclasses implement :py:meth:`_complete`;
    callers use :py:meth:`complete`. A provider instance may be shared by any
    number of concurrent tasks.
    """

    provider_id = None

    async def complete(self, request, config):
        """
        Run one chat call.

        Parameters
        ----------
        request : :py:class:`ChatRequest`
        config : :py:class:`GenerationConfig`

        Returns
        -------
        :py:class:`ChatExchange`

        Raises
        ------
        ValueError
            If either prompt part is empty.
        ProviderError
        """
        if not request.system_text or not request.user_text:
            raise ValueError("system and user text must both be non-empty")

        loop = asyncio.get_running_loop()
        start = loop.time()
        text, meta = await self._complete(request, config)
        return ChatExchange(
            system_text=request.system_text,
            user_text=request.user_text,
            response_text=text,
            latency=loop.time() - start,
            provider_meta=meta,
            document_id=request.document_id,
            level=request.level,
        )

    @abc.abstractmethod
    async def _complete(self, request, config):
        """Return ``(response_text, provider_meta)``."""


class _RecordingProvider(ChatProvider):
    """Offline providers keep every request they receive in ``requests``."""

    def __init__(self):
        self.requests = []

    async def complete(self, request, config):
        self.requests.append(request)
        return await super().complete(request, config)


class ScriptedProvider(_RecordingProvider):
    """
    Plays back canned responses.

    Parameters
    ----------
    responses : sequence, mapping or callable
        * A sequence is consumed in call order.
        * A mapping is keyed by ``(document_id, level)``.
        * A callable is called with each :py:class:`ChatRequest`.
    default : str or None
        Returned once a sequence is exhausted or when a key is missing from
        a mapping. If ``None`` those cases raise
        :py:class:`~taxorag.errors.ProviderExhausted`.
    """

    provider_id = "scripted"

    def __init__(self, responses=(), default=None):
        super().__init__()
        self.default = default
        self._function = None
        self._mapping = None
        self._queue = None
        if callable(responses):
            self._function = responses
        elif isinstance(responses, collections.abc.Mapping):
            self._mapping = dict(responses)
        else:
            self._queue = collections.deque(responses)

    async def _complete(self, request, config):
        if self._function is not None:
            text = self._function(request)
        elif self._mapping is not None:
            text = self._mapping.get(
                (request.document_id, request.level), self.default)
        else:
            text = self._queue.popleft() if self._queue else self.default

        if text is None:
            raise ProviderExhausted("no scripted response for document {!r} "
                                    "level {!r}".format(request.document_id,
                                                        request.level))
        return str(text), {"provider": self.provider_id}


class CandidateEchoProvider(_RecordingProvider):
    """
    Behaves like a perfect bag-of-words classifier over the offered
    candidates: answers with the candidate sharing the most distinct word
    tokens with the user text, the earliest listed candidate winning ties.
    """

    provider_id = "candidate-echo"

    _TOKEN = re.compile(r"\w+")

    @classmethod
    def tokens(cls, text):
        return set(cls._TOKEN.findall(str(text).lower()))

    async def _complete(self, request, config):
        if not request.candidates:
            raise MalformedResponse("candidate-echo needs candidates to echo")
        words = self.tokens(request.user_text)
        best, best_overlap = None, -1
        for candidate in request.candidates:
            name = getattr(candidate, "name", candidate)
            overlap = len(self.tokens(name) & words)
            if overlap > best_overlap:
                best, best_overlap = name, overlap
        return best, {"provider": self.provider_id, "overlap": best_overlap}


class OpenAIChatProvider(ChatProvider):
    """
    Chat completions from an endpoint speaking the OpenAI chat API.

    Requests are ``POST {base_url}/chat/completions`` with a system and a user
    message. 429, 5xx and connection failures are retried with exponential
    backoff; the number of retries and the delays taken are reported in
    ``provider_meta``.

    Parameters
    ----------
    api_key : str
    base_url : str or None
    max_tries : int
        Attempts per call, including the first.
    base_delay, max_delay : float
        Backoff schedule, see :py:func:`taxorag.throttle.retrying`.
    timeout : float
        Per-request timeout in seconds.
    throttle : :py:class:`~taxorag.throttle.Throttle` or None
        Shared in-flight cap and rate limit.
    http_client : httpx.AsyncClient or None
    """

    provider_id = "openai"

    def __init__(self, api_key=None, base_url=None, max_tries=5,
                 base_delay=0.5, max_delay=8.0, timeout=30.0, throttle=None,
                 http_client=None):
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

    async def _request(self, request, config):
        async with self.throttle:
            return await self._client.chat.completions.create(
                model=config.model,
                messages=[
                    {"role": "system", "content": request.system_text},
                    {"role": "user", "content": request.user_text},
                ],
                temperature=config.temperature,
                top_p=config.top_p,
                max_tokens=config.max_tokens,
            )

    async def _complete(self, request, config):
        log = RetryLog()
        try:
            response = await retrying(
                lambda: self._request(request, config),
                TRANSIENT_ERRORS,
                log=log,
                max_tries=self.max_tries,
                base_delay=self.base_delay,
                max_delay=self.max_delay,
                description="chat request (document {!r}, level {!r})".format(
                    request.document_id, request.level))
        except openai.AuthenticationError as e:
            raise AuthError(str(e), log.retries, e.status_code) from e
        except TRANSIENT_ERRORS as e:
            raise ProviderExhausted(
                "chat request failed after {} retries: {}".format(
                    log.retries, e),
                log.retries, getattr(e, "status_code", None)) from e
        except openai.APIError as e:
            raise ProviderError(
                str(e), log.retries, getattr(e, "status_code", None)) from e

        if not response.choices:
            raise MalformedResponse("response has no choices", log.retries)
        content = response.choices[0].message.content
        if not isinstance(content, str):
            raise MalformedResponse("first choice has no text content",
                                    log.retries)

        meta = {
            "provider": self.provider_id,
            "model": response.model,
            "retries": log.retries,
            "delays": list(log.delays),
        }
        if response.usage is not None:
            meta["usage"] = {
                "prompt_tokens": response.usage.prompt_tokens,
                "completion_tokens": response.usage.completion_tokens,
            }
        logger.debug("chat completion for document %r level %r after %d "
                     "retries", request.document_id, request.level,
                     log.retries)
        return content, meta


async def complete(provider, system_text, user_text, config, **context):
    """
    Convenience wrapper: build a :py:class:`ChatRequest` from the prompt parts
    (and any ``candidates``/``document_id``/``level`` context) and run it.
    """
    return await provider.complete(
        ChatRequest(system_text, user_text, **context), config)


class AuditLog(object):
    """
    Appends every :py:class:`ChatExchange` it is given to a JSON-lines file.
    Writes from concurrent tasks are serialized.
    """

    def __init__(self, path):
        self.path = path
        self._lock = asyncio.Lock()

    async def record(self, exchange):
        line = json.dumps(exchange.to_record(), sort_keys=True, default=str)
        async with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
