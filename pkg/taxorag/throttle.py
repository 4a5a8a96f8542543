"""
Request pacing shared by the embedding and chat providers: a token bucket
rate limit, an in-flight request cap and exponential-backoff retries.
"""

import asyncio
import logging

import backoff

__all__ = [
    "TokenBucket",
    "Throttle",
    "RetryLog",
    "retrying",
]

logger = logging.getLogger(__name__)


class TokenBucket(object):
    """
    A token bucket rate limit driven by the running event loop's clock.

    Tokens accrue at ``rate`` per second up to ``capacity``; every
    :py:meth:`acquire` spends one, waiting for it to accrue if necessary.
    The bucket starts full so a burst of up to ``capacity`` requests passes
    immediately.

    Parameters
    ----------
    rate : float or None
        Tokens per second. ``None`` disables the limit.
    capacity : float
        The largest burst permitted.
    """

    def __init__(self, rate=None, capacity=1.0):
        if rate is not None and rate <= 0:
            raise ValueError("rate must be positive")
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.rate = rate
        self.capacity = capacity
        self._tokens = capacity
        self._last_refill = None
        self._lock = asyncio.Lock()

    def _refill(self, now):
        if self._last_refill is not None:
            elapsed = now - self._last_refill
            self._tokens = min(self.capacity, self._tokens + elapsed * self.rate)
        self._last_refill = now

    async def acquire(self):
        """
        Take one token, sleeping until one is available.

        Returns
        -------
        float
            The number of seconds spent waiting.
        """
        if self.rate is None:
            return 0.0

        loop = asyncio.get_running_loop()
        start = loop.time()
        async with self._lock:
            while True:
                now = loop.time()
                self._refill(now)
                if self._tokens >= 1:
                    self._tokens -= 1
                    return now - start
                await asyncio.sleep((1 - self._tokens) / self.rate)


class Throttle(object):
    """
    Async context manager combining an in-flight request cap with a
    :py:class:`TokenBucket`. One instance is owned by each provider.

    Parameters
    ----------
    max_in_flight : int or None
        Most concurrent requests permitted, ``None`` for no cap.
    rate : float or None
        Requests per second, ``None`` for no limit.
    burst : float
        Token bucket capacity.
    """

    def __init__(self, max_in_flight=None, rate=None, burst=1.0):
        if max_in_flight is not None and max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")
        self.max_in_flight = max_in_flight
        self._semaphore = (
            asyncio.Semaphore(max_in_flight) if max_in_flight else None)
        self.bucket = TokenBucket(rate, burst)
        self.in_flight = 0

    async def __aenter__(self):
        if self._semaphore is not None:
            await self._semaphore.acquire()
        try:
            await self.bucket.acquire()
        except BaseException:
            if self._semaphore is not None:
                self._semaphore.release()
            raise
        self.in_flight += 1
        return self

    async def __aexit__(self, exc_type, exc, tb):
        self.in_flight -= 1
        if self._semaphore is not None:
            self._semaphore.release()


class RetryLog(object):
    """The retry history of one logical call."""

    def __init__(self):
        self.delays = []

    @property
    def retries(self):
        return len(self.delays)


async def retrying(call, retry_on, log=None, max_tries=5, base_delay=0.5,
                   max_delay=8.0, description="request"):
    """
    Await ``call()``, retrying transient failures with exponential backoff.

    Delays are ``base_delay * 2 ** n`` capped at ``max_delay`` with no
    jitter, so they never decrease across the retries of one call.

    Parameters
    ----------
    call : coroutine function
        Called with no arguments for every attempt.
    retry_on : exception type or tuple of types
        Failures worth retrying. Anything else propagates immediately.
    log : :py:class:`RetryLog` or None
        Receives each delay taken. Inspect it after a failure to find out
        how many retries were spent.
    max_tries : int
        Total attempts, including the first.
    description : str
        Used in log messages.

    Raises
    ------
    The last exception raised by ``call`` once ``max_tries`` is spent.
    """
    if log is None:
        log = RetryLog()

    def on_backoff(details):
        log.delays.append(details["wait"])
        logger.warning(
            "%s failed (%s), retry %d in %.3fs",
            description, details["exception"], details["tries"],
            details["wait"])

    @backoff.on_exception(
        backoff.expo,
        retry_on,
        max_tries=max_tries,
        jitter=None,
        factor=base_delay,
        max_value=max_delay,
        on_backoff=on_backoff,
        logger=None,
    )
    async def attempt():
        return await call()

    return await attempt()
