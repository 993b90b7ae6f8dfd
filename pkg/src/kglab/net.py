"""HTTP plumbing shared by the remote embedding and chat clients.

Transports are injectable: a transport is ``callable(url, payload, headers,
timeout) -> (status_code, body_dict)``. Tests substitute canned transports;
the default uses requests. Retry state is per-request, so concurrent in-flight
calls do not interfere.
"""

from __future__ import annotations

import time

import requests

from .errors import TransportError

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})
TRANSIENT_EXCEPTIONS = (requests.ConnectionError, requests.Timeout,
                        ConnectionError, TimeoutError)


def requests_transport(url, payload, headers, timeout):
    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    try:
        body = resp.json()
    except ValueError:
        body = None
    return resp.status_code, body


class RateLimiter:
    """Client-side request-rate ceiling: at most one request per interval."""

    def __init__(self, min_interval: float, clock=time.monotonic, sleep=time.sleep):
        self.min_interval = min_interval
        self._clock = clock
        self._sleep = sleep
        self._last = None

    def wait(self):
        if self.min_interval <= 0:
            return
        now = self._clock()
        if self._last is not None:
            remaining = self._last + self.min_interval - now
            if remaining > 0:
                self._sleep(remaining)
                now = self._clock()
        self._last = now


def post_json_with_retries(transport, url, payload, headers, timeout,
                           max_retries, backoff_base, sleep=time.sleep,
                           limiter: RateLimiter | None = None):
    """POST with exponential backoff on transient failures.

    Returns (body, retries_used). Non-retryable statuses fail immediately;
    retryable ones back off ``backoff_base * 2**attempt`` seconds between
    attempts, up to ``max_retries`` retries after the first request.
    """
    attempt = 0
    while True:
        if limiter is not None:
            limiter.wait()
        status = None
        try:
            status, body = transport(url, payload, headers, timeout)
        except TRANSIENT_EXCEPTIONS as exc:
            if attempt >= max_retries:
                raise TransportError(
                    f"request to {url} failed after {attempt} retries: {exc}",
                    retries=attempt,
                ) from exc
        else:
            if 200 <= status < 300:
                return body, attempt
            if status not in RETRYABLE_STATUSES:
                raise TransportError(
                    f"request to {url} failed with non-retryable status {status}",
                    status=status, retries=attempt,
                )
            if attempt >= max_retries:
                raise TransportError(
                    f"request to {url} still failing (status {status}) "
                    f"after {attempt} retries",
                    status=status, retries=attempt,
                )
        sleep(backoff_base * (2 ** attempt))
        attempt += 1
