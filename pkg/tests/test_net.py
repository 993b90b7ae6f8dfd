import pytest
import requests

from kglab.errors import TransportError
from kglab.net import (RETRYABLE_STATUSES, RateLimiter, post_json_with_retries)


def make_transport(script):
    """script: list of (status, body) pairs or exceptions, consumed in order."""
    calls = []

    def transport(url, payload, headers, timeout):
        calls.append((url, payload, headers, timeout))
        step = script[min(len(calls) - 1, len(script) - 1)]
        if isinstance(step, Exception):
            raise step
        return step

    transport.calls = calls
    return transport


def test_success_first_try_makes_one_request():
    t = make_transport([(200, {"ok": True})])
    body, retries = post_json_with_retries(
        t, "http://x/api", {"a": 1}, {"H": "v"}, 5.0,
        max_retries=3, backoff_base=0.1, sleep=lambda s: None)
    assert body == {"ok": True}
    assert retries == 0
    assert t.calls == [("http://x/api", {"a": 1}, {"H": "v"}, 5.0)]


def test_retryable_status_backs_off_exponentially():
    t = make_transport([(429, None), (503, None), (200, {"ok": 1})])
    sleeps = []
    body, retries = post_json_with_retries(
        t, "u", {}, {}, 1.0, max_retries=5, backoff_base=0.1,
        sleep=sleeps.append)
    assert body == {"ok": 1}
    assert retries == 2
    assert sleeps == pytest.approx([0.1, 0.2])


def test_non_retryable_status_fails_immediately():
    t = make_transport([(401, {"error": "nope"})])
    with pytest.raises(TransportError) as err:
        post_json_with_retries(t, "u", {}, {}, 1.0, max_retries=5,
                               backoff_base=0.1, sleep=lambda s: None)
    assert err.value.status == 401
    assert err.value.retries == 0
    assert len(t.calls) == 1


def test_retries_exhaust_with_status():
    t = make_transport([(500, None)])
    with pytest.raises(TransportError) as err:
        post_json_with_retries(t, "u", {}, {}, 1.0, max_retries=2,
                               backoff_base=0.01, sleep=lambda s: None)
    assert err.value.status == 500
    assert err.value.retries == 2
    assert len(t.calls) == 3  # initial + two retries


def test_connection_errors_are_transient():
    t = make_transport([requests.ConnectionError("down"),
                        TimeoutError("slow"),
                        (200, {"ok": 1})])
    body, retries = post_json_with_retries(
        t, "u", {}, {}, 1.0, max_retries=3, backoff_base=0.1,
        sleep=lambda s: None)
    assert body == {"ok": 1}
    assert retries == 2


def test_connection_errors_exhaust():
    t = make_transport([requests.Timeout("slow")])
    with pytest.raises(TransportError) as err:
        post_json_with_retries(t, "u", {}, {}, 1.0, max_retries=1,
                               backoff_base=0.1, sleep=lambda s: None)
    assert err.value.retries == 1
    assert err.value.status is None


def test_retryable_status_set():
    assert RETRYABLE_STATUSES == {429, 500, 502, 503, 504}


def test_rate_limiter_spaces_requests():
    fake_now = [0.0]
    sleeps = []

    def clock():
        return fake_now[0]

    def sleep(s):
        sleeps.append(s)
        fake_now[0] += s

    rl = RateLimiter(0.1, clock=clock, sleep=sleep)
    rl.wait()                 # first call never sleeps
    assert sleeps == []
    rl.wait()                 # immediate second call waits the full interval
    assert sleeps == pytest.approx([0.1])
    fake_now[0] += 0.05
    rl.wait()                 # partial elapse waits the remainder
    assert sleeps == pytest.approx([0.1, 0.05])
    fake_now[0] += 1.0
    rl.wait()                 # enough time passed, no sleep
    assert len(sleeps) == 2


def test_rate_limiter_zero_interval_is_noop():
    rl = RateLimiter(0.0, clock=lambda: 0.0,
                     sleep=lambda s: pytest.fail("must not sleep"))
    rl.wait()
    rl.wait()


def test_limiter_applies_before_each_attempt():
    waits = []

    class SpyLimiter(RateLimiter):
        def wait(self):
            waits.append(1)

    t = make_transport([(429, None), (200, {})])
    post_json_with_retries(t, "u", {}, {}, 1.0, max_retries=2,
                           backoff_base=0.01, sleep=lambda s: None,
                           limiter=SpyLimiter(0.1))
    assert len(waits) == 2
