"""Completion backends.

Everything that talks to a language model goes through ``Backend.complete``.
The HTTP backend speaks a minimal JSON shape; the replay backend serves
responses recorded earlier, keyed by a digest of prompt and parameters.
"""

import hashlib
import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Optional

from .errors import IoError, MalformedResponseError, QuotaError, TransportError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    num_samples: int = 1
    max_output_len: int = 256
    stop_sequences: tuple = ()
    seed: Optional[int] = None

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))

    @property
    def effective_samples(self):
        # greedy decoding gives the same string every time
        return 1 if self.temperature == 0 else self.num_samples

    def params(self):
        return {
            "temperature": self.temperature,
            "n": self.effective_samples,
            "max_tokens": self.max_output_len,
            "stop": list(self.stop_sequences),
        }

    def digest(self):
        payload = json.dumps({"prompt": self.prompt, **self.params()}, sort_keys=True,
                             ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Sample:
    text: str
    logprob: Optional[float] = None


@dataclass(frozen=True)
class CompletionResponse:
    samples: tuple
    model_id: str = ""
    usage: dict = field(default_factory=dict, compare=False)

    @property
    def texts(self):
        return [s.text for s in self.samples]


def postprocess(text, stop_sequences=()):
    """Cut at the earliest stop sequence and strip surrounding whitespace."""
    cut = len(text)
    for stop in stop_sequences:
        if stop:
            i = text.find(stop)
            if i != -1:
                cut = min(cut, i)
    return text[:cut].strip()


def _finish(request, samples, model_id="", usage=None):
    if len(samples) != request.effective_samples:
        raise MalformedResponseError(
            f"expected {request.effective_samples} samples, backend returned {len(samples)}")
    done = tuple(Sample(postprocess(s.text, request.stop_sequences), s.logprob) for s in samples)
    return CompletionResponse(done, model_id, usage or {})


class Backend:
    model_id = ""

    def complete(self, request):
        raise NotImplementedError


class HttpBackend(Backend):
    """JSON-over-HTTP completion endpoint with bounded exponential backoff."""

    def __init__(self, url, api_key=None, model_id="", timeout=60.0, max_retries=5,
                 base_delay=1.0, max_delay=30.0, sleep=time.sleep, opener=None):
        self.url = url
        self.api_key = api_key
        self.model_id = model_id
        self.timeout = timeout
        self.max_retries = max_retries
        self.base_delay = base_delay
        self.max_delay = max_delay
        self.sleep = sleep
        self.opener = opener or urllib.request.urlopen
        self.last_retry_count = 0

    def _post(self, body):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.url, data=json.dumps(body).encode("utf-8"),
                                     headers=headers, method="POST")
        with self.opener(req, timeout=self.timeout) as resp:
            return resp.read()

    def complete(self, request):
        body = {"prompt": request.prompt, **request.params()}
        if self.model_id:
            body["model"] = self.model_id
        if request.seed is not None:
            body["seed"] = request.seed
        retries = 0
        while True:
            try:
                raw = self._post(body)
                break
            except urllib.error.HTTPError as exc:
                status = exc.code
                retryable = status == 429 or status >= 500
                if not retryable:
                    raise TransportError(f"HTTP {status} from {self.url}", retryable=False) from exc
                if retries >= self.max_retries:
                    if status == 429:
                        raise QuotaError(f"rate limited after {retries} retries") from exc
                    raise TransportError(f"HTTP {status} after {retries} retries") from exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                if retries >= self.max_retries:
                    raise TransportError(f"{self.url}: {exc}") from exc
            delay = min(self.max_delay, self.base_delay * 2 ** retries)
            retries += 1
            log.info("retry %d for %s in %.2fs", retries, self.url, delay)
            self.sleep(delay)
        self.last_retry_count = retries
        if retries:
            log.info("request succeeded after %d retries", retries)
        try:
            payload = json.loads(raw)
            choices = payload["choices"]
            samples = [Sample(str(c["text"]), c.get("logprob")) for c in choices]
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedResponseError(f"bad response body: {exc}") from exc
        return _finish(request, samples, payload.get("model", self.model_id),
                       payload.get("usage", {}))


class CallableBackend(Backend):
    """Wrap ``fn(request) -> list of str or (str, logprob)``; handy in tests."""

    def __init__(self, fn, model_id="callable"):
        self.fn = fn
        self.model_id = model_id

    def complete(self, request):
        out = []
        for item in self.fn(request):
            if isinstance(item, Sample):
                out.append(item)
            elif isinstance(item, (tuple, list)):
                out.append(Sample(item[0], item[1]))
            else:
                out.append(Sample(item))
        return _finish(request, out, self.model_id)


def _record(request, response):
    return {
        "key": request.digest(),
        "prompt": request.prompt,
        "params": request.params(),
        "model_id": response.model_id,
        "samples": [{"text": s.text, "logprob": s.logprob} for s in response.samples],
    }


class RecordingBackend(Backend):
    """Pass requests through and append each exchange to a JSONL file."""

    def __init__(self, inner, path):
        self.inner = inner
        self.path = path
        self.model_id = inner.model_id
        self._lock = threading.Lock()
        try:
            open(path, "a", encoding="utf-8").close()
        except OSError as exc:
            raise IoError(f"cannot write recording {path}: {exc}") from exc

    def complete(self, request):
        response = self.inner.complete(request)
        line = json.dumps(_record(request, response), sort_keys=True, ensure_ascii=False)
        with self._lock:
            try:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
            except OSError as exc:
                raise IoError(f"cannot append to {self.path}: {exc}") from exc
        return response


class ReplayBackend(Backend):
    """Serve only recorded responses. Unknown requests are an error."""

    def __init__(self, records=(), model_id="replay"):
        self.model_id = model_id
        self._table = {}
        for rec in records:
            # first recording wins so replays are stable under appends
            self._table.setdefault(rec["key"], rec)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                records = [json.loads(line) for line in fh if line.strip()]
        except OSError as exc:
            raise IoError(f"cannot read recording {path}: {exc}") from exc
        except ValueError as exc:
            raise MalformedResponseError(f"corrupt recording {path}: {exc}") from exc
        return cls(records)

    def __len__(self):
        return len(self._table)

    def complete(self, request):
        key = request.digest()
        rec = self._table.get(key)
        if rec is None:
            raise MalformedResponseError(f"no recording for request digest {key}")
        samples = [Sample(s["text"], s.get("logprob")) for s in rec["samples"]]
        return _finish(request, samples, rec.get("model_id") or self.model_id)


def record_session(path, inner):
    return RecordingBackend(inner, path)


def replay_session(path):
    return ReplayBackend.from_file(path)


def write_recordings(path, exchanges):
    """Write (request, list-of-texts) pairs as a replay file."""
    with open(path, "w", encoding="utf-8") as fh:
        for request, texts in exchanges:
            samples = tuple(Sample(t) if isinstance(t, str) else Sample(*t) for t in texts)
            rec = _record(request, CompletionResponse(samples, "replay"))
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


class TokenBucket:
    def __init__(self, rate, burst=1, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = max(1, burst)
        self.tokens = float(self.capacity)
        self.clock = clock
        self.sleep = sleep
        self.stamp = clock()
        self._lock = threading.Lock()

    def acquire(self):
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.stamp) * self.rate)
                self.stamp = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            self.sleep(wait)


class ThrottledBackend(Backend):
    """Cap in-flight requests and optionally their rate."""

    def __init__(self, inner, parallelism=4, rate_per_s=None):
        self.inner = inner
        self.model_id = inner.model_id
        self._sem = threading.BoundedSemaphore(max(1, parallelism))
        self._bucket = TokenBucket(rate_per_s, burst=parallelism) if rate_per_s else None

    def complete(self, request):
        if self._bucket is not None:
            self._bucket.acquire()
        with self._sem:
            return self.inner.complete(request)


def backend_from_settings(settings):
    """Build a backend from a mapping (see the ``backend`` config section)."""
    kind = settings.get("kind", "replay")
    if kind == "replay":
        backend = replay_session(settings["recording"])
    elif kind == "http":
        key = settings.get("api_key") or os.environ.get(settings.get("api_key_env", "SQLHARNESS_API_KEY"))
        backend = HttpBackend(settings["url"], api_key=key, model_id=settings.get("model_id", ""),
                              timeout=float(settings.get("timeout", 60)),
                              max_retries=int(settings.get("max_retries", 5)))
    else:
        raise ValueError(f"unknown backend kind {kind!r}")
    if settings.get("record_to"):
        backend = record_session(settings["record_to"], backend)
    par = settings.get("parallelism")
    rate = settings.get("rate_per_s")
    if par or rate:
        backend = ThrottledBackend(backend, int(par or 4), rate)
    return backend
