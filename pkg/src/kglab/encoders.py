"""Text encoders: feature hashing, embedding-store files, remote services.

Every provider turns a token sequence into a fixed-width float vector and
declares whether repeated calls are reproducible. The trainable models only
ever see vectors, so providers are interchangeable at fit/eval time.

Also hosts the log-probability providers used by the generation scorer; they
share the "plug a backend in" shape even though they emit distributions
rather than vectors.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigurationError, DataFormatError,
                     DimensionMismatchError, MissingKeyError)
from .net import RateLimiter, post_json_with_retries, requests_transport
from .serialize import TokenSequence, token_key


class EncoderProvider:
    """Base for anything that maps token sequences to vectors."""

    dimension: int
    deterministic: bool = True

    def encode(self, seq: TokenSequence) -> np.ndarray:
        raise NotImplementedError

    def encode_batch(self, seqs) -> np.ndarray:
        if not seqs:
            return np.zeros((0, self.dimension))
        return np.stack([self.encode(s) for s in seqs])


def hash_token(key: str, seed: int) -> tuple[int, float]:
    """Stable (bucket, sign) for one token key under a seed.

    blake2b keeps this reproducible across processes and platforms, unlike
    the builtin hash which is salted per interpreter run.
    """
    digest = hashlib.blake2b(f"{seed}|{key}".encode("utf-8"),
                             digest_size=16).digest()
    bucket = int.from_bytes(digest[:8], "big")
    sign = 1.0 if digest[8] % 2 == 0 else -1.0
    return bucket, sign


def hash_encode(seq: TokenSequence, dimension: int, seed: int = 0) -> np.ndarray:
    """Signed feature hashing over the sequence's tokens, L2-normalized.

    Special tokens hash through their distinguishing keys so [SEP] never
    collides with the literal text "[SEP]". An all-zero accumulation (only
    possible through sign cancellation) falls back to the first basis vector
    so downstream cosine math never divides by zero.
    """
    if dimension < 2:
        raise ConfigurationError("hash encoder dimension must be >= 2")
    vec = np.zeros(dimension)
    for tok in seq.items:
        bucket, sign = hash_token(token_key(tok), seed)
        vec[bucket % dimension] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec = np.zeros(dimension)
        vec[0] = 1.0
        return vec
    return vec / norm


class HashEncoder(EncoderProvider):
    deterministic = True

    def __init__(self, dimension: int = 256, seed: int = 0):
        if dimension <= 0:
            raise ConfigurationError("hash encoder dimension must be positive")
        self.dimension = dimension
        self.seed = seed

    def encode(self, seq: TokenSequence) -> np.ndarray:
        return hash_encode(seq, self.dimension, self.seed)


# --- embedding-store files ---------------------------------------------------

def format_vector(vec: np.ndarray) -> str:
    # repr of a Python float is the shortest round-tripping decimal, which
    # keeps store files byte-stable across writes of the same data
    return " ".join(repr(float(x)) for x in vec)


def write_store(path, dimension: int, items) -> None:
    """Write "d=<dim>" header then one "key\\tv1 v2 ..." row per item."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"d={dimension}\n")
        for key, vec in items:
            f.write(f"{key}\t{format_vector(vec)}\n")


def parse_store_header(line: str, path=None) -> int:
    if not line.startswith("d=") :
        raise DataFormatError("embedding store must start with a d=<dim> header",
                              path=path, line=1)
    try:
        dim = int(line[2:].strip())
    except ValueError:
        raise DataFormatError(f"bad dimension in header {line.strip()!r}",
                              path=path, line=1) from None
    if dim <= 0:
        raise DataFormatError("embedding store dimension must be positive",
                              path=path, line=1)
    return dim


def read_store(path) -> tuple[int, dict[str, np.ndarray]]:
    vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        if not first:
            raise DataFormatError("embedding store is empty", path=path, line=1)
        dim = parse_store_header(first, path=path)
        for lineno, raw in enumerate(f, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            key, sep, body = line.partition("\t")
            if not sep or not key:
                raise DataFormatError("expected key<TAB>values",
                                      path=path, line=lineno)
            try:
                values = [float(x) for x in body.split()]
            except ValueError:
                raise DataFormatError("non-numeric vector component",
                                      path=path, line=lineno) from None
            if len(values) != dim:
                raise DataFormatError(
                    f"vector has {len(values)} components, header says {dim}",
                    path=path, line=lineno)
            vectors[key] = np.asarray(values)
    return dim, vectors


class EmbeddingStore:
    """In-memory key -> vector table with a plain-text file format."""

    def __init__(self, dimension: int, vectors: dict[str, np.ndarray] | None = None):
        self.dimension = dimension
        self.vectors: dict[str, np.ndarray] = {}
        if vectors:
            for key, vec in vectors.items():
                self.put(key, vec)

    def put(self, key: str, vec) -> None:
        arr = np.asarray(vec, dtype=float)
        if arr.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"vector for {key!r} has shape {arr.shape}, "
                f"store dimension is {self.dimension}")
        self.vectors[key] = arr

    def get(self, key: str) -> np.ndarray:
        try:
            return self.vectors[key]
        except KeyError:
            raise MissingKeyError(key) from None

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def save(self, path) -> None:
        write_store(path, self.dimension, self.vectors.items())

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        dim, vectors = read_store(path)
        store = cls(dim)
        store.vectors = vectors
        return store


class FileStoreEncoder(EncoderProvider):
    """Serve precomputed vectors from an embedding store.

    Sequences are keyed by their rendered text, so whoever produced the store
    must have rendered with the same serialization settings. Missing keys are
    an error rather than a silent zero vector.
    """

    deterministic = True

    def __init__(self, store: EmbeddingStore, key_fn=None):
        self.store = store
        self.dimension = store.dimension
        self._key_fn = key_fn if key_fn is not None else lambda seq: seq.render()

    def encode(self, seq: TokenSequence) -> np.ndarray:
        return self.store.get(self._key_fn(seq))


# --- remote embedding service -----------------------------------------------

ENV_API_BASE = "KGLAB_API_BASE"
ENV_API_KEY = "KGLAB_API_KEY"


@dataclass
class RemoteConfig:
    api_base: str
    api_key: str = ""
    model: str = "text-embedding"
    batch_size: int = 16
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.1
    min_interval: float = 0.1  # 1 request per 100 ms unless configured otherwise

    def __post_init__(self):
        if not self.api_base:
            raise ConfigurationError("remote API base URL is empty")
        if self.batch_size <= 0:
            raise ConfigurationError("batch_size must be positive")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")

    @classmethod
    def from_env(cls, **overrides) -> "RemoteConfig":
        base = os.environ.get(ENV_API_BASE, "")
        if not base:
            raise ConfigurationError(
                f"set {ENV_API_BASE} to use the remote encoder")
        key = os.environ.get(ENV_API_KEY, "")
        return cls(api_base=base, api_key=key, **overrides)

    def url(self, route: str) -> str:
        return self.api_base.rstrip("/") + "/" + route.lstrip("/")

    def headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers


class RemoteEncoder(EncoderProvider):
    """Embedding client for an OpenAI-style /embeddings endpoint.

    Requests go out as {"model": ..., "input": [texts]}; the response carries
    {"data": [{"index": i, "embedding": [...]}]}. Rows come back in index
    order regardless of how the server ordered them. Not flagged deterministic:
    the service behind the URL makes no such promise.
    """

    deterministic = False

    def __init__(self, config: RemoteConfig, transport=None, sleep=None,
                 clock=None):
        import time as _time
        self.config = config
        self._transport = transport if transport is not None else requests_transport
        self._sleep = sleep if sleep is not None else _time.sleep
        self._limiter = RateLimiter(config.min_interval,
                                    clock=clock if clock is not None else _time.monotonic,
                                    sleep=self._sleep)
        self.dimension = 0  # learned from the first response
        self.last_retry_count = 0

    def _post(self, payload):
        body, retries = post_json_with_retries(
            self._transport, self.config.url("embeddings"), payload,
            self.config.headers(), self.config.timeout,
            self.config.max_retries, self.config.backoff_base,
            sleep=self._sleep, limiter=self._limiter)
        self.last_retry_count = retries
        return body

    def encode_batch(self, seqs) -> np.ndarray:
        texts = [s.render() if isinstance(s, TokenSequence) else str(s)
                 for s in seqs]
        rows: list[np.ndarray] = []
        for start in range(0, len(texts), self.config.batch_size):
            chunk = texts[start:start + self.config.batch_size]
            body = self._post({"model": self.config.model, "input": chunk})
            if not isinstance(body, dict) or "data" not in body:
                raise DataFormatError("embedding response has no data field")
            data = sorted(body["data"], key=lambda item: item["index"])
            if len(data) != len(chunk):
                raise DataFormatError(
                    f"asked for {len(chunk)} embeddings, got {len(data)}")
            for item in data:
                vec = np.asarray(item["embedding"], dtype=float)
                if self.dimension == 0:
                    self.dimension = vec.shape[0]
                if vec.shape != (self.dimension,):
                    raise DimensionMismatchError(
                        f"embedding rows disagree on width: {vec.shape[0]} "
                        f"vs {self.dimension}")
                rows.append(vec)
        if not rows:
            return np.zeros((0, self.dimension))
        return np.stack(rows)

    def encode(self, seq: TokenSequence) -> np.ndarray:
        return self.encode_batch([seq])[0]


# --- log-probability providers ----------------------------------------------

class LogProbProvider:
    """Next-token distributions for the generation scorer and decoder.

    ``next_logprobs(prefix)`` returns {token: log p} over the full vocabulary
    given a tuple of already-emitted tokens. Distributions must sum to one in
    probability space.
    """

    vocabulary: tuple[str, ...]

    def next_logprobs(self, prefix: tuple[str, ...]) -> dict[str, float]:
        raise NotImplementedError


class UniformLogProb(LogProbProvider):
    def __init__(self, vocabulary):
        self.vocabulary = tuple(vocabulary)
        if not self.vocabulary:
            raise ConfigurationError("vocabulary is empty")
        self._lp = -math.log(len(self.vocabulary))

    def next_logprobs(self, prefix):
        return {tok: self._lp for tok in self.vocabulary}


class TableLogProb(LogProbProvider):
    """Distributions keyed by the most recent context token.

    ``table`` maps a context token (or None for the start of a sequence and
    any unseen context) to a {token: probability} row. Rows are normalized at
    construction so hand-written tables need not sum exactly to one.
    """

    def __init__(self, vocabulary, table: dict):
        self.vocabulary = tuple(vocabulary)
        self._table: dict = {}
        for ctx, row in table.items():
            total = sum(row.values())
            if total <= 0:
                raise ConfigurationError(f"table row for {ctx!r} sums to {total}")
            full = {}
            for tok in self.vocabulary:
                p = row.get(tok, 0.0) / total
                full[tok] = math.log(p) if p > 0 else -math.inf
            self._table[ctx] = full
        if None not in self._table:
            lp = -math.log(len(self.vocabulary))
            self._table[None] = {tok: lp for tok in self.vocabulary}

    def next_logprobs(self, prefix):
        ctx = prefix[-1] if prefix else None
        if ctx not in self._table:
            ctx = None
        return self._table[ctx]


class HashedLogProb(LogProbProvider):
    """Deterministic pseudo-random softmax distributions.

    The logit for token t after a given prefix is a stable hash of
    (seed, prefix, t) mapped into [0, scale). Useful for desk-scale decode
    tests where ties must be avoided but no training is wanted.
    """

    def __init__(self, vocabulary, seed: int = 0, scale: float = 4.0):
        self.vocabulary = tuple(vocabulary)
        if not self.vocabulary:
            raise ConfigurationError("vocabulary is empty")
        self.seed = seed
        self.scale = scale

    def _logit(self, prefix, tok):
        key = "\x1f".join((str(self.seed),) + tuple(prefix) + (tok,))
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        frac = int.from_bytes(digest, "big") / 2 ** 64
        return frac * self.scale

    def next_logprobs(self, prefix):
        logits = np.asarray([self._logit(prefix, t) for t in self.vocabulary])
        shifted = logits - logits.max()
        logz = math.log(float(np.exp(shifted).sum()))
        return {tok: float(shifted[i] - logz)
                for i, tok in enumerate(self.vocabulary)}
