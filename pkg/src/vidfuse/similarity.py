"""Embedding-space similarity: cosine, mean pooling, query-video score and MaxSim."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .model import NORM_TOLERANCE, InvalidInputError, VideoRecord

logger = logging.getLogger(__name__)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise InvalidInputError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise InvalidInputError("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def mean_pool(frames) -> np.ndarray:
    """Coordinate-wise mean of frame vectors. The result is not re-normalized."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.size == 0 or arr.ndim != 2 or arr.shape[0] == 0:
        raise InvalidInputError("mean_pool needs a non-empty list of equal-length vectors")
    return arr.mean(axis=0)


def query_video_score(query_embedding, video: VideoRecord) -> float:
    """Cosine between the query and the mean-pooled frames, scaled to [-100, 100]."""
    return 100.0 * cosine(query_embedding, mean_pool(video.frame_embeddings))


@dataclass(frozen=True, eq=False)
class TokenEmbeddingSequence:
    tokens: np.ndarray
    source_text: str = ""

    def __post_init__(self):
        arr = np.array(self.tokens, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise InvalidInputError(f"token sequence for {self.source_text!r} must be non-empty 2-D")
        norms = np.linalg.norm(arr, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOLERANCE):
            raise InvalidInputError(f"token vectors for {self.source_text!r} are not unit norm")
        arr.setflags(write=False)
        object.__setattr__(self, "tokens", arr)

    def __len__(self):
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


def late_interaction_sim(q: TokenEmbeddingSequence, d: TokenEmbeddingSequence) -> float:
    """Mean over query tokens of the best cosine against any document token."""
    if q.dim != d.dim:
        raise InvalidInputError(f"token dimension mismatch: {q.dim} vs {d.dim}")
    # Per-pair reduction instead of a matrix product: BLAS may round the same
    # token pair differently depending on matrix shape, which would break
    # exact max-monotonicity when captions or events are added.
    sims = np.clip((q.tokens[:, None, :] * d.tokens[None, :, :]).sum(axis=2), -1.0, 1.0)
    return float(sims.max(axis=1).mean())


@runtime_checkable
class EmbeddingProvider(Protocol):
    name: str

    def embed_text(self, text: str) -> TokenEmbeddingSequence: ...

    def embed_query_sentence(self, text: str) -> np.ndarray: ...


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _unit_rows(arr: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    return arr / norms


class HashingEmbeddingProvider:
    """Deterministic bag-of-words embedder for synthetic corpora.

    Each lower-cased word maps to a Gaussian vector seeded by its hash, so
    texts sharing words get similar token sets. No model is involved; this
    is for fixtures and smoke runs only.
    """

    def __init__(self, token_dim: int = 32, sentence_dim: int = 8, seed: int = 0):
        self.token_dim = token_dim
        self.sentence_dim = sentence_dim
        self.seed = seed
        self.name = f"hashing-{token_dim}-{sentence_dim}-{seed}"

    def _word_vector(self, word: str, dim: int) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{dim}:{word}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.standard_normal(dim)

    @staticmethod
    def _words(text: str) -> list[str]:
        words = "".join(ch.lower() if ch.isalnum() else " " for ch in text).split()
        return words or ["<empty>"]

    def embed_text(self, text: str) -> TokenEmbeddingSequence:
        vecs = np.vstack([self._word_vector(w, self.token_dim) for w in self._words(text)])
        return TokenEmbeddingSequence(_unit_rows(vecs), text)

    def embed_query_sentence(self, text: str) -> np.ndarray:
        vec = np.sum([self._word_vector(w, self.sentence_dim) for w in self._words(text)], axis=0)
        return _unit_rows(vec[None, :])[0]


class ReplayMissError(LookupError):
    """A replay store had no entry for a requested input."""


class ReplayEmbeddingProvider:
    """Serves embeddings recorded in a JSONL store; never touches the network.

    Records are ``{"sha256": ..., "kind": "tokens"|"sentence", "vectors": ...}``.
    """

    def __init__(self, path: str | Path, name: str | None = None):
        self.path = Path(path)
        self.name = name or f"replay:{self.path.name}"
        self._tokens: dict[str, np.ndarray] = {}
        self._sentences: dict[str, np.ndarray] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    table = self._tokens if rec["kind"] == "tokens" else self._sentences
                    table[rec["sha256"]] = np.asarray(rec["vectors"], dtype=np.float64)

    def embed_text(self, text: str) -> TokenEmbeddingSequence:
        try:
            return TokenEmbeddingSequence(self._tokens[text_key(text)], text)
        except KeyError:
            raise ReplayMissError(f"no token embeddings recorded for {text[:60]!r}") from None

    def embed_query_sentence(self, text: str) -> np.ndarray:
        try:
            return self._sentences[text_key(text)]
        except KeyError:
            raise ReplayMissError(f"no sentence embedding recorded for {text[:60]!r}") from None


class RecordingEmbeddingProvider:
    """Wraps a provider and appends every new result to a replay store."""

    def __init__(self, inner: EmbeddingProvider, path: str | Path):
        self.inner = inner
        self.name = inner.name
        self.path = Path(path)
        self._lock = threading.Lock()
        self._seen: set[tuple[str, str]] = set()
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._seen.add((rec["kind"], rec["sha256"]))

    def _record(self, kind: str, text: str, vectors: np.ndarray) -> None:
        key = text_key(text)
        with self._lock:
            if (kind, key) in self._seen:
                return
            self._seen.add((kind, key))
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"sha256": key, "kind": kind, "vectors": vectors.tolist()}) + "\n")

    def embed_text(self, text: str) -> TokenEmbeddingSequence:
        seq = self.inner.embed_text(text)
        self._record("tokens", text, seq.tokens)
        return seq

    def embed_query_sentence(self, text: str) -> np.ndarray:
        vec = np.asarray(self.inner.embed_query_sentence(text), dtype=np.float64)
        self._record("sentence", text, vec)
        return vec


class HttpEmbeddingProvider:
    """Client for a generic embeddings endpoint.

    Request: ``POST {base_url}/embed`` with
    ``{"model", "input": [texts], "granularity": "tokens"|"sentence"}``.
    Response: ``{"embeddings": [...]}``, one entry per input text; token
    granularity returns a list of vectors per text.
    """

    def __init__(self, base_url: str, model: str, *, token_model: str | None = None,
                 timeout: float = 60.0, api_key: str | None = None, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.token_model = token_model or model
        self.name = f"http:{self.token_model}/{self.model}"
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    def _post(self, texts: Sequence[str], granularity: str, model: str):
        resp = self._client.post(
            f"{self.base_url}/embed",
            json={"model": model, "input": list(texts), "granularity": granularity},
        )
        resp.raise_for_status()
        data = resp.json()["embeddings"]
        if len(data) != len(texts):
            raise InvalidInputError(f"endpoint returned {len(data)} embeddings for {len(texts)} texts")
        return data

    def embed_text(self, text: str) -> TokenEmbeddingSequence:
        vectors = np.asarray(self._post([text], "tokens", self.token_model)[0], dtype=np.float64)
        return TokenEmbeddingSequence(_unit_rows(vectors), text)

    def embed_query_sentence(self, text: str) -> np.ndarray:
        return np.asarray(self._post([text], "sentence", self.model)[0], dtype=np.float64)


class MemoizedProvider:
    """Per-run memo in front of a provider; identical texts are embedded once."""

    def __init__(self, inner: EmbeddingProvider):
        self.inner = inner
        self.name = inner.name
        self._lock = threading.Lock()
        self._tokens: dict[str, TokenEmbeddingSequence] = {}
        self._sentences: dict[str, np.ndarray] = {}

    def embed_text(self, text: str) -> TokenEmbeddingSequence:
        with self._lock:
            hit = self._tokens.get(text)
        if hit is None:
            hit = self.inner.embed_text(text)
            with self._lock:
                self._tokens[text] = hit
        return hit

    def embed_query_sentence(self, text: str) -> np.ndarray:
        with self._lock:
            hit = self._sentences.get(text)
        if hit is None:
            hit = self.inner.embed_query_sentence(text)
            with self._lock:
                self._sentences[text] = hit
        return hit
