"""Model-service adapters behind a content-addressed call store.

Every call is keyed on (stage, prompt template hash, inputs, model name,
attempt). In replay mode the store is the only source of outputs and a miss
is a hard error; in live mode misses go to the HTTP backend and the first
completion is appended to the store.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import mimetypes
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from ..corpus_io import dumps
from ..similarity import ReplayMissError

logger = logging.getLogger(__name__)


class ServiceError(RuntimeError):
    """A backend kept failing after all attempts."""


@dataclass
class ChatEndpointConfig:
    """Connection and sampling settings for one model endpoint.

    ``max_retries`` is the total number of attempts per call. Credentials
    are read from the environment variable named by ``api_key_env``.
    """

    base_url: str = "http://localhost:8000/v1"
    model_name: str = "default"
    temperature: float = 0.8
    top_p: float = 0.95
    max_retries: int = 3
    timeout: float = 120.0
    backoff: float = 1.0
    max_in_flight: int = 4
    api_key_env: str | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")

    @classmethod
    def from_dict(cls, data: Mapping | None) -> "ChatEndpointConfig":
        return cls(**dict(data or {}))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) if self.api_key_env else None


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class CallStore:
    """Append-only JSONL store of ``{"key_hash", "output"}`` records.

    Safe for concurrent use; the first record written for a key wins.
    """

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._data: dict[str, str] = {}
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._data.setdefault(rec["key_hash"], rec["output"])

    def get(self, key: str) -> str | None:
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, output: str) -> str:
        with self._lock:
            if key in self._data:
                return self._data[key]
            self._data[key] = output
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(dumps({"key_hash": key, "output": output}) + "\n")
            return output

    def __len__(self):
        return len(self._data)


@dataclass(frozen=True)
class CallRecord:
    stage: str
    prompt_hash: str
    input_hash: str
    model: str
    key_hash: str
    cached: bool


class ServiceClient:
    """One model role (LLM, VLM, ASR, translator) with caching and retries.

    ``backend`` is any callable taking the request payload and returning a
    string; it is never invoked in replay mode.
    """

    def __init__(
        self,
        role: str,
        model_name: str,
        store: CallStore,
        backend: Callable[[Any], str] | None = None,
        *,
        replay: bool = True,
        max_attempts: int = 3,
        backoff: float = 1.0,
        max_in_flight: int = 4,
    ):
        if not replay and backend is None:
            raise ValueError(f"{role}: live mode needs a backend")
        self.role = role
        self.model_name = model_name
        self.store = store
        self.backend = backend
        self.replay = replay
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))
        self._log_lock = threading.Lock()
        self.calls: list[CallRecord] = []

    def key(self, stage: str, prompt_hash: str, inputs: Mapping, attempt: int = 0) -> tuple[str, str]:
        input_hash = sha256_text(dumps(dict(inputs)))
        key = sha256_text(
            dumps(
                {
                    "stage": stage,
                    "prompt": prompt_hash,
                    "inputs": input_hash,
                    "model": self.model_name,
                    "attempt": attempt,
                }
            )
        )
        return key, input_hash

    def call(self, stage: str, prompt_hash: str, inputs: Mapping, payload: Any = None,
             *, attempt: int = 0) -> str:
        key, input_hash = self.key(stage, prompt_hash, inputs, attempt)
        out = self.store.get(key)
        cached = out is not None
        if out is None:
            if self.replay:
                summary = ", ".join(f"{k}={str(v)[:40]!r}" for k, v in sorted(inputs.items()))
                raise ReplayMissError(
                    f"{self.role}/{self.model_name}: no recorded output for {stage} "
                    f"(attempt {attempt}; {summary}; key {key[:12]})"
                )
            out = self.store.put(key, self._invoke(stage, payload))
        rec = CallRecord(stage, prompt_hash, input_hash, self.model_name, key, cached)
        with self._log_lock:
            self.calls.append(rec)
        logger.debug("%s %s prompt=%s input=%s model=%s cached=%s", self.role, stage,
                     prompt_hash[:12], input_hash[:12], self.model_name, cached)
        return out

    def _invoke(self, stage: str, payload: Any) -> str:
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                with self._slots:
                    return self.backend(payload)
            except Exception as exc:  # noqa: BLE001 - any transport failure is retried
                last = exc
                logger.warning("%s %s attempt %d failed: %s", self.role, stage, attempt + 1, exc)
                if attempt + 1 < self.max_attempts and self.backoff > 0:
                    time.sleep(self.backoff * 2 ** attempt)
        raise ServiceError(f"{self.role} {stage}: failed after {self.max_attempts} attempts") from last


# -- HTTP backends -------------------------------------------------------------

def _image_url(ref: str) -> str:
    if ref.startswith(("http://", "https://", "data:")):
        return ref
    mime = mimetypes.guess_type(ref)[0] or "image/jpeg"
    data = base64.b64encode(Path(ref).read_bytes()).decode("ascii")
    return f"data:{mime};base64,{data}"


class ChatBackend:
    """OpenAI-style ``/chat/completions`` endpoint; payload is ``(prompt, image_ref)``."""

    def __init__(self, config: ChatEndpointConfig, client=None):
        import httpx

        self.config = config
        headers = {"Authorization": f"Bearer {config.api_key}"} if config.api_key else {}
        self._client = client or httpx.Client(timeout=config.timeout, headers=headers)

    def __call__(self, payload) -> str:
        prompt, image = payload if isinstance(payload, tuple) else (payload, None)
        content: Any = prompt
        if image is not None:
            content = [
                {"type": "text", "text": prompt},
                {"type": "image_url", "image_url": {"url": _image_url(image)}},
            ]
        resp = self._client.post(
            f"{self.config.base_url.rstrip('/')}/chat/completions",
            json={
                "model": self.config.model_name,
                "messages": [{"role": "user", "content": content}],
                "temperature": self.config.temperature,
                "top_p": self.config.top_p,
            },
        )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


class AsrBackend:
    """``POST {base_url}/transcribe`` with the audio file.

    Response ``{"original_text", "english_text", "language"?}``; returned as a
    JSON string so it can live in the call store.
    """

    def __init__(self, config: ChatEndpointConfig, client=None):
        import httpx

        self.config = config
        headers = {"Authorization": f"Bearer {config.api_key}"} if config.api_key else {}
        self._client = client or httpx.Client(timeout=config.timeout, headers=headers)

    def __call__(self, audio_ref: str) -> str:
        path = Path(audio_ref)
        with open(path, "rb") as fh:
            resp = self._client.post(
                f"{self.config.base_url.rstrip('/')}/transcribe",
                data={"model": self.config.model_name},
                files={"file": (path.name, fh)},
            )
        resp.raise_for_status()
        data = resp.json()
        return dumps({
            "original_text": data.get("original_text") or "",
            "english_text": data.get("english_text") or "",
            "language": data.get("language"),
        })


class TranslatorBackend:
    """``POST {base_url}/translate`` with ``{"model", "text", "target_lang"}`` -> ``{"translation"}``."""

    def __init__(self, config: ChatEndpointConfig, target_lang: str = "eng_Latn", client=None):
        import httpx

        self.config = config
        self.target_lang = target_lang
        headers = {"Authorization": f"Bearer {config.api_key}"} if config.api_key else {}
        self._client = client or httpx.Client(timeout=config.timeout, headers=headers)

    def __call__(self, text: str) -> str:
        resp = self._client.post(
            f"{self.config.base_url.rstrip('/')}/translate",
            json={"model": self.config.model_name, "text": text, "target_lang": self.target_lang},
        )
        resp.raise_for_status()
        return resp.json()["translation"]


@dataclass
class Services:
    """The four model roles used by the pipeline."""

    llm: ServiceClient
    vlm: ServiceClient
    asr: ServiceClient
    translator: ServiceClient
    extra: dict = field(default_factory=dict)

    def all_calls(self) -> list[CallRecord]:
        return [c for s in (self.llm, self.vlm, self.asr, self.translator) for c in s.calls]
