"""Answer-grading client for an OpenAI-compatible chat-completions endpoint.

Renders a fixed yes/no comparison prompt, sends it as a single chat message,
parses the leading token of the reply as the verdict, and caches verdicts by
a content hash of the rendered prompt so reruns never re-query the endpoint.
Transient transport failures are retried with bounded exponential backoff.
"""

from __future__ import annotations

import hashlib
import json
import os
import string
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import httpx

PROMPT_HEADER = (
    "Your task is to compare the model's answer to the expected answer and "
    'determine if the model\'s answer is correct. Respond with "yes" if the '
    'answer is correct, and "no" if it is incorrect. Do not include any '
    "explanations."
)

# Characters stripped from the reply's leading token before matching yes/no.
_TOKEN_TRIM = string.punctuation + string.whitespace + "‘’“”`"

RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


class JudgeError(ValueError):
    """Invalid judge request."""


class JudgeTransportError(RuntimeError):
    """The endpoint stayed unreachable or kept failing after all retries."""


@dataclass(frozen=True)
class JudgeRequest:
    question: str
    expected_answer: str
    model_answer: str

    def __post_init__(self) -> None:
        for name in ("question", "expected_answer", "model_answer"):
            if not getattr(self, name):
                raise JudgeError(f"judge request field {name!r} must be non-empty")


@dataclass(frozen=True)
class JudgeVerdict:
    verdict: str  # "yes" | "no" | "unparseable"
    raw_response: str
    cached: bool = False

    @property
    def judged(self) -> bool:
        return self.verdict in ("yes", "no")


@dataclass(frozen=True)
class JudgeConfig:
    """Endpoint and behavior settings; ``url`` is the full chat-completions URL."""

    url: str
    model: str
    api_key_env: str = "DOCPACK_JUDGE_API_KEY"
    role: str = "user"  # role the prompt is sent under; "system" also accepted
    temperature: float = 0.0
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.1
    max_concurrency: int = 4
    cache_path: str | None = None


def render_prompt(req: JudgeRequest) -> str:
    """Byte-stable prompt: fixed header, then the three labeled fields,
    substituted verbatim (no escaping)."""
    return (
        PROMPT_HEADER
        + "\n\nQuestion: "
        + req.question
        + "\nExpected Answer: "
        + req.expected_answer
        + "\nModel's Answer: "
        + req.model_answer
    )


def request_key(req: JudgeRequest) -> str:
    return hashlib.sha256(render_prompt(req).encode("utf-8")).hexdigest()


def parse_verdict_text(raw: str) -> str:
    """Trim, case-fold, and match the reply's leading token against yes/no."""
    stripped = raw.strip()
    if not stripped:
        return "unparseable"
    token = stripped.split(None, 1)[0].strip(_TOKEN_TRIM).casefold()
    if token == "yes":
        return "yes"
    if token == "no":
        return "no"
    return "unparseable"


class VerdictCache:
    """Append-only JSONL verdict store, safe for concurrent use."""

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: dict[str, tuple[str, str]] = {}
        if self._path is not None and self._path.exists():
            with self._path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self._entries[rec["key"]] = (rec["verdict"], rec["raw"])

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> tuple[str, str] | None:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, verdict: str, raw: str) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = (verdict, raw)
            if self._path is not None:
                self._path.parent.mkdir(parents=True, exist_ok=True)
                with self._path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "verdict": verdict, "raw": raw}) + "\n")


@dataclass
class JudgeClient:
    config: JudgeConfig
    cache: VerdictCache = field(default_factory=VerdictCache)

    def __post_init__(self) -> None:
        if self.config.role not in ("user", "system"):
            raise JudgeError(f"judge message role must be 'user' or 'system', got {self.config.role!r}")
        headers = {}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._http = httpx.Client(timeout=self.config.timeout, headers=headers)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "JudgeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def judge(self, req: JudgeRequest) -> JudgeVerdict:
        """Return the cached verdict when available, otherwise query the
        endpoint, cache, and return. Idempotent per request content."""
        key = request_key(req)
        hit = self.cache.get(key)
        if hit is not None:
            verdict, raw = hit
            return JudgeVerdict(verdict=verdict, raw_response=raw, cached=True)
        raw = self._complete(render_prompt(req))
        verdict = parse_verdict_text(raw)
        self.cache.put(key, verdict, raw)
        return JudgeVerdict(verdict=verdict, raw_response=raw, cached=False)

    def judge_many(self, reqs: list[JudgeRequest]) -> list[JudgeVerdict]:
        """Judge concurrently up to the configured in-flight limit; results
        come back in request order."""
        if not reqs:
            return []
        workers = max(1, min(self.config.max_concurrency, len(reqs)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.judge, reqs))

    def _complete(self, prompt: str) -> str:
        payload = {
            "model": self.config.model,
            "messages": [{"role": self.config.role, "content": prompt}],
            "temperature": self.config.temperature,
        }
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff_base * (2 ** (attempt - 1)))
            try:
                response = self._http.post(self.config.url, json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code in RETRYABLE_STATUS:
                last_error = JudgeTransportError(
                    f"endpoint returned status {response.status_code}"
                )
                continue
            if response.status_code != 200:
                raise JudgeTransportError(
                    f"endpoint returned status {response.status_code}: {response.text[:200]}"
                )
            return self._extract_content(response)
        raise JudgeTransportError(
            f"giving up after {self.config.max_retries + 1} attempts: {last_error}"
        )

    @staticmethod
    def _extract_content(response: httpx.Response) -> str:
        try:
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise JudgeTransportError(f"malformed completion response: {exc}") from None
