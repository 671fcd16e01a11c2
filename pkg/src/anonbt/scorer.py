"""Sentiment scoring: prompt construction, backends, parsing, and caching.

A backend is anything with a `backend_id` string and a `complete(prompt)`
method returning raw response text. Scores are derived from the response's
first nonblank line and cached content-addressed on (backend_id, prompt), so
reruns and offline replays never re-invoke a remote model.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import string
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import CacheMissError, ScoringError

logger = logging.getLogger(__name__)

PROMPT_TEMPLATE = (
    "Forget all your previous instructions. Pretend you are a financial "
    "expert. You are a financial expert with stock recommendation "
    "experience. Answer “YES” if good news, “NO” if bad "
    "news, or “UNKNOWN” if uncertain in the first line. Then "
    "elaborate with one short and concise sentence on the next line. Is "
    "this headline good or bad for the stock price of [company name] in "
    "the short term?\n"
    "\n"
    "Headline: [headline]"
)

COMPANY_PLACEHOLDER = "[company name]"
HEADLINE_PLACEHOLDER = "[headline]"

VARIANT_ORIGINAL = "original"
VARIANT_REPLACED = "replaced"
VARIANTS = (VARIANT_ORIGINAL, VARIANT_REPLACED)

PARSE_OK = "ok"
PARSE_FALLBACK_ZERO = "fallback_zero"

_PUNCT_STRIP = str.maketrans(
    "", "", string.punctuation + "‘’“”–—"
)


@dataclass(frozen=True)
class PromptSpec:
    company_display_name: str
    headline_text: str
    template: str = PROMPT_TEMPLATE
    temperature: float = 0.0


@dataclass(frozen=True)
class ScoreRequest:
    headline_id: str
    variant: str
    company_display_name: str
    headline_text: str


@dataclass(frozen=True)
class ScoredHeadline:
    headline_id: str
    variant: str
    score: int
    raw_first_line: str
    rationale: str
    backend_id: str
    parse_status: str


def build_prompt(spec: PromptSpec) -> str:
    """Fill the two placeholders; reject templates that cannot be filled."""
    if spec.temperature != 0.0:
        raise ScoringError("temperature is fixed at 0")
    for placeholder in (COMPANY_PLACEHOLDER, HEADLINE_PLACEHOLDER):
        if spec.template.count(placeholder) != 1:
            raise ScoringError(
                f"template must contain exactly one {placeholder!r}"
            )
    if not spec.headline_text.strip():
        raise ScoringError("empty headline text")
    if not spec.company_display_name.strip():
        raise ScoringError("empty company display name")
    filled = spec.template.replace(
        COMPANY_PLACEHOLDER, spec.company_display_name
    )
    return filled.replace(HEADLINE_PLACEHOLDER, spec.headline_text)


def parse_response(text: str) -> tuple[int, str]:
    """Map a model response to a score via its first nonblank line."""
    first_line = ""
    for line in text.splitlines():
        if line.strip():
            first_line = line
            break
    cleaned = first_line.translate(_PUNCT_STRIP).strip().lower()
    if cleaned.startswith("yes"):
        return 1, PARSE_OK
    if cleaned.startswith("unknown"):
        return 0, PARSE_OK
    if cleaned.startswith("no"):
        return -1, PARSE_OK
    return 0, PARSE_FALLBACK_ZERO


def _split_response(text: str) -> tuple[str, str]:
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if line.strip():
            rationale = "\n".join(lines[i + 1 :]).strip()
            return line, rationale
    return "", ""


# ── cache ────────────────────────────────────────────────────────────────────


def cache_key(backend_id: str, prompt: str) -> str:
    digest = hashlib.sha256()
    digest.update(backend_id.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(prompt.encode("utf-8"))
    return digest.hexdigest()


class PromptCache:
    """Content-addressed response store: one JSON file per (backend, prompt).

    Writes go through a temp file plus rename and a process-level lock, so
    concurrent scorers never observe a torn file.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, backend_id: str, prompt: str) -> str | None:
        path = self._path(cache_key(backend_id, prompt))
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return payload["response"]

    def put(self, backend_id: str, prompt: str, response: str) -> None:
        key = cache_key(backend_id, prompt)
        payload = json.dumps(
            {"backend_id": backend_id, "response": response},
            ensure_ascii=False,
        )
        with self._lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            fd, tmp_name = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(payload)
                os.replace(tmp_name, self._path(key))
            except BaseException:
                if os.path.exists(tmp_name):
                    os.unlink(tmp_name)
                raise


# ── rate limiting ────────────────────────────────────────────────────────────


class TokenBucket:
    """Requests-per-minute limiter shared across scoring threads."""

    def __init__(self, requests_per_minute: float, clock=time.monotonic, sleep=time.sleep):
        if requests_per_minute <= 0:
            raise ScoringError("requests_per_minute must be positive")
        self.capacity = float(requests_per_minute)
        self.rate = float(requests_per_minute) / 60.0
        self.tokens = float(requests_per_minute)
        self.clock = clock
        self.sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(
                    self.capacity, self.tokens + (now - self._last) * self.rate
                )
                self._last = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self.sleep(wait)


# ── backends ─────────────────────────────────────────────────────────────────


class HttpChatBackend:
    """Chat-completion endpoint speaking the single-user-message shape."""

    def __init__(
        self,
        base_url: str,
        model: str,
        key_env: str = "CHAT_API_KEY",
        timeout: float = 30.0,
        retries: int = 3,
        backoff: float = 1.0,
        rate_limiter: TokenBucket | None = None,
        transport=None,
        sleep=time.sleep,
    ):
        self.base_url = base_url
        self.model = model
        self.key_env = key_env
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.rate_limiter = rate_limiter
        self.sleep = sleep
        self._transport = transport or self._http_post
        self.backend_id = f"http:{model}"

    def _http_post(self, url: str, headers: dict, body: dict):
        response = requests.post(
            url, headers=headers, json=body, timeout=self.timeout
        )
        try:
            payload = response.json()
        except ValueError:
            payload = {}
        return response.status_code, payload

    def complete(self, prompt: str) -> str:
        key = os.environ.get(self.key_env)
        if not key:
            raise ScoringError(f"no credential in environment variable {self.key_env}")
        headers = {"Authorization": f"Bearer {key}"}
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        last_error = "no attempt made"
        for attempt in range(self.retries):
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            try:
                status, payload = self._transport(self.base_url, headers, body)
            except requests.RequestException as exc:
                status, payload = None, {}
                last_error = str(exc)
            if status is not None:
                if status in (401, 403):
                    raise ScoringError(f"endpoint rejected credential (HTTP {status})")
                if status == 200:
                    try:
                        return payload["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError):
                        last_error = "malformed completion payload"
                else:
                    last_error = f"HTTP {status}"
            if attempt + 1 < self.retries:
                delay = self.backoff * (2.0**attempt)
                logger.warning(
                    "completion attempt %d failed (%s); retrying in %.1fs",
                    attempt + 1,
                    last_error,
                    delay,
                )
                self.sleep(delay)
        raise ScoringError(
            f"completion failed after {self.retries} attempts: {last_error}"
        )


class LexiconBackend:
    """Deterministic scorer driven by a word-polarity table.

    The headline is recovered from the prompt's final "Headline:" line, so
    the backend stays a pure function of the prompt and cache keys agree
    between live runs and replays.
    """

    def __init__(self, lexicon: dict[str, int] | None = None):
        self.lexicon = lexicon if lexicon is not None else load_default_lexicon()
        self.backend_id = "lexicon:v1"

    def complete(self, prompt: str) -> str:
        headline = None
        for line in prompt.splitlines():
            if line.startswith("Headline: "):
                headline = line[len("Headline: ") :]
        if headline is None:
            raise ScoringError("prompt carries no headline line")
        total = 0
        hits = 0
        for token in headline.lower().split():
            word = token.translate(_PUNCT_STRIP)
            polarity = self.lexicon.get(word)
            if polarity:
                total += polarity
                hits += 1
        if total > 0:
            return "YES\nPositive language outweighs negative in the headline."
        if total < 0:
            return "NO\nNegative language outweighs positive in the headline."
        if hits:
            return "UNKNOWN\nPositive and negative language balance out."
        return "UNKNOWN\nThe headline carries no scored sentiment words."


class ReplayBackend:
    """Cache-only stand-in that reuses another backend's identity.

    Sharing the wrapped backend_id makes every previously cached response
    addressable; an uncached prompt is a hard error rather than a remote
    call, which is what offline mode promises.
    """

    def __init__(self, backend_id: str):
        self.backend_id = backend_id

    def complete(self, prompt: str) -> str:
        raise CacheMissError(
            f"offline replay has no cached response for backend "
            f"{self.backend_id!r}"
        )


def load_default_lexicon() -> dict[str, int]:
    path = Path(__file__).parent / "data" / "sentiment_lexicon.tsv"
    lexicon: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split("\t")
            if len(parts) != 2:
                raise ScoringError(f"{path}: line {lineno}: expected word<TAB>polarity")
            word, polarity = parts
            lexicon[word.lower()] = int(polarity)
    return lexicon


# ── scoring entry points ─────────────────────────────────────────────────────


def score_headline(
    request: ScoreRequest, backend, cache: PromptCache | None = None
) -> ScoredHeadline:
    """Score one headline variant, consulting the cache before the backend."""
    if request.variant not in VARIANTS:
        raise ScoringError(
            f"unknown variant {request.variant!r}", request.headline_id
        )
    prompt = build_prompt(
        PromptSpec(
            company_display_name=request.company_display_name,
            headline_text=request.headline_text,
        )
    )
    response = cache.get(backend.backend_id, prompt) if cache else None
    if response is None:
        try:
            response = backend.complete(prompt)
        except ScoringError as exc:
            # re-raise as the same subtype so cache misses stay recognizable
            raise type(exc)(str(exc), request.headline_id) from exc
        if cache is not None:
            cache.put(backend.backend_id, prompt, response)
    score, parse_status = parse_response(response)
    first_line, rationale = _split_response(response)
    return ScoredHeadline(
        headline_id=request.headline_id,
        variant=request.variant,
        score=score,
        raw_first_line=first_line,
        rationale=rationale,
        backend_id=backend.backend_id,
        parse_status=parse_status,
    )


def score_many(
    requests_in, backend, cache: PromptCache | None = None, max_workers: int = 4
) -> list[ScoredHeadline]:
    """Score a batch concurrently, preserving input order in the output."""
    items = list(requests_in)
    if not items:
        return []
    if max_workers <= 1:
        return [score_headline(r, backend, cache) for r in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [
            pool.submit(score_headline, request, backend, cache)
            for request in items
        ]
        return [f.result() for f in futures]
