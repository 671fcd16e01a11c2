"""Tests for prompt construction, response parsing, backends, and caching."""

import json
import threading

import pytest
import requests

from anonbt.errors import CacheMissError, ScoringError
from anonbt.scorer import (
    PARSE_FALLBACK_ZERO,
    PARSE_OK,
    PROMPT_TEMPLATE,
    HttpChatBackend,
    LexiconBackend,
    PromptCache,
    PromptSpec,
    ReplayBackend,
    ScoreRequest,
    TokenBucket,
    build_prompt,
    cache_key,
    load_default_lexicon,
    parse_response,
    score_headline,
    score_many,
)


# ── template and prompt building ─────────────────────────────────────────────


def test_template_shape():
    assert PROMPT_TEMPLATE.count("[company name]") == 1
    assert PROMPT_TEMPLATE.count("[headline]") == 1
    assert "“YES”" in PROMPT_TEMPLATE
    assert "“NO”" in PROMPT_TEMPLATE
    assert "“UNKNOWN”" in PROMPT_TEMPLATE
    lines = PROMPT_TEMPLATE.splitlines()
    assert lines[-1] == "Headline: [headline]"
    assert lines[-2] == ""


def test_build_prompt_substitutes_both_placeholders():
    prompt = build_prompt(
        PromptSpec(
            company_display_name="Microsoft Corporation",
            headline_text="Microsoft stock slips",
        )
    )
    assert "stock price of Microsoft Corporation in the short term" in prompt
    assert prompt.endswith("Headline: Microsoft stock slips")
    assert "[company name]" not in prompt
    assert "[headline]" not in prompt


def test_build_prompt_rejects_missing_placeholder():
    with pytest.raises(ScoringError, match=r"\[company name\]"):
        build_prompt(
            PromptSpec(
                company_display_name="X",
                headline_text="Y",
                template="Score this: [headline]",
            )
        )


def test_build_prompt_rejects_duplicated_placeholder():
    with pytest.raises(ScoringError, match=r"\[headline\]"):
        build_prompt(
            PromptSpec(
                company_display_name="X",
                headline_text="Y",
                template="[company name] [headline] [headline]",
            )
        )


def test_build_prompt_rejects_empty_headline():
    with pytest.raises(ScoringError, match="empty headline"):
        build_prompt(PromptSpec(company_display_name="X", headline_text="   "))


def test_build_prompt_rejects_empty_display_name():
    with pytest.raises(ScoringError, match="display name"):
        build_prompt(PromptSpec(company_display_name="", headline_text="Y"))


def test_build_prompt_rejects_nonzero_temperature():
    with pytest.raises(ScoringError, match="temperature"):
        build_prompt(
            PromptSpec(
                company_display_name="X", headline_text="Y", temperature=0.7
            )
        )


# ── response parsing ─────────────────────────────────────────────────────────


@pytest.mark.parametrize(
    "text,score,status",
    [
        ("YES\nStrong quarter ahead.", 1, PARSE_OK),
        ("NO\nMargins will compress.", -1, PARSE_OK),
        ("UNKNOWN\nToo vague to call.", 0, PARSE_OK),
        ("yes", 1, PARSE_OK),
        ("**Yes**, shares should rise.", 1, PARSE_OK),
        ("“NO.”\nBad news.", -1, PARSE_OK),
        ("\n\n  YES\nafter blank lines", 1, PARSE_OK),
        ("Unknown impact expected", 0, PARSE_OK),
        ("The outlook is murky", 0, PARSE_FALLBACK_ZERO),
        ("", 0, PARSE_FALLBACK_ZERO),
        ("   \n  \n", 0, PARSE_FALLBACK_ZERO),
        ("Maybe YES", 0, PARSE_FALLBACK_ZERO),
    ],
)
def test_parse_response(text, score, status):
    assert parse_response(text) == (score, status)


def test_parse_keeps_raw_first_line_and_rationale(tmp_path):
    cache = PromptCache(tmp_path)

    class Canned:
        backend_id = "canned:v1"

        def complete(self, prompt):
            return "\n  **YES!**\nEarnings beat estimates.\nMomentum is strong."

    scored = score_headline(
        ScoreRequest("h1", "original", "Acme Corp", "Acme beats estimates"),
        Canned(),
        cache,
    )
    assert scored.score == 1
    assert scored.parse_status == PARSE_OK
    assert scored.raw_first_line == "  **YES!**"
    assert scored.rationale == "Earnings beat estimates.\nMomentum is strong."
    assert scored.backend_id == "canned:v1"


# ── cache ────────────────────────────────────────────────────────────────────


def test_cache_roundtrip(tmp_path):
    cache = PromptCache(tmp_path)
    assert cache.get("b", "p") is None
    cache.put("b", "p", "YES\nok")
    assert cache.get("b", "p") == "YES\nok"
    assert cache.get("b", "other prompt") is None
    assert cache.get("other backend", "p") is None


def test_cache_key_separates_backend_and_prompt():
    assert cache_key("a", "bc") != cache_key("ab", "c")
    assert cache_key("b", "p1") != cache_key("b", "p2")
    assert cache_key("b", "p1") == cache_key("b", "p1")


def test_cache_files_are_json(tmp_path):
    cache = PromptCache(tmp_path)
    cache.put("backend:x", "prompt text", "NO\nbécause")
    files = list(tmp_path.glob("*.json"))
    assert len(files) == 1
    payload = json.loads(files[0].read_text(encoding="utf-8"))
    assert payload == {"backend_id": "backend:x", "response": "NO\nbécause"}


def test_cache_prevents_second_backend_call(tmp_path):
    cache = PromptCache(tmp_path)
    calls = []

    class Counting:
        backend_id = "count:v1"

        def complete(self, prompt):
            calls.append(prompt)
            return "YES\nfine"

    request = ScoreRequest("h1", "original", "Acme", "Acme rises")
    first = score_headline(request, Counting(), cache)
    second = score_headline(request, Counting(), cache)
    assert len(calls) == 1
    assert first == second


def test_cache_write_happens_before_return(tmp_path):
    cache = PromptCache(tmp_path)

    class Once:
        backend_id = "once:v1"

        def complete(self, prompt):
            return "NO\nbad"

    request = ScoreRequest("h2", "replaced", "Blahblahblah", "Shares fall")
    scored = score_headline(request, Once(), cache)
    assert scored.score == -1
    replayed = score_headline(request, ReplayBackend("once:v1"), cache)
    assert replayed == scored


# ── replay backend ───────────────────────────────────────────────────────────


def test_replay_miss_raises_cache_miss_with_headline_id(tmp_path):
    cache = PromptCache(tmp_path)
    request = ScoreRequest("h9", "original", "Acme", "Acme soars")
    with pytest.raises(CacheMissError) as excinfo:
        score_headline(request, ReplayBackend("http:gpt"), cache)
    assert excinfo.value.headline_id == "h9"


def test_replay_of_different_backend_misses(tmp_path):
    cache = PromptCache(tmp_path)

    class Canned:
        backend_id = "canned:v1"

        def complete(self, prompt):
            return "YES\nok"

    request = ScoreRequest("h1", "original", "Acme", "Acme soars")
    score_headline(request, Canned(), cache)
    with pytest.raises(CacheMissError):
        score_headline(request, ReplayBackend("canned:v2"), cache)


# ── variant handling ─────────────────────────────────────────────────────────


def test_unknown_variant_rejected(tmp_path):
    cache = PromptCache(tmp_path)
    with pytest.raises(ScoringError) as excinfo:
        score_headline(
            ScoreRequest("h1", "anonymised", "Acme", "text"),
            ReplayBackend("x"),
            cache,
        )
    assert excinfo.value.headline_id == "h1"


def test_variants_produce_distinct_prompts_and_cache_entries(tmp_path):
    cache = PromptCache(tmp_path)
    prompts = []

    class Recording:
        backend_id = "rec:v1"

        def complete(self, prompt):
            prompts.append(prompt)
            return "UNKNOWN\nn/a"

    text = "Blahblahblah 4Q Profit Falls"
    score_headline(
        ScoreRequest("h1", "original", "Walgreens Boots Alliance", text),
        Recording(),
        cache,
    )
    score_headline(
        ScoreRequest("h1", "replaced", "Blahblahblah", text),
        Recording(),
        cache,
    )
    assert len(prompts) == 2
    assert "Walgreens Boots Alliance" in prompts[0]
    assert "Blahblahblah in the short term" in prompts[1]
    assert len(list(tmp_path.glob("*.json"))) == 2


# ── HTTP backend ─────────────────────────────────────────────────────────────


def _payload(content):
    return {"choices": [{"message": {"content": content}}]}


def make_http_backend(monkeypatch, responses, **kwargs):
    """Backend with a canned transport; returns (backend, calls, naps)."""
    monkeypatch.setenv("CHAT_API_KEY", "sk-test")
    calls = []
    naps = []
    queue = list(responses)

    def transport(url, headers, body):
        calls.append((url, headers, body))
        item = queue.pop(0)
        if isinstance(item, Exception):
            raise item
        return item

    backend = HttpChatBackend(
        base_url="https://chat.example/v1/completions",
        model="scorer-model",
        transport=transport,
        sleep=naps.append,
        backoff=1.0,
        **kwargs,
    )
    return backend, calls, naps


def test_http_success_shape(monkeypatch):
    backend, calls, naps = make_http_backend(
        monkeypatch, [(200, _payload("YES\ngreat"))]
    )
    assert backend.complete("the prompt") == "YES\ngreat"
    assert backend.backend_id == "http:scorer-model"
    url, headers, body = calls[0]
    assert url == "https://chat.example/v1/completions"
    assert headers == {"Authorization": "Bearer sk-test"}
    assert body == {
        "model": "scorer-model",
        "messages": [{"role": "user", "content": "the prompt"}],
        "temperature": 0,
    }
    assert naps == []


def test_http_retries_transient_then_succeeds(monkeypatch):
    backend, calls, naps = make_http_backend(
        monkeypatch,
        [
            (503, {}),
            requests.ConnectionError("reset"),
            (200, _payload("NO\nbad")),
        ],
    )
    assert backend.complete("p") == "NO\nbad"
    assert len(calls) == 3
    assert naps == [1.0, 2.0]


def test_http_exhausted_retries(monkeypatch):
    backend, calls, naps = make_http_backend(
        monkeypatch, [(503, {}), (503, {}), (503, {})]
    )
    with pytest.raises(ScoringError, match="3 attempts"):
        backend.complete("p")
    assert len(calls) == 3
    assert naps == [1.0, 2.0]


def test_http_credential_rejection_is_immediate(monkeypatch):
    backend, calls, naps = make_http_backend(monkeypatch, [(401, {})])
    with pytest.raises(ScoringError, match="401"):
        backend.complete("p")
    assert len(calls) == 1
    assert naps == []


def test_http_missing_credential(monkeypatch):
    monkeypatch.delenv("CHAT_API_KEY", raising=False)
    backend = HttpChatBackend(
        base_url="https://chat.example", model="m", transport=lambda *a: (200, {})
    )
    with pytest.raises(ScoringError, match="CHAT_API_KEY"):
        backend.complete("p")


def test_http_malformed_payload_is_retried(monkeypatch):
    backend, calls, naps = make_http_backend(
        monkeypatch, [(200, {"oops": True}), (200, _payload("UNKNOWN\n?"))]
    )
    assert backend.complete("p") == "UNKNOWN\n?"
    assert len(calls) == 2
    assert naps == [1.0]


# ── rate limiting ────────────────────────────────────────────────────────────


def test_token_bucket_burst_then_wait():
    clock = {"t": 0.0}
    naps = []

    def fake_clock():
        return clock["t"]

    def fake_sleep(seconds):
        naps.append(seconds)
        clock["t"] += seconds

    bucket = TokenBucket(2, clock=fake_clock, sleep=fake_sleep)
    bucket.acquire()
    bucket.acquire()
    bucket.acquire()
    # refill rate is 2/60 tokens per second, so one token takes 30s
    assert naps == [pytest.approx(30.0)]


def test_token_bucket_rejects_nonpositive_rate():
    with pytest.raises(ScoringError):
        TokenBucket(0)


def test_http_backend_consults_rate_limiter(monkeypatch):
    acquired = []

    class FakeBucket:
        def acquire(self):
            acquired.append(1)

    backend, calls, naps = make_http_backend(
        monkeypatch,
        [(503, {}), (200, _payload("YES\nok"))],
        rate_limiter=FakeBucket(),
    )
    backend.complete("p")
    assert len(acquired) == 2


# ── lexicon backend ──────────────────────────────────────────────────────────


def test_default_lexicon_loads():
    lexicon = load_default_lexicon()
    assert lexicon["falls"] == -1
    assert lexicon["beats"] == 1
    assert all(v in (-1, 1) for v in lexicon.values())


def test_lexicon_scores_falls_negative(tmp_path):
    cache = PromptCache(tmp_path)
    scored = score_headline(
        ScoreRequest(
            "ref-01",
            "original",
            "Walgreens Boots Alliance",
            "Walgreens 4Q Profit Falls as Overseas Unit Struggles Amid Pandemic",
        ),
        LexiconBackend(),
        cache,
    )
    assert scored.score == -1
    assert scored.parse_status == PARSE_OK


def test_lexicon_scores_positive_and_neutral():
    backend = LexiconBackend()
    up = build_prompt(PromptSpec("Acme", "Acme beats revenue estimates"))
    flat = build_prompt(PromptSpec("Acme", "Acme to hold annual meeting"))
    mixed = build_prompt(PromptSpec("Acme", "Acme rises then falls"))
    assert parse_response(backend.complete(up)) == (1, PARSE_OK)
    assert parse_response(backend.complete(flat)) == (0, PARSE_OK)
    assert parse_response(backend.complete(mixed)) == (0, PARSE_OK)


def test_lexicon_matches_punctuated_case_shifted_words():
    backend = LexiconBackend()
    prompt = build_prompt(PromptSpec("Acme", "Acme shares SOAR, record high!"))
    assert parse_response(backend.complete(prompt)) == (1, PARSE_OK)


def test_lexicon_is_deterministic():
    backend = LexiconBackend()
    prompt = build_prompt(PromptSpec("Acme", "Profit falls sharply"))
    assert backend.complete(prompt) == backend.complete(prompt)


def test_lexicon_requires_headline_line():
    backend = LexiconBackend()
    with pytest.raises(ScoringError, match="no headline"):
        backend.complete("just some text without the expected final line")


def test_lexicon_custom_table():
    backend = LexiconBackend({"zorp": 1})
    prompt = build_prompt(PromptSpec("Acme", "Acme announces zorp"))
    assert parse_response(backend.complete(prompt)) == (1, PARSE_OK)


# ── batch scoring ────────────────────────────────────────────────────────────


def test_score_many_preserves_order(tmp_path):
    cache = PromptCache(tmp_path)
    gate = threading.Barrier(4, timeout=10)

    class Slowish:
        backend_id = "slow:v1"

        def complete(self, prompt):
            gate.wait()
            return "YES\nok" if "rises" in prompt else "NO\nbad"

    requests_in = [
        ScoreRequest(f"h{i}", "original", "Acme", text)
        for i, text in enumerate(
            ["Acme rises", "Acme dips", "Acme rises again", "Acme slumps"]
        )
    ]
    scored = score_many(requests_in, Slowish(), cache, max_workers=4)
    assert [s.headline_id for s in scored] == ["h0", "h1", "h2", "h3"]
    assert [s.score for s in scored] == [1, -1, 1, -1]


def test_score_many_single_worker_and_empty(tmp_path):
    cache = PromptCache(tmp_path)
    assert score_many([], LexiconBackend(), cache) == []
    scored = score_many(
        [ScoreRequest("h1", "original", "Acme", "Acme falls")],
        LexiconBackend(),
        cache,
        max_workers=1,
    )
    assert [s.score for s in scored] == [-1]


def test_score_many_concurrent_writes_are_safe(tmp_path):
    cache = PromptCache(tmp_path)
    requests_in = [
        ScoreRequest(f"h{i}", "original", "Acme", f"Acme falls on day {i}")
        for i in range(24)
    ]
    scored = score_many(requests_in, LexiconBackend(), cache, max_workers=8)
    assert all(s.score == -1 for s in scored)
    assert len(list(tmp_path.glob("*.json"))) == 24
    replayed = score_many(
        requests_in, ReplayBackend("lexicon:v1"), cache, max_workers=8
    )
    assert replayed == scored
