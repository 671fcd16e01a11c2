"""Company-identifier detection and replacement in headline text.

Three passes over each headline: sliding character windows scored against the
cleaned company name with a token-set InDel similarity, an exact
case-sensitive acronym pass, and an exact whole-token alias pass. Spans snap
to whitespace token boundaries, shed edge punctuation and possessive
suffixes, and are replaced with a fixed neutral token.

Partial-window matches (windows shorter than the cleaned name) are precision
gated: they are dropped when the headline already identifies the company via
its acronym or already carries the replacement token. A lone name fragment in
a headline that names the company another way is overwhelmingly a generic
word collision, not a second reference; the gate also makes replacement
idempotent.
"""

from __future__ import annotations

import logging
import string
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateNameError

logger = logging.getLogger(__name__)

DEFAULT_REPLACEMENT_TOKEN = "Blahblahblah"

DEFAULT_CORPORATE_SUFFIXES = frozenset(
    {
        "inc",
        "incorporated",
        "llc",
        "ltd",
        "limited",
        "corp",
        "corporation",
        "co",
        "company",
        "plc",
        "holdings",
        "group",
    }
)

_PUNCT = set(string.punctuation) | {"’", "‘", "“", "”", "–", "—"}

SPAN_NAME = "name"
SPAN_PARTIAL = "partial"
SPAN_ACRONYM = "acronym"
SPAN_ALIAS = "alias"

_KIND_RANK = {SPAN_NAME: 0, SPAN_ACRONYM: 1, SPAN_PARTIAL: 2, SPAN_ALIAS: 3}


@dataclass(frozen=True)
class MatchConfig:
    """Knobs for the span finder. Threshold comparisons are strict (> not >=)."""

    similarity_threshold: float = 80.0
    replacement_token: str = DEFAULT_REPLACEMENT_TOKEN
    min_window: int = 3
    corporate_suffixes: frozenset[str] = DEFAULT_CORPORATE_SUFFIXES


@dataclass(frozen=True)
class CompanyIdentity:
    company_id: str
    official_name: str
    cleaned_name: str
    acronym: str | None = None
    aliases: tuple[str, ...] = ()


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    kind: str
    text: str

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class AnonymizationResult:
    original_text: str
    replaced_text: str
    spans: tuple[Span, ...]

    @property
    def modified(self) -> bool:
        return bool(self.spans)


# ── Name normalization ──────────────────────────────────────────────────────


def clean_company_name(
    name: str, suffixes: frozenset[str] = DEFAULT_CORPORATE_SUFFIXES
) -> str:
    """Strip punctuation and trailing corporate suffix tokens, collapse spaces.

    Raises DegenerateNameError when nothing is left.
    """
    stripped = "".join(ch for ch in name if ch not in _PUNCT)
    tokens = stripped.split()
    while tokens and tokens[-1].lower() in suffixes:
        tokens.pop()
    if not tokens:
        raise DegenerateNameError(f"company name {name!r} is empty after cleaning")
    return " ".join(tokens)


def derive_acronym(cleaned_name: str) -> str | None:
    """Uppercase initials of a multi-word cleaned name; None for single words."""
    words = cleaned_name.split()
    if len(words) < 2:
        return None
    return "".join(w[0].upper() for w in words)


def build_identity(
    company_id: str,
    official_name: str,
    aliases: tuple[str, ...] = (),
    config: MatchConfig = MatchConfig(),
) -> CompanyIdentity:
    cleaned = clean_company_name(official_name, config.corporate_suffixes)
    return CompanyIdentity(
        company_id=company_id,
        official_name=official_name,
        cleaned_name=cleaned,
        acronym=derive_acronym(cleaned),
        aliases=tuple(aliases),
    )


# ── String similarity ───────────────────────────────────────────────────────


def _lcs_len(a: str, b: str) -> int:
    """Longest common subsequence length via a bit-vector contour row."""
    masks: dict[str, int] = {}
    bit = 1
    for ch in a:
        masks[ch] = masks.get(ch, 0) | bit
        bit <<= 1
    row = 0
    get = masks.get
    for ch in b:
        m = get(ch)
        if m is None:
            continue
        x = row | m
        row = x & ~(x - ((row << 1) | 1))
    return row.bit_count()


def indel_distance(a: str, b: str) -> int:
    """Insert/delete edit distance: |a| + |b| - 2 * LCS(a, b)."""
    if a == b:
        return 0
    la, lb = len(a), len(b)
    if la == 0 or lb == 0:
        return la + lb
    if la > lb:
        a, b = b, a
    return la + lb - 2 * _lcs_len(a, b)


def _indel_ratio(a: str, b: str) -> float:
    if not a and not b:
        return 100.0
    total = len(a) + len(b)
    return 100.0 * (1.0 - indel_distance(a, b) / total)


class _NameMatcher:
    """Precomputed view of one cleaned name for repeated window scoring."""

    def __init__(self, cleaned_name: str, threshold: float):
        self.threshold = float(threshold)
        self.name_lower = cleaned_name.lower()
        self.tokens = self.name_lower.split()
        self.token_counts = Counter(self.tokens)
        self.n_tokens = len(self.tokens)
        self.char_counts = Counter("".join(self.tokens))
        self.n_chars = sum(self.char_counts.values())
        # length of the sorted-token comparison string for the name side
        self.joined_len = self.n_chars + max(0, self.n_tokens - 1)

    def score(self, window_lower: str) -> float:
        wtokens = window_lower.split()
        if not wtokens and not self.tokens:
            return 100.0
        if not wtokens or not self.tokens:
            return 0.0
        wcounts = Counter(wtokens)
        common = wcounts & self.token_counts
        if not common:
            s1 = " ".join(sorted(wtokens))
            s2 = " ".join(sorted(self.tokens))
            return _indel_ratio(s1, s2)
        rest_w = sorted((wcounts - self.token_counts).elements())
        rest_n = sorted((self.token_counts - wcounts).elements())
        if not rest_w or not rest_n:
            # one token multiset contains the other
            return 100.0
        len0 = len(" ".join(sorted(common.elements())))
        rw = " ".join(rest_w)
        rn = " ".join(rest_n)
        len1 = len0 + 1 + len(rw)
        len2 = len0 + 1 + len(rn)
        # the common-token string is a prefix of both comparison strings, so
        # its two distances are pure length gaps; stripping that shared
        # prefix from the third pairing leaves an LCS over remainders only
        best = max(
            100.0 * (1.0 - (len1 - len0) / (len0 + len1)),
            100.0 * (1.0 - (len2 - len0) / (len0 + len2)),
        )
        d12 = len(rw) + len(rn) - 2 * _lcs_len(rw, rn)
        r12 = 100.0 * (1.0 - d12 / (len1 + len2))
        return best if best >= r12 else r12


def token_sort_indel_similarity(a: str, b: str) -> float:
    """Similarity in [0, 100] between token multisets of two strings.

    Common tokens are isolated; the candidate comparison strings are the
    sorted common tokens alone and the sorted common tokens followed by each
    side's sorted remainder. The score is the best normalized InDel
    similarity, 100 * (1 - distance / (len_a + len_b)), over those pairings.
    Two token-empty strings score 100; a token multiset contained in the
    other scores 100.
    """
    return _NameMatcher(b, 0.0).score(a.lower())


@lru_cache(maxsize=512)
def _get_matcher(cleaned_name: str, threshold: float) -> _NameMatcher:
    """Matchers are immutable after construction, so share them per name."""
    return _NameMatcher(cleaned_name, threshold)


# ── Window scan ─────────────────────────────────────────────────────────────


class _WindowPrefilter:
    """Exact-safe candidate screening for the sliding-window scan.

    For each window length, computes character-count bounds that any window
    scoring above the threshold must satisfy; offsets failing all bounds are
    provably below the threshold and are skipped without scoring.
    """

    def __init__(self, text_lower: str, matcher: _NameMatcher):
        self.matcher = matcher
        chars = sorted(matcher.char_counts)
        self.char_ids = {ch: i for i, ch in enumerate(chars)}
        k = len(chars)
        self.space_id = k
        self.name_vec = np.array([matcher.char_counts[ch] for ch in chars], dtype=np.int32)
        n = len(text_lower)
        ids = np.full(n, k + 1, dtype=np.int32)
        for i, ch in enumerate(text_lower):
            if ch in self.char_ids:
                ids[i] = self.char_ids[ch]
            elif ch.isspace():
                ids[i] = k
        onehot = np.zeros((n + 1, k + 2), dtype=np.int32)
        if n:
            onehot[np.arange(1, n + 1), ids] = 1
        self.cum = np.cumsum(onehot, axis=0)
        self.n = n

    def offsets(self, length: int) -> np.ndarray:
        m = self.matcher
        if length > self.n or length <= 0:
            return np.empty(0, dtype=np.intp)
        win = self.cum[length:] - self.cum[:-length]
        k = len(self.name_vec)
        cn = np.minimum(win[:, :k], self.name_vec).sum(axis=1)
        spaces = win[:, self.space_id]
        n_w = length - spaces
        tw_up = spaces + 1
        tau = m.threshold / 100.0
        if tau >= 1.0:
            return np.empty(0, dtype=np.intp)
        s2_len = m.joined_len
        t_n = m.n_tokens
        # (s1, s2) pairing: LCS bounded by shared chars incl. separators
        cond = cn + np.minimum(tw_up - 1, t_n - 1) > 0.5 * tau * (n_w + s2_len)
        # (s0, s2) and (s0, s1) pairings: LCS equals the common-token string
        anchor = cn + np.minimum(tw_up, t_n) - 1
        ratio = tau / (2.0 - tau)
        cond |= anchor > s2_len * ratio
        cond |= anchor > n_w * ratio
        return np.nonzero(cond)[0]


def _snap_to_tokens(text: str, start: int, end: int) -> tuple[int, int] | None:
    """Align a character span to whitespace token boundaries."""
    n = len(text)
    start = max(0, min(start, n))
    end = max(0, min(end, n))
    if start >= end:
        return None
    if text[start].isspace():
        while start < end and text[start].isspace():
            start += 1
    else:
        while start > 0 and not text[start - 1].isspace():
            start -= 1
    if start >= end:
        return None
    if text[end - 1].isspace():
        while end > start and text[end - 1].isspace():
            end -= 1
    else:
        while end < n and not text[end].isspace():
            end += 1
    if start >= end:
        return None
    return start, end


def _token_core(text: str, ts: int, te: int) -> tuple[int, int]:
    """Trim edge punctuation and a trailing possessive from one token."""
    while ts < te and text[ts] in _PUNCT:
        ts += 1
    while te > ts and text[te - 1] in _PUNCT:
        te -= 1
    if te - ts >= 2 and text[te - 1] in "sS" and text[te - 2] in "'’":
        te -= 2
        while te > ts and text[te - 1] in _PUNCT:
            te -= 1
    return ts, te


def _tokens_with_bounds(text: str, start: int = 0, end: int | None = None):
    """Yield (token_start, token_end) for whitespace tokens in text[start:end]."""
    if end is None:
        end = len(text)
    i = start
    while i < end:
        while i < end and text[i].isspace():
            i += 1
        if i >= end:
            break
        j = i
        while j < end and not text[j].isspace():
            j += 1
        yield i, j
        i = j


def _is_evidence_token(core: str, matcher: _NameMatcher) -> bool:
    if not core:
        return False
    if core in matcher.token_counts:
        return True
    for nt in matcher.token_counts:
        if _indel_ratio(core, nt) > matcher.threshold:
            return True
    return False


def _trim_to_evidence(
    text: str, start: int, end: int, matcher: _NameMatcher
) -> tuple[int, int] | None:
    """Shrink a snapped span to the token run that actually resembles the name.

    Edge tokens that look nothing like any name token (window spillover such
    as a trailing "4Q") are shed; the kept run spans from the first to the
    last evidence token's core.
    """
    toks = []
    for ts, te in _tokens_with_bounds(text, start, end):
        cs, ce = _token_core(text, ts, te)
        core = text[cs:ce].lower()
        toks.append((cs, ce, _is_evidence_token(core, matcher)))
    first = next((i for i, t in enumerate(toks) if t[2]), None)
    if first is None:
        return None
    last = max(i for i, t in enumerate(toks) if t[2])
    cs = toks[first][0]
    ce = toks[last][1]
    if cs >= ce:
        return None
    return cs, ce


def _contains_token(text: str, token_lower: str) -> bool:
    for ts, te in _tokens_with_bounds(text):
        cs, ce = _token_core(text, ts, te)
        if text[cs:ce].lower() == token_lower:
            return True
    return False


def find_company_spans(
    text: str, identity: CompanyIdentity, config: MatchConfig = MatchConfig()
) -> tuple[Span, ...]:
    """Locate references to one company in a headline.

    Slides windows at the cleaned name's length (kind "name") and at every
    shorter length down to config.min_window (kind "partial"), scoring each
    window against the cleaned name; windows scoring strictly above the
    threshold become candidates. Exact case-sensitive acronym occurrences are
    added (kind "acronym"). Candidates snap to token boundaries, partial and
    name spans are trimmed to name-evidence tokens, partial spans are dropped
    when the acronym or the replacement token already identifies the company,
    and overlaps resolve longest-first then leftmost-first.
    """
    matcher = _get_matcher(identity.cleaned_name, config.similarity_threshold)
    text_lower = text.lower()
    threshold = config.similarity_threshold
    full_len = len(identity.cleaned_name)
    prefilter: _WindowPrefilter | None = None

    def scan(length: int, kind: str) -> list[tuple[int, int, str]]:
        nonlocal prefilter
        if prefilter is None:
            prefilter = _WindowPrefilter(text_lower, matcher)
        out = []
        for off in prefilter.offsets(length):
            start = int(off)
            if matcher.score(text_lower[start : start + length]) > threshold:
                out.append((start, start + length, kind))
        return out

    raw: list[tuple[int, int, str]] = []
    if full_len <= len(text):
        raw.extend(scan(full_len, SPAN_NAME))
    if identity.acronym:
        pos = text.find(identity.acronym)
        while pos != -1:
            raw.append((pos, pos + len(identity.acronym), SPAN_ACRONYM))
            pos = text.find(identity.acronym, pos + 1)

    snapped: list[tuple[int, int, str]] = []
    seen: set[tuple[int, int, str]] = set()

    def snap(cands: list[tuple[int, int, str]]) -> None:
        for s, e, kind in cands:
            bounds = _snap_to_tokens(text, s, e)
            if bounds is None:
                continue
            s2, e2 = bounds
            if kind in (SPAN_NAME, SPAN_PARTIAL):
                trimmed = _trim_to_evidence(text, s2, e2, matcher)
                if trimmed is None:
                    continue
                s2, e2 = trimmed
            else:
                cs, ce = _token_core(text, s2, e2)
                if cs >= ce:
                    continue
                s2, e2 = cs, ce
            key = (s2, e2, kind)
            if key not in seen:
                seen.add(key)
                snapped.append(key)

    snap(raw)
    # a strong identification would drop every partial span anyway, so the
    # shorter-window scan only runs when nothing strong was found
    suppressed = bool(snapped) or _contains_token(
        text, config.replacement_token.lower()
    )
    if not suppressed:
        partial: list[tuple[int, int, str]] = []
        for ln in range(min(full_len - 1, len(text)), config.min_window - 1, -1):
            partial.extend(scan(ln, SPAN_PARTIAL))
        snap(partial)

    snapped.sort(key=lambda c: (-(c[1] - c[0]), c[0], _KIND_RANK[c[2]]))
    accepted: list[Span] = []
    for s, e, kind in snapped:
        candidate = Span(start=s, end=e, kind=kind, text=text[s:e])
        if any(candidate.overlaps(a) for a in accepted):
            continue
        accepted.append(candidate)
    accepted.sort(key=lambda sp: sp.start)
    return tuple(accepted)


# ── Alias pass and replacement ──────────────────────────────────────────────


def _alias_spans(
    text: str, aliases: tuple[str, ...], taken: list[Span]
) -> list[Span]:
    toks = []
    for ts, te in _tokens_with_bounds(text):
        cs, ce = _token_core(text, ts, te)
        if cs < ce:
            toks.append((cs, ce, text[cs:ce].lower()))
    found: list[Span] = []
    occupied = list(taken)
    ordered = sorted(
        {a for a in aliases if a.strip()},
        key=lambda a: (-len(a.split()), -len(a), a.lower()),
    )
    for alias in ordered:
        alias_cores = []
        for ts, te in _tokens_with_bounds(alias):
            cs, ce = _token_core(alias, ts, te)
            if cs < ce:
                alias_cores.append(alias[cs:ce].lower())
        if not alias_cores:
            continue
        k = len(alias_cores)
        for i in range(len(toks) - k + 1):
            if all(toks[i + j][2] == alias_cores[j] for j in range(k)):
                span = Span(
                    start=toks[i][0],
                    end=toks[i + k - 1][1],
                    kind=SPAN_ALIAS,
                    text=text[toks[i][0] : toks[i + k - 1][1]],
                )
                if any(span.overlaps(o) for o in occupied):
                    continue
                occupied.append(span)
                found.append(span)
    return found


def anonymize(
    text: str, identity: CompanyIdentity, config: MatchConfig = MatchConfig()
) -> AnonymizationResult:
    """Replace every detected company reference with the replacement token.

    Possessive suffixes sit outside the spans, so "AMD's" becomes
    "<token>'s". Unmatched text is preserved byte for byte.
    """
    spans = list(find_company_spans(text, identity, config))
    spans.extend(_alias_spans(text, identity.aliases, spans))
    spans.sort(key=lambda sp: sp.start)
    pieces = []
    cursor = 0
    for sp in spans:
        pieces.append(text[cursor : sp.start])
        pieces.append(config.replacement_token)
        cursor = sp.end
    pieces.append(text[cursor:])
    return AnonymizationResult(
        original_text=text,
        replaced_text="".join(pieces),
        spans=tuple(spans),
    )
