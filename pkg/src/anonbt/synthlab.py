"""Synthetic markets with controllable look-ahead bias and distraction.

A generated world carries seeded prices, headlines tagged with a unique
marker, a latent sentiment per headline that predicts the headline's period
return with configurable accuracy, and per-firm priors. The oracle backend
scores prompts from that world: original-variant prompts (real company name
displayed) can leak the realized return with probability lambda and, for
famous firms, get overridden by the firm prior with probability delta;
replaced-variant prompts see only the latent sentiment. Every oracle draw is
a hash of (seed, headline tag), never call order, so caching and replays
stay coherent.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import random
import re
from dataclasses import asdict, dataclass
from pathlib import Path

from .anonymizer import (
    DEFAULT_REPLACEMENT_TOKEN,
    MatchConfig,
    anonymize,
    build_identity,
)
from .backtest import Strategy, daily_strategy_return
from .corpus import (
    Headline,
    PeriodScore,
    ReturnPanel,
    StockDay,
    TradingCalendar,
    aggregate_by_key,
    assign_market_period,
)
from .errors import ConfigError, ScoringError
from .scorer import (
    VARIANT_ORIGINAL,
    VARIANT_REPLACED,
    ScoreRequest,
    score_many,
)
from .stats import PairedTTestResult, paired_t_test

logger = logging.getLogger(__name__)

PRIOR_NOISE = "noise"
PRIOR_MISLEADING = "misleading"
PRIOR_MODES = (PRIOR_NOISE, PRIOR_MISLEADING)

DEFAULT_START_DATE = dt.date(2020, 1, 6)

_TAG_PATTERN = re.compile(r"synth-\d{6}")
_DISPLAY_PATTERN = re.compile(
    r"stock price of (.+) in the\s+short term", re.DOTALL
)

_SYLLABLES = (
    "ba", "ce", "do", "fa", "gi", "ho", "ju", "ka", "lo", "mi",
    "na", "po", "qua", "ri", "su", "ta", "vu", "wo", "xe", "zy",
)

WORLD_FILES = ("companies.csv", "prices.csv", "headlines.csv", "calendar.txt")
SIDECAR_FILE = "world.json"


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for world generation and the oracle's bias injection."""

    n_firms: int = 500
    n_days: int = 250
    seed: int = 0
    lookahead_strength: float = 0.0
    distraction_strength: float = 0.0
    famous_fraction: float = 0.0
    base_signal_accuracy: float = 0.9
    return_vol_bp: float = 100.0
    headline_rate: float = 0.05
    prior_mode: str = PRIOR_NOISE

    def __post_init__(self):
        if self.n_firms < 2 or self.n_days < 2:
            raise ConfigError("n_firms and n_days must both be at least 2")
        for name in (
            "lookahead_strength",
            "distraction_strength",
            "famous_fraction",
            "headline_rate",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} {value} outside [0, 1]")
        if not 0.5 <= self.base_signal_accuracy <= 1.0:
            raise ConfigError(
                f"base_signal_accuracy {self.base_signal_accuracy}"
                " outside [0.5, 1]"
            )
        if self.return_vol_bp <= 0.0:
            raise ConfigError("return_vol_bp must be positive")
        if self.prior_mode not in PRIOR_MODES:
            raise ConfigError(f"prior_mode must be one of {PRIOR_MODES}")


@dataclass
class SynthWorld:
    config: SynthConfig
    identities: dict
    calendar: TradingCalendar
    stock_days: list
    headlines: list
    panel: ReturnPanel
    latent: dict
    realized: dict
    tag_company: dict
    famous: frozenset
    priors: dict


def _trading_days(n_days: int, start: dt.date = DEFAULT_START_DATE) -> list:
    days = []
    cursor = start
    while len(days) < n_days:
        if cursor.weekday() < 5:
            days.append(cursor)
        cursor += dt.timedelta(days=1)
    return days


def _make_names(rng: random.Random, n_firms: int) -> list:
    """Distinct pseudo-words; roughly a tenth get a second word."""
    words: set = set()
    names = []
    for i in range(n_firms):
        while True:
            word = "".join(rng.choice(_SYLLABLES) for _ in range(3)).capitalize()
            if word.lower() not in words:
                words.add(word.lower())
                break
        if i % 10 == 9:
            while True:
                second = "".join(
                    rng.choice(_SYLLABLES) for _ in range(2)
                ).capitalize()
                if second.lower() not in words:
                    words.add(second.lower())
                    break
            base = f"{word} {second}"
        else:
            base = word
        suffix = "Inc" if i % 2 == 0 else "Ltd"
        names.append(f"{base} {suffix}")
    return names


def _sign(value: float) -> int:
    if value > 0:
        return 1
    if value < 0:
        return -1
    return 0


def generate_world(config: SynthConfig) -> SynthWorld:
    """Build a seeded world; identical configs give identical worlds.

    One generator drives everything, drawn in a fixed order: company names
    (firm by firm), famous flags, market caps, the price path per firm per
    day, headlines day by day then firm by firm (presence, time slot,
    accuracy), and finally one noise prior per firm. Misleading mode then
    overrides each prior with the opposite of the firm's majority realized
    headline-return sign without consuming extra draws.
    """
    rng = random.Random(config.seed)
    days = _trading_days(config.n_days)
    calendar = TradingCalendar(days)
    names = _make_names(rng, config.n_firms)
    company_ids = [f"S{i:04d}" for i in range(config.n_firms)]
    identities = {
        cid: build_identity(cid, name)
        for cid, name in zip(company_ids, names)
    }

    famous_count = round(config.famous_fraction * config.n_firms)
    famous = frozenset(
        company_ids[i] for i in rng.sample(range(config.n_firms), famous_count)
    )

    caps = {}
    for cid in company_ids:
        lo, hi = (50.0, 500.0) if cid in famous else (0.5, 50.0)
        caps[cid] = rng.uniform(lo, hi)

    stock_days = []
    for cid in company_ids:
        close = rng.uniform(20.0, 200.0)
        for day in days:
            gap_bp = rng.gauss(0.0, config.return_vol_bp * 0.5)
            intraday_bp = rng.gauss(0.0, config.return_vol_bp)
            open_price = close * (1.0 + gap_bp / 10000.0)
            close = open_price * (1.0 + intraday_bp / 10000.0)
            stock_days.append(
                StockDay(cid, day, open_price, close, caps[cid])
            )
    panel = ReturnPanel(stock_days, calendar)

    headlines = []
    latent: dict = {}
    realized: dict = {}
    tag_company: dict = {}
    counter = 0
    for day in days[:-1]:
        for cid in company_ids:
            if rng.random() >= config.headline_rate:
                continue
            slot = rng.random()
            if slot < 0.15:
                stamp = dt.datetime(day.year, day.month, day.day, 5, 30)
            elif slot < 0.75:
                stamp = dt.datetime(day.year, day.month, day.day, 10, 30)
            else:
                stamp = dt.datetime(day.year, day.month, day.day, 17, 30)
            tag = f"synth-{counter:06d}"
            counter += 1
            period = assign_market_period(stamp, calendar)
            ret = panel.period_return(cid, period)
            direction = _sign(ret) or 1
            accurate = rng.random() < config.base_signal_accuracy
            sentiment = direction if accurate else -direction
            text = f"{identities[cid].cleaned_name} files periodic update {tag}"
            headlines.append(
                Headline(
                    headline_id=tag,
                    company_id=cid,
                    text=text,
                    timestamp=stamp,
                )
            )
            latent[tag] = sentiment
            realized[tag] = ret
            tag_company[tag] = cid

    priors = {cid: rng.choice((-1, 1)) for cid in company_ids}
    if config.prior_mode == PRIOR_MISLEADING:
        majority: dict = {cid: 0 for cid in company_ids}
        for tag, cid in tag_company.items():
            majority[cid] += _sign(realized[tag])
        priors = {
            cid: -1 if majority[cid] >= 0 else 1 for cid in company_ids
        }

    return SynthWorld(
        config=config,
        identities=identities,
        calendar=calendar,
        stock_days=stock_days,
        headlines=headlines,
        panel=panel,
        latent=latent,
        realized=realized,
        tag_company=tag_company,
        famous=famous,
        priors=priors,
    )


# ── oracle backend ───────────────────────────────────────────────────────────


class OracleBackend:
    """Scores synthetic prompts with parameterized bias injection.

    The per-headline lambda and delta draws hash the world seed with the
    headline tag, making the backend a pure function of the prompt: the same
    prompt always yields the same response regardless of call order.
    """

    def __init__(
        self,
        world: SynthWorld,
        replacement_token: str = DEFAULT_REPLACEMENT_TOKEN,
    ):
        self.world = world
        self.replacement_token = replacement_token
        cfg = world.config
        # Every config field shapes responses, so all of them key the cache.
        self.backend_id = (
            f"synth:{cfg.seed}:{cfg.n_firms}x{cfg.n_days}"
            f":{cfg.lookahead_strength}:{cfg.distraction_strength}"
            f":{cfg.famous_fraction}:{cfg.base_signal_accuracy}"
            f":{cfg.return_vol_bp}:{cfg.headline_rate}:{cfg.prior_mode}"
        )
        self._by_display = {
            identity.cleaned_name: cid
            for cid, identity in world.identities.items()
        }

    def _uniform(self, tag: str, label: str) -> float:
        digest = hashlib.sha256(
            f"{self.world.config.seed}:{tag}:{label}".encode("utf-8")
        ).digest()
        return int.from_bytes(digest[:8], "big") / 2.0**64

    def complete(self, prompt: str) -> str:
        display_match = _DISPLAY_PATTERN.search(prompt)
        tag_match = _TAG_PATTERN.search(prompt)
        if display_match is None or tag_match is None:
            raise ScoringError("prompt lacks a display name or headline tag")
        display = display_match.group(1)
        tag = tag_match.group(0)
        if tag not in self.world.latent:
            raise ScoringError(f"unknown headline tag {tag}")
        score = self.world.latent[tag]
        if display != self.replacement_token:
            cid = self._by_display.get(display)
            if cid is None:
                raise ScoringError(f"unknown company name {display!r}")
            cfg = self.world.config
            if self._uniform(tag, "lookahead") < cfg.lookahead_strength:
                score = _sign(self.world.realized[tag])
            if (
                cid in self.world.famous
                and self._uniform(tag, "distraction") < cfg.distraction_strength
            ):
                score = self.world.priors[cid]
        if score > 0:
            return "YES\nThe filing points upward."
        if score < 0:
            return "NO\nThe filing points downward."
        return "UNKNOWN\nThe filing gives no direction."


# ── serialization ────────────────────────────────────────────────────────────


def _sidecar_payload(world: SynthWorld) -> dict:
    return {
        "config": asdict(world.config),
        "famous": sorted(world.famous),
        "priors": dict(sorted(world.priors.items())),
        "latent": dict(sorted(world.latent.items())),
        "realized": dict(sorted(world.realized.items())),
        "tag_company": dict(sorted(world.tag_company.items())),
    }


def write_world(world: SynthWorld, out_dir) -> None:
    """Emit the world in the corpus CSV schemas plus the oracle sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "companies.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["company_id", "official_name"])
        for cid in sorted(world.identities):
            writer.writerow([cid, world.identities[cid].official_name])
    with open(out / "prices.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["company_id", "date", "open", "close", "market_cap_busd"])
        for row in world.stock_days:
            writer.writerow(
                [
                    row.company_id,
                    row.date.isoformat(),
                    repr(row.open_price),
                    repr(row.close_price),
                    repr(row.market_cap_busd),
                ]
            )
    with open(out / "headlines.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["headline_id", "company_id", "timestamp_et", "text"])
        for h in world.headlines:
            writer.writerow(
                [h.headline_id, h.company_id, h.timestamp.isoformat(), h.text]
            )
    with open(out / "calendar.txt", "w", encoding="utf-8") as fh:
        for day in world.calendar.dates:
            fh.write(day.isoformat() + "\n")
    sidecar = json.dumps(
        _sidecar_payload(world), sort_keys=True, separators=(",", ":")
    )
    (out / SIDECAR_FILE).write_text(sidecar, encoding="utf-8")


def world_digest(world: SynthWorld) -> str:
    """Stable content hash over the sidecar payload."""
    payload = json.dumps(
        _sidecar_payload(world), sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def load_world(world_dir) -> SynthWorld:
    """Rebuild a world from write_world output."""
    from .corpus import load_companies, load_headlines, load_prices

    root = Path(world_dir)
    sidecar = json.loads((root / SIDECAR_FILE).read_text(encoding="utf-8"))
    config = SynthConfig(**sidecar["config"])
    calendar = TradingCalendar.from_file(root / "calendar.txt")
    identities = load_companies(root / "companies.csv")
    panel = load_prices(root / "prices.csv", calendar)
    headlines = load_headlines(root / "headlines.csv")
    stock_days = [
        StockDay(cid, day, panel._open[(cid, day)], panel._close[(cid, day)],
                 panel._cap[(cid, day)])
        for cid in panel.companies
        for day in panel.dates
        if (cid, day) in panel._close
    ]
    return SynthWorld(
        config=config,
        identities=identities,
        calendar=calendar,
        stock_days=stock_days,
        headlines=headlines,
        panel=panel,
        latent=dict(sidecar["latent"]),
        realized=dict(sidecar["realized"]),
        tag_company=dict(sidecar["tag_company"]),
        famous=frozenset(sidecar["famous"]),
        priors=dict(sidecar["priors"]),
    )


# ── end-to-end experiment ────────────────────────────────────────────────────


@dataclass(frozen=True)
class BiasExperimentResult:
    config: SynthConfig
    n_headlines: int
    dates: tuple
    daily_original: tuple
    daily_replaced: tuple
    mean_original: float
    mean_replaced: float
    paired: PairedTTestResult


def run_bias_experiment(
    config: SynthConfig, match_config: MatchConfig | None = None
) -> BiasExperimentResult:
    """Full measurement loop on one synthetic world.

    Generates the world, anonymizes every headline, scores both variants
    through the oracle, aggregates to company-period signals, runs the
    long-short backtest per variant day by day, and pairs the two series.
    """
    match_config = match_config or MatchConfig()
    world = generate_world(config)
    backend = OracleBackend(world, match_config.replacement_token)
    requests = []
    periods = {}
    for h in world.headlines:
        identity = world.identities[h.company_id]
        replaced_text = anonymize(h.text, identity, match_config).replaced_text
        periods[h.headline_id] = assign_market_period(
            h.timestamp, world.calendar
        )
        requests.append(
            ScoreRequest(
                h.headline_id, VARIANT_ORIGINAL, identity.cleaned_name, h.text
            )
        )
        requests.append(
            ScoreRequest(
                h.headline_id,
                VARIANT_REPLACED,
                match_config.replacement_token,
                replaced_text,
            )
        )
    scored = score_many(requests, backend, cache=None, max_workers=1)
    period_scores = [
        PeriodScore(
            world.tag_company[s.headline_id],
            periods[s.headline_id],
            s.variant,
            s.score,
        )
        for s in scored
    ]
    signals = aggregate_by_key(period_scores)
    by_date: dict = {}
    for signal in signals:
        by_date.setdefault(
            (signal.period.trade_date, signal.variant), []
        ).append(signal)

    daily: dict = {VARIANT_ORIGINAL: [], VARIANT_REPLACED: []}
    for day in world.calendar.dates:
        for variant in (VARIANT_ORIGINAL, VARIANT_REPLACED):
            day_signals = by_date.get((day, variant), [])
            result = daily_strategy_return(
                day, day_signals, world.panel, Strategy.LONG_SHORT, variant
            )
            daily[variant].append(result.return_bp)
    orig = daily[VARIANT_ORIGINAL]
    repl = daily[VARIANT_REPLACED]
    return BiasExperimentResult(
        config=config,
        n_headlines=len(world.headlines),
        dates=tuple(world.calendar.dates),
        daily_original=tuple(orig),
        daily_replaced=tuple(repl),
        mean_original=sum(orig) / len(orig),
        mean_replaced=sum(repl) / len(repl),
        paired=paired_t_test(orig, repl),
    )
