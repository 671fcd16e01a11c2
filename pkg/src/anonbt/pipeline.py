"""Sequential pipeline stages over flat-file intermediates.

Each stage reads the previous stage's files from the output directory and
writes its own, so any stage can be re-run in isolation and every
intermediate can be inspected or diffed. All writes are deterministic:
fixed row orders, repr floats, canonical JSON. A failed stage leaves a
FAILED marker beside whatever partial outputs exist.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .aliasstore import AliasStore
from .anonymizer import anonymize
from .backtest import (
    VARIANT_BOTH,
    Strategy,
    all_news_portfolio,
    daily_strategy_return,
    market_benchmarks,
    write_day_returns,
)
from .config import (
    BACKEND_HTTP,
    MODE_SYNTHETIC,
    RunConfig,
    validate_inputs,
)
from .corpus import (
    CompanyPeriodSignal,
    MarketPeriod,
    PeriodScore,
    Session,
    TradingCalendar,
    aggregate_by_key,
    assign_market_period,
    load_companies,
    load_headlines,
    load_prices,
)
from .errors import (
    AnonbtError,
    BenchmarkUnavailableError,
    CalendarRangeError,
    ConfigError,
    StageError,
    StatsError,
)
from .scorer import (
    VARIANT_ORIGINAL,
    VARIANT_REPLACED,
    HttpChatBackend,
    LexiconBackend,
    PromptCache,
    ReplayBackend,
    ScoreRequest,
    TokenBucket,
    score_many,
)
from .special import student_t_two_sided_p
from .stats import (
    PanelObservation,
    beta_difference_test,
    cap_category,
    capm_regression,
    classification_table,
    market_cap_comparison,
    paired_t_test,
    significance_stars,
    stacked_sur,
)
from .synthlab import OracleBackend, generate_world, load_world, write_world

logger = logging.getLogger(__name__)

STAGES = ("anonymize", "score", "align", "backtest", "stats", "report")
SYNTH_STAGE = "synth"

IN_SAMPLE = "in_sample"
OUT_OF_SAMPLE = "out_of_sample"
SAMPLE_BUCKETS = (IN_SAMPLE, OUT_OF_SAMPLE)

ANONYMIZED_FILE = "anonymized.csv"
SPANS_FILE = "spans.csv"
SCORES_FILE = "scores.csv"
SIGNALS_FILE = "signals.csv"
DAY_RETURNS_FILE = "day_returns.csv"
BENCHMARKS_FILE = "benchmarks.csv"
STATS_FILE = "stats.json"
FAILED_MARKER = "FAILED"
WORLD_DIR = "world"


@dataclass
class HeadlineRecord:
    """One row of the anonymize stage's output."""

    headline_id: str
    company_id: str
    timestamp: dt.datetime
    original_text: str
    replaced_text: str


class PipelineContext:
    """Shared inputs for stage functions, loaded once and memoized."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self._world = None
        self._calendar = None
        self._identities = None
        self._panel = None
        self._headlines = None

    # Synthetic worlds are generated by the synth stage and reloaded from
    # disk by later stages so each stage stays independently runnable.
    @property
    def world(self):
        if self._world is None:
            world_dir = self.out / WORLD_DIR
            if not world_dir.exists():
                raise StageError(
                    SYNTH_STAGE,
                    f"no generated world at {world_dir}; run the synth stage",
                )
            self._world = load_world(world_dir)
        return self._world

    @property
    def calendar(self) -> TradingCalendar:
        if self._calendar is None:
            if self.config.mode == MODE_SYNTHETIC:
                self._calendar = self.world.calendar
            else:
                self._calendar = TradingCalendar.from_file(self.config.calendar)
        return self._calendar

    @property
    def identities(self) -> dict:
        if self._identities is None:
            if self.config.mode == MODE_SYNTHETIC:
                self._identities = self.world.identities
            else:
                aliases: dict = {}
                if self.config.aliases is not None:
                    for record in AliasStore(self.config.aliases).load():
                        aliases[record.company_id] = record.aliases
                self._identities = load_companies(
                    self.config.companies, aliases, self.config.match
                )
        return self._identities

    @property
    def panel(self):
        if self._panel is None:
            if self.config.mode == MODE_SYNTHETIC:
                self._panel = self.world.panel
            else:
                self._panel = load_prices(self.config.prices, self.calendar)
        return self._panel

    @property
    def headlines(self) -> list:
        if self._headlines is None:
            if self.config.mode == MODE_SYNTHETIC:
                self._headlines = self.world.headlines
            else:
                self._headlines = load_headlines(self.config.headlines)
        return self._headlines

    def trading_dates(self) -> list:
        start = self.config.in_sample_start
        end = self.config.out_of_sample_end
        return [d for d in self.calendar.dates if start <= d <= end]

    def bucket(self, date: dt.date) -> str:
        return IN_SAMPLE if self.config.in_sample(date) else OUT_OF_SAMPLE


# ── anonymize ────────────────────────────────────────────────────────────────


def stage_anonymize(ctx: PipelineContext) -> list:
    """Replace company identifiers in every headline; persist spans too."""
    identities = ctx.identities
    rows = sorted(ctx.headlines, key=lambda h: h.headline_id)
    out_path = ctx.out / ANONYMIZED_FILE
    span_path = ctx.out / SPANS_FILE
    n_modified = 0
    with open(out_path, "w", encoding="utf-8", newline="") as out_fh, open(
        span_path, "w", encoding="utf-8", newline=""
    ) as span_fh:
        writer = csv.writer(out_fh)
        writer.writerow(
            [
                "headline_id",
                "company_id",
                "timestamp_et",
                "original_text",
                "replaced_text",
                "modified",
            ]
        )
        span_writer = csv.writer(span_fh)
        span_writer.writerow(["headline_id", "start", "end", "kind", "text"])
        for headline in rows:
            identity = identities.get(headline.company_id)
            if identity is None:
                raise StageError(
                    "anonymize",
                    f"headline {headline.headline_id}: unknown company "
                    f"{headline.company_id!r}",
                )
            result = anonymize(headline.text, identity, ctx.config.match)
            n_modified += 1 if result.modified else 0
            writer.writerow(
                [
                    headline.headline_id,
                    headline.company_id,
                    headline.timestamp.isoformat(),
                    result.original_text,
                    result.replaced_text,
                    "true" if result.modified else "false",
                ]
            )
            for span in result.spans:
                span_writer.writerow(
                    [headline.headline_id, span.start, span.end, span.kind, span.text]
                )
    logger.info(
        "anonymize: %d headlines, %d modified", len(rows), n_modified
    )
    return [ANONYMIZED_FILE, SPANS_FILE]


def read_anonymized(out_dir, stage: str = "score") -> list:
    path = Path(out_dir) / ANONYMIZED_FILE
    if not path.exists():
        raise StageError(
            stage, f"missing {ANONYMIZED_FILE}; run the anonymize stage"
        )
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            records.append(
                HeadlineRecord(
                    headline_id=rec["headline_id"],
                    company_id=rec["company_id"],
                    timestamp=dt.datetime.fromisoformat(rec["timestamp_et"]),
                    original_text=rec["original_text"],
                    replaced_text=rec["replaced_text"],
                )
            )
    return records


# ── score ────────────────────────────────────────────────────────────────────


def build_backend(ctx: PipelineContext):
    """Pick the scoring backend; offline mode wraps it in cache replay."""
    config = ctx.config
    if config.mode == MODE_SYNTHETIC:
        inner = OracleBackend(ctx.world, config.match.replacement_token)
    elif config.backend.kind == BACKEND_HTTP:
        limiter = (
            TokenBucket(config.backend.requests_per_minute)
            if config.backend.requests_per_minute
            else None
        )
        inner = HttpChatBackend(
            base_url=config.backend.base_url,
            model=config.backend.model,
            key_env=config.backend.key_env,
            timeout=config.backend.timeout,
            retries=config.backend.retries,
            rate_limiter=limiter,
        )
    else:
        inner = LexiconBackend()
    if config.offline:
        return ReplayBackend(inner.backend_id)
    return inner


def stage_score(ctx: PipelineContext) -> list:
    """Score original and replaced variants of every anonymized headline."""
    records = read_anonymized(ctx.out)
    identities = ctx.identities
    token = ctx.config.match.replacement_token
    requests = []
    for rec in records:
        identity = identities.get(rec.company_id)
        if identity is None:
            raise StageError(
                "score",
                f"headline {rec.headline_id}: unknown company "
                f"{rec.company_id!r}",
            )
        requests.append(
            ScoreRequest(
                rec.headline_id,
                VARIANT_ORIGINAL,
                identity.cleaned_name,
                rec.original_text,
            )
        )
        requests.append(
            ScoreRequest(
                rec.headline_id, VARIANT_REPLACED, token, rec.replaced_text
            )
        )
    backend = build_backend(ctx)
    cache_dir = Path(ctx.config.cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    cache = PromptCache(cache_dir)
    scored = score_many(
        requests, backend, cache, max_workers=ctx.config.backend.max_workers
    )
    path = ctx.out / SCORES_FILE
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "headline_id",
                "variant",
                "score",
                "parse_status",
                "backend_id",
                "first_line",
            ]
        )
        for item in scored:
            writer.writerow(
                [
                    item.headline_id,
                    item.variant,
                    item.score,
                    item.parse_status,
                    item.backend_id,
                    item.raw_first_line,
                ]
            )
    logger.info("score: %d responses via %s", len(scored), backend.backend_id)
    return [SCORES_FILE]


def read_scores(out_dir, stage: str = "align") -> list:
    path = Path(out_dir) / SCORES_FILE
    if not path.exists():
        raise StageError(stage, f"missing {SCORES_FILE}; run the score stage")
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                (
                    rec["headline_id"],
                    rec["variant"],
                    int(rec["score"]),
                    rec["backend_id"],
                )
            )
    return rows


# ── align ────────────────────────────────────────────────────────────────────


def _headline_periods(ctx: PipelineContext, stage: str) -> tuple:
    """Market period per headline id; out-of-range timestamps drop out."""
    records = read_anonymized(ctx.out, stage)
    periods: dict = {}
    companies: dict = {}
    dropped = 0
    start = ctx.config.in_sample_start
    end = ctx.config.out_of_sample_end
    for rec in records:
        try:
            period = assign_market_period(rec.timestamp, ctx.calendar)
        except CalendarRangeError:
            dropped += 1
            continue
        if not start <= period.trade_date <= end:
            dropped += 1
            continue
        periods[rec.headline_id] = period
        companies[rec.headline_id] = rec.company_id
    if dropped:
        logger.warning(
            "align: %d headlines outside the configured window", dropped
        )
    return periods, companies


def stage_align(ctx: PipelineContext) -> list:
    """Aggregate headline scores into company-period signals."""
    periods, companies = _headline_periods(ctx, "align")
    period_scores = []
    for headline_id, variant, score, _ in read_scores(ctx.out):
        period = periods.get(headline_id)
        if period is None:
            continue
        period_scores.append(
            PeriodScore(companies[headline_id], period, variant, score)
        )
    signals = aggregate_by_key(period_scores)
    path = ctx.out / SIGNALS_FILE
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "company_id",
                "trade_date",
                "session",
                "variant",
                "value",
                "headline_count",
            ]
        )
        for s in signals:
            writer.writerow(
                [
                    s.company_id,
                    s.period.trade_date.isoformat(),
                    s.period.session.value,
                    s.variant,
                    repr(s.value),
                    s.headline_count,
                ]
            )
    logger.info("align: %d signals", len(signals))
    return [SIGNALS_FILE]


def read_signals(out_dir) -> list:
    path = Path(out_dir) / SIGNALS_FILE
    if not path.exists():
        raise StageError(
            "backtest", f"missing {SIGNALS_FILE}; run the align stage"
        )
    signals = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            signals.append(
                CompanyPeriodSignal(
                    company_id=rec["company_id"],
                    period=MarketPeriod(
                        dt.date.fromisoformat(rec["trade_date"]),
                        Session(rec["session"]),
                    ),
                    variant=rec["variant"],
                    value=float(rec["value"]),
                    headline_count=int(rec["headline_count"]),
                )
            )
    return signals


# ── backtest ─────────────────────────────────────────────────────────────────


def stage_backtest(ctx: PipelineContext) -> list:
    """Daily portfolio returns per strategy and variant, plus benchmarks."""
    signals = read_signals(ctx.out)
    by_key: dict = {}
    for signal in signals:
        by_key.setdefault(
            (signal.period.trade_date, signal.variant), []
        ).append(signal)
    rows = []
    dates = ctx.trading_dates()
    for date in dates:
        for strategy in ctx.config.strategies:
            for variant in (VARIANT_ORIGINAL, VARIANT_REPLACED):
                rows.append(
                    daily_strategy_return(
                        date,
                        by_key.get((date, variant), []),
                        ctx.panel,
                        strategy,
                        variant,
                    )
                )
        rows.append(
            all_news_portfolio(
                date, ctx.headlines, ctx.calendar, ctx.panel, VARIANT_BOTH
            )
        )
    write_day_returns(
        ctx.out / DAY_RETURNS_FILE, rows, ctx.config.empty_day_policy
    )
    skipped = 0
    with open(
        ctx.out / BENCHMARKS_FILE, "w", encoding="utf-8", newline=""
    ) as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "market_ew_bp", "market_vw_bp"])
        # Booked forward like the strategies: the row for date d covers the
        # close of d through the next close, the same window the factor
        # regressions use.
        for date in dates:
            try:
                sell = ctx.calendar.next_after(date)
                ew, vw = market_benchmarks(sell, ctx.panel)
            except (CalendarRangeError, BenchmarkUnavailableError):
                skipped += 1
                continue
            writer.writerow([date.isoformat(), repr(ew), repr(vw)])
    if skipped:
        logger.info("backtest: no benchmark on %d dates", skipped)
    return [DAY_RETURNS_FILE, BENCHMARKS_FILE]


def read_day_returns(out_dir, stage: str = "stats") -> list:
    path = Path(out_dir) / DAY_RETURNS_FILE
    if not path.exists():
        raise StageError(
            stage, f"missing {DAY_RETURNS_FILE}; run the backtest stage"
        )
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                {
                    "date": dt.date.fromisoformat(rec["date"]),
                    "strategy": rec["strategy"],
                    "variant": rec["variant"],
                    "return_bp": float(rec["return_bp"]),
                    "empty_day": rec["empty_day"] == "true",
                }
            )
    return rows


# ── stats ────────────────────────────────────────────────────────────────────


def _paired_comparisons(ctx, day_rows, notices) -> list:
    series: dict = {}
    for row in day_rows:
        key = (row["strategy"], ctx.bucket(row["date"]), row["variant"])
        series.setdefault(key, {})[row["date"]] = row["return_bp"]
    entries = []
    for strategy in ctx.config.strategies:
        for bucket in SAMPLE_BUCKETS:
            orig = series.get((strategy.value, bucket, VARIANT_ORIGINAL), {})
            repl = series.get((strategy.value, bucket, VARIANT_REPLACED), {})
            shared = sorted(set(orig) & set(repl))
            if len(shared) < 2:
                notices.append(
                    f"comparison {strategy.value}/{bucket} skipped:"
                    f" {len(shared)} paired days"
                )
                continue
            try:
                result = paired_t_test(
                    [orig[d] for d in shared], [repl[d] for d in shared]
                )
            except StatsError as exc:
                notices.append(
                    f"comparison {strategy.value}/{bucket} skipped: {exc}"
                )
                continue
            entries.append(
                {
                    "strategy": strategy.value,
                    "sample": bucket,
                    "n_days": result.n,
                    "mean_original": result.mean_a,
                    "sd_original": result.sd_a,
                    "mean_replaced": result.mean_b,
                    "sd_replaced": result.sd_b,
                    "t_stat": result.t,
                    "p_value": result.p,
                }
            )
    return entries


def _headline_observations(ctx) -> dict:
    """Per-bucket (orig_score, rep_score, realized return) triples."""
    periods, companies = _headline_periods(ctx, "stats")
    scores: dict = {}
    for headline_id, variant, score, _ in read_scores(ctx.out, "stats"):
        scores.setdefault(headline_id, {})[variant] = score
    buckets: dict = {IN_SAMPLE: [], OUT_OF_SAMPLE: []}
    missing = 0
    for headline_id in sorted(periods):
        pair = scores.get(headline_id, {})
        if set(pair) != {VARIANT_ORIGINAL, VARIANT_REPLACED}:
            missing += 1
            continue
        period = periods[headline_id]
        ret = ctx.panel.period_return(companies[headline_id], period)
        if ret is None:
            missing += 1
            continue
        buckets[ctx.bucket(period.trade_date)].append(
            (
                headline_id,
                companies[headline_id],
                period,
                pair[VARIANT_ORIGINAL],
                pair[VARIANT_REPLACED],
                ret,
            )
        )
    if missing:
        logger.info(
            "stats: %d headlines lack a score pair or a realized return",
            missing,
        )
    return buckets


def _classification_entries(observations, notices) -> dict:
    tables = {}
    for bucket, rows in observations.items():
        triples = [(orig, rep, ret) for _, _, _, orig, rep, ret in rows]
        if not triples:
            notices.append(f"classification {bucket} skipped: no observations")
            continue
        cells = classification_table(triples)
        tables[bucket] = [
            {
                "orig_category": cell.orig_category,
                "rep_category": cell.rep_category,
                "orig_ret_bp": cell.orig_ret_bp,
                "rep_ret_bp": cell.rep_ret_bp,
                "proportion": cell.proportion,
            }
            for cell in cells
        ]
    return tables


def _market_cap_entries(ctx, signals, notices) -> dict:
    pairs: dict = {IN_SAMPLE: [], OUT_OF_SAMPLE: []}
    skipped = 0
    for signal in signals:
        if signal.variant != VARIANT_ORIGINAL:
            continue
        date = signal.period.trade_date
        cap = ctx.panel.market_cap(signal.company_id, date)
        if cap is None:
            try:
                prev = ctx.calendar.prev_before(date)
                cap = ctx.panel.market_cap(signal.company_id, prev)
            except CalendarRangeError:
                cap = None
        if cap is None:
            skipped += 1
            continue
        pairs[ctx.bucket(date)].append((cap_category(signal.value), cap))
    if skipped:
        logger.info("stats: %d signals lack a market cap", skipped)
    out = {}
    for bucket, items in pairs.items():
        if not items:
            notices.append(f"market cap {bucket} skipped: no observations")
            continue
        result = market_cap_comparison(items)
        notices.extend(f"market cap {bucket}: {n}" for n in result.notices)

        def test_payload(test):
            if test is None:
                return None
            return {
                "diff": test.mean_a - test.mean_b,
                "t_stat": test.t,
                "p_value": test.p,
                "stars": significance_stars(test.p),
            }

        out[bucket] = {
            "categories": {
                name: {
                    "mean": stat.mean,
                    "sd": stat.sd,
                    "n_obs": stat.count,
                }
                for name, stat in sorted(result.stats.items())
            },
            "long_vs_other": test_payload(result.long_vs_other),
            "short_vs_other": test_payload(result.short_vs_other),
        }
    return out


def _sur_entries(ctx, signals, notices) -> dict:
    grouped: dict = {}
    for signal in signals:
        key = (signal.company_id, signal.period)
        grouped.setdefault(key, {})[signal.variant] = signal.value
    buckets: dict = {IN_SAMPLE: [], OUT_OF_SAMPLE: []}
    for (company_id, period), values in sorted(
        grouped.items(), key=lambda item: (item[0][0], item[0][1].sort_key)
    ):
        if set(values) != {VARIANT_ORIGINAL, VARIANT_REPLACED}:
            continue
        ret = ctx.panel.period_return(company_id, period)
        if ret is None:
            continue
        buckets[ctx.bucket(period.trade_date)].append(
            (company_id, period.sort_key, ret, values)
        )
    out = {}
    for bucket, rows in buckets.items():
        period_index = {
            key: i
            for i, key in enumerate(sorted({r[1] for r in rows}))
        }
        observations = [
            PanelObservation(
                company_id=company_id,
                period_index=period_index[sort_key],
                next_return_bp=ret,
                original_score=values[VARIANT_ORIGINAL],
                replaced_score=values[VARIANT_REPLACED],
            )
            for company_id, sort_key, ret, values in rows
        ]
        try:
            result = stacked_sur(observations)
        except StatsError as exc:
            notices.append(f"sur {bucket} skipped: {exc}")
            continue
        cov = result.covariance
        se_orig = cov[0][0] ** 0.5
        se_repl = cov[1][1] ** 0.5
        out[bucket] = {
            "original_coef": result.beta_original,
            "original_se": se_orig,
            "original_t": result.beta_original / se_orig if se_orig else 0.0,
            "replaced_coef": result.beta_replaced,
            "replaced_se": se_repl,
            "replaced_t": result.beta_replaced / se_repl if se_repl else 0.0,
            "wald": result.wald,
            "p_value": result.p,
            "n_obs": result.n_obs,
        }
    return out


def _capm_entries(ctx, day_rows, notices) -> tuple:
    capm_strategy = (
        Strategy.LONG_SHORT
        if Strategy.LONG_SHORT in ctx.config.strategies
        else ctx.config.strategies[0]
    )
    series: dict = {}
    for row in day_rows:
        if row["strategy"] != capm_strategy.value:
            continue
        key = (ctx.bucket(row["date"]), row["variant"])
        series.setdefault(key, {})[row["date"]] = row["return_bp"]
    capm: dict = {}
    for bucket in SAMPLE_BUCKETS:
        for variant in (VARIANT_ORIGINAL, VARIANT_REPLACED):
            returns = series.get((bucket, variant), {})
            paired = [
                (returns[d], ctx.panel.rm_minus_rf(d))
                for d in sorted(returns)
                if ctx.panel.rm_minus_rf(d) is not None
            ]
            if len(paired) < 3:
                notices.append(
                    f"capm {bucket}/{variant} skipped:"
                    f" {len(paired)} usable days"
                )
                continue
            try:
                result = capm_regression(
                    [p[0] for p in paired], [p[1] for p in paired]
                )
            except StatsError as exc:
                notices.append(f"capm {bucket}/{variant} skipped: {exc}")
                continue
            df = result.n_obs - 2
            alpha_p = student_t_two_sided_p(result.t_stats[0], df)
            beta_p = student_t_two_sided_p(result.t_stats[1], df)
            capm[f"{bucket}/{variant}"] = {
                "sample": bucket,
                "variant": variant,
                "strategy": capm_strategy.value,
                "alpha": result.coefficients[0],
                "alpha_se": result.standard_errors[0],
                "alpha_t": result.t_stats[0],
                "alpha_p": alpha_p,
                "alpha_stars": significance_stars(alpha_p),
                "beta": result.coefficients[1],
                "beta_se": result.standard_errors[1],
                "beta_t": result.t_stats[1],
                "beta_p": beta_p,
                "beta_stars": significance_stars(beta_p),
                "n_obs": result.n_obs,
                "r_squared": result.r_squared,
            }
    diffs = {}
    for variant in (VARIANT_ORIGINAL, VARIANT_REPLACED):
        inside = capm.get(f"{IN_SAMPLE}/{variant}")
        outside = capm.get(f"{OUT_OF_SAMPLE}/{variant}")
        if inside is None or outside is None:
            notices.append(
                f"beta difference {variant} skipped: needs both periods"
            )
            continue
        result = beta_difference_test(
            inside["beta"],
            inside["beta_se"],
            outside["beta"],
            outside["beta_se"],
        )
        diffs[variant] = {
            "variant": variant,
            "beta_in_sample": inside["beta"],
            "beta_out_of_sample": outside["beta"],
            "abs_diff": result.diff,
            "se_diff": result.se_diff,
            "t_stat": result.t,
            "p_value": result.p,
            "stars": significance_stars(result.p),
        }
    return capm, diffs


def stage_stats(ctx: PipelineContext) -> list:
    """Compute every comparison and regression; persist one JSON payload."""
    day_rows = read_day_returns(ctx.out)
    signals = read_signals(ctx.out)
    notices: list = []
    observations = _headline_observations(ctx)
    capm, beta_diffs = _capm_entries(ctx, day_rows, notices)
    payload = {
        "comparison": _paired_comparisons(ctx, day_rows, notices),
        "classification": _classification_entries(observations, notices),
        "market_cap": _market_cap_entries(ctx, signals, notices),
        "sur": _sur_entries(ctx, signals, notices),
        "capm": capm,
        "beta_difference": beta_diffs,
        "counts": {
            "n_headlines": len(read_anonymized(ctx.out, "stats")),
            "n_signals": len(signals),
            "n_observations": {
                bucket: len(rows) for bucket, rows in observations.items()
            },
        },
        "notices": sorted(notices),
    }
    path = ctx.out / STATS_FILE
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return [STATS_FILE]


def stage_report(ctx: PipelineContext) -> list:
    from .report import render_report

    return render_report(ctx)


_STAGE_FUNCS = {
    "anonymize": stage_anonymize,
    "score": stage_score,
    "align": stage_align,
    "backtest": stage_backtest,
    "stats": stage_stats,
    "report": stage_report,
}


def stage_synth(ctx: PipelineContext) -> list:
    """Generate the synthetic world the remaining stages consume."""
    if ctx.config.mode != MODE_SYNTHETIC:
        raise ConfigError("synth stage requires mode: synthetic")
    world = generate_world(ctx.config.synth)
    write_world(world, ctx.out / WORLD_DIR)
    ctx._world = world
    logger.info(
        "synth: %d firms, %d days, %d headlines",
        ctx.config.synth.n_firms,
        ctx.config.synth.n_days,
        len(world.headlines),
    )
    return [f"{WORLD_DIR}/{name}" for name in (
        "companies.csv", "prices.csv", "headlines.csv", "calendar.txt",
        "world.json",
    )]


def _run_guarded(ctx: PipelineContext, stage: str) -> list:
    func = stage_synth if stage == SYNTH_STAGE else _STAGE_FUNCS[stage]
    try:
        return func(ctx)
    except StageError:
        raise
    except AnonbtError as exc:
        raise StageError(stage, str(exc)) from exc


def run_stage(config: RunConfig, stage: str) -> list:
    """Run one stage against existing intermediates."""
    if stage != SYNTH_STAGE and stage not in _STAGE_FUNCS:
        raise ConfigError(
            f"unknown stage {stage!r}; choose from "
            f"{', '.join((SYNTH_STAGE,) + STAGES)}"
        )
    validate_inputs(config, [stage])
    ctx = PipelineContext(config)
    ctx.out.mkdir(parents=True, exist_ok=True)
    marker = ctx.out / FAILED_MARKER
    try:
        written = _run_guarded(ctx, stage)
    except StageError as exc:
        marker.write_text(f"{exc}\n", encoding="utf-8")
        raise
    if marker.exists():
        marker.unlink()
    return written


def run_pipeline(config: RunConfig) -> list:
    """Execute every stage in order; synthetic mode generates first."""
    stages = list(STAGES)
    if config.mode == MODE_SYNTHETIC:
        stages.insert(0, SYNTH_STAGE)
    validate_inputs(config, stages)
    ctx = PipelineContext(config)
    ctx.out.mkdir(parents=True, exist_ok=True)
    marker = ctx.out / FAILED_MARKER
    written = []
    for stage in stages:
        try:
            written.extend(_run_guarded(ctx, stage))
        except StageError as exc:
            marker.write_text(f"{exc}\n", encoding="utf-8")
            raise
    if marker.exists():
        marker.unlink()
    return written
