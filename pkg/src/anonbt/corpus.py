"""Headline and price ingestion, trading-calendar alignment, return panels.

Timestamps are Eastern wall-clock; offset-aware inputs are converted. Returns
are basis points throughout. The market excess-return series is derived from
the price table itself (value-weighted close-to-close, zero risk-free rate),
keyed by the trade date whose forward window it covers.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from enum import Enum
from zoneinfo import ZoneInfo

from .anonymizer import CompanyIdentity, MatchConfig, build_identity
from .errors import CalendarRangeError, CorpusError

logger = logging.getLogger(__name__)

EASTERN = ZoneInfo("America/New_York")
DAYTIME_START = dt.time(6, 0)
DAYTIME_END = dt.time(16, 0)

MAX_ALIASES = 20


class Session(Enum):
    OPEN_TO_CLOSE = "OpenToClose"
    CLOSE_TO_CLOSE = "CloseToClose"


@dataclass(frozen=True)
class MarketPeriod:
    trade_date: dt.date
    session: Session

    def __post_init__(self):
        if not isinstance(self.session, Session):
            raise CorpusError(f"invalid session {self.session!r}")

    @property
    def sort_key(self) -> tuple:
        return (self.trade_date, self.session.value)


@dataclass(frozen=True)
class Headline:
    headline_id: str
    company_id: str
    text: str
    timestamp: dt.datetime


@dataclass(frozen=True)
class StockDay:
    company_id: str
    date: dt.date
    open_price: float
    close_price: float
    market_cap_busd: float


@dataclass(frozen=True)
class PeriodScore:
    """One headline's score keyed for aggregation."""

    company_id: str
    period: MarketPeriod
    variant: str
    score: float


@dataclass(frozen=True)
class CompanyPeriodSignal:
    company_id: str
    period: MarketPeriod
    variant: str
    value: float
    headline_count: int


class TradingCalendar:
    """Sorted list of trading dates with forward/backward lookups."""

    def __init__(self, dates):
        uniq = sorted(set(dates))
        if not uniq:
            raise CorpusError("trading calendar is empty")
        self._dates = uniq
        self._set = set(uniq)

    @classmethod
    def from_file(cls, path) -> "TradingCalendar":
        dates = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.strip()
                if not text:
                    continue
                try:
                    dates.append(dt.date.fromisoformat(text))
                except ValueError as exc:
                    raise CorpusError(
                        f"{path}: line {lineno}: bad calendar date {text!r}"
                    ) from exc
        return cls(dates)

    @property
    def first(self) -> dt.date:
        return self._dates[0]

    @property
    def last(self) -> dt.date:
        return self._dates[-1]

    @property
    def dates(self) -> list[dt.date]:
        return list(self._dates)

    def is_trading(self, date: dt.date) -> bool:
        return date in self._set

    def next_after(self, date: dt.date) -> dt.date:
        """First trading day strictly after date."""
        i = bisect_right(self._dates, date)
        if i >= len(self._dates):
            raise CalendarRangeError(f"no trading day after {date}")
        return self._dates[i]

    def roll_forward(self, date: dt.date) -> dt.date:
        """date itself when trading, else the next trading day."""
        i = bisect_left(self._dates, date)
        if i >= len(self._dates):
            raise CalendarRangeError(f"no trading day on or after {date}")
        return self._dates[i]

    def prev_before(self, date: dt.date) -> dt.date:
        """Last trading day strictly before date."""
        i = bisect_left(self._dates, date)
        if i == 0:
            raise CalendarRangeError(f"no trading day before {date}")
        return self._dates[i - 1]


def assign_market_period(
    timestamp: dt.datetime, calendar: TradingCalendar
) -> MarketPeriod:
    """Map one Eastern timestamp to the market period its signal trades.

    [06:00, 16:00) buys the assigned day's close and sells the next close;
    16:00 onward and the small hours before 06:00 trade the next session's
    open-to-close window. Non-trading dates roll forward.
    """
    if timestamp.tzinfo is not None:
        timestamp = timestamp.astimezone(EASTERN)
    t = timestamp.time()
    d = timestamp.date()
    if DAYTIME_START <= t < DAYTIME_END:
        return MarketPeriod(calendar.roll_forward(d), Session.CLOSE_TO_CLOSE)
    if t >= DAYTIME_END:
        return MarketPeriod(calendar.next_after(d), Session.OPEN_TO_CLOSE)
    return MarketPeriod(calendar.roll_forward(d), Session.OPEN_TO_CLOSE)


def aggregate_scores(scored) -> CompanyPeriodSignal:
    """Average headline scores that share one (company, period, variant).

    Multiple same-period headlines collapse to their arithmetic mean, so the
    signal lies in [-1, 1] whenever the inputs do.
    """
    items = list(scored)
    if not items:
        raise CorpusError("aggregate_scores: empty input")
    key = (items[0].company_id, items[0].period, items[0].variant)
    for item in items[1:]:
        if (item.company_id, item.period, item.variant) != key:
            raise CorpusError(
                "aggregate_scores: inputs mix companies, periods, or variants"
            )
    values = [float(item.score) for item in items]
    return CompanyPeriodSignal(
        company_id=key[0],
        period=key[1],
        variant=key[2],
        value=sum(values) / len(values),
        headline_count=len(values),
    )


def aggregate_by_key(scored) -> list:
    """Group period scores on (company, period, variant) and average each.

    Output order is deterministic: company, then period, then variant.
    """
    groups: dict = {}
    for item in scored:
        key = (item.company_id, item.period.sort_key, item.variant)
        groups.setdefault(key, []).append(item)
    return [aggregate_scores(groups[key]) for key in sorted(groups)]


class ReturnPanel:
    """Per-company daily returns plus the derived market excess series.

    open_to_close(d) = 10000 * (close(d)/open(d) - 1); close_to_close(d) =
    10000 * (close(d)/close(prev trading day) - 1). Either is absent when a
    required price is missing. rm_minus_rf(d) covers the forward window from
    d's close to the next trading day's close, value-weighted by the caps in
    place at d (falling back to the window-end caps), with risk-free zero.
    """

    def __init__(self, stock_days, calendar: TradingCalendar):
        self.calendar = calendar
        self._open: dict[tuple[str, dt.date], float] = {}
        self._close: dict[tuple[str, dt.date], float] = {}
        self._cap: dict[tuple[str, dt.date], float] = {}
        companies = set()
        dates = set()
        for row in stock_days:
            key = (row.company_id, row.date)
            if key in self._close:
                raise CorpusError(
                    f"duplicate price row for {row.company_id} on {row.date}"
                )
            self._open[key] = row.open_price
            self._close[key] = row.close_price
            self._cap[key] = row.market_cap_busd
            companies.add(row.company_id)
            dates.add(row.date)
        self.companies = sorted(companies)
        self.dates = sorted(dates)
        self._rm_cache: dict[dt.date, float | None] = {}

    def open_to_close(self, company_id: str, date: dt.date) -> float | None:
        key = (company_id, date)
        o = self._open.get(key)
        c = self._close.get(key)
        if o is None or c is None:
            return None
        return 10000.0 * (c / o - 1.0)

    def close_to_close(self, company_id: str, date: dt.date) -> float | None:
        c = self._close.get((company_id, date))
        if c is None:
            return None
        try:
            prev = self.calendar.prev_before(date)
        except CalendarRangeError:
            return None
        p = self._close.get((company_id, prev))
        if p is None:
            return None
        return 10000.0 * (c / p - 1.0)

    def market_cap(self, company_id: str, date: dt.date) -> float | None:
        return self._cap.get((company_id, date))

    def period_return(self, company_id: str, period: MarketPeriod) -> float | None:
        """Realized return for one company over one market period.

        CloseToClose periods buy the trade date's close and sell the next
        trading day's close, so the window ends one day forward.
        """
        if period.session is Session.OPEN_TO_CLOSE:
            return self.open_to_close(company_id, period.trade_date)
        try:
            sell_date = self.calendar.next_after(period.trade_date)
        except CalendarRangeError:
            logger.info(
                "no trading day after %s; %s excluded",
                period.trade_date,
                company_id,
            )
            return None
        return self.close_to_close(company_id, sell_date)

    def rm_minus_rf(self, trade_date: dt.date) -> float | None:
        if trade_date in self._rm_cache:
            return self._rm_cache[trade_date]
        try:
            end = self.calendar.next_after(trade_date)
        except CalendarRangeError:
            self._rm_cache[trade_date] = None
            return None
        total_w = 0.0
        acc = 0.0
        for company_id in self.companies:
            r = self.close_to_close(company_id, end)
            if r is None:
                continue
            w = self._cap.get((company_id, trade_date))
            if w is None:
                w = self._cap.get((company_id, end))
            if w is None or w <= 0.0:
                continue
            total_w += w
            acc += w * r
        value = acc / total_w if total_w > 0.0 else None
        self._rm_cache[trade_date] = value
        return value


# ── CSV loaders ──────────────────────────────────────────────────────────────


def _parse_float(raw: str, path, lineno: int, column: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise CorpusError(
            f"{path}: line {lineno}: bad {column} value {raw!r}"
        ) from exc


def load_prices(path, calendar: TradingCalendar) -> ReturnPanel:
    """Read the price table and build a ReturnPanel.

    Rows with non-positive prices are rejected as a group, with their line
    numbers reported; structural problems raise immediately.
    """
    rows: list[StockDay] = []
    bad_lines: list[int] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["company_id", "date", "open", "close", "market_cap_busd"]
        if reader.fieldnames != expected:
            raise CorpusError(
                f"{path}: expected header {','.join(expected)}, "
                f"got {reader.fieldnames}"
            )
        for lineno, rec in enumerate(reader, start=2):
            if any(rec.get(k) is None for k in expected):
                raise CorpusError(f"{path}: line {lineno}: wrong field count")
            try:
                date = dt.date.fromisoformat(rec["date"])
            except ValueError as exc:
                raise CorpusError(
                    f"{path}: line {lineno}: bad date {rec['date']!r}"
                ) from exc
            open_price = _parse_float(rec["open"], path, lineno, "open")
            close_price = _parse_float(rec["close"], path, lineno, "close")
            cap = _parse_float(
                rec["market_cap_busd"], path, lineno, "market_cap_busd"
            )
            if open_price <= 0.0 or close_price <= 0.0 or cap < 0.0:
                bad_lines.append(lineno)
                continue
            rows.append(
                StockDay(
                    company_id=rec["company_id"],
                    date=date,
                    open_price=open_price,
                    close_price=close_price,
                    market_cap_busd=cap,
                )
            )
    if bad_lines:
        logger.warning(
            "%s: rejected %d rows with non-positive prices (lines %s)",
            path,
            len(bad_lines),
            ", ".join(str(n) for n in bad_lines),
        )
    return ReturnPanel(rows, calendar)


def load_headlines(path) -> list[Headline]:
    """Read the headline table; timestamps parse as RFC-3339, Eastern."""
    out: list[Headline] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["headline_id", "company_id", "timestamp_et", "text"]
        if reader.fieldnames != expected:
            raise CorpusError(
                f"{path}: expected header {','.join(expected)}, "
                f"got {reader.fieldnames}"
            )
        for lineno, rec in enumerate(reader, start=2):
            if any(rec.get(k) is None for k in expected):
                raise CorpusError(f"{path}: line {lineno}: wrong field count")
            hid = rec["headline_id"]
            if hid in seen:
                raise CorpusError(
                    f"{path}: line {lineno}: duplicate headline_id {hid!r}"
                )
            seen.add(hid)
            if not rec["text"].strip():
                raise CorpusError(f"{path}: line {lineno}: empty headline text")
            raw_ts = rec["timestamp_et"]
            try:
                ts = dt.datetime.fromisoformat(raw_ts)
            except ValueError as exc:
                raise CorpusError(
                    f"{path}: line {lineno}: bad timestamp {raw_ts!r}"
                ) from exc
            out.append(
                Headline(
                    headline_id=hid,
                    company_id=rec["company_id"],
                    text=rec["text"],
                    timestamp=ts,
                )
            )
    return out


def load_companies(
    path,
    aliases: dict[str, tuple[str, ...]] | None = None,
    config: MatchConfig = MatchConfig(),
) -> dict[str, CompanyIdentity]:
    """Read the company table and derive matching identities.

    Alias lists come from the separate alias store; a list longer than
    MAX_ALIASES is a data error, not something to silently truncate.
    """
    aliases = aliases or {}
    out: dict[str, CompanyIdentity] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["company_id", "official_name"]
        if reader.fieldnames != expected:
            raise CorpusError(
                f"{path}: expected header {','.join(expected)}, "
                f"got {reader.fieldnames}"
            )
        for lineno, rec in enumerate(reader, start=2):
            if any(rec.get(k) is None for k in expected):
                raise CorpusError(f"{path}: line {lineno}: wrong field count")
            cid = rec["company_id"]
            if cid in out:
                raise CorpusError(
                    f"{path}: line {lineno}: duplicate company_id {cid!r}"
                )
            alias_list = tuple(aliases.get(cid, ()))
            if len(alias_list) > MAX_ALIASES:
                raise CorpusError(
                    f"{path}: line {lineno}: {cid!r} has {len(alias_list)} "
                    f"aliases (limit {MAX_ALIASES})"
                )
            out[cid] = build_identity(
                cid, rec["official_name"], alias_list, config
            )
    return out
