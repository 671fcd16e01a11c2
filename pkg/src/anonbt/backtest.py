"""Daily portfolio construction from per-period sentiment signals.

Positions live for one market period: open-to-close positions are entered at
the open and closed the same day, close-to-close positions are entered at the
close and closed the next trading day's close. A trade date's return pools
both sessions with equal weight per position, which equals the count-weighted
mean of the two session means.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import logging
from dataclasses import dataclass

from .corpus import (
    CompanyPeriodSignal,
    MarketPeriod,
    ReturnPanel,
    Session,
    TradingCalendar,
    assign_market_period,
)
from .errors import BacktestError, BenchmarkUnavailableError

logger = logging.getLogger(__name__)


class Strategy(enum.Enum):
    LONG_ONLY = "LongOnly"
    SHORT_ONLY = "ShortOnly"
    LONG_SHORT = "LongShort"
    ALL_NEWS = "AllNews"


EMPTY_DAY_ZERO = "zero"
EMPTY_DAY_DROP = "drop"
EMPTY_DAY_POLICIES = (EMPTY_DAY_ZERO, EMPTY_DAY_DROP)

# Variant label for rows that do not depend on the scored text at all.
VARIANT_BOTH = "both"

DAY_RETURN_COLUMNS = [
    "date",
    "strategy",
    "variant",
    "return_bp",
    "n_open",
    "n_close",
    "empty_day",
]


@dataclass(frozen=True)
class PortfolioDayReturn:
    trade_date: dt.date
    strategy: Strategy
    variant: str
    return_bp: float
    n_open_positions: int
    n_close_positions: int
    empty_day: bool

    def __post_init__(self):
        total = self.n_open_positions + self.n_close_positions
        if self.empty_day != (total == 0):
            raise BacktestError("empty_day must mirror a zero position count")
        if self.empty_day and self.return_bp != 0.0:
            raise BacktestError("empty days carry a zero return by convention")


def _position_sign(strategy: Strategy, value: float) -> int | None:
    """Signed direction for one signal, or None when it is not a member."""
    if strategy is Strategy.ALL_NEWS:
        return 1
    if strategy is Strategy.LONG_ONLY:
        return 1 if value > 0 else None
    if strategy is Strategy.SHORT_ONLY:
        return -1 if value < 0 else None
    if strategy is Strategy.LONG_SHORT:
        if value > 0:
            return 1
        if value < 0:
            return -1
        return None
    raise BacktestError(f"unknown strategy {strategy!r}")


def daily_strategy_return(
    trade_date: dt.date,
    signals,
    panel: ReturnPanel,
    strategy: Strategy,
    variant: str,
) -> PortfolioDayReturn:
    """Equal-weighted day return over both sessions for one strategy."""
    seen: set[tuple[str, MarketPeriod]] = set()
    session_sum = {Session.OPEN_TO_CLOSE: 0.0, Session.CLOSE_TO_CLOSE: 0.0}
    session_n = {Session.OPEN_TO_CLOSE: 0, Session.CLOSE_TO_CLOSE: 0}
    for signal in signals:
        if signal.period.trade_date != trade_date:
            raise BacktestError(
                f"signal for {signal.company_id} dated "
                f"{signal.period.trade_date} passed to {trade_date}"
            )
        if signal.variant != variant:
            raise BacktestError(
                f"signal variant {signal.variant!r} mixed into {variant!r}"
            )
        key = (signal.company_id, signal.period)
        if key in seen:
            raise BacktestError(
                f"duplicate signal for {signal.company_id} in "
                f"{signal.period.session.value} on {trade_date}"
            )
        seen.add(key)
        sign = _position_sign(strategy, signal.value)
        if sign is None:
            continue
        r = panel.period_return(signal.company_id, signal.period)
        if r is None:
            logger.info(
                "no return for %s over %s %s; member excluded",
                signal.company_id,
                signal.period.session.value,
                trade_date,
            )
            continue
        session_sum[signal.period.session] += sign * r
        session_n[signal.period.session] += 1
    n_open = session_n[Session.OPEN_TO_CLOSE]
    n_close = session_n[Session.CLOSE_TO_CLOSE]
    total = n_open + n_close
    if total == 0:
        return PortfolioDayReturn(
            trade_date, strategy, variant, 0.0, 0, 0, True
        )
    pooled = (
        session_sum[Session.OPEN_TO_CLOSE] + session_sum[Session.CLOSE_TO_CLOSE]
    ) / total
    return PortfolioDayReturn(
        trade_date, strategy, variant, pooled, n_open, n_close, False
    )


def all_news_portfolio(
    trade_date: dt.date,
    headlines,
    calendar: TradingCalendar,
    panel: ReturnPanel,
    variant: str = VARIANT_BOTH,
) -> PortfolioDayReturn:
    """Long every company with any headline in the date's market periods."""
    memberships: set[tuple[str, MarketPeriod]] = set()
    for headline in headlines:
        period = assign_market_period(headline.timestamp, calendar)
        if period.trade_date == trade_date:
            memberships.add((headline.company_id, period))
    signals = [
        CompanyPeriodSignal(
            company_id=company_id,
            period=period,
            variant=variant,
            value=1.0,
            headline_count=1,
        )
        for company_id, period in sorted(
            memberships, key=lambda m: (m[0], m[1].sort_key)
        )
    ]
    return daily_strategy_return(
        trade_date, signals, panel, Strategy.ALL_NEWS, variant
    )


def market_benchmarks(
    trade_date: dt.date, panel: ReturnPanel
) -> tuple[float, float]:
    """Equal- and value-weighted market return over companies priced on d.

    Value weights are the prior trading day's market caps; companies with a
    return but no prior cap fall out of the value-weighted leg only.
    """
    returns: dict[str, float] = {}
    for company_id in panel.companies:
        r = panel.close_to_close(company_id, trade_date)
        if r is not None:
            returns[company_id] = r
    if not returns:
        raise BenchmarkUnavailableError(
            f"no close-to-close returns available on {trade_date}"
        )
    ew = sum(returns.values()) / len(returns)
    prev = panel.calendar.prev_before(trade_date)
    weighted = 0.0
    total_w = 0.0
    for company_id, r in returns.items():
        cap = panel.market_cap(company_id, prev)
        if cap is None or cap <= 0.0:
            continue
        weighted += cap * r
        total_w += cap
    if total_w <= 0.0:
        raise BenchmarkUnavailableError(
            f"no prior-day market caps available on {trade_date}"
        )
    return ew, weighted / total_w


def cumulative_returns(daily_bp) -> list[float]:
    """Compound a basis-point series into growth-of-one values.

    The starting value is 1 before the first day; element t is the value
    after day t's return is applied.
    """
    values: list[float] = []
    level = 1.0
    for r in daily_bp:
        level = level * (1.0 + r / 10000.0)
        values.append(level)
    return values


def write_day_returns(path, rows, empty_day_policy: str = EMPTY_DAY_ZERO) -> None:
    """Write PortfolioDayReturn rows as CSV, sorted for byte-stable output."""
    if empty_day_policy not in EMPTY_DAY_POLICIES:
        raise BacktestError(
            f"empty_day_policy must be one of {EMPTY_DAY_POLICIES}"
        )
    kept = [
        row
        for row in rows
        if not (row.empty_day and empty_day_policy == EMPTY_DAY_DROP)
    ]
    kept.sort(key=lambda r: (r.trade_date, r.strategy.value, r.variant))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DAY_RETURN_COLUMNS)
        for row in kept:
            writer.writerow(
                [
                    row.trade_date.isoformat(),
                    row.strategy.value,
                    row.variant,
                    repr(row.return_bp),
                    row.n_open_positions,
                    row.n_close_positions,
                    "true" if row.empty_day else "false",
                ]
            )
