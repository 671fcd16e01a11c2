"""Tests for daily portfolio construction and benchmark returns."""

import datetime as dt
import random
from functools import reduce

import pytest
from numpy.testing import assert_allclose

from anonbt.backtest import (
    EMPTY_DAY_DROP,
    PortfolioDayReturn,
    Strategy,
    all_news_portfolio,
    cumulative_returns,
    daily_strategy_return,
    market_benchmarks,
    write_day_returns,
)
from anonbt.corpus import (
    CompanyPeriodSignal,
    Headline,
    MarketPeriod,
    PeriodScore,
    ReturnPanel,
    Session,
    StockDay,
    TradingCalendar,
    aggregate_scores,
    assign_market_period,
)
from anonbt.errors import BacktestError, BenchmarkUnavailableError

D15 = dt.date(2021, 6, 15)
D16 = dt.date(2021, 6, 16)
D17 = dt.date(2021, 6, 17)


@pytest.fixture
def calendar():
    return TradingCalendar([D15, D16, D17])


def panel_from(rows, calendar):
    return ReturnPanel(
        [StockDay(cid, date, o, c, cap) for cid, date, o, c, cap in rows],
        calendar,
    )


def signal(company_id, date, session, value, variant="original"):
    return CompanyPeriodSignal(
        company_id=company_id,
        period=MarketPeriod(date, session),
        variant=variant,
        value=value,
        headline_count=1,
    )


@pytest.fixture
def example_panel(calendar):
    # AAA open-to-close +100 bp, BBB open-to-close -50 bp on the 15th;
    # CCC close-to-close +30 bp over the 15th-to-16th window
    return panel_from(
        [
            ("AAA", D15, 100.0, 101.0, 5.0),
            ("BBB", D15, 100.0, 99.5, 5.0),
            ("CCC", D15, 100.0, 100.0, 5.0),
            ("CCC", D16, 100.0, 100.3, 5.0),
        ],
        calendar,
    )


# ── session-weighted day return ──────────────────────────────────────────────


def test_two_session_weighting_example(example_panel):
    signals = [
        signal("AAA", D15, Session.OPEN_TO_CLOSE, 1.0),
        signal("BBB", D15, Session.OPEN_TO_CLOSE, 0.5),
        signal("CCC", D15, Session.CLOSE_TO_CLOSE, 1.0),
    ]
    day = daily_strategy_return(
        D15, signals, example_panel, Strategy.LONG_ONLY, "original"
    )
    assert_allclose(day.return_bp, 80.0 / 3.0, rtol=1e-9)
    assert (day.n_open_positions, day.n_close_positions) == (2, 1)
    assert not day.empty_day


def test_long_short_signed_returns_example(calendar):
    panel = panel_from(
        [("AAA", D15, 100.0, 101.0, 1.0), ("DDD", D15, 100.0, 98.0, 1.0)],
        calendar,
    )
    signals = [
        signal("AAA", D15, Session.OPEN_TO_CLOSE, 1.0),
        signal("DDD", D15, Session.OPEN_TO_CLOSE, -1.0),
    ]
    day = daily_strategy_return(
        D15, signals, panel, Strategy.LONG_SHORT, "original"
    )
    assert_allclose(day.return_bp, 150.0, rtol=1e-9)
    assert (day.n_open_positions, day.n_close_positions) == (2, 0)


def test_no_signals_is_empty_day(example_panel):
    day = daily_strategy_return(
        D15, [], example_panel, Strategy.LONG_ONLY, "original"
    )
    assert day.empty_day
    assert day.return_bp == 0.0
    assert (day.n_open_positions, day.n_close_positions) == (0, 0)


def test_short_only_flips_sign(calendar):
    panel = panel_from([("DDD", D15, 100.0, 98.0, 1.0)], calendar)
    day = daily_strategy_return(
        D15,
        [signal("DDD", D15, Session.OPEN_TO_CLOSE, -0.5)],
        panel,
        Strategy.SHORT_ONLY,
        "original",
    )
    assert_allclose(day.return_bp, 200.0, rtol=1e-9)


def test_zero_valued_signals_sit_out(example_panel):
    signals = [
        signal("AAA", D15, Session.OPEN_TO_CLOSE, 0.0),
        signal("BBB", D15, Session.OPEN_TO_CLOSE, 0.0),
    ]
    for strategy in (Strategy.LONG_ONLY, Strategy.SHORT_ONLY, Strategy.LONG_SHORT):
        day = daily_strategy_return(
            D15, signals, example_panel, strategy, "original"
        )
        assert day.empty_day


def test_single_session_return_equals_session_mean(example_panel):
    signals = [
        signal("AAA", D15, Session.OPEN_TO_CLOSE, 1.0),
        signal("BBB", D15, Session.OPEN_TO_CLOSE, 1.0),
    ]
    day = daily_strategy_return(
        D15, signals, example_panel, Strategy.LONG_ONLY, "original"
    )
    expected = (
        example_panel.open_to_close("AAA", D15)
        + example_panel.open_to_close("BBB", D15)
    ) / 2.0
    assert_allclose(day.return_bp, expected, rtol=1e-12)
    assert day.n_close_positions == 0


def test_long_short_without_shorts_equals_long_only(example_panel):
    signals = [
        signal("AAA", D15, Session.OPEN_TO_CLOSE, 0.8),
        signal("CCC", D15, Session.CLOSE_TO_CLOSE, 0.2),
    ]
    long_only = daily_strategy_return(
        D15, signals, example_panel, Strategy.LONG_ONLY, "original"
    )
    long_short = daily_strategy_return(
        D15, signals, example_panel, Strategy.LONG_SHORT, "original"
    )
    assert long_short.return_bp == long_only.return_bp
    assert long_short.n_open_positions == long_only.n_open_positions


def test_permuting_signals_changes_nothing(example_panel):
    signals = [
        signal("AAA", D15, Session.OPEN_TO_CLOSE, 1.0),
        signal("BBB", D15, Session.OPEN_TO_CLOSE, -0.4),
        signal("CCC", D15, Session.CLOSE_TO_CLOSE, 0.6),
    ]
    base = daily_strategy_return(
        D15, signals, example_panel, Strategy.LONG_SHORT, "original"
    )
    rng = random.Random(11)
    for _ in range(10):
        shuffled = signals[:]
        rng.shuffle(shuffled)
        again = daily_strategy_return(
            D15, shuffled, example_panel, Strategy.LONG_SHORT, "original"
        )
        assert again == base


def test_membership_depends_only_on_sign(example_panel):
    signals = [
        signal("AAA", D15, Session.OPEN_TO_CLOSE, 0.3),
        signal("BBB", D15, Session.OPEN_TO_CLOSE, -0.2),
        signal("CCC", D15, Session.CLOSE_TO_CLOSE, 0.1),
    ]
    doubled = [
        signal(s.company_id, D15, s.period.session, min(1.0, max(-1.0, s.value * 2)))
        for s in signals
    ]
    for strategy in (Strategy.LONG_ONLY, Strategy.SHORT_ONLY, Strategy.LONG_SHORT):
        a = daily_strategy_return(
            D15, signals, example_panel, strategy, "original"
        )
        b = daily_strategy_return(
            D15, doubled, example_panel, strategy, "original"
        )
        assert a == b


def test_missing_return_member_excluded_and_logged(calendar, caplog):
    # close-to-close on the last calendar day has no sell date
    panel = panel_from([("AAA", D17, 100.0, 101.0, 1.0)], calendar)
    with caplog.at_level("INFO", logger="anonbt"):
        day = daily_strategy_return(
            D17,
            [signal("AAA", D17, Session.CLOSE_TO_CLOSE, 1.0)],
            panel,
            Strategy.LONG_ONLY,
            "original",
        )
    assert day.empty_day
    assert any("excluded" in record.message for record in caplog.records)


def test_signal_date_mismatch_rejected(example_panel):
    with pytest.raises(BacktestError, match="dated"):
        daily_strategy_return(
            D16,
            [signal("AAA", D15, Session.OPEN_TO_CLOSE, 1.0)],
            example_panel,
            Strategy.LONG_ONLY,
            "original",
        )


def test_signal_variant_mismatch_rejected(example_panel):
    with pytest.raises(BacktestError, match="variant"):
        daily_strategy_return(
            D15,
            [signal("AAA", D15, Session.OPEN_TO_CLOSE, 1.0, variant="replaced")],
            example_panel,
            Strategy.LONG_ONLY,
            "original",
        )


def test_duplicate_signal_rejected(example_panel):
    duplicated = [
        signal("AAA", D15, Session.OPEN_TO_CLOSE, 1.0),
        signal("AAA", D15, Session.OPEN_TO_CLOSE, 0.5),
    ]
    with pytest.raises(BacktestError, match="duplicate"):
        daily_strategy_return(
            D15, duplicated, example_panel, Strategy.LONG_ONLY, "original"
        )


def test_empty_day_invariant_enforced():
    with pytest.raises(BacktestError, match="empty_day"):
        PortfolioDayReturn(D15, Strategy.LONG_ONLY, "original", 5.0, 1, 0, True)
    with pytest.raises(BacktestError, match="zero return"):
        PortfolioDayReturn(D15, Strategy.LONG_ONLY, "original", 5.0, 0, 0, True)


# ── all-news portfolio ───────────────────────────────────────────────────────


def headline(hid, cid, when):
    return Headline(headline_id=hid, company_id=cid, text="x", timestamp=when)


def test_all_news_singleton(example_panel, calendar):
    # a pre-dawn stamp lands in the same day's open-to-close session
    news = [headline("h1", "AAA", dt.datetime(2021, 6, 15, 5, 0))]
    day = all_news_portfolio(D15, news, calendar, example_panel)
    assert_allclose(day.return_bp, example_panel.open_to_close("AAA", D15))
    assert day.strategy is Strategy.ALL_NEWS


def test_all_news_no_news_is_empty(example_panel, calendar):
    day = all_news_portfolio(D15, [], calendar, example_panel)
    assert day.empty_day


def test_all_news_ignores_other_dates(example_panel, calendar):
    news = [headline("h1", "CCC", dt.datetime(2021, 6, 16, 9, 0))]
    day = all_news_portfolio(D15, news, calendar, example_panel)
    assert day.empty_day


def test_all_news_matches_forced_positive_signals(calendar):
    """Independent construction: score-free membership must equal the
    signal pipeline with every aggregated signal forced to +1."""
    rng = random.Random(20260819)
    days = [dt.date(2021, 6, 14) + dt.timedelta(days=i) for i in range(12)]
    trading = [d for d in days if d.weekday() < 5]
    cal = TradingCalendar(trading)
    companies = [f"C{i:02d}" for i in range(10)]
    rows = []
    for cid in companies:
        price = 100.0
        for d in trading:
            o = price * (1 + rng.uniform(-0.01, 0.01))
            c = o * (1 + rng.uniform(-0.02, 0.02))
            rows.append((cid, d, o, c, rng.uniform(1.0, 50.0)))
            price = c
    panel = panel_from(rows, cal)
    news = []
    for i in range(160):
        base = rng.choice(trading[:-1])
        stamp = dt.datetime(
            base.year, base.month, base.day, rng.randrange(24), rng.randrange(60)
        )
        news.append(headline(f"h{i}", rng.choice(companies), stamp))

    by_key = {}
    for item in news:
        period = assign_market_period(item.timestamp, cal)
        by_key.setdefault((item.company_id, period), []).append(
            PeriodScore(item.company_id, period, "original", rng.choice([-1, 0, 1]))
        )
    forced = [
        CompanyPeriodSignal(
            company_id=agg.company_id,
            period=agg.period,
            variant=agg.variant,
            value=1.0,
            headline_count=agg.headline_count,
        )
        for agg in (aggregate_scores(group) for group in by_key.values())
    ]
    for d in trading:
        direct = all_news_portfolio(d, news, cal, panel)
        day_signals = [s for s in forced if s.period.trade_date == d]
        via_signals = daily_strategy_return(
            d, day_signals, panel, Strategy.LONG_ONLY, "original"
        )
        assert_allclose(direct.return_bp, via_signals.return_bp, rtol=1e-12)
        assert direct.n_open_positions == via_signals.n_open_positions
        assert direct.n_close_positions == via_signals.n_close_positions
        assert direct.empty_day == via_signals.empty_day


# ── market benchmarks ────────────────────────────────────────────────────────


def test_benchmark_weighted_example(calendar):
    panel = panel_from(
        [
            ("P", D15, 100.0, 100.0, 1.0),
            ("Q", D15, 100.0, 100.0, 3.0),
            ("P", D16, 100.0, 100.0, 9.0),
            ("Q", D16, 100.0, 101.0, 9.0),
        ],
        calendar,
    )
    ew, vw = market_benchmarks(D16, panel)
    assert_allclose(ew, 50.0, rtol=1e-9)
    assert_allclose(vw, 75.0, rtol=1e-9)


def test_benchmark_constant_returns_agree(calendar):
    panel = panel_from(
        [
            ("P", D15, 100.0, 100.0, 1.0),
            ("Q", D15, 100.0, 100.0, 3.0),
            ("P", D16, 100.0, 102.0, 1.0),
            ("Q", D16, 100.0, 102.0, 3.0),
        ],
        calendar,
    )
    ew, vw = market_benchmarks(D16, panel)
    assert_allclose(ew, vw, rtol=1e-12)
    assert_allclose(ew, 200.0, rtol=1e-9)


def test_benchmark_single_company(calendar):
    panel = panel_from(
        [("P", D15, 100.0, 100.0, 1.0), ("P", D16, 100.0, 100.5, 1.0)],
        calendar,
    )
    ew, vw = market_benchmarks(D16, panel)
    assert ew == vw


def test_benchmark_empty_universe_raises(calendar):
    panel = panel_from([("P", D15, 100.0, 100.0, 1.0)], calendar)
    with pytest.raises(BenchmarkUnavailableError):
        market_benchmarks(D17, panel)


# ── cumulative series ────────────────────────────────────────────────────────


def test_cumulative_flat():
    assert cumulative_returns([0.0, 0.0, 0.0]) == [1.0, 1.0, 1.0]


def test_cumulative_compounding():
    values = cumulative_returns([100.0, 100.0])
    assert_allclose(values[-1], 1.0201, rtol=1e-12)


def test_cumulative_matches_fold():
    rng = random.Random(3)
    series = [rng.uniform(-300, 300) for _ in range(200)]
    values = cumulative_returns(series)
    folded = reduce(
        lambda acc, r: acc + [acc[-1] * (1 + r / 10000.0)], series, [1.0]
    )[1:]
    assert_allclose(values, folded, rtol=1e-12)


def test_cumulative_empty():
    assert cumulative_returns([]) == []


# ── CSV writer ───────────────────────────────────────────────────────────────


def day_row(date, strategy, return_bp, n_open, n_close):
    empty = (n_open + n_close) == 0
    return PortfolioDayReturn(
        date, strategy, "original", 0.0 if empty else return_bp,
        n_open, n_close, empty,
    )


def test_write_day_returns_zero_policy(tmp_path):
    rows = [
        day_row(D16, Strategy.LONG_ONLY, 12.5, 1, 0),
        day_row(D15, Strategy.LONG_ONLY, 0.0, 0, 0),
    ]
    path = tmp_path / "days.csv"
    write_day_returns(path, rows)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "date,strategy,variant,return_bp,n_open,n_close,empty_day"
    assert lines[1] == "2021-06-15,LongOnly,original,0.0,0,0,true"
    assert lines[2] == "2021-06-16,LongOnly,original,12.5,1,0,false"


def test_write_day_returns_drop_policy(tmp_path):
    rows = [
        day_row(D15, Strategy.LONG_ONLY, 0.0, 0, 0),
        day_row(D16, Strategy.LONG_ONLY, 12.5, 1, 0),
    ]
    path = tmp_path / "days.csv"
    write_day_returns(path, rows, empty_day_policy=EMPTY_DAY_DROP)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    assert "2021-06-16" in lines[1]


def test_write_day_returns_byte_stable(tmp_path):
    rows = [
        day_row(D16, Strategy.LONG_SHORT, 80.0 / 3.0, 2, 1),
        day_row(D15, Strategy.ALL_NEWS, -7.25, 0, 3),
    ]
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    write_day_returns(a, rows, empty_day_policy=EMPTY_DAY_DROP)
    write_day_returns(b, list(reversed(rows)), empty_day_policy=EMPTY_DAY_DROP)
    assert a.read_bytes() == b.read_bytes()


def test_write_day_returns_rejects_unknown_policy(tmp_path):
    with pytest.raises(BacktestError, match="policy"):
        write_day_returns(tmp_path / "x.csv", [], empty_day_policy="maybe")
