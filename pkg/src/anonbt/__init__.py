"""Paired original-vs-anonymized news-sentiment backtesting toolkit.

The package measures how much of a news-trading backtest's performance
survives when company identities are masked before scoring. It anonymizes
headlines, scores both text variants with a pluggable backend, runs the
paired backtests, and applies the statistical comparison suite. The
`anonbt` command drives the same stages from a single YAML config.
"""

from .anonymizer import (
    CompanyIdentity,
    MatchConfig,
    anonymize,
    build_identity,
    indel_distance,
    token_sort_indel_similarity,
)
from .backtest import Strategy, daily_strategy_return, write_day_returns
from .config import RunConfig, config_digest, load_run_config
from .corpus import (
    Headline,
    MarketPeriod,
    ReturnPanel,
    Session,
    TradingCalendar,
    assign_market_period,
)
from .errors import AnonbtError, ConfigError, StageError
from .pipeline import run_pipeline, run_stage
from .scorer import (
    HttpChatBackend,
    LexiconBackend,
    PromptCache,
    ScoreRequest,
    score_many,
)
from .stats import (
    beta_difference_test,
    capm_regression,
    classification_table,
    independent_t_test,
    paired_t_test,
    panel_fe_regression,
    stacked_sur,
)
from .synthlab import SynthConfig, generate_world, run_bias_experiment

__version__ = "0.1.0"

__all__ = [
    "AnonbtError",
    "CompanyIdentity",
    "ConfigError",
    "Headline",
    "HttpChatBackend",
    "LexiconBackend",
    "MarketPeriod",
    "MatchConfig",
    "PromptCache",
    "ReturnPanel",
    "RunConfig",
    "ScoreRequest",
    "Session",
    "StageError",
    "Strategy",
    "SynthConfig",
    "TradingCalendar",
    "anonymize",
    "assign_market_period",
    "beta_difference_test",
    "capm_regression",
    "classification_table",
    "config_digest",
    "daily_strategy_return",
    "build_identity",
    "indel_distance",
    "generate_world",
    "load_run_config",
    "independent_t_test",
    "paired_t_test",
    "panel_fe_regression",
    "run_bias_experiment",
    "run_pipeline",
    "run_stage",
    "score_many",
    "token_sort_indel_similarity",
    "stacked_sur",
    "write_day_returns",
    "__version__",
]
