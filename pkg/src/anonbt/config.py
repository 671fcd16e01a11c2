"""Run configuration loaded from one YAML file.

Every knob the pipeline consumes lives here with its default value, so a
config file only needs the entries it overrides. Relative paths resolve
against the config file's own directory. The digest covers the knobs that
shape results and skips machine-specific paths, making it stable across
checkouts.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .anonymizer import DEFAULT_CORPORATE_SUFFIXES, MatchConfig
from .backtest import EMPTY_DAY_POLICIES, EMPTY_DAY_ZERO, Strategy
from .errors import ConfigError
from .synthlab import SynthConfig

logger = logging.getLogger(__name__)

MODE_CORPUS = "corpus"
MODE_SYNTHETIC = "synthetic"
MODES = (MODE_CORPUS, MODE_SYNTHETIC)

BACKEND_LEXICON = "lexicon"
BACKEND_HTTP = "http"
BACKEND_KINDS = (BACKEND_LEXICON, BACKEND_HTTP)

DEFAULT_STRATEGIES = (
    Strategy.LONG_SHORT,
    Strategy.LONG_ONLY,
    Strategy.SHORT_ONLY,
)


@dataclass(frozen=True)
class BackendSettings:
    """Scoring backend selection plus HTTP endpoint knobs."""

    kind: str = BACKEND_LEXICON
    model: str = "gpt-3.5-turbo"
    base_url: str = ""
    key_env: str = "CHAT_API_KEY"
    requests_per_minute: float | None = None
    timeout: float = 30.0
    retries: int = 3
    max_workers: int = 4

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ConfigError(f"backend kind must be one of {BACKEND_KINDS}")
        if self.kind == BACKEND_HTTP and not self.base_url:
            raise ConfigError("http backend requires a base_url")
        if self.max_workers < 1:
            raise ConfigError("max_workers must be at least 1")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs: inputs, knobs, and output locations."""

    mode: str = MODE_CORPUS
    prices: Path | None = None
    headlines: Path | None = None
    companies: Path | None = None
    calendar: Path | None = None
    aliases: Path | None = None
    cache_dir: Path = Path("cache")
    output_dir: Path = Path("out")
    backend: BackendSettings = field(default_factory=BackendSettings)
    match: MatchConfig = field(default_factory=MatchConfig)
    in_sample_start: dt.date = dt.date(2015, 1, 1)
    in_sample_end: dt.date = dt.date(2021, 9, 30)
    out_of_sample_end: dt.date = dt.date(2022, 12, 31)
    strategies: tuple = DEFAULT_STRATEGIES
    empty_day_policy: str = EMPTY_DAY_ZERO
    offline: bool = False
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not (
            self.in_sample_start <= self.in_sample_end < self.out_of_sample_end
        ):
            raise ConfigError(
                "boundary dates must satisfy in_sample_start <= in_sample_end"
                " < out_of_sample_end"
            )
        if not self.strategies:
            raise ConfigError("strategies list is empty")
        if self.empty_day_policy not in EMPTY_DAY_POLICIES:
            raise ConfigError(
                f"empty_day_policy must be one of {EMPTY_DAY_POLICIES}"
            )

    def in_sample(self, date: dt.date) -> bool:
        return date <= self.in_sample_end


def _parse_date(value, label: str) -> dt.date:
    if isinstance(value, dt.date) and not isinstance(value, dt.datetime):
        return value
    if isinstance(value, str):
        try:
            return dt.date.fromisoformat(value)
        except ValueError:
            pass
    raise ConfigError(f"{label}: expected an ISO date, got {value!r}")


def _check_keys(section: dict, allowed, label: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{label}: unknown keys {', '.join(unknown)}")


def _build_match(section: dict) -> MatchConfig:
    _check_keys(
        section,
        (
            "similarity_threshold",
            "replacement_token",
            "min_window",
            "corporate_suffixes",
        ),
        "match",
    )
    kwargs: dict = {}
    if "similarity_threshold" in section:
        kwargs["similarity_threshold"] = float(section["similarity_threshold"])
    if "replacement_token" in section:
        kwargs["replacement_token"] = str(section["replacement_token"])
    if "min_window" in section:
        kwargs["min_window"] = int(section["min_window"])
    suffixes = section.get("corporate_suffixes")
    if suffixes is not None:
        kwargs["corporate_suffixes"] = frozenset(
            str(s).lower() for s in suffixes
        )
    return MatchConfig(**kwargs)


def _build_backend(section: dict) -> BackendSettings:
    _check_keys(
        section,
        (
            "kind",
            "model",
            "base_url",
            "key_env",
            "requests_per_minute",
            "timeout",
            "retries",
            "max_workers",
        ),
        "backend",
    )
    kwargs = dict(section)
    if "requests_per_minute" in kwargs and kwargs["requests_per_minute"] is not None:
        kwargs["requests_per_minute"] = float(kwargs["requests_per_minute"])
    try:
        return BackendSettings(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"backend: {exc}") from exc


def _build_strategies(values) -> tuple:
    by_value = {s.value: s for s in Strategy}
    out = []
    for raw in values:
        if raw not in by_value:
            raise ConfigError(
                f"unknown strategy {raw!r}; choose from "
                f"{', '.join(sorted(by_value))}"
            )
        out.append(by_value[raw])
    if len(set(out)) != len(out):
        raise ConfigError("strategies list has duplicates")
    return tuple(out)


def load_run_config(
    path,
    offline: bool | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Parse and validate one YAML config file.

    `offline` and `seed` are command-line overrides: either replaces the
    file's value when not None.
    """
    config_path = Path(path)
    try:
        raw = yaml.safe_load(config_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {config_path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{config_path}: invalid YAML ({exc})") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{config_path}: top level must be a mapping")
    _check_keys(
        raw,
        (
            "mode",
            "paths",
            "backend",
            "match",
            "sample",
            "strategies",
            "empty_day_policy",
            "offline",
            "synth",
        ),
        str(config_path),
    )
    base = config_path.resolve().parent

    def resolve(value) -> Path:
        p = Path(str(value))
        return p if p.is_absolute() else base / p

    kwargs: dict = {}
    if "mode" in raw:
        kwargs["mode"] = raw["mode"]

    paths = raw.get("paths", {}) or {}
    _check_keys(
        paths,
        (
            "prices",
            "headlines",
            "companies",
            "calendar",
            "aliases",
            "cache_dir",
            "output_dir",
        ),
        "paths",
    )
    for key in ("prices", "headlines", "companies", "calendar", "aliases"):
        if paths.get(key) is not None:
            kwargs[key] = resolve(paths[key])
    for key in ("cache_dir", "output_dir"):
        if paths.get(key) is not None:
            kwargs[key] = resolve(paths[key])

    if "backend" in raw:
        kwargs["backend"] = _build_backend(raw["backend"] or {})
    if "match" in raw:
        kwargs["match"] = _build_match(raw["match"] or {})

    sample = raw.get("sample", {}) or {}
    _check_keys(
        sample,
        ("in_sample_start", "in_sample_end", "out_of_sample_end"),
        "sample",
    )
    for key in ("in_sample_start", "in_sample_end", "out_of_sample_end"):
        if key in sample:
            kwargs[key] = _parse_date(sample[key], f"sample.{key}")

    if "strategies" in raw:
        kwargs["strategies"] = _build_strategies(raw["strategies"])
    if "empty_day_policy" in raw:
        kwargs["empty_day_policy"] = raw["empty_day_policy"]
    if "offline" in raw:
        kwargs["offline"] = bool(raw["offline"])
    if "synth" in raw:
        synth = raw["synth"] or {}
        try:
            kwargs["synth"] = SynthConfig(**synth)
        except TypeError as exc:
            raise ConfigError(f"synth: {exc}") from exc

    config = RunConfig(**kwargs)
    if offline is not None:
        config = replace(config, offline=offline)
    if seed is not None:
        config = replace(config, synth=replace(config.synth, seed=seed))
    return config


def required_inputs(config: RunConfig, stages) -> dict:
    """Map of input-role name to path for the given stages.

    Synthetic mode reads no external corpus, so only corpus mode returns
    entries. The score stage itself needs no corpus file beyond what the
    anonymize stage already persisted.
    """
    if config.mode == MODE_SYNTHETIC:
        return {}
    needs: dict = {}
    stage_set = set(stages)
    if stage_set & {"anonymize"}:
        needs["companies"] = config.companies
        needs["headlines"] = config.headlines
    if stage_set & {"align", "backtest", "stats"}:
        needs["calendar"] = config.calendar
    if stage_set & {"backtest", "stats"}:
        needs["prices"] = config.prices
        needs["companies"] = config.companies
    if config.aliases is not None and "anonymize" in stage_set:
        needs["aliases"] = config.aliases
    return needs


def validate_inputs(config: RunConfig, stages) -> None:
    """Fail before any work if a referenced input file is absent."""
    for role, path in sorted(required_inputs(config, stages).items()):
        if path is None:
            raise ConfigError(f"{role} path is not configured")
        if not Path(path).exists():
            raise ConfigError(f"{role} file not found: {path}")


def config_digest(config: RunConfig) -> str:
    """Content hash over the result-shaping knobs, path-free by design."""
    suffixes = config.match.corporate_suffixes
    payload = {
        "mode": config.mode,
        "backend": {
            "kind": config.backend.kind,
            "model": config.backend.model,
        },
        "match": {
            "similarity_threshold": config.match.similarity_threshold,
            "replacement_token": config.match.replacement_token,
            "min_window": config.match.min_window,
            "corporate_suffixes": (
                sorted(suffixes)
                if suffixes is not DEFAULT_CORPORATE_SUFFIXES
                else "default"
            ),
        },
        "sample": {
            "in_sample_start": config.in_sample_start.isoformat(),
            "in_sample_end": config.in_sample_end.isoformat(),
            "out_of_sample_end": config.out_of_sample_end.isoformat(),
        },
        "strategies": [s.value for s in config.strategies],
        "empty_day_policy": config.empty_day_policy,
        "synth": asdict(config.synth),
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
