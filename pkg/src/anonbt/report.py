"""Render the report bundle: CSV tables, cumulative-return chart, manifest.

Everything here is a pure re-rendering of the persisted intermediates, so
re-running the report stage on unchanged inputs reproduces every output
byte for byte. Floats are written with repr for full precision.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .backtest import VARIANT_BOTH, cumulative_returns
from .config import MODE_SYNTHETIC, config_digest
from .errors import StageError
from .pipeline import (
    ANONYMIZED_FILE,
    BENCHMARKS_FILE,
    DAY_RETURNS_FILE,
    SCORES_FILE,
    SIGNALS_FILE,
    SPANS_FILE,
    STATS_FILE,
    WORLD_DIR,
    PipelineContext,
    read_day_returns,
)
from .synthlab import WORLD_FILES, SIDECAR_FILE

logger = logging.getLogger(__name__)

COMPARISON_TABLE = "table_comparison.csv"
CLASSIFICATION_TABLE = "table_classification.csv"
MARKET_CAP_TABLE = "table_market_cap.csv"
SUR_TABLE = "table_sur.csv"
CAPM_TABLE = "table_capm.csv"
BETA_DIFF_TABLE = "table_beta_difference.csv"
CUMULATIVE_FILE = "cumulative_returns.csv"
FIGURE_FILE = "figure_cumulative_returns.png"
MANIFEST_FILE = "manifest.json"

REPORT_TABLES = (
    COMPARISON_TABLE,
    CLASSIFICATION_TABLE,
    MARKET_CAP_TABLE,
    SUR_TABLE,
    CAPM_TABLE,
    BETA_DIFF_TABLE,
)

INTERMEDIATE_FILES = (
    ANONYMIZED_FILE,
    SPANS_FILE,
    SCORES_FILE,
    SIGNALS_FILE,
    DAY_RETURNS_FILE,
    BENCHMARKS_FILE,
    STATS_FILE,
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def _write_table(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _load_stats(out_dir) -> dict:
    path = Path(out_dir) / STATS_FILE
    if not path.exists():
        raise StageError(
            "report", f"missing {STATS_FILE}; run the stats stage"
        )
    return json.loads(path.read_text(encoding="utf-8"))


def _comparison_rows(stats: dict) -> list:
    rows = []
    for entry in stats.get("comparison", []):
        rows.append(
            [
                entry["strategy"],
                entry["sample"],
                entry["n_days"],
                entry["mean_original"],
                entry["sd_original"],
                entry["mean_replaced"],
                entry["sd_replaced"],
                entry["t_stat"],
                entry["p_value"],
            ]
        )
    return rows


def _classification_rows(stats: dict) -> list:
    rows = []
    for bucket in sorted(stats.get("classification", {})):
        for cell in stats["classification"][bucket]:
            rows.append(
                [
                    bucket,
                    cell["orig_category"],
                    cell["rep_category"],
                    cell["orig_ret_bp"],
                    cell["rep_ret_bp"],
                    cell["proportion"],
                ]
            )
    return rows


def _market_cap_rows(stats: dict) -> list:
    rows = []
    for bucket in sorted(stats.get("market_cap", {})):
        entry = stats["market_cap"][bucket]
        tests = {
            "long": entry.get("long_vs_other"),
            "short": entry.get("short_vs_other"),
        }
        for category in sorted(entry["categories"]):
            cat = entry["categories"][category]
            test = tests.get(category)
            rows.append(
                [
                    bucket,
                    category,
                    cat["mean"],
                    cat["sd"],
                    cat["n_obs"],
                    test["diff"] if test else None,
                    test["t_stat"] if test else None,
                    test["p_value"] if test else None,
                    test["stars"] if test else None,
                ]
            )
    return rows


def _sur_rows(stats: dict) -> list:
    rows = []
    for bucket in sorted(stats.get("sur", {})):
        entry = stats["sur"][bucket]
        rows.append(
            [
                bucket,
                entry["original_coef"],
                entry["original_se"],
                entry["original_t"],
                entry["replaced_coef"],
                entry["replaced_se"],
                entry["replaced_t"],
                entry["wald"],
                entry["p_value"],
                entry["n_obs"],
            ]
        )
    return rows


def _capm_rows(stats: dict) -> list:
    rows = []
    for key in sorted(stats.get("capm", {})):
        entry = stats["capm"][key]
        rows.append(
            [
                entry["sample"],
                entry["variant"],
                entry["strategy"],
                entry["alpha"],
                entry["alpha_se"],
                entry["alpha_t"],
                entry["alpha_p"],
                entry["alpha_stars"],
                entry["beta"],
                entry["beta_se"],
                entry["beta_t"],
                entry["beta_p"],
                entry["beta_stars"],
                entry["n_obs"],
                entry["r_squared"],
            ]
        )
    return rows


def _beta_diff_rows(stats: dict) -> list:
    rows = []
    for variant in sorted(stats.get("beta_difference", {})):
        entry = stats["beta_difference"][variant]
        rows.append(
            [
                variant,
                entry["beta_in_sample"],
                entry["beta_out_of_sample"],
                entry["abs_diff"],
                entry["se_diff"],
                entry["t_stat"],
                entry["p_value"],
                entry["stars"],
            ]
        )
    return rows


def _cumulative_series(ctx: PipelineContext) -> tuple:
    """Growth-of-one series per portfolio and benchmark, keyed by name."""
    day_rows = read_day_returns(ctx.out, stage="report")
    grouped: dict = {}
    for row in day_rows:
        if row["variant"] == VARIANT_BOTH:
            name = row["strategy"]
        else:
            name = f"{row['strategy']}_{row['variant']}"
        grouped.setdefault(name, []).append((row["date"], row["return_bp"]))
    bench_path = ctx.out / BENCHMARKS_FILE
    if bench_path.exists():
        with open(bench_path, encoding="utf-8", newline="") as fh:
            for rec in csv.DictReader(fh):
                date = dt.date.fromisoformat(rec["date"])
                grouped.setdefault("market_ew", []).append(
                    (date, float(rec["market_ew_bp"]))
                )
                grouped.setdefault("market_vw", []).append(
                    (date, float(rec["market_vw_bp"]))
                )
    series: dict = {}
    for name, pairs in grouped.items():
        pairs.sort()
        levels = cumulative_returns([bp for _, bp in pairs])
        series[name] = dict(zip([d for d, _ in pairs], levels))
    dates = sorted({d for s in series.values() for d in s})
    return dates, series


def _write_cumulative(ctx: PipelineContext) -> None:
    dates, series = _cumulative_series(ctx)
    names = sorted(series)
    with open(
        ctx.out / CUMULATIVE_FILE, "w", encoding="utf-8", newline=""
    ) as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + names)
        for date in dates:
            writer.writerow(
                [date.isoformat()]
                + [_fmt(series[name].get(date)) for name in names]
            )


def _render_figure(ctx: PipelineContext) -> None:
    dates, series = _cumulative_series(ctx)
    fig, ax = plt.subplots(figsize=(9, 5))
    for name in sorted(series):
        points = sorted(series[name].items())
        ax.plot(
            [d for d, _ in points],
            [v for _, v in points],
            label=name,
            linewidth=1.4,
        )
    ax.set_xlabel("date")
    ax.set_ylabel("growth of one unit")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.autofmt_xdate()
    fig.tight_layout()
    # Dropping the Software key keeps the PNG byte-stable across runs.
    fig.savefig(
        ctx.out / FIGURE_FILE, dpi=120, metadata={"Software": None}
    )
    plt.close(fig)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _input_digests(ctx: PipelineContext) -> dict:
    config = ctx.config
    digests: dict = {}
    if config.mode == MODE_SYNTHETIC:
        world_dir = ctx.out / WORLD_DIR
        for name in WORLD_FILES + (SIDECAR_FILE,):
            path = world_dir / name
            if path.exists():
                digests[f"{WORLD_DIR}/{name}"] = _sha256(path)
        return digests
    roles = {
        "prices": config.prices,
        "headlines": config.headlines,
        "companies": config.companies,
        "calendar": config.calendar,
        "aliases": config.aliases,
    }
    for role, path in roles.items():
        if path is not None and Path(path).exists():
            digests[role] = _sha256(Path(path))
    return digests


def _backend_id(ctx: PipelineContext) -> str | None:
    path = ctx.out / SCORES_FILE
    if not path.exists():
        return None
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            return rec["backend_id"]
    return None


def write_manifest(ctx: PipelineContext, stats: dict) -> None:
    """Digest-only description of the run; no paths, no timestamps."""
    outputs = {}
    for name in INTERMEDIATE_FILES + REPORT_TABLES + (
        CUMULATIVE_FILE,
        FIGURE_FILE,
    ):
        path = ctx.out / name
        if path.exists():
            outputs[name] = _sha256(path)
    payload = {
        "schema": 1,
        "mode": ctx.config.mode,
        "config_digest": config_digest(ctx.config),
        "backend_id": _backend_id(ctx),
        "inputs": _input_digests(ctx),
        "outputs": outputs,
        "counts": stats.get("counts", {}),
    }
    (ctx.out / MANIFEST_FILE).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def render_report(ctx: PipelineContext) -> list:
    """Project stats.json into the report tables, chart, and manifest."""
    stats = _load_stats(ctx.out)
    _write_table(
        ctx.out / COMPARISON_TABLE,
        [
            "strategy",
            "sample",
            "n_days",
            "mean_original",
            "sd_original",
            "mean_replaced",
            "sd_replaced",
            "t_stat",
            "p_value",
        ],
        _comparison_rows(stats),
    )
    _write_table(
        ctx.out / CLASSIFICATION_TABLE,
        [
            "sample",
            "orig_category",
            "rep_category",
            "orig_ret_bp",
            "rep_ret_bp",
            "proportion",
        ],
        _classification_rows(stats),
    )
    _write_table(
        ctx.out / MARKET_CAP_TABLE,
        [
            "sample",
            "category",
            "mean_cap_busd",
            "sd",
            "n_obs",
            "diff_vs_other",
            "t_stat",
            "p_value",
            "stars",
        ],
        _market_cap_rows(stats),
    )
    _write_table(
        ctx.out / SUR_TABLE,
        [
            "sample",
            "original_coef",
            "original_se",
            "original_t",
            "replaced_coef",
            "replaced_se",
            "replaced_t",
            "wald",
            "p_value",
            "n_obs",
        ],
        _sur_rows(stats),
    )
    _write_table(
        ctx.out / CAPM_TABLE,
        [
            "sample",
            "variant",
            "strategy",
            "alpha",
            "alpha_se",
            "alpha_t",
            "alpha_p",
            "alpha_stars",
            "beta",
            "beta_se",
            "beta_t",
            "beta_p",
            "beta_stars",
            "n_obs",
            "r_squared",
        ],
        _capm_rows(stats),
    )
    _write_table(
        ctx.out / BETA_DIFF_TABLE,
        [
            "variant",
            "beta_in_sample",
            "beta_out_of_sample",
            "abs_diff",
            "se_diff",
            "t_stat",
            "p_value",
            "stars",
        ],
        _beta_diff_rows(stats),
    )
    _write_cumulative(ctx)
    _render_figure(ctx)
    write_manifest(ctx, stats)
    logger.info("report: rendered %d tables", len(REPORT_TABLES))
    return list(REPORT_TABLES) + [CUMULATIVE_FILE, FIGURE_FILE, MANIFEST_FILE]
