"""End-to-end pipeline tests over the bundled toy corpus.

The toy corpus ships in fixtures/toy and runs in under a second, so most
tests here execute real stages and compare whole files. Determinism is
asserted byte for byte: rerunning any stage over unchanged inputs must
reproduce identical output files.
"""

import dataclasses
import datetime as dt
import filecmp
import hashlib
import json
import shutil
import statistics
from pathlib import Path

import pytest

from anonbt.config import load_run_config
from anonbt.corpus import MarketPeriod, Session, assign_market_period
from anonbt.errors import ConfigError, StageError
from anonbt.pipeline import (
    FAILED_MARKER,
    STAGES,
    PipelineContext,
    run_pipeline,
    run_stage,
)
from anonbt.report import (
    INTERMEDIATE_FILES,
    MANIFEST_FILE,
    REPORT_TABLES,
)
from anonbt.synthlab import SynthConfig

TOY = Path(__file__).parent.parent / "fixtures" / "toy"

ALL_FILES = (
    "anonymized.csv",
    "spans.csv",
    "scores.csv",
    "signals.csv",
    "day_returns.csv",
    "benchmarks.csv",
    "stats.json",
    "table_comparison.csv",
    "table_classification.csv",
    "table_market_cap.csv",
    "table_sur.csv",
    "table_capm.csv",
    "table_beta_difference.csv",
    "cumulative_returns.csv",
    "figure_cumulative_returns.png",
    "manifest.json",
)


def toy_config(root: Path, **overrides):
    config = load_run_config(TOY / "config.yaml")
    return dataclasses.replace(
        config,
        output_dir=root / "out",
        cache_dir=root / "cache",
        **overrides,
    )


def compare_trees(left: Path, right: Path, names) -> list:
    return [n for n in names if not filecmp.cmp(left / n, right / n, shallow=False)]


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("toyrun")
    config = toy_config(root)
    files = run_pipeline(config)
    return config, tuple(files)


def test_run_writes_expected_files(toy_run):
    config, files = toy_run
    assert files == ALL_FILES
    for name in ALL_FILES:
        assert (config.output_dir / name).is_file()
    assert not (config.output_dir / FAILED_MARKER).exists()


def test_rerun_is_byte_identical(toy_run, tmp_path):
    config, _ = toy_run
    again = toy_config(tmp_path)
    run_pipeline(again)
    assert compare_trees(config.output_dir, again.output_dir, ALL_FILES) == []


def test_offline_replay_matches_live_run(toy_run, tmp_path):
    config, _ = toy_run
    shutil.copytree(config.cache_dir, tmp_path / "cache")
    replay = toy_config(tmp_path, offline=True)
    run_pipeline(replay)
    assert compare_trees(config.output_dir, replay.output_dir, ALL_FILES) == []


def test_offline_with_cold_cache_fails_in_score_stage(tmp_path):
    config = toy_config(tmp_path, offline=True)
    with pytest.raises(StageError) as err:
        run_pipeline(config)
    assert err.value.stage == "score"
    marker = config.output_dir / FAILED_MARKER
    assert marker.exists()
    assert "[score]" in marker.read_text()


def test_stagewise_run_equals_monolithic(toy_run, tmp_path):
    config, _ = toy_run
    staged = toy_config(tmp_path)
    for stage in STAGES:
        run_stage(staged, stage)
    assert compare_trees(config.output_dir, staged.output_dir, ALL_FILES) == []


def test_unknown_stage_is_config_error(tmp_path):
    config = toy_config(tmp_path)
    with pytest.raises(ConfigError, match="unknown stage"):
        run_stage(config, "polish")


def test_missing_prices_fails_before_any_scoring(tmp_path):
    config = toy_config(tmp_path, prices=tmp_path / "absent.csv")
    with pytest.raises(ConfigError, match="prices file not found"):
        run_pipeline(config)
    assert not (config.output_dir / "scores.csv").exists()
    assert not (config.output_dir / "anonymized.csv").exists()


def test_failed_marker_set_then_cleared(tmp_path):
    config = toy_config(tmp_path)
    run_stage(config, "anonymize")
    run_stage(config, "score")
    (config.output_dir / "scores.csv").unlink()
    with pytest.raises(StageError) as err:
        run_stage(config, "align")
    assert err.value.stage == "align"
    marker = config.output_dir / FAILED_MARKER
    assert "[align] missing scores.csv" in marker.read_text()
    run_stage(config, "score")
    run_stage(config, "align")
    assert not marker.exists()


def test_report_rerun_on_unchanged_intermediates_is_identical(
    toy_run, tmp_path
):
    config, _ = toy_run
    out2 = tmp_path / "out"
    shutil.copytree(config.output_dir, out2)
    for name in REPORT_TABLES + (
        "cumulative_returns.csv",
        "figure_cumulative_returns.png",
        MANIFEST_FILE,
    ):
        (out2 / name).unlink()
    copied = toy_config(tmp_path)
    run_stage(copied, "report")
    assert compare_trees(config.output_dir, out2, ALL_FILES) == []


def test_manifest_is_path_free_and_digests_verify(toy_run):
    config, _ = toy_run
    text = (config.output_dir / MANIFEST_FILE).read_text()
    assert str(config.output_dir) not in text
    assert "/tmp" not in text and "home" not in text
    manifest = json.loads(text)
    assert manifest["mode"] == "corpus"
    assert manifest["backend_id"] == "lexicon:v1"
    for name, digest in manifest["outputs"].items():
        actual = hashlib.sha256(
            (config.output_dir / name).read_bytes()
        ).hexdigest()
        assert actual == digest, name
    assert set(manifest["inputs"]) == {
        "prices",
        "headlines",
        "companies",
        "calendar",
        "aliases",
    }


def test_intermediates_listed_in_manifest_outputs(toy_run):
    config, _ = toy_run
    manifest = json.loads((config.output_dir / MANIFEST_FILE).read_text())
    assert set(INTERMEDIATE_FILES) <= set(manifest["outputs"])
    assert MANIFEST_FILE not in manifest["outputs"]


def test_anonymized_modified_flag_tracks_text_change(toy_run):
    import csv

    config, _ = toy_run
    with open(config.output_dir / "anonymized.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 200
    for row in rows:
        changed = row["original_text"] != row["replaced_text"]
        assert row["modified"] == ("true" if changed else "false")
    assert any(r["modified"] == "false" for r in rows)
    replaced_token = config.match.replacement_token
    for row in rows:
        if row["modified"] == "true":
            assert replaced_token in row["replaced_text"]


def test_signals_match_hand_aggregation(toy_run):
    import csv

    config, _ = toy_run
    ctx = PipelineContext(config)
    calendar = ctx.calendar
    with open(config.output_dir / "anonymized.csv", newline="") as fh:
        meta = {r["headline_id"]: r for r in csv.DictReader(fh)}
    with open(config.output_dir / "scores.csv", newline="") as fh:
        scores = list(csv.DictReader(fh))
    groups: dict = {}
    for row in scores:
        rec = meta[row["headline_id"]]
        stamp = dt.datetime.fromisoformat(rec["timestamp_et"])
        period = assign_market_period(stamp, calendar)
        key = (
            rec["company_id"],
            period.trade_date.isoformat(),
            period.session.value,
            row["variant"],
        )
        groups.setdefault(key, []).append(int(row["score"]))
    with open(config.output_dir / "signals.csv", newline="") as fh:
        listed = list(csv.DictReader(fh))
    assert len(listed) == len(groups)
    for row in listed:
        key = (
            row["company_id"],
            row["trade_date"],
            row["session"],
            row["variant"],
        )
        values = groups[key]
        assert float(row["value"]) == pytest.approx(
            statistics.fmean(values), abs=1e-12
        )
        assert int(row["headline_count"]) == len(values)


def test_benchmarks_match_return_panel(toy_run):
    import csv

    config, _ = toy_run
    ctx = PipelineContext(config)
    panel = ctx.panel
    with open(config.output_dir / "benchmarks.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    for row in rows[:5] + rows[-5:]:
        date = dt.date.fromisoformat(row["date"])
        expected = panel.rm_minus_rf(date)
        assert float(row["market_vw_bp"]) == pytest.approx(expected, abs=1e-9)


def test_all_news_rows_are_variant_indifferent(toy_run):
    import csv

    config, _ = toy_run
    with open(config.output_dir / "day_returns.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    variants = {r["variant"] for r in rows if r["strategy"] == "AllNews"}
    assert variants == {"both"}
    scored = {r["variant"] for r in rows if r["strategy"] != "AllNews"}
    assert scored == {"original", "replaced"}


def test_classification_proportions_and_zero_cells(toy_run):
    import csv

    config, _ = toy_run
    with open(
        config.output_dir / "table_classification.csv", newline=""
    ) as fh:
        rows = list(csv.DictReader(fh))
    for bucket in ("in_sample", "out_of_sample"):
        cells = [r for r in rows if r["sample"] == bucket]
        assert len(cells) == 9
        total = sum(float(r["proportion"]) for r in cells)
        assert abs(total - 1.0) < 1e-12
        for cell in cells:
            if cell["orig_category"] == "zero":
                assert float(cell["orig_ret_bp"]) == 0.0
            if cell["rep_category"] == "zero":
                assert float(cell["rep_ret_bp"]) == 0.0


def test_some_headlines_score_differently_across_variants(toy_run):
    import csv

    config, _ = toy_run
    with open(config.output_dir / "scores.csv", newline="") as fh:
        pairs: dict = {}
        for row in csv.DictReader(fh):
            pairs.setdefault(row["headline_id"], {})[row["variant"]] = int(
                row["score"]
            )
    divergent = sum(
        1 for p in pairs.values() if p["original"] != p["replaced"]
    )
    assert divergent > 0
    assert divergent < len(pairs)


def synth_null_config(root: Path):
    config = load_run_config(TOY / "config.yaml")
    return dataclasses.replace(
        config,
        mode="synthetic",
        output_dir=root / "out",
        cache_dir=root / "cache",
        in_sample_start=dt.date(2020, 1, 1),
        in_sample_end=dt.date(2020, 1, 24),
        out_of_sample_end=dt.date(2020, 12, 31),
        synth=SynthConfig(
            n_firms=20, n_days=30, seed=5, headline_rate=0.25
        ),
    )


def test_synthetic_null_world_is_flat_through_pipeline(tmp_path):
    import csv

    config = synth_null_config(tmp_path)
    files = run_pipeline(config)
    assert files[0].startswith("world/")
    with open(config.output_dir / "day_returns.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_key: dict = {}
    for row in rows:
        by_key[(row["date"], row["strategy"], row["variant"])] = float(
            row["return_bp"]
        )
    for (date, strategy, variant), value in by_key.items():
        if variant == "original":
            assert value == by_key[(date, strategy, "replaced")]
    with open(config.output_dir / "table_comparison.csv", newline="") as fh:
        comparisons = list(csv.DictReader(fh))
    assert comparisons
    for row in comparisons:
        assert float(row["t_stat"]) == 0.0
        assert float(row["p_value"]) == 1.0


def test_synthetic_rerun_reproduces_manifest(tmp_path):
    config_a = synth_null_config(tmp_path / "a")
    config_b = synth_null_config(tmp_path / "b")
    run_pipeline(config_a)
    run_pipeline(config_b)
    assert filecmp.cmp(
        config_a.output_dir / MANIFEST_FILE,
        config_b.output_dir / MANIFEST_FILE,
        shallow=False,
    )


def test_context_requires_world_before_corpus_access(tmp_path):
    config = synth_null_config(tmp_path)
    ctx = PipelineContext(config)
    with pytest.raises(StageError, match="synth"):
        ctx.panel


def test_trading_dates_clip_to_sample_window(toy_run):
    config, _ = toy_run
    ctx = PipelineContext(config)
    dates = ctx.trading_dates()
    assert dates[0] >= config.in_sample_start
    assert dates[-1] <= config.out_of_sample_end
    assert all(a < b for a, b in zip(dates, dates[1:]))


def test_unmentioned_company_headline_survives_unmodified(toy_run):
    import csv

    config, _ = toy_run
    with open(config.output_dir / "anonymized.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    nameless = [
        r for r in rows if r["original_text"].startswith("Sector report")
    ]
    assert nameless
    for row in nameless:
        assert row["modified"] == "false"
        assert row["replaced_text"] == row["original_text"]
