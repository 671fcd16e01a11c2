"""Econometrics suite: t-tests, classification analysis, panel regressions.

Regressions absorb firm and time fixed effects by alternating within-group
demeaning and report covariances clustered two ways via inclusion-exclusion
(firm + time - firm-by-time), with a small-sample correction per clustering
dimension and eigenvalue flooring if the combination turns a diagonal
negative. P-values come from the local incomplete-beta and incomplete-gamma
evaluations, so no statistics package is required at runtime.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import RankError, StatsError
from .special import chi2_sf, normal_sf, student_t_two_sided_p

logger = logging.getLogger(__name__)

CAT_CORRECT = "correct"
CAT_ZERO = "zero"
CAT_INCORRECT = "incorrect"
CATEGORIES = (CAT_CORRECT, CAT_ZERO, CAT_INCORRECT)

CAP_LONG = "long"
CAP_SHORT = "short"
CAP_OTHER = "other"

DEMEAN_TOL = 1e-10


# ── result types ─────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class PairedTTestResult:
    t: float
    p: float
    mean_a: float
    mean_b: float
    sd_a: float
    sd_b: float
    n: int


@dataclass(frozen=True)
class IndependentTTestResult:
    t: float
    p: float
    df: float
    mean_a: float
    mean_b: float
    n_a: int
    n_b: int


@dataclass(frozen=True)
class PanelObservation:
    """One company-period: realized next-period return and the two scores."""

    company_id: str
    period_index: int
    next_return_bp: float
    original_score: float
    replaced_score: float

    def __post_init__(self):
        for name in ("original_score", "replaced_score"):
            value = getattr(self, name)
            if not -1.0 <= value <= 1.0:
                raise StatsError(f"{name} {value} outside [-1, 1]")


@dataclass
class RegressionResult:
    labels: tuple
    coefficients: np.ndarray
    covariance: np.ndarray
    standard_errors: np.ndarray
    t_stats: np.ndarray
    r_squared: float
    n_obs: int
    clustering: str

    def __post_init__(self):
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-8):
            raise StatsError("covariance matrix is not symmetric")
        diag = np.diag(self.covariance)
        if np.any(diag < -1e-10):
            raise StatsError("covariance diagonal is negative")


@dataclass(frozen=True)
class ClassificationCell:
    orig_category: str
    rep_category: str
    orig_ret_bp: float
    rep_ret_bp: float
    proportion: float


@dataclass(frozen=True)
class StackedSurResult:
    beta_original: float
    beta_replaced: float
    covariance: tuple
    wald: float
    p: float
    n_obs: int


@dataclass(frozen=True)
class BetaDifferenceResult:
    diff: float
    se_diff: float
    t: float
    p: float


@dataclass(frozen=True)
class CategoryStat:
    category: str
    mean: float
    sd: float
    count: int


@dataclass(frozen=True)
class CapComparisonResult:
    stats: dict
    long_vs_other: IndependentTTestResult | None
    short_vs_other: IndependentTTestResult | None
    notices: tuple


# ── t-tests ──────────────────────────────────────────────────────────────────


def _sample_sd(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def paired_t_test(a, b) -> PairedTTestResult:
    """Paired t-test over date-aligned series, two-sided p."""
    xa = np.asarray(list(a), dtype=float)
    xb = np.asarray(list(b), dtype=float)
    if len(xa) != len(xb):
        raise StatsError(
            f"alignment error: series lengths {len(xa)} and {len(xb)} differ"
        )
    n = len(xa)
    if n < 2:
        raise StatsError(f"sample size {n} too small for a paired test")
    diff = xa - xb
    mean_d = float(np.mean(diff))
    sd_d = _sample_sd(diff)
    if sd_d == 0.0:
        if mean_d == 0.0:
            t = 0.0
        else:
            raise StatsError("zero variance with nonzero mean difference")
    else:
        t = mean_d / (sd_d / math.sqrt(n))
    p = student_t_two_sided_p(t, n - 1)
    return PairedTTestResult(
        t=t,
        p=p,
        mean_a=float(np.mean(xa)),
        mean_b=float(np.mean(xb)),
        sd_a=_sample_sd(xa),
        sd_b=_sample_sd(xb),
        n=n,
    )


def independent_t_test(a, b, welch: bool = True) -> IndependentTTestResult:
    """Independent two-sample t-test, Welch by default, two-sided p."""
    xa = np.asarray(list(a), dtype=float)
    xb = np.asarray(list(b), dtype=float)
    na, nb = len(xa), len(xb)
    if na < 2 or nb < 2:
        raise StatsError(f"sample sizes {na} and {nb} too small")
    ma, mb = float(np.mean(xa)), float(np.mean(xb))
    va = float(np.var(xa, ddof=1))
    vb = float(np.var(xb, ddof=1))
    if va == 0.0 and vb == 0.0:
        if ma == mb:
            df = float(na + nb - 2)
            return IndependentTTestResult(0.0, 1.0, df, ma, mb, na, nb)
        raise StatsError("zero variance in both samples with unequal means")
    if welch:
        sa, sb = va / na, vb / nb
        t = (ma - mb) / math.sqrt(sa + sb)
        df = (sa + sb) ** 2 / (
            (sa**2 / (na - 1) if sa else 0.0)
            + (sb**2 / (nb - 1) if sb else 0.0)
        )
    else:
        pooled = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
        t = (ma - mb) / math.sqrt(pooled * (1.0 / na + 1.0 / nb))
        df = float(na + nb - 2)
    p = student_t_two_sided_p(t, df)
    return IndependentTTestResult(t, p, df, ma, mb, na, nb)


def significance_stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


# ── classification analysis ──────────────────────────────────────────────────


def classify_observation(
    orig_score: float, rep_score: float, realized_return: float
) -> tuple:
    """Category per variant; a zero return never counts as aligned."""

    def one(score: float) -> str:
        if score == 0:
            return CAT_ZERO
        if realized_return > 0 and score > 0:
            return CAT_CORRECT
        if realized_return < 0 and score < 0:
            return CAT_CORRECT
        return CAT_INCORRECT

    return one(orig_score), one(rep_score)


def classification_table(observations) -> list:
    """Nine-cell cross table of original vs replaced score categories.

    Each observation is (orig_score, rep_score, return_bp). Cell returns are
    the mean signed positions score*return, which pins zero-score cells to
    exactly 0. Empty cells carry zero means by convention.
    """
    rows = list(observations)
    if not rows:
        raise StatsError("empty observation set for classification table")
    counts = {
        (o, r): 0 for o in CATEGORIES for r in CATEGORIES
    }
    orig_sums = dict.fromkeys(counts, 0.0)
    rep_sums = dict.fromkeys(counts, 0.0)
    for orig_score, rep_score, ret in rows:
        key = classify_observation(orig_score, rep_score, ret)
        counts[key] += 1
        orig_sums[key] += orig_score * ret
        rep_sums[key] += rep_score * ret
    total = len(rows)
    cells = []
    for o in CATEGORIES:
        for r in CATEGORIES:
            n = counts[(o, r)]
            cells.append(
                ClassificationCell(
                    orig_category=o,
                    rep_category=r,
                    orig_ret_bp=orig_sums[(o, r)] / n if n else 0.0,
                    rep_ret_bp=rep_sums[(o, r)] / n if n else 0.0,
                    proportion=n / total,
                )
            )
    return cells


def classification_by_period(observations, labeler) -> dict:
    """Split observations with `labeler(obs)` and tabulate each group."""
    groups: dict = {}
    for obs in observations:
        groups.setdefault(labeler(obs), []).append(obs)
    return {label: classification_table(group) for label, group in groups.items()}


# ── market-cap comparison ────────────────────────────────────────────────────


def cap_category(signal_value: float) -> str:
    if signal_value > 0:
        return CAP_LONG
    if signal_value < 0:
        return CAP_SHORT
    return CAP_OTHER


def market_cap_comparison(observations) -> CapComparisonResult:
    """Compare cap distributions of recommended vs other covered companies.

    Observations are (category, cap_busd) pairs. A category with fewer than
    two observations skips its test with a notice instead of failing.
    """
    buckets: dict = {CAP_LONG: [], CAP_SHORT: [], CAP_OTHER: []}
    for category, cap in observations:
        if category not in buckets:
            raise StatsError(f"unknown cap category {category!r}")
        buckets[category].append(float(cap))
    stats = {}
    for category, values in buckets.items():
        arr = np.asarray(values, dtype=float)
        stats[category] = CategoryStat(
            category=category,
            mean=float(np.mean(arr)) if len(arr) else 0.0,
            sd=_sample_sd(arr),
            count=len(arr),
        )
    notices = []

    def versus(category: str):
        if stats[category].count < 2 or stats[CAP_OTHER].count < 2:
            notices.append(
                f"{category} vs other skipped: needs two observations per side"
            )
            return None
        return independent_t_test(buckets[category], buckets[CAP_OTHER])

    return CapComparisonResult(
        stats=stats,
        long_vs_other=versus(CAP_LONG),
        short_vs_other=versus(CAP_SHORT),
        notices=tuple(notices),
    )


# ── fixed-effects machinery ──────────────────────────────────────────────────


def _dense_index(labels) -> tuple:
    mapping: dict = {}
    out = np.empty(len(labels), dtype=np.intp)
    for i, label in enumerate(labels):
        out[i] = mapping.setdefault(label, len(mapping))
    return out, len(mapping)


def _alternating_demean(
    matrix: np.ndarray, dims, tol: float = DEMEAN_TOL, max_sweeps: int = 100000
) -> np.ndarray:
    """Remove group means along each id dimension until all are below tol."""
    work = matrix.astype(float, copy=True)
    counts = [
        np.bincount(ids, minlength=size).astype(float)[:, None]
        for ids, size in dims
    ]
    for _ in range(max_sweeps):
        worst = 0.0
        for (ids, size), cnt in zip(dims, counts):
            sums = np.zeros((size, work.shape[1]))
            np.add.at(sums, ids, work)
            means = sums / cnt
            work -= means[ids]
            level = float(np.abs(means).max()) if means.size else 0.0
            worst = max(worst, level)
        if worst < tol:
            return work
    raise StatsError("fixed-effect demeaning did not converge")


def _cluster_meat(x: np.ndarray, resid: np.ndarray, ids: np.ndarray, size: int):
    scores = np.zeros((size, x.shape[1]))
    np.add.at(scores, ids, x * resid[:, None])
    return scores.T @ scores, size


def _floor_eigenvalues(matrix: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh(matrix)
    floored = np.clip(values, 0.0, None)
    return vectors @ np.diag(floored) @ vectors.T


def _two_way_clustered_covariance(
    x: np.ndarray,
    resid: np.ndarray,
    bread: np.ndarray,
    firm_ids: np.ndarray,
    n_firms: int,
    time_ids: np.ndarray,
    n_times: int,
    k_params: int,
    small_sample: bool = True,
) -> np.ndarray:
    """Inclusion-exclusion over one-way cluster sandwiches.

    The correction G/(G-1)*(N-1)/(N-K) applies per clustering dimension with
    K counting explicit regressor columns only; absorbed fixed effects are
    excluded from K by convention.
    """
    n = len(resid)
    inter_raw = firm_ids.astype(np.int64) * np.int64(n_times) + time_ids
    inter_ids, n_inter = _dense_index(inter_raw.tolist())
    total = np.zeros((x.shape[1], x.shape[1]))
    for ids, size, sign in (
        (firm_ids, n_firms, 1.0),
        (time_ids, n_times, 1.0),
        (inter_ids, n_inter, -1.0),
    ):
        meat, g = _cluster_meat(x, resid, ids, size)
        piece = bread @ meat @ bread
        if small_sample:
            if g < 2:
                raise StatsError("clustering dimension has fewer than 2 clusters")
            piece = piece * (g / (g - 1.0)) * ((n - 1.0) / (n - k_params))
        total += sign * piece
    total = (total + total.T) / 2.0
    if np.any(np.diag(total) < 0.0):
        logger.info("negative clustered variance floored at zero")
        total = _floor_eigenvalues(total)
        total = (total + total.T) / 2.0
    return total


def _fe_ols(y: np.ndarray, x: np.ndarray, dims, tol: float = DEMEAN_TOL):
    """Demean y and X over the id dimensions, then solve least squares."""
    stacked = np.column_stack([y, x])
    demeaned = _alternating_demean(stacked, dims, tol=tol)
    y_t = demeaned[:, 0]
    x_t = demeaned[:, 1:]
    scale = np.sqrt(np.mean(x_t**2, axis=0))
    if np.any(scale < 1e-12):
        raise RankError("regressor constant within fixed-effect groups")
    xtx = x_t.T @ x_t
    if np.linalg.matrix_rank(x_t) < x.shape[1]:
        raise RankError("collinear regressors after demeaning")
    beta = np.linalg.solve(xtx, x_t.T @ y_t)
    resid = y_t - x_t @ beta
    bread = np.linalg.inv(xtx)
    sst = float(y_t @ y_t)
    ssr = float(resid @ resid)
    r_squared = 1.0 - ssr / sst if sst > 0.0 else 0.0
    return beta, resid, x_t, bread, r_squared


def _finish_result(labels, beta, cov, r_squared, n, clustering):
    diag = np.clip(np.diag(cov), 0.0, None)
    ses = np.sqrt(diag)
    t_stats = np.array(
        [
            b / s if s > 0.0 else (0.0 if b == 0.0 else math.inf * np.sign(b))
            for b, s in zip(beta, ses)
        ]
    )
    return RegressionResult(
        labels=tuple(labels),
        coefficients=np.asarray(beta, dtype=float),
        covariance=cov,
        standard_errors=ses,
        t_stats=t_stats,
        r_squared=r_squared,
        n_obs=n,
        clustering=clustering,
    )


# ── panel regressions ────────────────────────────────────────────────────────


def _panel_arrays(panel) -> tuple:
    rows = list(panel)
    if not rows:
        raise StatsError("empty panel")
    y = np.array([row.next_return_bp for row in rows], dtype=float)
    x1 = np.array([row.original_score for row in rows], dtype=float)
    x2 = np.array([row.replaced_score for row in rows], dtype=float)
    firm_ids, n_firms = _dense_index([row.company_id for row in rows])
    time_ids, n_times = _dense_index([row.period_index for row in rows])
    if n_firms < 2 or n_times < 2:
        raise StatsError(
            f"panel needs at least 2 firms and 2 periods,"
            f" got {n_firms} and {n_times}"
        )
    return y, x1, x2, firm_ids, n_firms, time_ids, n_times


def panel_fe_regression(
    panel, score: str = "original", small_sample: bool = True
) -> RegressionResult:
    """Regress next-period returns on one score with firm and time effects."""
    if score not in ("original", "replaced"):
        raise StatsError(f"score column must be original or replaced, got {score!r}")
    y, x1, x2, firm_ids, n_firms, time_ids, n_times = _panel_arrays(panel)
    x = (x1 if score == "original" else x2)[:, None]
    dims = ((firm_ids, n_firms), (time_ids, n_times))
    beta, resid, x_t, bread, r_squared = _fe_ols(y, x, dims)
    cov = _two_way_clustered_covariance(
        x_t, resid, bread, firm_ids, n_firms, time_ids, n_times,
        k_params=x.shape[1], small_sample=small_sample,
    )
    return _finish_result(
        (f"{score}_score",), beta, cov, r_squared, len(y),
        "two-way clustered (firm, time)",
    )


def stacked_sur(panel, small_sample: bool = True) -> StackedSurResult:
    """Joint system with both scores, equation-specific fixed effects.

    The dependent variable is duplicated and the regressors ride in a
    block-diagonal design, so the point estimates coincide with the two
    separate fixed-effects regressions; clustering spans both stacked
    copies of a firm (and of a period), which lets the Wald comparison of
    the two slopes account for cross-equation dependence.
    """
    y, x1, x2, firm_ids, n_firms, time_ids, n_times = _panel_arrays(panel)
    n = len(y)
    y_s = np.concatenate([y, y])
    x_s = np.zeros((2 * n, 2))
    x_s[:n, 0] = x1
    x_s[n:, 1] = x2
    eq = np.concatenate([np.zeros(n, dtype=np.intp), np.ones(n, dtype=np.intp)])
    firm_s = np.concatenate([firm_ids, firm_ids])
    time_s = np.concatenate([time_ids, time_ids])
    eq_firm = eq * n_firms + firm_s
    eq_time = eq * n_times + time_s
    dims = ((eq_firm, 2 * n_firms), (eq_time, 2 * n_times))
    beta, resid, x_t, bread, _ = _fe_ols(y_s, x_s, dims)
    cov = _two_way_clustered_covariance(
        x_t, resid, bread, firm_s, n_firms, time_s, n_times,
        k_params=2, small_sample=small_sample,
    )
    d = float(beta[0] - beta[1])
    var_d = float(cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1])
    if abs(d) < 1e-12:
        wald = 0.0
    elif var_d <= 0.0:
        raise StatsError("degenerate contrast variance in the stacked system")
    else:
        wald = d * d / var_d
    p = chi2_sf(wald, 1.0)
    return StackedSurResult(
        beta_original=float(beta[0]),
        beta_replaced=float(beta[1]),
        covariance=tuple(map(tuple, cov)),
        wald=wald,
        p=p,
        n_obs=2 * n,
    )


def capm_regression(portfolio_returns, market_excess) -> RegressionResult:
    """OLS of portfolio returns on the market excess return, both in bp."""
    r = np.asarray(list(portfolio_returns), dtype=float)
    m = np.asarray(list(market_excess), dtype=float)
    if len(r) != len(m):
        raise StatsError(
            f"alignment error: series lengths {len(r)} and {len(m)} differ"
        )
    n = len(r)
    if n < 3:
        raise StatsError(f"sample size {n} too small for a market regression")
    if float(np.var(m)) == 0.0:
        raise RankError("market series has zero variance")
    x = np.column_stack([np.ones(n), m])
    beta, _, _, _ = np.linalg.lstsq(x, r, rcond=None)
    resid = r - x @ beta
    ssr = float(resid @ resid)
    centered = r - np.mean(r)
    sst = float(centered @ centered)
    r_squared = 1.0 - ssr / sst if sst > 0.0 else 0.0
    sigma2 = ssr / (n - 2)
    cov = sigma2 * np.linalg.inv(x.T @ x)
    cov = (cov + cov.T) / 2.0
    return _finish_result(
        ("alpha", "beta"), beta, cov, r_squared, n, "conventional"
    )


def beta_difference_test(
    b_in: float, se_in: float, b_out: float, se_out: float
) -> BetaDifferenceResult:
    """Compare betas from two independent periods, one-sided normal p."""
    if se_in <= 0.0 or se_out <= 0.0:
        raise StatsError("standard errors must be positive")
    diff = abs(b_in - b_out)
    se_diff = math.sqrt(se_in**2 + se_out**2)
    t = diff / se_diff
    return BetaDifferenceResult(diff=diff, se_diff=se_diff, t=t, p=normal_sf(t))
