"""Sum-coded random-intercept mixed-effects regressions and verdict rules.

The model is y = X beta + Z b + e with one random intercept per item:
b ~ N(0, sigma2_item I), e ~ N(0, sigma2_resid I). Writing theta =
sigma2_item / sigma2_resid, the marginal covariance is sigma2_resid *
(I + theta Z Z'), block diagonal by item, so GLS quantities reduce to
per-item column sums (Sherman-Morrison on I + theta * ones). Beta and
sigma2_resid are profiled out and the REML criterion is minimized by a
one-dimensional bounded search over log theta.

Factor levels are coded +0.5 / -0.5; interaction columns are products of
main-effect columns, so on balanced designs every estimate is a plain
cell-mean contrast and t statistics are invariant to the coding magnitude.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize, stats as spstats

from .scoring import RegionScore

LOG_THETA_BOUNDS = (-15.0, 15.0)
SEARCH_XATOL = 1e-8


class StatsError(ValueError):
    pass


def sum_code(level) -> float:
    """Map a two-level factor to +0.5 / -0.5."""
    if level in ("+", True, 1):
        return 0.5
    if level in ("-", False, 0):
        return -0.5
    raise StatsError(f"unknown factor level {level!r}; expected +/- (or bool)")


def wald_p(t: float) -> float:
    """Two-sided normal-approximation p-value, 2 * (1 - Phi(|t|))."""
    if math.isnan(t):
        return float("nan")
    return float(2.0 * spstats.norm.sf(abs(t)))


@dataclass(frozen=True)
class DesignRow:
    response: float
    codes: Mapping[str, float]  # factor -> +/-0.5
    item_id: int

    def __post_init__(self) -> None:
        for name, value in self.codes.items():
            if value not in (0.5, -0.5):
                raise StatsError(
                    f"factor {name!r} coded {value!r}; sum coding requires exactly +/-0.5"
                )


@dataclass
class LmmFit:
    terms: list[str]
    estimates: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    sigma2_item: float
    sigma2_resid: float
    reml_loglik: float
    converged: bool
    n_obs: int
    n_items: int

    def __getitem__(self, term: str) -> tuple[float, float, float, float]:
        idx = self.terms.index(term)
        return (
            float(self.estimates[idx]),
            float(self.se[idx]),
            float(self.t[idx]),
            float(self.p[idx]),
        )

    def estimate(self, term: str) -> float:
        return float(self.estimates[self.terms.index(term)])

    def p_value(self, term: str) -> float:
        return float(self.p[self.terms.index(term)])


def build_design(
    rows: Sequence[DesignRow], terms: Sequence[str]
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """Design matrix (intercept first), response and item index vectors."""
    if not rows:
        raise StatsError("no data rows")
    names = ["(Intercept)"] + list(terms)
    y = np.array([r.response for r in rows], dtype=np.float64)
    cols = [np.ones(len(rows))]
    for term in terms:
        factors = term.split(":")
        col = np.ones(len(rows))
        for factor in factors:
            try:
                col = col * np.array([r.codes[factor] for r in rows])
            except KeyError as exc:
                raise StatsError(f"term {term!r} references unknown factor {exc}") from exc
        cols.append(col)
    X = np.column_stack(cols)
    item_labels = sorted({r.item_id for r in rows})
    item_index = {label: k for k, label in enumerate(item_labels)}
    items = np.array([item_index[r.item_id] for r in rows], dtype=np.int64)
    return X, y, items, names


@dataclass
class _Sufficient:
    """Per-item sums that make every GLS quantity O(items * p^2)."""

    xtx_i: list[np.ndarray]
    xty_i: list[np.ndarray]
    yty_i: list[float]
    s_i: list[np.ndarray]  # per-item column sums of X
    u_i: list[float]  # per-item sums of y
    n_i: np.ndarray
    n: int
    p: int

    @classmethod
    def from_data(cls, X: np.ndarray, y: np.ndarray, items: np.ndarray) -> "_Sufficient":
        q = int(items.max()) + 1
        xtx, xty, yty, s, u, counts = [], [], [], [], [], []
        for g in range(q):
            mask = items == g
            Xg = X[mask]
            yg = y[mask]
            xtx.append(Xg.T @ Xg)
            xty.append(Xg.T @ yg)
            yty.append(float(yg @ yg))
            s.append(Xg.sum(axis=0))
            u.append(float(yg.sum()))
            counts.append(int(mask.sum()))
        return cls(
            xtx, xty, yty, s, u, np.array(counts), int(len(y)), int(X.shape[1])
        )

    def gls_pieces(self, theta: float) -> tuple[np.ndarray, np.ndarray, float, float]:
        """(X'V^-1X, X'V^-1y, y'V^-1y, log|V|) at variance ratio theta."""
        w = theta / (1.0 + theta * self.n_i)
        xtvx = np.zeros((self.p, self.p))
        xtvy = np.zeros(self.p)
        ytvy = 0.0
        for g in range(len(self.n_i)):
            xtvx += self.xtx_i[g] - w[g] * np.outer(self.s_i[g], self.s_i[g])
            xtvy += self.xty_i[g] - w[g] * self.s_i[g] * self.u_i[g]
            ytvy += self.yty_i[g] - w[g] * self.u_i[g] ** 2
        logdet_v = float(np.sum(np.log1p(theta * self.n_i)))
        return xtvx, xtvy, ytvy, logdet_v


def _profile(suff: _Sufficient, theta: float) -> tuple[float, np.ndarray, np.ndarray, float]:
    """REML log-likelihood and profiled (beta, cov-core, sigma2) at theta."""
    xtvx, xtvy, ytvy, logdet_v = suff.gls_pieces(theta)
    sign, logdet_x = np.linalg.slogdet(xtvx)
    if sign <= 0:
        raise StatsError("design matrix is rank deficient under the current weights")
    xtvx_inv = np.linalg.inv(xtvx)
    beta = xtvx_inv @ xtvy
    rss = float(ytvy - beta @ xtvy)
    rss = max(rss, 0.0)
    dof = suff.n - suff.p
    sigma2 = rss / dof
    log_sigma2 = math.log(sigma2) if sigma2 > 0 else -745.0  # ln of float64 tiny
    loglik = -0.5 * (
        dof * (math.log(2.0 * math.pi) + log_sigma2) + logdet_v + logdet_x + dof
    )
    return loglik, beta, xtvx_inv, sigma2


def fit_lmm(
    rows: Sequence[DesignRow],
    terms: Sequence[str],
    fixed_theta: float | None = None,
) -> LmmFit:
    """REML fit of response ~ 1 + terms + (1 | item).

    fixed_theta pins the variance ratio (0 reduces the fit to OLS);
    otherwise log theta is searched over a bounded interval, with the
    theta = 0 boundary also considered.
    """
    X, y, items, names = build_design(rows, terms)
    return fit_lmm_design(X, y, items, names, fixed_theta=fixed_theta)


def fit_lmm_design(
    X: np.ndarray,
    y: np.ndarray,
    items: np.ndarray,
    names: Sequence[str],
    fixed_theta: float | None = None,
) -> LmmFit:
    """Fit from an explicit design matrix (first column the intercept)."""
    n, p = X.shape
    q = int(items.max()) + 1
    if q < 2:
        raise StatsError("need at least 2 items for a random-intercept model")
    if n <= p:
        raise StatsError(f"{n} rows cannot identify {p} fixed effects plus noise")
    if np.linalg.matrix_rank(X) < p:
        raise StatsError("design matrix is rank deficient")
    suff = _Sufficient.from_data(X, y, items)

    converged = True
    if fixed_theta is not None:
        if fixed_theta < 0:
            raise StatsError("variance ratio cannot be negative")
        theta = float(fixed_theta)
    else:
        result = optimize.minimize_scalar(
            lambda lt: -_profile(suff, math.exp(lt))[0],
            bounds=LOG_THETA_BOUNDS,
            method="bounded",
            options={"xatol": SEARCH_XATOL},
        )
        converged = bool(result.success)
        theta = math.exp(float(result.x))
        # The boundary theta -> 0 is outside the log-scale search range.
        if _profile(suff, 0.0)[0] >= -float(result.fun):
            theta = 0.0

    loglik, beta, xtvx_inv, sigma2 = _profile(suff, theta)
    cov = sigma2 * xtvx_inv
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(
            se > 0,
            beta / np.where(se > 0, se, 1.0),
            np.where(beta != 0, np.sign(beta) * np.inf, 0.0),
        )
    pvals = np.array([wald_p(float(tv)) for tv in t])
    return LmmFit(
        terms=list(names),
        estimates=beta,
        se=se,
        t=t,
        p=pvals,
        sigma2_item=float(theta * sigma2),
        sigma2_resid=float(sigma2),
        reml_loglik=float(loglik),
        converged=converged,
        n_obs=n,
        n_items=q,
    )


def reml_loglik_at(rows: Sequence[DesignRow], terms: Sequence[str], theta: float) -> float:
    """Profiled REML log-likelihood at a given variance ratio (diagnostics)."""
    X, y, items, _ = build_design(rows, terms)
    return _profile(_Sufficient.from_data(X, y, items), theta)[0]


# ---------------------------------------------------------------------------
# Analysis families over region scores


def rows_from_scores(
    scores: Iterable[RegionScore], factors: Sequence[str]
) -> list[DesignRow]:
    rows = []
    for score in scores:
        codes = {}
        for factor in factors:
            codes[factor] = sum_code(getattr(score, factor))
        rows.append(DesignRow(score.region_surprisal, codes, score.item_id))
    return rows


@dataclass
class AnalysisResult:
    analysis: str
    construction: str
    fit: LmmFit
    verdict: bool
    detail: str = ""


def basic_licensing_test(
    scores: Sequence[RegionScore], construction: str, alpha: float = 0.001
) -> AnalysisResult:
    """filler * gap on simple sentences; learned iff the interaction is
    negative and significant."""
    simple = [s for s in scores if s.construction == construction and not s.island]
    if not simple:
        raise StatsError(f"no simple-sentence scores for {construction}")
    rows = rows_from_scores(simple, ("filler", "gap"))
    fit = fit_lmm(rows, ["filler", "gap", "filler:gap"])
    est, _, _, p = fit["filler:gap"]
    verdict = est < 0 and p < alpha
    return AnalysisResult(
        "basic_licensing",
        construction,
        fit,
        verdict,
        f"filler:gap={est:.4g}, p={p:.3g}, alpha={alpha}",
    )


def island_three_way_test(
    scores: Sequence[RegionScore], construction: str, alpha: float = 0.05
) -> AnalysisResult:
    """filler * gap * island; island-sensitive iff filler:gap < 0 and the
    three-way interaction > 0, both significant."""
    subset = [s for s in scores if s.construction == construction]
    present = {s.condition for s in subset}
    if len(present) != 8:
        raise StatsError(
            f"three-way test for {construction} needs all 8 conditions; "
            f"got {len(present)}"
        )
    rows = rows_from_scores(subset, ("filler", "gap", "island"))
    fit = fit_lmm(
        rows,
        [
            "filler",
            "gap",
            "island",
            "filler:gap",
            "filler:island",
            "gap:island",
            "filler:gap:island",
        ],
    )
    fg_est, _, _, fg_p = fit["filler:gap"]
    three_est, _, _, three_p = fit["filler:gap:island"]
    verdict = fg_est < 0 and fg_p < alpha and three_est > 0 and three_p < alpha
    return AnalysisResult(
        "island_three_way",
        construction,
        fit,
        verdict,
        f"filler:gap={fg_est:.4g} (p={fg_p:.3g}), "
        f"filler:gap:island={three_est:.4g} (p={three_p:.3g})",
    )


def directional_island_tests(
    scores: Sequence[RegionScore], construction: str, alpha: float = 0.05
) -> tuple[AnalysisResult, AnalysisResult]:
    """filler * island fit separately without gaps (FGE) and with (UGE).

    FGE passes when filler, island and their interaction are all positive
    and significant; UGE passes when all three are negative and significant.
    """
    subset = [s for s in scores if s.construction == construction]
    results = []
    for analysis, gap_value, want_positive in (
        ("fge", False, True),
        ("uge", True, False),
    ):
        part = [s for s in subset if s.gap == gap_value]
        if not part:
            raise StatsError(f"no {'-' if not gap_value else '+'}gap scores for {construction}")
        rows = rows_from_scores(part, ("filler", "island"))
        fit = fit_lmm(rows, ["filler", "island", "filler:island"])
        checks = []
        for term in ("filler", "island", "filler:island"):
            est, _, _, p = fit[term]
            sign_ok = est > 0 if want_positive else est < 0
            checks.append(sign_ok and p < alpha)
        verdict = all(checks)
        detail = ", ".join(
            f"{term}={fit.estimate(term):.4g} (p={fit.p_value(term):.3g})"
            for term in ("filler", "island", "filler:island")
        )
        results.append(AnalysisResult(analysis, construction, fit, verdict, detail))
    return results[0], results[1]
