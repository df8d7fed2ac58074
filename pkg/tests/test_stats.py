import itertools
import math

import numpy as np
import pytest

from gaplab.scoring import RegionScore
from gaplab.stats import (
    DesignRow,
    StatsError,
    basic_licensing_test,
    build_design,
    directional_island_tests,
    fit_lmm,
    fit_lmm_design,
    island_three_way_test,
    reml_loglik_at,
    sum_code,
    wald_p,
)

import oracles


class TestSumCode:
    def test_levels(self):
        assert sum_code("+") == 0.5
        assert sum_code("-") == -0.5
        assert sum_code(True) == 0.5
        assert sum_code(False) == -0.5

    def test_unknown_level(self):
        with pytest.raises(StatsError):
            sum_code("maybe")

    def test_interaction_code_is_product(self):
        rows = [DesignRow(0.0, {"f": 0.5, "g": -0.5}, 0), DesignRow(0.0, {"f": 0.5, "g": -0.5}, 1)]
        X, _, _, names = build_design(rows, ["f", "g", "f:g"])
        assert X[0, names.index("f:g")] == pytest.approx(-0.25)

    def test_balanced_design_orthogonality(self):
        # Enumerate the full 2x2x2 design: every coded column pair must have
        # zero dot product.
        rows = []
        for f, g, i in itertools.product((0.5, -0.5), repeat=3):
            rows.append(DesignRow(0.0, {"f": f, "g": g, "i": i}, 0))
        terms = ["f", "g", "i", "f:g", "f:i", "g:i", "f:g:i"]
        X, _, _, _ = build_design(rows, terms)
        gram = X.T @ X
        off_diag = gram - np.diag(np.diag(gram))
        np.testing.assert_allclose(off_diag, 0.0, atol=1e-12)

    def test_bad_code_magnitude_rejected(self):
        with pytest.raises(StatsError, match="0.5"):
            DesignRow(1.0, {"f": 1.0}, 0)


class TestWaldP:
    def test_zero(self):
        assert wald_p(0.0) == 1.0

    def test_reference_value(self):
        assert wald_p(1.959964) == pytest.approx(0.05, abs=1e-6)

    def test_against_erfc_oracle(self):
        for t in (0.3, 1.0, 2.5, 4.0, 7.7):
            assert wald_p(t) == pytest.approx(oracles.normal_two_sided_p(t), rel=1e-10)

    def test_monotone_to_zero(self):
        values = [wald_p(t) for t in (1.0, 2.0, 4.0, 8.0, 16.0, np.inf)]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] == 0.0


def balanced_rows(cell_means, n_items, factors=("filler", "gap"), noise=None, item_sd=0.0, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for item in range(n_items):
        shift = rng.normal(0, item_sd) if item_sd else 0.0
        for levels in itertools.product((True, False), repeat=len(factors)):
            y = cell_means[levels] + shift
            if noise:
                y += rng.normal(0, noise)
            rows.append(
                DesignRow(y, {f: sum_code(v) for f, v in zip(factors, levels)}, item)
            )
    return rows


def cell_means_from_beta(beta, factors):
    means = {}
    for levels in itertools.product((True, False), repeat=len(factors)):
        codes = {f: sum_code(v) for f, v in zip(factors, levels)}
        y = beta["(Intercept)"]
        for term, value in beta.items():
            if term == "(Intercept)":
                continue
            y += value * math.prod(codes[f] for f in term.split(":"))
        means[levels] = y
    return means


class TestFitLmm:
    def test_noise_free_cell_mean_contrasts(self):
        means = {
            (False, False): 1.0, (False, True): 2.0,
            (True, False): 3.0, (True, True): 4.0,
        }
        rows = balanced_rows(means, n_items=4)
        fit = fit_lmm(rows, ["filler", "gap", "filler:gap"])
        np.testing.assert_allclose(
            fit.estimates, [2.5, 2.0, 1.0, 0.0], atol=1e-8
        )
        assert fit.sigma2_item == pytest.approx(0.0, abs=1e-8)

    def test_ols_when_theta_zero(self):
        rng = np.random.default_rng(3)
        beta = {"(Intercept)": 10.0, "filler": -1.0, "gap": 0.5, "filler:gap": -2.0}
        rows = balanced_rows(
            cell_means_from_beta(beta, ("filler", "gap")),
            n_items=30, noise=1.0, item_sd=1.0, seed=3,
        )
        fit = fit_lmm(rows, ["filler", "gap", "filler:gap"], fixed_theta=0.0)
        X, y, _, _ = build_design(rows, ["filler", "gap", "filler:gap"])
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        np.testing.assert_allclose(fit.estimates, ols, atol=1e-8)

    def test_grid_search_oracle_200_items(self):
        beta = {"(Intercept)": 10.0, "filler": -1.0, "gap": 0.5, "filler:gap": -2.0}
        rows = balanced_rows(
            cell_means_from_beta(beta, ("filler", "gap")),
            n_items=200, noise=1.0, item_sd=1.0, seed=7,
        )
        fit = fit_lmm(rows, ["filler", "gap", "filler:gap"])
        X, y, items, _ = build_design(rows, ["filler", "gap", "filler:gap"])
        grid_best = oracles.reml_grid_max(y, X, items, n_points=1000)
        assert fit.reml_loglik >= grid_best - 1e-6

    def test_profiled_loglik_matches_dense_oracle_pointwise(self):
        rows = balanced_rows(
            {(True,): 2.0, (False,): 1.0}, n_items=12,
            factors=("filler",), noise=0.5, item_sd=0.7, seed=1,
        )
        X, y, items, _ = build_design(rows, ["filler"])
        for theta in (0.0, 0.3, 1.0, 4.0):
            assert reml_loglik_at(rows, ["filler"], theta) == pytest.approx(
                oracles.dense_reml_loglik(y, X, items, theta), abs=1e-8
            )

    def test_variance_recovery(self):
        beta = {"(Intercept)": 5.0, "filler": 1.0}
        rows = balanced_rows(
            cell_means_from_beta(beta, ("filler",)),
            n_items=400, factors=("filler",), noise=1.0, item_sd=2.0, seed=11,
        )
        fit = fit_lmm(rows, ["filler"])
        assert fit.sigma2_item == pytest.approx(4.0, rel=0.3)
        assert fit.sigma2_resid == pytest.approx(1.0, rel=0.2)

    def test_coding_rescale_leaves_t_invariant(self):
        rng = np.random.default_rng(9)
        rows = balanced_rows(
            {(True, True): 3.0, (True, False): 1.0, (False, True): 0.5, (False, False): 0.0},
            n_items=25, noise=0.8, item_sd=0.5, seed=9,
        )
        terms = ["filler", "gap", "filler:gap"]
        X, y, items, names = build_design(rows, terms)
        fit_half = fit_lmm_design(X, y, items, names)
        X2 = X.copy()
        X2[:, 1] *= 2.0  # +/-0.5 -> +/-1
        X2[:, 2] *= 2.0
        X2[:, 3] *= 4.0  # interaction scales by the product
        fit_one = fit_lmm_design(X2, y, items, names)
        # agreement is bounded by the 1e-8 log-theta search tolerance
        np.testing.assert_allclose(fit_half.t, fit_one.t, rtol=1e-6)
        np.testing.assert_allclose(fit_half.estimates[1], 2 * fit_one.estimates[1], rtol=1e-6)

    def test_rank_deficiency_error(self):
        rows = balanced_rows({(True,): 1.0, (False,): 0.0}, 4, factors=("filler",))
        X, y, items, names = build_design(rows, ["filler"])
        X = np.column_stack([X, X[:, 1]])
        with pytest.raises(StatsError, match="rank"):
            fit_lmm_design(X, y, items, list(names) + ["dup"])

    def test_single_item_rejected(self):
        rows = [
            DesignRow(1.0, {"f": 0.5}, 0),
            DesignRow(0.0, {"f": -0.5}, 0),
            DesignRow(1.1, {"f": 0.5}, 0),
        ]
        with pytest.raises(StatsError, match="2 items"):
            fit_lmm(rows, ["f"])


def scores_from_means(means, construction="clefting", n_items=6, item_sd=0.0, seed=0):
    """RegionScores whose cell means follow `means` keyed by condition."""
    rng = np.random.default_rng(seed)
    scores = []
    for item in range(n_items):
        shift = rng.normal(0, item_sd) if item_sd else 0.0
        for condition, mean in means.items():
            scores.append(RegionScore(item, construction, condition, mean + shift))
    return scores


def directional_means(beta, gap_value, intercept=20.0):
    means = {}
    for filler in (True, False):
        for island in (True, False):
            cf, ci = sum_code(filler), sum_code(island)
            means[(filler, gap_value, island)] = (
                intercept + beta[0] * cf + beta[1] * ci + beta[2] * cf * ci
            )
    return means


class TestAnalyses:
    def test_reference_negative_interaction_learned(self):
        # Simple-sentence licensing with the published wh-movement
        # interaction magnitude (-0.905) injected noise-free.
        beta = {"(Intercept)": 10.0, "filler": 0.3, "gap": 0.4, "filler:gap": -0.905}
        means = cell_means_from_beta(beta, ("filler", "gap"))
        cond_means = {
            (f, g, False): means[(f, g)] for f in (True, False) for g in (True, False)
        }
        scores = scores_from_means(cond_means, item_sd=0.5)
        result = basic_licensing_test(scores, "clefting")
        assert result.fit.estimate("filler:gap") == pytest.approx(-0.905, abs=1e-6)
        assert result.verdict

    def test_reference_positive_interaction_not_learned(self):
        beta = {"(Intercept)": 10.0, "filler": 0.3, "gap": 0.4, "filler:gap": 0.200}
        means = cell_means_from_beta(beta, ("filler", "gap"))
        cond_means = {
            (f, g, False): means[(f, g)] for f in (True, False) for g in (True, False)
        }
        result = basic_licensing_test(scores_from_means(cond_means), "clefting")
        assert result.fit.estimate("filler:gap") == pytest.approx(0.200, abs=1e-6)
        assert not result.verdict

    def test_zero_interaction_not_learned(self):
        beta = {"(Intercept)": 10.0, "filler": 0.3, "gap": 0.4, "filler:gap": 0.0}
        means = cell_means_from_beta(beta, ("filler", "gap"))
        cond_means = {
            (f, g, False): means[(f, g)] for f in (True, False) for g in (True, False)
        }
        scores = scores_from_means(cond_means, n_items=8, item_sd=0.0, seed=2)
        rng = np.random.default_rng(4)
        scores = [
            RegionScore(s.item_id, s.construction, s.condition,
                        s.region_surprisal + rng.normal(0, 0.2))
            for s in scores
        ]
        assert not basic_licensing_test(scores, "clefting").verdict

    def test_three_way_pass_and_sign_flip(self):
        means = {}
        for f, g, i in itertools.product((True, False), repeat=3):
            cf, cg, ci = sum_code(f), sum_code(g), sum_code(i)
            means[(f, g, i)] = 15.0 - 4.0 * cf * cg + 3.0 * cf * cg * ci
        scores = scores_from_means(means, item_sd=0.3)
        assert island_three_way_test(scores, "clefting").verdict
        flipped = {k: 30.0 - v for k, v in means.items()}
        assert not island_three_way_test(
            scores_from_means(flipped, item_sd=0.3), "clefting"
        ).verdict

    def test_three_way_reference_magnitudes(self):
        # Published wh-movement interactions: filler:gap -3.621 with a
        # +2.563 three-way term classify as a pass when injected noise-free.
        means = {}
        for f, g, i in itertools.product((True, False), repeat=3):
            cf, cg, ci = sum_code(f), sum_code(g), sum_code(i)
            means[(f, g, i)] = 18.0 - 3.621 * cf * cg + 2.563 * cf * cg * ci
        result = island_three_way_test(scores_from_means(means, item_sd=0.4), "clefting")
        assert result.fit.estimate("filler:gap") == pytest.approx(-3.621, abs=1e-6)
        assert result.fit.estimate("filler:gap:island") == pytest.approx(2.563, abs=1e-6)
        assert result.verdict

    def test_three_way_needs_all_conditions(self):
        means = {(True, True, False): 1.0, (False, True, False): 2.0}
        with pytest.raises(StatsError, match="8 conditions"):
            island_three_way_test(scores_from_means(means, n_items=3), "clefting")

    def test_directional_reference_clefting(self):
        # Published clefting values: the filled-gap fit fails (filler term
        # negative), the unlicensed-gap fit passes (all terms negative).
        fge_means = directional_means((-0.039, 2.869, 3.088), gap_value=False)
        uge_means = directional_means((-1.636, -1.456, -1.293), gap_value=True)
        scores = scores_from_means({**fge_means, **uge_means}, item_sd=0.5)
        fge, uge = directional_island_tests(scores, "clefting")
        assert fge.fit.estimate("filler") == pytest.approx(-0.039, abs=1e-6)
        assert fge.fit.estimate("island") == pytest.approx(2.869, abs=1e-6)
        assert fge.fit.estimate("filler:island") == pytest.approx(3.088, abs=1e-6)
        assert not fge.verdict
        assert uge.fit.estimate("filler") == pytest.approx(-1.636, abs=1e-6)
        assert uge.verdict

    def test_directional_all_zero_fails_both(self):
        fge_means = directional_means((0.0, 0.0, 0.0), gap_value=False)
        uge_means = directional_means((0.0, 0.0, 0.0), gap_value=True)
        rng = np.random.default_rng(8)
        scores = [
            RegionScore(s.item_id, s.construction, s.condition,
                        s.region_surprisal + rng.normal(0, 0.1))
            for s in scores_from_means({**fge_means, **uge_means}, n_items=10)
        ]
        fge, uge = directional_island_tests(scores, "clefting")
        assert not fge.verdict and not uge.verdict
