import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dope.data import ContrastSpec, ObservationTable, assign_folds
from dope.errors import (
    BadFoldConfig,
    ConfigError,
    EmptyIndexSet,
    MissingArmEstimate,
    NonBinaryTreatment,
    OverlappingIndexSets,
)
from dope.estimators import (
    ClipRange,
    IndexSets,
    NuisancePair,
    PointEstimate,
    adjusted_contrast,
    aipw_estimate,
    crossfit_dope,
    crossfit_layouts,
    dope,
    dope_bcl,
    dope_from_nuisances,
    identity,
    ipw_estimate,
    naive_contrast,
    regression_estimate,
)
from dope.pipeline import ALL_METHODS, MethodSettings, compute_methods
from dope.regressors.linear import fit_ols
from dope.regressors.logistic import fit_logistic_irls
from dope.regressors.models import OLSConfig, fit_outcome, fit_propensity
from dope.regressors.network import TrainConfig

from conftest import make_table


class _Scaled:
    """Outcome model whose representation is multiplied by ``c``."""

    def __init__(self, base, c):
        self.base = base
        self.c = c
        self.representation_dim = base.representation_dim

    def predict(self, t, W):
        return self.base.predict(t, W)

    def representation(self, W):
        return self.c * self.base.representation(W)


class TestSimpleEstimators:

    def test_naive(self):
        tab = ObservationTable.from_arrays([1, 1, 0, 0], np.zeros((4, 1)), [3.0, 3.0, 1.0, 1.0])
        assert naive_contrast(tab) == 2.0

    def test_regression_constant_model(self, table):
        est = regression_estimate(np.full(table.n, 2.5), table)
        assert est.value == 2.5

    def test_regression_ols_mean_matches_outcome_mean(self):
        tab = make_table(n=80, seed=5)
        m = fit_ols(tab.covariates, tab.outcomes)
        assert regression_estimate(m.predict(tab.covariates), tab).value == pytest.approx(
            tab.outcomes.mean(), abs=1e-12)

    def test_ipw_all_treated_clips(self):
        tab = ObservationTable.from_arrays([1, 1, 1], np.zeros((3, 1)), [1.0, 2.0, 3.0], labels=("0", "1"))
        est = ipw_estimate(np.ones(3), tab)
        assert est.value == pytest.approx(2.0 / 0.99, rel=1e-15)

    def test_ipw_no_treated_is_zero(self):
        tab = ObservationTable.from_arrays([0, 0, 0], np.zeros((3, 1)), [1.0, 2.0, 3.0], labels=("0", "1"))
        assert ipw_estimate(np.full(3, 0.5), tab).value == 0.0

    def test_ipw_hand_example(self):
        tab = ObservationTable.from_arrays([1, 0, 1, 0], np.zeros((4, 1)), [2.0, 5.0, 4.0, 7.0])
        m = np.array([0.5, 0.5, 0.25, 0.75])
        assert ipw_estimate(m, tab).value == pytest.approx((4.0 + 16.0) / 4)

    def test_ipw_weight_bounded_by_clip(self):
        tab = ObservationTable.from_arrays([1, 0], np.zeros((2, 1)), [1.0, 0.0])
        est = ipw_estimate(np.array([1e-6, 0.5]), tab, clip=ClipRange(0.05, 0.95))
        assert est.per_row_terms[0] == pytest.approx(20.0)


class TestAIPW:

    def test_two_row_example(self):
        tab = ObservationTable.from_arrays([1, 0], np.zeros((2, 1)), [4.0, 9.0])
        est = aipw_estimate(np.array([0.5, 0.5]), np.array([2.0, 2.0]), tab)
        # (2 + 2/0.5 + 2) / 2
        assert est.value == pytest.approx(4.0)
        est = aipw_estimate(np.array([0.5, 0.5]), np.array([3.0, 3.0]), tab)
        # (5 + 3) / 2: the correction offsets the shifted outcome model
        assert est.value == pytest.approx(4.0)

    def test_recomposition(self, table):
        rng = np.random.default_rng(0)
        g = rng.normal(size=(table.n, 2))
        m = rng.uniform(0.1, 0.9, size=table.n)
        est = aipw_estimate(m, g, table)
        treated = table.treatments == 1
        reg = g[:, 1].mean()
        corr = np.mean(treated * (table.outcomes - g[:, 1]) / m)
        assert est.value == pytest.approx(reg + corr, abs=1e-12)

    def test_perfect_outcome_reduces_to_regression(self, table):
        g = np.column_stack([table.outcomes, table.outcomes])
        m = np.full(table.n, 0.3)
        assert aipw_estimate(m, g, table).value == pytest.approx(regression_estimate(g, table).value, abs=1e-12)

    def test_contrast_is_difference_of_arms(self, table):
        g = fit_outcome(table, OLSConfig())
        prop = fit_propensity(table.covariates, table.treatments, 2)
        diff = aipw_estimate(prop, g, table, ContrastSpec.difference(1, 0))
        a1 = aipw_estimate(prop, g, table, 1).value
        a0 = aipw_estimate(prop, g, table, 0).value
        assert diff.value == pytest.approx(a1 - a0, abs=1e-12)
        assert adjusted_contrast(diff.arm_values, ContrastSpec.difference(1, 0)) == pytest.approx(diff.value)

    def test_three_arm_contrast(self):
        rng = np.random.default_rng(2)
        W = rng.normal(size=(300, 2))
        T = rng.integers(0, 3, size=300)
        Y = T + W[:, 0] + rng.normal(size=300)
        tab = ObservationTable.from_arrays(T, W, Y)
        g = fit_outcome(tab, OLSConfig())
        prop = fit_propensity(W, T, 3)
        spec = ContrastSpec({2: 1.0, 0: -1.0})
        est = aipw_estimate(prop, g, tab, spec)
        assert est.value == pytest.approx(2.0, abs=0.5)


class TestDope:

    def test_identity_representation_is_aipw(self, table):
        g = fit_outcome(table, OLSConfig())
        prop = fit_propensity(table.covariates, table.treatments, 2)
        nuis = NuisancePair(identity, g, prop)
        a = dope_from_nuisances(nuis, table)
        b = aipw_estimate(prop, g, table)
        assert a.value == pytest.approx(b.value, abs=1e-12)

    def test_hand_chained_ols(self):
        tab = make_table(n=40, d=2, seed=9)
        W, T, Y = tab.covariates, tab.treatments, tab.outcomes
        fits = [fit_ols(W[T == k], Y[T == k]) for k in (0, 1)]
        Z = np.column_stack([W @ f.coefficients for f in fits])
        lg = fit_logistic_irls(Z, (T == 1).astype(float))
        m = np.clip(lg.predict_proba(Z), 0.01, 0.99)
        g1 = fits[1].predict(W)
        expected = np.mean(g1 + (T == 1) * (Y - g1) / m)
        est = dope(tab, regression_cfg=OLSConfig())
        assert est.value == pytest.approx(expected, abs=1e-12)
        assert est.representation_dim == 2

    def test_requires_config(self, table):
        with pytest.raises(ConfigError):
            dope(table)

    def test_strict_overlap_rejected(self, table):
        idx = IndexSets(np.arange(100), np.arange(50, 150), np.arange(150, 200))
        with pytest.raises(OverlappingIndexSets):
            dope(table, idx, OLSConfig(), strict=True)

    def test_strict_requires_cover(self, table):
        idx = IndexSets(np.arange(50), np.arange(50, 100), np.arange(100, 150))
        with pytest.raises(OverlappingIndexSets):
            dope(table, idx, OLSConfig(), strict=True)

    def test_empty_index_set(self):
        with pytest.raises(EmptyIndexSet):
            IndexSets(np.arange(3), np.array([], dtype=int), np.arange(3))

    def test_split_sample_refits_head(self, table):
        idx = IndexSets(np.arange(70), np.arange(70, 140), np.arange(140, 200))
        est = dope(table, idx, OLSConfig(), strict=True)
        assert est.per_row_terms.size == 60
        assert np.isfinite(est.value)

    @given(c=st.floats(0.1, 50.0), sign=st.sampled_from([1.0, -1.0]))
    def test_index_rescaling_invariance(self, c, sign):
        tab = make_table(n=150, seed=4)
        g = fit_outcome(tab, OLSConfig("joint"))
        base = dope_from_nuisances(self._fused(g, tab), tab)
        scaled = dope_from_nuisances(self._fused(_Scaled(g, sign * c), tab), tab)
        assert scaled.value == pytest.approx(base.value, abs=1e-6)

    @staticmethod
    def _fused(g, tab):
        prop = fit_propensity(g.representation(tab.covariates), tab.treatments, 2)
        return NuisancePair(g.representation, g, prop, outcome_on_covariates=True)


class TestBCL:

    def test_constant_outcome_gives_intercept_propensity(self):
        tab = make_table(n=120, seed=3)
        const = ObservationTable.from_arrays(tab.treatments, tab.covariates, np.full(tab.n, 2.0))
        est = dope_bcl(const, regression_cfg=OLSConfig())
        assert est.value == pytest.approx(2.0, abs=1e-8)

    def test_linear_bcl_matches_dope_ols(self, table):
        a = dope_bcl(table, regression_cfg=OLSConfig())
        b = dope(table, regression_cfg=OLSConfig())
        assert a.value == pytest.approx(b.value, abs=1e-6)

    def test_needs_two_arms(self):
        tab = ObservationTable.from_arrays([0, 1, 2] * 10, np.random.default_rng(0).normal(size=(30, 2)),
                                           np.arange(30.0))
        with pytest.raises(NonBinaryTreatment):
            dope_bcl(tab, regression_cfg=OLSConfig())


class TestCrossFit:

    def test_cycle_layouts_partition(self):
        folds = assign_folds(40, 4, 0)
        for idx in crossfit_layouts(folds.fold_of, 4, 1):
            rows = np.concatenate([idx.I1, idx.I2, idx.I3])
            npt.assert_array_equal(np.sort(rows), np.arange(40))
            idx.validate(40, strict=True)

    def test_three_fold_sizes(self):
        folds = assign_folds(90, 3, 0)
        for idx in crossfit_layouts(folds.fold_of, 3, variant="three_fold"):
            assert idx.I1.size == 60
            assert idx.I3.size == 30
            npt.assert_array_equal(idx.I1, idx.I2)

    def test_bad_m(self, table):
        with pytest.raises(BadFoldConfig):
            crossfit_dope(table, K=3, m=2, regression_cfg=OLSConfig())

    def test_unknown_variant(self, table):
        with pytest.raises(ConfigError):
            crossfit_dope(table, K=3, regression_cfg=OLSConfig(), variant="other")

    def test_result_is_fold_average(self, table):
        res = crossfit_dope(table, K=4, m=1, regression_cfg=OLSConfig(), seed=1)
        assert res.estimate == pytest.approx(res.fold_estimates.mean())
        assert res.n_effective == table.n
        assert len(res.layouts) == 4

    def test_seeded(self, table):
        cfg = TrainConfig(iterations=30)
        a = crossfit_dope(table, K=3, regression_cfg=cfg, variant="three_fold", seed=2)
        b = crossfit_dope(table, K=3, regression_cfg=cfg, variant="three_fold", seed=2)
        assert a.estimate == b.estimate


class TestContrast:

    def test_adjusted_contrast(self):
        spec = ContrastSpec({0: -1.0, 1: 2.0})
        assert adjusted_contrast({0: 1.0, 1: 3.0}, spec) == 5.0

    def test_point_estimates_accepted(self):
        pe = PointEstimate(4.0, np.zeros(2), "x")
        assert adjusted_contrast({1: pe, 0: 1.0}, ContrastSpec.difference(1, 0)) == 3.0

    def test_missing_arm(self):
        with pytest.raises(MissingArmEstimate):
            adjusted_contrast({1: 1.0}, ContrastSpec.difference(1, 0))

    def test_clip_range_validation(self):
        with pytest.raises(ConfigError):
            ClipRange(0.5, 0.5)


class TestPipeline:

    def test_all_methods_finite(self, table):
        settings = MethodSettings(network=TrainConfig(iterations=40))
        out = compute_methods(table, ALL_METHODS, ContrastSpec.difference(1, 0), settings)
        assert list(out) == list(ALL_METHODS)
        for res in out.values():
            assert np.isfinite(res.value)
            assert res.se > 0

    def test_ols_methods_match_estimators(self, table):
        out = compute_methods(table, ["reg-ols", "aipw-ols", "dope-ols"])
        g = fit_outcome(table, OLSConfig())
        prop = fit_propensity(table.covariates, table.treatments, 2)
        assert out["reg-ols"].value == pytest.approx(regression_estimate(g, table).value, abs=1e-12)
        assert out["aipw-ols"].value == pytest.approx(aipw_estimate(prop, g, table).value, abs=1e-12)
        assert out["dope-ols"].value == pytest.approx(dope(table, regression_cfg=OLSConfig()).value, abs=1e-12)

    def test_unknown_method(self, table):
        with pytest.raises(ConfigError):
            compute_methods(table, ["magic"])
