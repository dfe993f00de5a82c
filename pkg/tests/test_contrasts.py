"""Tests for the cell-means multiple contrast test."""

import math

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st
from scipy.special import stdtr

from mmminfer.contrasts import (
    CellMeansModel,
    ContrastMatrix,
    cell_means_test,
    default_contrasts,
    fit_cell_means,
)
from mmminfer.errors import EmptyCell, SchemaError, ZeroVariance
from mmminfer.linmodels import Dataset, ModelSpec, fit_ols
from mmminfer.mmm import stack
from mmminfer.mvdist import QuadratureSettings

FAST = QuadratureSettings(target_abs_error=5e-4, shifts=8, first_round_samples=64)


def partitioned_dataset(rng, n=80, target_fraction=0.4, delta=0.0, sd=1.0):
    """Balanced two-arm dataset with one flag splitting target/complement."""
    in_target = np.zeros(n)
    in_target[: round(n * target_fraction)] = 1.0
    treatment = np.tile([0, 1], n // 2 + 1)[:n]
    y = rng.normal(0.0, sd, size=n) + delta * treatment * in_target
    return Dataset(
        treatment=treatment,
        treatment_levels=("control", "active"),
        subgroups={"S1": in_target},
        responses={"y": y},
    )


def cells_dataset(values_by_cell):
    """Dataset from explicit per-cell value lists, ordered like cell_means."""
    treatment, flags, y = [], [], []
    for k, values in enumerate(values_by_cell):
        treatment += [k % 2] * len(values)
        flags += [1.0 if k < 2 else 0.0] * len(values)
        y += list(values)
    return Dataset(
        treatment=np.array(treatment),
        treatment_levels=("control", "active"),
        subgroups={"S1": np.array(flags)},
        responses={"y": np.array(y, dtype=float)},
    )


class TestFit:
    def test_means_and_counts(self):
        data = cells_dataset([(1.0, 3.0), (2.0, 4.0), (0.0, 6.0), (5.0, 7.0)])
        model = fit_cell_means(data, "y")
        assert model.cell_means == pytest.approx([2.0, 3.0, 3.0, 6.0])
        assert list(model.cell_counts) == [2, 2, 2, 2]
        assert model.residual_df == 4
        # within-cell squared deviations: 2, 2, 18, 2 on 4 residual df
        assert model.pooled_sd == pytest.approx(math.sqrt((2.0 + 2.0 + 18.0 + 2.0) / 4))

    def test_means_match_groupwise_averages(self):
        rng = np.random.default_rng(7)
        data = partitioned_dataset(rng, n=120)
        model = fit_cell_means(data, "y")
        flag = data.subgroups["S1"]
        for k, (code, tgt) in enumerate([(0, 1.0), (1, 1.0), (0, 0.0), (1, 0.0)]):
            mask = (data.treatment == code) & (flag == tgt)
            assert model.cell_means[k] == pytest.approx(
                data.responses["y"][mask].mean(), abs=1e-12
            )

    def test_null_means_near_zero(self):
        rng = np.random.default_rng(11)
        data = partitioned_dataset(rng, n=4000, delta=0.0)
        model = fit_cell_means(data, "y")
        assert np.abs(model.cell_means).max() < 5.0 / math.sqrt(400)

    def test_zero_variance(self):
        data = cells_dataset([(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)])
        with pytest.raises(ZeroVariance):
            fit_cell_means(data, "y")

    def test_small_cell_raises(self):
        data = cells_dataset([(1.0, 3.0), (2.0, 4.0), (0.0, 6.0), (5.0,)])
        with pytest.raises(EmptyCell, match="active, complement of S1"):
            fit_cell_means(data, "y")

    def test_missing_values_excluded(self):
        data = cells_dataset(
            [(1.0, 3.0, np.nan), (2.0, 4.0), (0.0, 6.0), (5.0, 7.0)]
        )
        model = fit_cell_means(data, "y")
        assert list(model.cell_counts) == [2, 2, 2, 2]
        assert model.cell_means[0] == pytest.approx(2.0)

    def test_unknown_names(self):
        data = cells_dataset([(1.0, 3.0), (2.0, 4.0), (0.0, 6.0), (5.0, 7.0)])
        with pytest.raises(SchemaError, match="endpoint"):
            fit_cell_means(data, "zzz")
        with pytest.raises(SchemaError, match="subgroup"):
            fit_cell_means(data, "y", subgroup="zzz")

    def test_ambiguous_subgroup_needs_name(self):
        base = cells_dataset([(1.0, 3.0), (2.0, 4.0), (0.0, 6.0), (5.0, 7.0)])
        data = Dataset(
            treatment=base.treatment,
            treatment_levels=base.treatment_levels,
            subgroups={"S1": base.subgroups["S1"], "other": base.subgroups["S1"]},
            responses=dict(base.responses),
        )
        with pytest.raises(SchemaError, match="name one explicitly"):
            fit_cell_means(data, "y")
        model = fit_cell_means(data, "y", subgroup="S1")
        assert model.subgroup == "S1"


class TestContrastMatrix:
    def test_default_rows(self):
        c = default_contrasts([10, 10, 30, 30])
        assert c.labels == ("target", "complement", "total")
        assert c.rows[0] == pytest.approx([-1.0, 1.0, 0.0, 0.0])
        assert c.rows[1] == pytest.approx([0.0, 0.0, -1.0, 1.0])
        assert c.rows[2] == pytest.approx([-0.25, 0.25, -0.75, 0.75])

    def test_balanced_total_weights_are_halves(self):
        c = default_contrasts([25, 25, 25, 25])
        assert c.rows[2] == pytest.approx([-0.5, 0.5, -0.5, 0.5])

    def test_balanced_target_total_correlation(self):
        corr = default_contrasts([25, 25, 25, 25]).correlation([25, 25, 25, 25])
        assert corr.entries[0, 2] == pytest.approx(math.sqrt(0.5), abs=1e-10)

    def test_correlation_matches_manual_formula(self):
        counts = np.array([13, 21, 34, 8])
        c = default_contrasts(counts)
        d = np.diag(1.0 / counts)
        want = np.empty((3, 3))
        for r in range(3):
            for s in range(3):
                num = c.rows[r] @ d @ c.rows[s]
                den = math.sqrt((c.rows[r] @ d @ c.rows[r]) * (c.rows[s] @ d @ c.rows[s]))
                want[r, s] = num / den
        assert c.correlation(counts).entries == pytest.approx(want, abs=1e-12)

    def test_restrict(self):
        c = default_contrasts([10, 10, 10, 10]).restrict((0, 2))
        assert c.labels == ("target", "total")
        assert c.rows.shape == (2, 4)

    def test_restrict_validation(self):
        c = default_contrasts([10, 10, 10, 10])
        with pytest.raises(SchemaError, match="at least one"):
            c.restrict(())
        with pytest.raises(SchemaError, match="repeated"):
            c.restrict((0, 0))
        with pytest.raises(SchemaError, match="out of range"):
            c.restrict((3,))

    def test_row_validation(self):
        with pytest.raises(SchemaError, match="nonzero"):
            ContrastMatrix(np.zeros((1, 4)), ("z",))
        with pytest.raises(SchemaError, match="labels"):
            ContrastMatrix(np.eye(4)[:2], ("a",))
        with pytest.raises(SchemaError, match=r"\(m, 4\)"):
            ContrastMatrix(np.eye(3), ("a", "b", "c"))

    def test_gram_validation(self):
        c = default_contrasts([10, 10, 10, 10])
        with pytest.raises(SchemaError, match="positive"):
            c.gram([10, 0, 10, 10])


class TestCellMeansTest:
    def test_subgroup_estimates_match_subset_ols(self):
        rng = np.random.default_rng(3)
        data = partitioned_dataset(rng, n=100, delta=1.0)
        complement = Dataset(
            treatment=data.treatment,
            treatment_levels=data.treatment_levels,
            subgroups={"S2": 1.0 - data.subgroups["S1"]},
            responses=dict(data.responses),
        )
        model = fit_cell_means(data, "y")
        report = cell_means_test(model, settings=FAST)
        ols_target = fit_ols(data, ModelSpec("y", subset="S1"))
        ols_compl = fit_ols(complement, ModelSpec("y", subset="S2"))
        assert report.rows[0].estimate == pytest.approx(ols_target.coefficient, abs=1e-12)
        assert report.rows[1].estimate == pytest.approx(ols_compl.coefficient, abs=1e-12)

    def test_single_row_family_is_marginal_t(self):
        rng = np.random.default_rng(5)
        data = partitioned_dataset(rng, n=60, delta=0.8)
        model = fit_cell_means(data, "y")
        report = cell_means_test(model, family=(0,), settings=FAST)
        row = report.rows[0]
        stat = row.estimate / (
            model.pooled_sd * math.sqrt(1.0 / model.cell_counts[0] + 1.0 / model.cell_counts[1])
        )
        want = 2.0 * stdtr(model.residual_df, -abs(stat))
        assert row.methods["cellmeans"].p == pytest.approx(want, abs=1e-3)

    def test_family_restriction_shrinks_p(self):
        rng = np.random.default_rng(9)
        data = partitioned_dataset(rng, n=100, delta=1.0)
        model = fit_cell_means(data, "y")
        full = cell_means_test(model, settings=FAST)
        pair = cell_means_test(model, family=(0, 2), settings=FAST)
        assert pair.rows[0].label == full.rows[0].label
        assert pair.rows[1].label == full.rows[2].label
        assert pair.rows[0].methods["cellmeans"].p <= full.rows[0].methods["cellmeans"].p + 1e-6

    def test_correlation_consistent_with_mmm_stack(self):
        rng = np.random.default_rng(21)
        n = 20000
        data = partitioned_dataset(rng, n=n, target_fraction=0.5)
        both = Dataset(
            treatment=data.treatment,
            treatment_levels=data.treatment_levels,
            subgroups={"S1": data.subgroups["S1"], "S2": 1.0 - data.subgroups["S1"]},
            responses=dict(data.responses),
        )
        models = [
            fit_ols(both, ModelSpec("y", subset=s)) for s in ("S1", "S2", "all")
        ]
        c_hat = stack(models).c_hat.entries
        exact = default_contrasts(fit_cell_means(data, "y").cell_counts)
        want = exact.correlation(fit_cell_means(data, "y").cell_counts).entries
        assert c_hat == pytest.approx(want, abs=4.0 / math.sqrt(n))

    def test_decision_coherence(self):
        rng = np.random.default_rng(13)
        data = partitioned_dataset(rng, n=120, delta=1.4)
        report = cell_means_test(fit_cell_means(data, "y"), settings=FAST)
        for row in report.rows:
            cell = row.methods["cellmeans"]
            excludes_zero = cell.ci_lower > 0.0 or cell.ci_upper < 0.0
            if abs(cell.p - report.alpha) > 5e-3:
                assert cell.rejected == excludes_zero

    def test_one_sided_bounds(self):
        rng = np.random.default_rng(17)
        data = partitioned_dataset(rng, n=80, delta=1.0)
        model = fit_cell_means(data, "y")
        greater = cell_means_test(model, alternative="greater", settings=FAST)
        less = cell_means_test(model, alternative="less", settings=FAST)
        for row in greater.rows:
            assert math.isinf(row.methods["cellmeans"].ci_upper)
        for row in less.rows:
            assert math.isinf(-row.methods["cellmeans"].ci_lower)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(29)
        data = partitioned_dataset(rng, n=80, delta=0.7)
        scaled = Dataset(
            treatment=data.treatment,
            treatment_levels=data.treatment_levels,
            subgroups=dict(data.subgroups),
            responses={"y": data.responses["y"] * 7.0},
        )
        a = cell_means_test(fit_cell_means(data, "y"), settings=FAST)
        b = cell_means_test(fit_cell_means(scaled, "y"), settings=FAST)
        for ra, rb in zip(a.rows, b.rows):
            assert rb.estimate == pytest.approx(7.0 * ra.estimate, rel=1e-10)
            assert rb.methods["cellmeans"].p == pytest.approx(
                ra.methods["cellmeans"].p, abs=1e-9
            )
            assert rb.methods["cellmeans"].ci_lower == pytest.approx(
                7.0 * ra.methods["cellmeans"].ci_lower, rel=1e-6
            )

    def test_report_metadata(self):
        rng = np.random.default_rng(31)
        data = partitioned_dataset(rng, n=60)
        report = cell_means_test(fit_cell_means(data, "y"), settings=FAST)
        assert report.method_names == ("cellmeans",)
        assert report.df_mode == "t(56)"
        assert [r.group for r in report.rows] == ["target", "complement", "total"]

    def test_validation(self):
        rng = np.random.default_rng(37)
        model = fit_cell_means(partitioned_dataset(rng, n=60), "y")
        with pytest.raises(ValueError, match="alternative"):
            cell_means_test(model, alternative="bogus")
        with pytest.raises(ValueError, match="alpha"):
            cell_means_test(model, alpha=1.5)


@hyp_settings(max_examples=25, deadline=None)
@given(
    counts=st.lists(st.integers(min_value=2, max_value=400), min_size=4, max_size=4)
)
def test_default_correlation_is_valid_and_positive(counts):
    corr = default_contrasts(counts).correlation(counts).entries
    assert np.allclose(np.diag(corr), 1.0)
    assert (np.linalg.eigvalsh(corr) > -1e-12).all()
    # subgroup contrasts touch disjoint cells: exactly uncorrelated
    assert corr[0, 1] == pytest.approx(0.0, abs=1e-15)
    # each subgroup contrast correlates positively with the total
    assert corr[0, 2] > 0.0 and corr[1, 2] > 0.0
