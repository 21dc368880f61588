"""Datasets, extreme-sampling designs, model terms and result containers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eps_assoc.data import (
    Dataset,
    ExtremeDesign,
    ModelSpec,
    ParameterVector,
    TestResult,
    build_design,
    select_extremes,
    select_extremes_by_cutoffs,
    wald_intervals,
)
from eps_assoc.statskernel import chi2_sf, norm_quantile


def small_dataset():
    return Dataset(
        y=np.array([1.0, 2.0, 3.0, 4.0]),
        xe=np.array([[0.0, 1.5], [1.0, 2.5], [0.0, 0.5], [1.0, 3.5]]),
        xg=np.array([[0.0], [1.0], [2.0], [np.nan]]),
        env_names=("sex", "age"),
        snp_names=("s1",),
    )


class TestDataset:
    def test_rejects_bad_genotype_code(self):
        with pytest.raises(ValueError, match="0, 1 or 2"):
            Dataset(y=[1.0], xe=[[0.0]], xg=[[3.0]])

    def test_rejects_non_finite_phenotype(self):
        with pytest.raises(ValueError, match="non-finite"):
            Dataset(y=[np.nan], xe=[[0.0]], xg=[[0.0]])

    def test_rejects_row_count_mismatch(self):
        with pytest.raises(ValueError, match="row counts"):
            Dataset(y=[1.0, 2.0], xe=[[0.0]], xg=[[0.0], [1.0]])

    def test_rejects_name_count_mismatch(self):
        with pytest.raises(ValueError, match="names"):
            Dataset(y=[1.0], xe=[[0.0]], xg=[[0.0]], env_names=("a", "b"))

    def test_missing_genotype_is_allowed(self):
        ds = small_dataset()
        assert np.isnan(ds.xg[3, 0])

    def test_default_names_and_strata(self):
        ds = Dataset(y=[1.0], xe=[[0.0, 1.0]], xg=[[2.0]])
        assert ds.env_names == ("e1", "e2")
        assert ds.snp_names == ("g1",)
        assert ds.strata.tolist() == [0]

    def test_arrays_are_immutable(self):
        ds = small_dataset()
        with pytest.raises(ValueError):
            ds.y[0] = 99.0

    def test_column_lookup(self):
        ds = small_dataset()
        assert ds.env_index("age") == 1
        assert ds.snp_index("s1") == 0
        with pytest.raises(KeyError):
            ds.env_index("nope")


class TestExtremeDesign:
    def test_rejects_inverted_cutoffs(self):
        with pytest.raises(ValueError):
            ExtremeDesign(2.0, 1.0, frozenset())

    def test_mask_and_indices(self):
        d = ExtremeDesign(0.0, 1.0, frozenset({3, 1}))
        assert d.indices().tolist() == [1, 3]
        assert d.mask(4).tolist() == [False, True, False, True]


class TestSelectExtremes:
    def test_one_from_each_tail(self):
        d = select_extremes(np.array([1.0, 2, 3, 4, 5, 6]), 1, 1)
        assert d.extreme_index_set == {0, 5}
        assert 1.0 < d.c_l < 2.0
        assert 5.0 < d.c_u < 6.0

    def test_half_of_large_sample(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=5000)
        d = select_extremes(y, 1250, 1250)
        assert len(d.extreme_index_set) == 2500

    def test_ties_broken_by_row_index(self):
        y = np.array([1.0, 1.0, 1.0, 5.0])
        d = select_extremes(y, 1, 1)
        assert d.extreme_index_set == {0, 3}

    def test_rejects_excess_counts(self):
        with pytest.raises(ValueError):
            select_extremes(np.array([1.0, 2.0]), 2, 1)

    @given(
        st.lists(
            st.floats(-1e6, 1e6), min_size=4, max_size=40, unique=True
        ),
        st.data(),
    )
    @settings(max_examples=100)
    def test_roundtrips_through_cutoffs(self, ys, data):
        y = np.array(ys)
        lo = data.draw(st.integers(1, len(ys) // 2))
        hi = data.draw(st.integers(1, len(ys) - lo - 1))
        d = select_extremes(y, lo, hi)
        d2 = select_extremes_by_cutoffs(y, d.c_l, d.c_u)
        assert d2.extreme_index_set == d.extreme_index_set

    def test_every_row_classified_once(self):
        rng = np.random.default_rng(3)
        y = rng.normal(size=100)
        d = select_extremes(y, 20, 30)
        m = d.mask(100)
        assert int(m.sum()) + int((~m).sum()) == 100


class TestSelectExtremesByCutoffs:
    def test_simple(self):
        d = select_extremes_by_cutoffs(np.array([-3.0, 0.0, 3.0]), -1.0, 1.0)
        assert d.extreme_index_set == {0, 2}

    def test_can_be_empty(self):
        d = select_extremes_by_cutoffs(np.array([0.0, 1.0]), -1e30, 1e30)
        assert d.extreme_index_set == frozenset()

    def test_quartile_cutoffs_match_direct_count(self):
        rng = np.random.default_rng(5)
        y = rng.normal(size=2000)
        q1, q3 = np.quantile(y, [0.25, 0.75])
        d = select_extremes_by_cutoffs(y, q1, q3)
        assert len(d.extreme_index_set) == int(np.sum((y < q1) | (y > q3)))


class TestModelSpec:
    def test_term_name_order(self):
        spec = ModelSpec(("a", "b"), ("s",), (("a", "s"),), ("g:s",))
        assert spec.term_names() == ["e:a", "e:b", "g:s", "eg:a*s"]

    def test_rejects_undeclared_interaction(self):
        with pytest.raises(ValueError, match="undeclared"):
            ModelSpec(("a",), ("s",), (("b", "s"),))

    def test_rejects_unknown_tested_term(self):
        with pytest.raises(ValueError, match="not a model term"):
            ModelSpec(("a",), ("s",), (), ("g:zzz",))

    def test_drop_tested(self):
        spec = ModelSpec(("a",), ("s",), (("a", "s"),), ("eg:a*s",))
        null = spec.drop_tested()
        assert null.term_names() == ["e:a", "g:s"]
        assert null.tested_terms == ()

    def test_with_tested(self):
        spec = ModelSpec(("a",), ("s",))
        assert spec.with_tested(["g:s"]).tested_terms == ("g:s",)


class TestParameterVector:
    def test_flat_order(self):
        pv = ParameterVector(1.0, [2.0, 3.0], [4.0], [5.0], 6.0)
        assert pv.flat().tolist() == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            ParameterVector(0.0, [], [], [], 0.0)


class TestTestResult:
    def test_p_value_matches_chi2_sf(self):
        r = TestResult.from_chi2(5.3, 2, "score")
        assert r.p_value == chi2_sf(5.3, 2)
        assert r.df == 2


class TestWaldIntervals:
    def test_half_width(self):
        info = np.diag([4.0, 25.0])
        est = np.array([1.0, -2.0])
        se, ci, note = wald_intervals(est, info, 0.95)
        z = norm_quantile(0.975)
        assert se == pytest.approx([0.5, 0.2])
        assert ci[0] == pytest.approx([1.0 - z * 0.5, 1.0 + z * 0.5])
        assert note == ""
        assert np.all(ci[:, 0] <= est) and np.all(est <= ci[:, 1])

    def test_singular_information(self):
        se, ci, note = wald_intervals(np.array([1.0]), np.array([[0.0]]))
        assert np.isnan(se[0]) and np.all(np.isnan(ci))
        assert "singular" in note


class TestBuildDesign:
    def test_single_snp_tested_block(self):
        ds = small_dataset()
        spec = ModelSpec((), ("s1",), (), ("g:s1",))
        view = build_design(ds, spec, rows=[0, 1, 2])
        assert view.x0.shape == (3, 1)
        assert view.x1.shape == (3, 0)

    def test_interaction_column_is_product(self):
        ds = small_dataset()
        spec = ModelSpec(("age",), ("s1",), (("age", "s1"),))
        view = build_design(ds, spec, rows=[0, 1, 2])
        prod = view.x[:, 0] * view.x[:, 1]
        assert np.array_equal(view.x[:, 2], prod)

    def test_design_rows(self):
        ds = small_dataset()
        design = select_extremes(ds.y, 1, 1)
        view = build_design(ds, ModelSpec(("age",)), design=design)
        assert view.n_rows == 2
        assert view.rows.tolist() == sorted(design.extreme_index_set)

    def test_rejects_missing_genotypes_when_complete_required(self):
        ds = small_dataset()
        spec = ModelSpec((), ("s1",), (), ("g:s1",))
        with pytest.raises(ValueError, match="missing"):
            build_design(ds, spec)
        view = build_design(ds, spec, require_complete=False)
        assert np.isnan(view.x[3, 0])

    def test_null_view_drops_tested(self):
        ds = small_dataset()
        spec = ModelSpec(("age",), ("s1",), (), ("g:s1",))
        view = build_design(ds, spec, rows=[0, 1, 2])
        null = view.null_view()
        assert null.names == ("e:age",)
        assert null.x.shape == (3, 1)
