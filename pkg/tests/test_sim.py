"""Tests for the Monte Carlo engine: cohort generation, sampling designs,
seeding determinism and the power/MSE estimators."""

import numpy as np
import pytest

from eps_assoc.sim import (
    DesignSpec,
    SimScenario,
    apply_design,
    estimate_mse,
    estimate_power,
    model_spec_for,
    power_curve,
    simulate_dataset,
)


class TestScenario:
    def test_rejects_unknown_model(self):
        with pytest.raises(ValueError, match="model must be one of"):
            SimScenario(model="quadratic")

    @pytest.mark.parametrize("q", [0.0, 0.6, -0.1])
    def test_rejects_bad_maf(self, q):
        with pytest.raises(ValueError, match="allele frequency"):
            SimScenario(q=q)

    def test_rejects_bad_sigma_and_n(self):
        with pytest.raises(ValueError, match="sigma"):
            SimScenario(sigma=0.0)
        with pytest.raises(ValueError, match="n <= n_total"):
            SimScenario(n=6000, n_total=5000)

    def test_genotype_probs_are_hardy_weinberg(self):
        sc = SimScenario(q=0.3)
        assert np.allclose(sc.genotype_probs(), [0.49, 0.42, 0.09])

    def test_mean_structures(self):
        xe1, xe2, xg = np.array([1.0]), np.array([2.0]), np.array([2.0])
        base = 50 + 10 * 1 + 5 * 2 + 0.5 * 2
        assert SimScenario().mean(xe1, xe2, xg)[0] == pytest.approx(base)
        assert SimScenario(model="binary-interaction").mean(xe1, xe2, xg)[
            0
        ] == pytest.approx(base + 1.0 * 1 * 2)
        assert SimScenario(model="continuous-interaction").mean(xe1, xe2, xg)[
            0
        ] == pytest.approx(base + 0.5 * 2 * 2)


class TestSimulateDataset:
    def test_shape_and_names(self):
        ds = simulate_dataset(SimScenario(n_total=500, n=250), seed=1)
        assert ds.n_rows == 500
        assert ds.env_names == ("e1", "e2")
        assert ds.snp_names == ("g",)
        assert not np.any(np.isnan(ds.xg))

    def test_deterministic_for_seed(self):
        a = simulate_dataset(SimScenario(n_total=100, n=50), seed=5)
        b = simulate_dataset(SimScenario(n_total=100, n=50), seed=5)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.xg, b.xg)

    def test_genotype_frequencies_near_hardy_weinberg(self):
        ds = simulate_dataset(SimScenario(n_total=20000, n=100, q=0.3), seed=2)
        freq = np.array([(ds.xg == k).mean() for k in (0.0, 1.0, 2.0)])
        assert np.allclose(freq, [0.49, 0.42, 0.09], atol=0.02)

    def test_small_sigma_pins_response_to_mean(self):
        sc = SimScenario(n_total=200, n=100, sigma=1e-9)
        ds = simulate_dataset(sc, seed=3)
        mu = sc.mean(ds.xe[:, 0], ds.xe[:, 1], ds.xg[:, 0])
        assert np.allclose(ds.y, mu, atol=1e-6)


class TestApplyDesign:
    def setup_method(self):
        self.ds = simulate_dataset(SimScenario(n_total=400, n=200), seed=7)
        self.rng = np.random.default_rng(0)

    def test_full_keeps_everything(self):
        out, design = apply_design(self.ds, DesignSpec(kind="full"), rng=self.rng)
        assert out is self.ds and design is None

    def test_random_subsets_rows(self):
        out, design = apply_design(
            self.ds, DesignSpec(kind="random", n=100), rng=self.rng
        )
        assert out.n_rows == 100 and design is None
        assert not np.any(np.isnan(out.xg))

    def test_rs_complete_masks_random_interior(self):
        out, design = apply_design(
            self.ds, DesignSpec(kind="rs-complete", n=100), rng=self.rng
        )
        assert out.n_rows == 400
        assert np.sum(~np.isnan(out.xg[:, 0])) == 100

    def test_eps_only_keeps_extremes_with_design(self):
        out, design = apply_design(
            self.ds, DesignSpec(kind="eps-only", n=100), rng=self.rng
        )
        assert out.n_rows == 100
        assert design is not None
        assert np.all((out.y < design.c_l) | (out.y > design.c_u))

    def test_eps_full_masks_interior_genotypes(self):
        out, design = apply_design(
            self.ds, DesignSpec(kind="eps-full", n=100), rng=self.rng
        )
        assert out.n_rows == 400
        observed = ~np.isnan(out.xg[:, 0])
        assert observed.sum() == 100
        assert np.array_equal(observed, design.mask(400))
        # genotyped rows are exactly the phenotype extremes
        assert set(np.argsort(self.ds.y)[:50]) <= set(np.nonzero(observed)[0])

    def test_ees_designs_select_exposure_extremes(self):
        only, d1 = apply_design(
            self.ds, DesignSpec(kind="ees-only", n=100), rng=self.rng
        )
        full, d2 = apply_design(
            self.ds, DesignSpec(kind="ees-full", n=100), rng=self.rng
        )
        assert d1 is None and d2 is None
        assert only.n_rows == 100
        assert full.n_rows == 400
        observed = ~np.isnan(full.xg[:, 0])
        assert observed.sum() == 100
        e = self.ds.xe[:, 1]
        cut_lo, cut_hi = np.sort(e)[49], np.sort(e)[-50]
        assert np.all((only.xe[:, 1] <= cut_lo) | (only.xe[:, 1] >= cut_hi))

    def test_combined_genotypes_exactly_n0_plus_ne(self):
        out, design = apply_design(
            self.ds, DesignSpec(kind="combined", n0=60, n_e=80), rng=self.rng
        )
        assert out.n_rows == 400
        observed = ~np.isnan(out.xg[:, 0])
        assert observed.sum() == 140

    def test_combined_with_no_extremes_is_a_random_mask(self):
        out, _ = apply_design(
            self.ds, DesignSpec(kind="combined", n0=50, n_e=0), rng=self.rng
        )
        assert np.sum(~np.isnan(out.xg[:, 0])) == 50

    def test_requests_beyond_cohort_are_rejected(self):
        with pytest.raises(ValueError, match="of 400 rows"):
            apply_design(self.ds, DesignSpec(kind="random", n=500), rng=self.rng)

    def test_combined_requires_both_counts(self):
        with pytest.raises(ValueError, match="n0 and n_e"):
            DesignSpec(kind="combined", n0=50)
        with pytest.raises(ValueError, match="n0 \\+ n_e"):
            DesignSpec(kind="combined", n0=50, n_e=50, n=200)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="design kind"):
            DesignSpec(kind="quantile")


class TestModelSpecFor:
    def test_main_effects_tests_genotype(self):
        spec = model_spec_for(SimScenario())
        assert spec.tested_terms == ("g:g",)
        assert spec.interaction_pairs == ()

    def test_interaction_models_test_their_interaction(self):
        s1 = model_spec_for(SimScenario(model="binary-interaction"))
        assert s1.tested_terms == ("eg:e1*g",)
        s2 = model_spec_for(SimScenario(model="continuous-interaction"))
        assert s2.tested_terms == ("eg:e2*g",)

    def test_explicit_tested_terms_override(self):
        spec = model_spec_for(SimScenario(), tested=("g:g",))
        assert spec.tested_terms == ("g:g",)


SMALL = SimScenario(n_total=300, n=150, beta_g=0.0)


class TestEstimatePower:
    def test_serial_and_parallel_agree_bit_for_bit(self):
        a = estimate_power(SMALL, DesignSpec(kind="random", n=150), "linear", R=40, seed=9)
        b = estimate_power(
            SMALL, DesignSpec(kind="random", n=150), "linear", R=40, seed=9, workers=3
        )
        assert np.array_equal(a.p_values, b.p_values)
        assert a.power == b.power

    def test_single_replicate_power_is_zero_or_one(self):
        r = estimate_power(SMALL, DesignSpec(kind="full"), "linear", R=1, seed=0)
        assert r.power in (0.0, 1.0)
        assert r.used == 1

    def test_huge_effect_always_rejected(self):
        sc = SimScenario(n_total=300, n=150, beta_g=10.0, sigma=1.0)
        r = estimate_power(sc, DesignSpec(kind="full"), "linear", R=20, seed=4)
        assert r.power == 1.0

    def test_mc_se_formula(self):
        r = estimate_power(SMALL, DesignSpec(kind="full"), "linear", R=50, seed=1)
        assert r.mc_se == pytest.approx(
            np.sqrt(r.power * (1 - r.power) / r.used)
        )

    def test_incompatible_method_design_pairs(self):
        with pytest.raises(ValueError, match="incompatible"):
            estimate_power(SMALL, DesignSpec(kind="eps-only", n=100), "linear", R=2)
        with pytest.raises(ValueError, match="incompatible"):
            estimate_power(SMALL, DesignSpec(kind="full"), "eps-only", R=2)
        with pytest.raises(ValueError, match="unknown method"):
            estimate_power(SMALL, DesignSpec(kind="full"), "bayes", R=2)

    def test_zero_replicates_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            estimate_power(SMALL, DesignSpec(kind="full"), "linear", R=0)

    def test_failure_budget_triggers(self):
        # a cohort this small cannot fit the truncated likelihood's five
        # parameters from 4 extreme rows, so every replicate fails
        sc = SimScenario(n_total=40, n=4)
        with pytest.raises(RuntimeError, match="failure budget"):
            estimate_power(sc, DesignSpec(kind="eps-only", n=4), "eps-only", R=10)

    def test_eps_methods_run_end_to_end(self):
        sc = SimScenario(n_total=400, n=200, beta_g=0.0)
        for kind, method in (
            ("eps-only", "eps-only"),
            ("eps-only", "eps-binary"),
            ("eps-full", "eps-full"),
        ):
            r = estimate_power(sc, DesignSpec(kind=kind, n=200), method, R=5, seed=3)
            assert r.used + r.failures == 5

    def test_interaction_scenario_routes_to_lrt(self):
        sc = SimScenario(
            model="continuous-interaction", n_total=400, n=200, beta_e2g=0.0
        )
        r = estimate_power(sc, DesignSpec(kind="eps-full", n=200), "eps-full", R=3, seed=2)
        assert r.used + r.failures == 3


class TestEstimateMse:
    def test_mse_matches_estimates(self):
        sc = SimScenario(n_total=300, n=150, beta_g=0.5)
        r = estimate_mse(sc, DesignSpec(kind="full"), "linear", R=30, seed=5)
        est = r.estimates[np.isfinite(r.estimates)]
        assert r.mse == pytest.approx(float(np.mean((est - 0.5) ** 2)))
        assert r.mean_estimate == pytest.approx(float(np.mean(est)))

    def test_full_sample_estimate_is_nearly_unbiased(self):
        sc = SimScenario(n_total=2000, n=1000, beta_g=0.5)
        r = estimate_mse(sc, DesignSpec(kind="full"), "linear", R=60, seed=6)
        assert r.mean_estimate == pytest.approx(0.5, abs=0.1)


class TestPowerCurve:
    def test_rows_cover_grid_and_designs(self):
        sc = SimScenario(n_total=300, n=150, beta_g=0.0)
        rows = power_curve(
            sc,
            {
                "random": (DesignSpec(kind="random"), "linear"),
                "extreme": (DesignSpec(kind="eps-full"), "eps-full"),
            },
            n_grid=[100, 200],
            R=3,
            seed=8,
        )
        assert len(rows) == 4
        assert {r["design"] for r in rows} == {"random", "extreme"}
        assert {r["n"] for r in rows} == {100, 200}
        for r in rows:
            assert 0.0 <= r["power"] <= 1.0

    def test_grid_outside_cohort_rejected(self):
        sc = SimScenario(n_total=300, n=150)
        with pytest.raises(ValueError, match="outside"):
            power_curve(
                sc, {"r": (DesignSpec(kind="random"), "linear")}, n_grid=[400], R=2
            )
