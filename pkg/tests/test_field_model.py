import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import twincal as tc
from twincal.field_model import component_cutoff, log_pmf_vector, pmf_vector


def mp_pmf(n, modes, per_mode, dps=50):
    """Arbitrary-precision evaluation of the closed-form mass function."""
    with mp.workdps(dps):
        m = mp.mpf(modes)
        b = mp.mpf(per_mode)
        value = (mp.gamma(n + m) / (mp.factorial(n) * mp.gamma(m))
                 * b**n / (1 + b) ** (n + m))
        return float(value)


class TestPmf:
    def test_zero_photons_closed_form(self):
        # p(0) = (1+b)^(-M)
        assert tc.mandel_rice_pmf(0, tc.FieldComponentParams(1, 1)) == pytest.approx(0.5)
        p = tc.FieldComponentParams(3.5, 0.2)
        assert tc.mandel_rice_pmf(0, p) == pytest.approx(1.2**-3.5, rel=1e-14)

    def test_vacuum_limit(self):
        p = tc.FieldComponentParams(2.0, 0.0)
        assert tc.mandel_rice_pmf(0, p) == 1.0
        assert tc.mandel_rice_pmf(3, p) == 0.0

    def test_reference_parameters_against_mp(self):
        p = tc.FieldComponentParams(170.0, 0.058)
        got = tc.mandel_rice_pmf(10, p)
        want = mp_pmf(10, 170.0, 0.058)
        assert got == pytest.approx(want, rel=1e-12)

    @pytest.mark.parametrize("modes,per_mode,n", [
        (0.0007, 33.2, 0), (0.0007, 33.2, 7), (0.0101, 10.6, 3),
        (1e-4, 500.0, 40), (2500.0, 0.004, 12), (1.0, 1.0, 5),
    ])
    def test_mp_oracle_across_regimes(self, modes, per_mode, n):
        got = tc.mandel_rice_pmf(n, tc.FieldComponentParams(modes, per_mode))
        want = mp_pmf(n, modes, per_mode)
        assert got == pytest.approx(want, rel=1e-11)

    def test_poisson_limit_pmf(self):
        p = tc.FieldComponentParams.poisson(2.5)
        for n in range(8):
            want = math.exp(-2.5) * 2.5**n / math.factorial(n)
            assert tc.mandel_rice_pmf(n, p) == pytest.approx(want, rel=1e-12)

    def test_normalization_with_tail_bound(self):
        """Mass up to the cutoff plus a geometric tail bound covers unity."""
        for modes, per_mode in [(170.0, 0.058), (0.0007, 33.2), (1.0, 1.0), (25.0, 0.5)]:
            p = tc.FieldComponentParams(modes, per_mode)
            k = component_cutoff(p, 1e-11)
            mass = float(pmf_vector(p, k).sum())
            ratio = per_mode / (1 + per_mode)
            if modes > 1:
                ratio *= (k + 1 + modes) / (k + 2)
            assert ratio < 1
            tail_bound = tc.mandel_rice_pmf(k + 1, p) / (1 - ratio)
            assert mass <= 1 + 1e-12
            assert 1 - mass <= tail_bound + 1e-15
            assert abs(1 - mass) < 1e-10


class TestComponentMoments:
    def test_single_mode(self):
        assert tc.component_moments(tc.FieldComponentParams(1, 1)) == (1.0, 2.0)

    def test_reference_pair_component(self):
        mean, var = tc.component_moments(tc.FieldComponentParams(170.0, 0.058))
        assert mean == pytest.approx(9.86, abs=5e-3)
        assert var == pytest.approx(10.43, abs=5e-3)

    def test_vacuum(self):
        assert tc.component_moments(tc.FieldComponentParams.vacuum()) == (0.0, 0.0)


class TestComponentFromMoments:
    def test_single_thermal_mode(self):
        p = tc.component_from_moments(1.0, 2.0)
        assert p.mean_per_mode == pytest.approx(1.0)
        assert p.modes == pytest.approx(1.0)

    def test_reference_scale(self):
        # covariance 0.597 with efficiencies 0.243/0.235 gives this variance
        var = 0.597 / (0.243 * 0.235)
        p = tc.component_from_moments(9.88, var)
        assert p.mean_per_mode == pytest.approx(0.058, abs=1e-3)
        assert p.modes == pytest.approx(170.0, abs=1.0)

    def test_sub_poissonian_rejected(self):
        with pytest.raises(tc.SubPoissonianComponent):
            tc.component_from_moments(1.0, 0.5)

    def test_poisson_limit_representation(self):
        p = tc.component_from_moments(3.0, 3.0)
        assert p.is_poisson
        assert p.mean == 3.0
        assert p.variance == 3.0

    def test_vacuum_sentinel(self):
        p = tc.component_from_moments(0.0, 0.0)
        assert p.is_vacuum
        assert p.mean == 0.0

    def test_bursty_component_kept(self):
        # tiny mean with large variance: represented, not silently dropped
        p = tc.component_from_moments(1e-3, 0.8)
        assert p.mean == pytest.approx(1e-3, rel=1e-9)
        assert p.variance == pytest.approx(0.8, rel=1e-9)

    def test_zero_mean_nonzero_variance_rejected(self):
        with pytest.raises(ValueError):
            tc.component_from_moments(0.0, 0.8)

    @given(modes=st.floats(1e-3, 1e4), per_mode=st.floats(1e-6, 1e3))
    @settings(max_examples=200, deadline=None)
    def test_roundtrip_over_parameter_box(self, modes, per_mode):
        mean, var = tc.component_moments(tc.FieldComponentParams(modes, per_mode))
        back = tc.component_from_moments(mean, var)
        # recovering b from variance/mean - 1 amplifies round-off by
        # (1+b)/b; below b ~ 1e-4 that conditioning dominates 1e-12
        eps = np.finfo(float).eps
        tol = max(1e-12, 4 * eps * (1 + per_mode) / per_mode)
        assert back.modes == pytest.approx(modes, rel=tol)
        assert back.mean_per_mode == pytest.approx(per_mode, rel=tol)

    def test_roundtrip_tight_above_conditioning_floor(self):
        for modes in (1e-3, 0.7, 13.0, 1e4):
            for per_mode in (1e-3, 0.058, 1.0, 33.2, 1e3):
                mean, var = tc.component_moments(tc.FieldComponentParams(modes, per_mode))
                back = tc.component_from_moments(mean, var)
                assert back.modes == pytest.approx(modes, rel=1e-12)
                assert back.mean_per_mode == pytest.approx(per_mode, rel=1e-12)


class TestJpnd:
    def test_pure_pair_is_diagonal(self):
        model = tc.TwinBeamModel(
            pair=tc.FieldComponentParams(5.0, 0.4),
            noise_s=tc.FieldComponentParams.vacuum(),
            noise_i=tc.FieldComponentParams.vacuum(),
        )
        dist = tc.jpnd(model, 1e-6)
        probs = dist.probabilities
        off_diag = probs - np.diag(np.diag(probs))
        assert np.all(off_diag == 0.0)
        diag = np.diag(probs)
        want = pmf_vector(model.pair, len(diag) - 1)
        assert diag == pytest.approx(want, rel=1e-12)

    def test_vacuum_pair_factorizes(self):
        noise_s = tc.FieldComponentParams(2.0, 0.7)
        noise_i = tc.FieldComponentParams(1.5, 0.3)
        model = tc.TwinBeamModel(tc.FieldComponentParams.vacuum(), noise_s, noise_i)
        dist = tc.jpnd(model, 1e-6)
        outer = np.outer(pmf_vector(noise_s, dist.cutoff_s),
                         pmf_vector(noise_i, dist.cutoff_i))
        assert dist.probabilities == pytest.approx(outer, rel=1e-12, abs=1e-300)

    def test_reference_model_marginals(self, ref_model):
        dist = tc.jpnd(ref_model, 1e-6)
        ns = np.arange(dist.cutoff_s + 1)
        ni = np.arange(dist.cutoff_i + 1)
        mean_s = float(ns @ dist.marginal_s())
        mean_i = float(ni @ dist.marginal_i())
        # marginal means are pair + per-arm noise means
        assert mean_s == pytest.approx(9.86 + 0.0232, abs=2e-2)
        assert mean_i == pytest.approx(9.86 + 0.1071, abs=2e-2)
        # mass concentrates near the diagonal: covariance equals pair variance
        cov = float(ns @ dist.probabilities @ ni) - mean_s * mean_i
        assert cov == pytest.approx(ref_model.pair.variance, abs=2e-2)

    def test_mass_bookkeeping(self, ref_model):
        dist = tc.jpnd(ref_model, 1e-5)
        total = float(dist.probabilities.sum())
        assert total + dist.truncated_mass == pytest.approx(1.0, abs=1e-9)
        assert abs(dist.truncated_mass) < 1e-5

    def test_marginal_variances_match_component_sums(self):
        model = tc.TwinBeamModel(
            pair=tc.FieldComponentParams(8.0, 0.3),
            noise_s=tc.FieldComponentParams(2.0, 0.5),
            noise_i=tc.FieldComponentParams(1.0, 0.25),
        )
        dist = tc.jpnd(model, 1e-7)
        ns = np.arange(dist.cutoff_s + 1)
        marg = dist.marginal_s()
        mean = float(ns @ marg)
        var = float((ns**2) @ marg) - mean**2
        assert mean == pytest.approx(model.pair.mean + model.noise_s.mean, abs=1e-4)
        assert var == pytest.approx(model.pair.variance + model.noise_s.variance, abs=1e-3)

    def test_cutoff_overflow(self):
        model = tc.TwinBeamModel(
            pair=tc.FieldComponentParams(100.0, 10.0),   # mean 1000 >> grid
            noise_s=tc.FieldComponentParams.vacuum(),
            noise_i=tc.FieldComponentParams.vacuum(),
        )
        with pytest.raises(tc.CutoffOverflow):
            tc.jpnd(model, 1e-5, max_grid=128)

    def test_component_caps_bound_grid(self):
        model = tc.TwinBeamModel(
            pair=tc.FieldComponentParams(20.0, 0.2),
            noise_s=tc.FieldComponentParams(1e-5, 500.0),  # bursty slow tail
            noise_i=tc.FieldComponentParams.vacuum(),
        )
        with pytest.raises(tc.CutoffOverflow):
            tc.jpnd(model, 1e-6, max_grid=256)
        dist = tc.jpnd(model, 1e-6, max_grid=256, component_caps=(256, 120, 120))
        assert dist.cutoff_s <= 120 + 40
        # capped mass is accounted, not lost
        assert dist.probabilities.sum() + dist.truncated_mass == pytest.approx(1.0, abs=1e-12)

    def test_tail_tolerance_validated(self, ref_model):
        with pytest.raises(ValueError):
            tc.jpnd(ref_model, 0.5)


def test_log_pmf_matches_pmf():
    p = tc.FieldComponentParams(0.0007, 33.2)
    logs = log_pmf_vector(p, 50)
    assert np.exp(logs) == pytest.approx(pmf_vector(p, 50), rel=1e-14)
