import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import twincal as tc


def raw_from_per_shot(cs, ci):
    """Independent oracle: per-shot accumulation over an explicit shot list."""
    cs = np.asarray(cs, dtype=float)
    ci = np.asarray(ci, dtype=float)
    n = len(cs)
    return dict(
        mean_s=cs.sum() / n, mean_i=ci.sum() / n,
        second_s=(cs**2).sum() / n, second_i=(ci**2).sum() / n,
        cross=(cs * ci).sum() / n,
    )


class TestPhotocountMoments:
    def test_two_point(self):
        hist = tc.PhotocountHistogram({(0, 0): 50, (2, 2): 50}, 100)
        m = tc.photocount_moments(hist)
        assert m.mean_s == 1.0 and m.mean_i == 1.0
        assert m.second_s == 2.0 and m.cross == 2.0

    def test_single_arm(self):
        m = tc.photocount_moments(tc.PhotocountHistogram({(1, 0): 100}, 100))
        assert m.mean_s == 1.0 and m.mean_i == 0.0 and m.cross == 0.0

    def test_against_per_shot_oracle(self, small_experiment):
        _, hist, _, _ = small_experiment
        cs, ci = [], []
        for (a, b), count in hist.entries.items():
            cs.extend([a] * count)
            ci.extend([b] * count)
        oracle = raw_from_per_shot(cs, ci)
        m = tc.photocount_moments(hist)
        for key, value in oracle.items():
            assert getattr(m, key) == pytest.approx(value, rel=1e-12)

    def test_stderr_scale(self):
        # Bernoulli arm: sd of the mean estimator is sqrt(p(1-p)/n)
        hist = tc.PhotocountHistogram({(1, 0): 300, (0, 0): 700}, 1000)
        m = tc.photocount_moments(hist)
        assert m.stderr_mean_s == pytest.approx(math.sqrt(0.3 * 0.7 / 1000), rel=1e-12)


class TestSubtractDark:
    def test_zero_dark_is_identity(self, small_experiment):
        _, hist, _, _ = small_experiment
        raw = tc.photocount_moments(hist)
        dark = tc.photocount_moments(tc.DarkCountRecord({(0, 0): 1000}, 1000))
        m = tc.subtract_dark(raw, dark)
        assert m.mean_s == raw.mean_s
        assert m.mean_i == raw.mean_i
        assert m.second_s == raw.second_s
        assert m.second_i == raw.second_i
        assert m.cross == raw.cross

    def test_deterministic_dark_by_hand(self):
        # raw mean 3, raw second 11; dark exactly one count per shot per arm
        raw = tc.RawMoments(3, 3, 11, 11, 9.5, 0, 0, 0, 0, 0, 100)
        dark = tc.RawMoments(1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 100)
        m = tc.subtract_dark(raw, dark)
        assert m.mean_s == 2.0
        assert m.second_s == 11 - 2 * 2 * 1 - 1  # = 6
        assert m.cross == 9.5 - 2 * 1 - 2 * 1 - 1  # = 4.5

    def test_dark_exceeding_signal(self):
        raw = tc.RawMoments(0.05, 0.05, 0.05, 0.05, 0.0025, 0, 0, 0, 0, 0, 100)
        dark = tc.RawMoments(0.1, 0.0, 0.1, 0.0, 0.0, 0, 0, 0, 0, 0, 100)
        with pytest.raises(tc.NegativeMeanAfterSubtraction):
            tc.subtract_dark(raw, dark)

    def test_stderr_quadrature(self):
        raw = tc.RawMoments(3, 3, 11, 11, 9.5, 0.03, 0.04, 0.1, 0.1, 0.1, 100)
        dark = tc.RawMoments(1, 1, 1, 1, 1, 0.04, 0.03, 0.05, 0.05, 0.05, 100)
        m = tc.subtract_dark(raw, dark)
        assert m.stderr_mean_s == pytest.approx(math.hypot(0.03, 0.04))
        assert m.stderr_mean_i == pytest.approx(math.hypot(0.04, 0.03))


@st.composite
def joint_count_lists(draw):
    size = draw(st.integers(min_value=2, max_value=12))
    pairs = st.tuples(st.integers(0, 4), st.integers(0, 4))
    return draw(st.lists(pairs, min_size=size, max_size=size))


class TestConvolutionLaw:
    @given(m_list=joint_count_lists(), d_list=joint_count_lists())
    @settings(max_examples=60, deadline=None)
    def test_dark_elimination_inverts_addition(self, m_list, d_list):
        """For shot lists where counts = light + dark with exact in-sample
        independence (full cross product), the dark elimination recovers
        the light moments to round-off."""
        entries_c: dict = {}
        for (ms, mi) in m_list:
            for (ds, di) in d_list:
                cell = (ms + ds, mi + di)
                entries_c[cell] = entries_c.get(cell, 0) + 1
        raw = tc.photocount_moments(
            tc.PhotocountHistogram(entries_c, len(m_list) * len(d_list)))

        entries_d: dict = {}
        for cell in d_list:
            entries_d[cell] = entries_d.get(cell, 0) + 1
        dark = tc.photocount_moments(tc.DarkCountRecord(entries_d, len(d_list)))

        entries_m: dict = {}
        for cell in m_list:
            entries_m[cell] = entries_m.get(cell, 0) + 1
        want = tc.photocount_moments(tc.PhotocountHistogram(entries_m, len(m_list)))

        got = tc.subtract_dark(raw, dark)
        for key in ("mean_s", "mean_i", "second_s", "second_i", "cross"):
            assert getattr(got, key) == pytest.approx(getattr(want, key),
                                                      rel=1e-9, abs=1e-9)


class TestKlyshko:
    def test_reference_values(self, ref_moments):
        k = tc.klyshko_estimate(ref_moments)
        assert k.eta_s_cov == pytest.approx(0.254, abs=1e-3)
        assert k.eta_i_cov == pytest.approx(0.248, abs=1e-3)

    def test_lossless_poissonian_pairing(self):
        # perfectly paired Poissonian beams at unit efficiency: cov == mean
        lam = 2.0
        m = tc.PhotoelectronMoments.from_variances(lam, lam, lam, lam, lam)
        k = tc.klyshko_estimate(m)
        assert k.eta_s_cov == pytest.approx(1.0)
        assert k.eta_i_cov == pytest.approx(1.0)

    def test_zero_mean_arm(self):
        m = tc.PhotoelectronMoments.from_variances(0.0, 1.0, 0.0, 1.0, 0.0)
        with pytest.raises(tc.ZeroMeanArm):
            tc.klyshko_estimate(m)

    @given(mean_s=st.floats(0.01, 5), mean_i=st.floats(0.01, 5),
           cov=st.floats(0.001, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_raw_cov_gap_is_product_of_means(self, mean_s, mean_i, cov):
        """raw - cov variant differs by exactly the opposite arm's mean,
        so the variants coincide precisely when the means vanish."""
        m = tc.PhotoelectronMoments.from_variances(
            mean_s, mean_i, mean_s + 1, mean_i + 1, cov)
        k = tc.klyshko_estimate(m)
        assert k.eta_i_raw - k.eta_i_cov == pytest.approx(mean_i, rel=1e-9)
        assert k.eta_s_raw - k.eta_s_cov == pytest.approx(mean_s, rel=1e-9)

    def test_noise_corrected_diagnostic(self, ref_moments):
        eta_s, eta_i = tc.noise_corrected_klyshko(ref_moments, 0.01, 0.02)
        k = tc.klyshko_estimate(ref_moments)
        assert eta_s == pytest.approx(k.eta_s_raw - 0.01)
        assert eta_i == pytest.approx(k.eta_i_raw - 0.02)
