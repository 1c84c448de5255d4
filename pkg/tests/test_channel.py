import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rissc import ctensor as ct
from rissc.channel import ChannelSpec, avg_power, awgn, noise_variance
from rissc.ctensor import CTensor, Tape


def unit_field(n, seed=0):
    rng = np.random.default_rng(seed)
    return CTensor(np.exp(1j * rng.uniform(0, 2 * np.pi, n)))


class TestPower:
    @pytest.mark.parametrize("values, expected", [(np.ones(5), 1.0), (np.zeros(3), 0.0), ([1, 1j, 1 + 1j, 0], 1.0)])
    def test_examples(self, values, expected):
        assert avg_power(CTensor(values)) == expected

    def test_empty(self):
        with pytest.raises(ValueError):
            avg_power(CTensor(np.zeros(0)))

    def test_noise_variance(self):
        assert noise_variance(CTensor(np.full(4, 2.0)), 10.0) == pytest.approx(0.4)


class TestAwgn:
    def test_vanishing_noise(self):
        x = unit_field(100)
        out = awgn(x, 300.0, np.random.default_rng(0))
        assert np.abs(out.data - x.data).max() < 1e-12

    def test_unit_power_zero_db(self):
        x = CTensor(np.ones(10**6))
        n = awgn(x, 0.0, np.random.default_rng(1)).data - x.data
        assert 0.99 <= np.mean(np.abs(n) ** 2) <= 1.01

    def test_same_seed_same_noise(self):
        x = unit_field(50)
        a = awgn(x, 5.0, np.random.default_rng(7)).data
        b = awgn(x, 5.0, np.random.default_rng(7)).data
        np.testing.assert_array_equal(a, b)

    def test_zero_power_field(self):
        with pytest.raises(ValueError):
            awgn(CTensor(np.zeros(4)), 10.0, np.random.default_rng(0))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ChannelSpec(kind="rayleigh")
        with pytest.raises(ValueError):
            ChannelSpec(snr_db=float("inf"))

    @settings(max_examples=10, deadline=None)
    @given(st.floats(-5.0, 30.0), st.integers(0, 2**32 - 1))
    def test_empirical_snr_within_three_sigma(self, snr_db, seed):
        n_el = 10**5
        x = unit_field(n_el, seed)
        n = awgn(x, snr_db, np.random.default_rng(seed)).data - x.data
        target = 10 ** (-snr_db / 10)
        # |n|^2 is exponential with mean target: estimator std = target / sqrt(N)
        assert abs(np.mean(np.abs(n) ** 2) - target) < 3 * target / np.sqrt(n_el)

    @pytest.mark.parametrize("snr_db", [0.0, 10.0, 20.0])
    def test_component_means_and_variance_ratio(self, snr_db):
        n_el = 10**6
        x = unit_field(n_el, 3)
        n = awgn(x, snr_db, np.random.default_rng(int(snr_db))).data - x.data
        sigma = np.sqrt(10 ** (-snr_db / 10) / 2)
        assert abs(n.real.mean()) < 4 * sigma / np.sqrt(n_el)
        assert abs(n.imag.mean()) < 4 * sigma / np.sqrt(n_el)
        assert np.var(n.real) / np.var(n.imag) == pytest.approx(1.0, abs=0.02)
        assert np.var(n.real) == pytest.approx(sigma**2, rel=0.02)

    def test_snr_referenced_to_batch_power(self):
        x = CTensor(3.0 * np.ones(10**5))
        n = awgn(x, 10.0, np.random.default_rng(0)).data - x.data
        assert np.mean(np.abs(n) ** 2) == pytest.approx(0.9, rel=0.02)

    def test_gradient_is_identity_passthrough(self):
        rng = np.random.default_rng(4)
        x0 = unit_field(6, 4).data * rng.uniform(0.5, 2, 6)
        w = rng.normal(size=6) + 1j * rng.normal(size=6)

        def with_channel(x):
            return ct.total(ct.abs2(ct.mul(awgn(x, 5.0, np.random.default_rng(9)), CTensor(w))))

        x = CTensor(x0, requires_grad=True)
        with Tape() as tape:
            loss = with_channel(x)
        ct.backward(loss, tape)
        noise = awgn(CTensor(x0), 5.0, np.random.default_rng(9)).data - x0

        def with_constant(v):
            return ct.total(ct.abs2(ct.mul(ct.add(v, CTensor(noise)), CTensor(w))))

        rep = ct.grad_check(with_constant, CTensor(x0), tol=1e-6)
        assert rep.passed
        np.testing.assert_allclose(x.grad, rep.autodiff, atol=1e-12)
