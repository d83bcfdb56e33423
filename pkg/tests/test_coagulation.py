import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from coagdiff import coagulation as co
from coagdiff.kernels import Constant, KernelError, Multiplicative, ProductPower, SumPower, Table

CLOSED = [Constant(2.0), SumPower(1.0, 0.5), SumPower(2.0, 0.7), ProductPower(1.0, 0.6, 0.6),
          ProductPower(0.5, 0.1, 0.8), Multiplicative()]


def test_hand_examples_n2():
    c = np.array([1.0, 0.0])
    k = Constant(1)
    np.testing.assert_array_equal(co.gain(c, k), [0, 0.5])
    np.testing.assert_array_equal(co.loss(c, k), [1, 0])
    np.testing.assert_array_equal(co.q_truncated(c, k), [-1, 0.5])
    assert co.mass_functional(co.q_truncated(c, k)) == 0


def test_hand_examples_n3():
    c = np.array([1.0, 1.0, 0.0])
    k = Constant(1)
    np.testing.assert_array_equal(co.gain(c, k), [0, 0.5, 1.0])
    np.testing.assert_array_equal(co.loss(c, k), [2, 1, 0])
    np.testing.assert_array_equal(co.q_truncated(c, k), [-2, -0.5, 1])


def test_zero_state():
    z = np.zeros(16)
    for k in CLOSED:
        assert not np.any(co.loss(z, k))
        assert not np.any(co.gain_fast(z, k))


def test_gain_fast_constant_by_hand():
    np.testing.assert_allclose(co.gain_fast(np.ones(4), Constant(2)), [0, 1, 2, 3], atol=1e-14)


def test_weak_form_examples():
    c = np.array([1.0, 0.0])
    k = Constant(1)
    assert co.weak_form_lhs(c, k, np.ones(2)) == -0.5
    assert co.weak_form_rhs(c, k, np.ones(2)) == -0.5
    rng = np.random.default_rng(1)
    c = rng.uniform(size=40)
    phi = np.arange(1, 41, dtype=float)
    for k in CLOSED:
        assert co.weak_form_rhs(c, k, phi) == 0.0
        assert abs(co.weak_form_lhs(c, k, phi)) <= 1e-12 * co.weak_form_scale(c, k, phi)


def test_weak_form_short_phi_rejected():
    with pytest.raises(ValueError):
        co.weak_form_lhs(np.ones(4), Constant(1), np.ones(3))
    with pytest.raises(ValueError):
        co.weak_form_rhs(np.ones(2), Constant(1), np.array([1.0, np.nan]))


def test_mass_nullity_sum_power_bound():
    rng = np.random.default_rng(2)
    c = rng.uniform(size=128)
    k = SumPower(2, 0.7)
    i = np.arange(1, 129)
    q = co.q_truncated(c, k)
    assert abs(i @ q) <= 1e-10 * (i**2 @ c) * c.sum()


@pytest.mark.parametrize("kernel", CLOSED, ids=lambda k: repr(k))
@pytest.mark.parametrize("n", [1, 2, 7, 256, 512])
def test_fast_matches_reference(kernel, n):
    rng = np.random.default_rng(n)
    c = rng.uniform(size=n)
    ref = co.gain(c, kernel)
    fast = co.gain_fast(c, kernel)
    assert np.max(np.abs(fast - ref)) <= 1e-12 * max(np.max(np.abs(ref)), 1e-300)
    ref_l = co.loss(c, kernel)
    assert np.max(np.abs(co.loss_fast(c, kernel) - ref_l)) <= 1e-12 * max(np.max(ref_l), 1e-300)


def test_fast_batched_over_cells():
    rng = np.random.default_rng(3)
    c = rng.uniform(size=(50, 6))
    k = ProductPower(1, 0.3, 0.6)
    batched = co.gain_fast(c, k)
    for j in range(6):
        ref = co.gain(c[:, j], k)
        assert np.max(np.abs(batched[:, j] - ref)) <= 1e-12 * np.max(ref)
    np.testing.assert_allclose(co.loss_rate_fast(c, k), co.loss_rate(c, k), rtol=1e-12)


def test_injected_convolver_matches_direct():
    calls = []

    def direct(x, y, length):
        calls.append(length)
        return np.convolve(x, y)[:length]

    rng = np.random.default_rng(4)
    c = rng.uniform(size=33)
    k = SumPower(1, 0.4)
    np.testing.assert_allclose(co.gain_fast(c, k, convolve=direct), co.gain(c, k), rtol=1e-13)
    assert calls == [32]  # (gamma, 0) and (0, gamma) share one convolution


def test_fft_convolve_oracle():
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=20), rng.normal(size=13)
    np.testing.assert_allclose(co.fft_convolve(x, y, 32), np.convolve(x, y), atol=1e-13)


def test_table_not_separable():
    t = Table(np.ones((4, 4)))
    assert not co.is_separable(t)
    with pytest.raises(KernelError):
        co.gain_fast(np.ones(4), t)
    # fast flag falls back to the reference path
    np.testing.assert_array_equal(co.q_truncated(np.ones(4), t, fast=True),
                                  co.q_truncated(np.ones(4), Constant(1)))


def test_coagulation_rhs_paths():
    rng = np.random.default_rng(6)
    c = rng.uniform(size=20)
    k = SumPower(1, 0.5)
    g_fast, r_fast = co.coagulation_rhs(k, 20, fast=True)
    g_ref, r_ref = co.coagulation_rhs(k, 20, fast=False)
    np.testing.assert_allclose(g_fast(c), g_ref(c), rtol=1e-12)
    np.testing.assert_allclose(r_fast(c), r_ref(c), rtol=1e-12)


def test_truncation_locality():
    rng = np.random.default_rng(7)
    n = 64
    c = np.zeros(n)
    c[: n // 2] = rng.uniform(size=n // 2)
    padded = np.concatenate([c, np.zeros(n)])
    k = SumPower(1, 0.5)
    q1 = co.q_truncated(c, k)
    q2 = co.q_truncated(padded, k)
    np.testing.assert_array_equal(q1[: n // 2], q2[: n // 2])


def test_loss_last_entry_empty():
    rng = np.random.default_rng(8)
    c = rng.uniform(size=10)
    for k in CLOSED:
        assert co.loss(c, k)[-1] == 0.0
        assert co.gain(c, k)[0] == 0.0


@settings(max_examples=50, deadline=None)
@given(c=arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 10)),
       gamma=st.floats(0, 1))
def test_positivity_and_mass_property(c, gamma):
    k = SumPower(1.0, gamma)
    g, lo = co.gain(c, k), co.loss(c, k)
    assert np.all(g >= 0) and np.all(lo >= 0)
    i = np.arange(1, c.size + 1)
    scale = i @ (g + lo)
    assert abs(i @ (g - lo)) <= 1e-10 * max(scale, 1e-300)
    assert np.all(co.gain_fast(c, k) >= 0)


@settings(max_examples=40, deadline=None)
@given(c=arrays(np.float64, st.integers(2, 30), elements=st.floats(0, 5)),
       seed=st.integers(0, 2**16))
def test_weak_form_property(c, seed):
    phi = np.random.default_rng(seed).normal(size=c.size)
    k = ProductPower(1.0, 0.3, 0.9)
    lhs = co.weak_form_lhs(c, k, phi)
    rhs = co.weak_form_rhs(c, k, phi)
    assert abs(lhs - rhs) <= 1e-10 * max(co.weak_form_scale(c, k, phi), 1e-300)
