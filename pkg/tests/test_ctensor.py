import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rissc import ctensor as ct
from rissc.ctensor import CTensor, Tape


def crandn(rng, *shape, scale=1.0):
    return scale * (rng.normal(size=shape) + 1j * rng.normal(size=shape))


def grad_of(f, x0):
    x = CTensor(x0, requires_grad=True)
    with Tape() as tape:
        loss = f(x)
    ct.backward(loss, tape)
    return x.grad


class TestCreate:
    def test_values(self):
        t = ct.create([2], [1 + 0j, 1j])
        np.testing.assert_array_equal(t.data, [1, 1j])
        assert not t.requires_grad

    def test_empty(self):
        t = ct.create([0], [])
        assert t.shape == (0,)
        assert t.size == 0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ct.create([2], [1, 2, 3])

    def test_re_im_views(self):
        t = ct.create([2, 2], [1 + 2j, 3, -1j, 0])
        assert t.re.size == t.im.size == 4
        np.testing.assert_array_equal(t.im, [[2, 0], [-1, 0]])

    def test_value_is_frozen(self):
        t = ct.create([2], [1, 2])
        with pytest.raises(ValueError):
            t.data[0] = 5


class TestElementwise:
    def test_mul_hand(self):
        out = ct.ew_binary(ct.create([1], [1 + 1j]), ct.create([1], [1 - 1j]), "mul")
        assert out.data[0] == 2 + 0j

    def test_identities(self):
        rng = np.random.default_rng(0)
        x = CTensor(crandn(rng, 5))
        np.testing.assert_array_equal(ct.mul(x, CTensor(np.ones(5))).data, x.data)
        np.testing.assert_array_equal(ct.add(x, CTensor(np.zeros(5))).data, x.data)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ct.add(CTensor(np.ones(2)), CTensor(np.ones(3)))
        with pytest.raises(ValueError):
            ct.ew_binary(CTensor(np.ones(2)), CTensor(np.ones(2)), "div")

    def test_row_parameters_broadcast_over_batch(self):
        rng = np.random.default_rng(1)
        x, t = crandn(rng, 4, 3), crandn(rng, 3)
        np.testing.assert_allclose(ct.mul(CTensor(x), CTensor(t)).data, x * t[None, :])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_field_laws(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (CTensor(crandn(rng, 6, scale=10)) for _ in range(3))
        np.testing.assert_allclose(ct.mul(a, b).data, ct.mul(b, a).data, atol=1e-12)
        np.testing.assert_allclose(ct.add(a, b).data, ct.add(b, a).data, atol=1e-12)
        np.testing.assert_allclose(
            ct.add(ct.add(a, b), c).data, ct.add(a, ct.add(b, c)).data, atol=1e-12
        )
        lhs = ct.mul(ct.mul(a, b), c).data
        np.testing.assert_allclose(lhs, ct.mul(a, ct.mul(b, c)).data, rtol=1e-12, atol=1e-9)
        dist = ct.mul(a, ct.add(b, c)).data
        np.testing.assert_allclose(dist, ct.add(ct.mul(a, b), ct.mul(a, c)).data, atol=1e-10)


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(2)
        b = CTensor(crandn(rng, 2, 3))
        np.testing.assert_array_equal(ct.matmul(CTensor(np.eye(2)), b).data, b.data)

    def test_hand(self):
        a = ct.create([2, 2], [1 + 1j, 0, 0, 1])
        b = ct.create([2, 1], [1, 1j])
        np.testing.assert_array_equal(ct.matmul(a, b).data, [[1 + 1j], [1j]])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ct.matmul(CTensor(np.ones((2, 3))), CTensor(np.ones((2, 3))))

    def test_against_triple_loop(self):
        rng = np.random.default_rng(3)
        a, b = crandn(rng, 8, 8), crandn(rng, 8, 8)
        ref = np.zeros((8, 8), dtype=complex)
        for i in range(8):
            for j in range(8):
                for k in range(8):
                    ref[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(ct.matmul(CTensor(a), CTensor(b)).data, ref, atol=1e-12)
        c = crandn(rng, 8, 8)
        left = ct.matmul(ct.matmul(CTensor(a), CTensor(b)), CTensor(c)).data
        right = ct.matmul(CTensor(a), ct.matmul(CTensor(b), CTensor(c))).data
        np.testing.assert_allclose(left, right, atol=1e-12 * np.abs(left).max())


class TestBackward:
    def test_abs2(self):
        g = grad_of(lambda z: ct.total(ct.abs2(z)), [1 + 2j])
        np.testing.assert_allclose(g, [2 + 4j])

    def test_real_of_product(self):
        c = 3 - 1j
        g = grad_of(lambda z: ct.total(ct.real(ct.scale(z, c))), [0.3 - 0.7j])
        np.testing.assert_allclose(g, [np.conj(c)])

    def test_real_of_product_finite_differences(self):
        c, z0, h = 3 - 1j, 0.3 - 0.7j, 1e-6

        def f(z):
            return (c * z).real

        fd = (f(z0 + h) - f(z0 - h)) / (2 * h) + 1j * (f(z0 + 1j * h) - f(z0 - 1j * h)) / (2 * h)
        assert abs(fd - (3 + 1j)) < 1e-8

    def test_constant_loss(self):
        x = CTensor([1 + 1j], requires_grad=True)
        with Tape() as tape:
            loss = ct.total(ct.scale(x, 0.0))
        ct.backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [0])

    def test_rejects_nonscalar_and_complex_loss(self):
        x = CTensor([1 + 1j, 2], requires_grad=True)
        with Tape() as tape:
            y = ct.scale(x, 2.0)
            s = ct.total(y)
        with pytest.raises(ValueError):
            ct.backward(y, tape)
        with pytest.raises(ValueError):
            ct.backward(s, tape)

    def test_linearity_of_gradients(self):
        rng = np.random.default_rng(4)
        x0 = crandn(rng, 5)
        w = CTensor(crandn(rng, 3, 5))

        def l1(x):
            return ct.total(ct.abs2(ct.matmul(w, ct.reshape(x, (5, 1)))))

        def l2(x):
            return ct.total(ct.angle(x))

        g_sum = grad_of(lambda x: ct.add(l1(x), l2(x)), x0)
        np.testing.assert_allclose(g_sum, grad_of(l1, x0) + grad_of(l2, x0), atol=1e-12)

    def test_grad_accumulates_across_backwards(self):
        x = CTensor([1 + 2j], requires_grad=True)
        for _ in range(2):
            with Tape() as tape:
                loss = ct.total(ct.abs2(x))
            ct.backward(loss, tape)
        np.testing.assert_allclose(x.grad, [4 + 8j])

    def test_tape_records_in_execution_order(self):
        x = CTensor([1.0 + 1j], requires_grad=True)
        with Tape() as tape:
            a = ct.scale(x, 2.0)
            b = ct.abs2(a)
            c = ct.total(b)
        assert [r[0] for r in tape.records] == [a, b, c]

    def test_no_tape_means_no_recording(self):
        x = CTensor([1.0], requires_grad=True)
        y = ct.scale(x, 2.0)
        assert not y.requires_grad

    def test_independent_tapes_in_threads(self):
        results = {}

        def work(k):
            x = CTensor([complex(k, 1)], requires_grad=True)
            with Tape() as tape:
                loss = ct.total(ct.abs2(x))
            ct.backward(loss, tape)
            results[k] = x.grad[0]

        threads = [threading.Thread(target=work, args=(k,)) for k in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results == {k: 2 * complex(k, 1) for k in range(8)}


UNARY_OPS = {
    "abs2": lambda z: ct.total(ct.abs2(z)),
    "abs": lambda z: ct.total(ct.abs_(z)),
    "angle": lambda z: ct.total(ct.angle(z)),
    "conj_mix": lambda z: ct.total(ct.real(ct.mul(ct.conj(z), CTensor([1 + 2j, -1, 0.5j, 2])))),
    "scale": lambda z: ct.total(ct.abs2(ct.scale(z, 0.3 - 2j))),
    "mean_abs2": lambda z: ct.mean(ct.abs2(ct.add_const(z, 1 - 1j))),
    "sub": lambda z: ct.total(ct.abs2(ct.sub(z, CTensor([1, 2, 3, 4])))),
}


@pytest.mark.parametrize("name", sorted(UNARY_OPS))
@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_per_op_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(0.5, 10, 4) * np.exp(1j * rng.uniform(-3, 3, 4))
    report = ct.grad_check(UNARY_OPS[name], CTensor(z), step=1e-5, tol=1e-4)
    assert report.passed, report.max_rel_error


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_matmul_and_mul_gradients(seed):
    rng = np.random.default_rng(seed)
    w = CTensor(crandn(rng, 3, 4, scale=5))
    t = CTensor(crandn(rng, 4, scale=5))
    z = CTensor(crandn(rng, 4, scale=5))
    f = lambda x: ct.total(ct.abs2(ct.matmul(w, ct.reshape(ct.mul(x, t), (4, 1)))))  # noqa: E731
    assert ct.grad_check(f, z, tol=1e-4).passed
    g = lambda x: ct.total(ct.abs2(ct.matmul(ct.reshape(ct.mul(z, x), (1, 4)), ct.reshape(w, (4, 3)))))  # noqa: E731
    assert ct.grad_check(g, t, tol=1e-4).passed


class TestGradCheck:
    def test_sum_abs2(self):
        rng = np.random.default_rng(5)
        rep = ct.grad_check(lambda z: ct.total(ct.abs2(z)), CTensor(crandn(rng, 4)), 1e-5, 1e-4)
        assert rep.passed and rep.max_rel_error < 1e-4

    def test_constant(self):
        rep = ct.grad_check(lambda z: ct.total(ct.scale(z, 0.0)), CTensor([1, 2j]), 1e-5, 1e-4)
        assert rep.passed
        np.testing.assert_array_equal(rep.autodiff, 0)
        np.testing.assert_array_equal(rep.numeric, 0)

    def test_detects_wrong_gradient(self):
        def bad(z):
            return ct.record(np.array(np.sum(np.abs(z.data) ** 2)), (z,), lambda g: (g * z.data,))

        rep = ct.grad_check(bad, CTensor([1 + 1j, 2]), 1e-5, 1e-4)
        assert not rep.passed

    def test_bad_step(self):
        with pytest.raises(ValueError):
            ct.grad_check(lambda z: ct.total(ct.abs2(z)), CTensor([1]), step=0.0)
