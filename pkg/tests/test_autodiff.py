"""Tape gradients vs central finite differences, op by op."""

from __future__ import annotations

import numpy as np
import pytest

from roadfield import autodiff as ad
from roadfield.autodiff import Tensor


def finite_difference_check(make_loss, params, rng, n_probe=10, h=1e-6, rtol=1e-5):
    """Compare analytic grads of scalar make_loss(*params) with central differences."""
    loss = make_loss(*params)
    loss.backward()
    for p in params:
        assert p.grad is not None, "parameter missing gradient"
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_probe, flat.size), replace=False)
        for i in picks:
            keep = flat[i]
            flat[i] = keep + h
            up = ad.value(make_loss(*params)).item()
            flat[i] = keep - h
            dn = ad.value(make_loss(*params)).item()
            flat[i] = keep
            numeric = (up - dn) / (2 * h)
            assert gflat[i] == pytest.approx(numeric, rel=rtol, abs=1e-7)


def fresh(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestBasics:
    def test_square_at_three(self):
        theta = Tensor(3.0, requires_grad=True)
        loss = theta * theta
        loss.backward()
        assert loss.data == pytest.approx(9.0)
        assert theta.grad == pytest.approx(6.0)

    def test_constant_path_has_zero_gradient(self):
        theta = Tensor(np.ones(4), requires_grad=True)
        unused = Tensor(np.full(4, 2.0), requires_grad=True)
        loss = (theta * theta).sum()
        loss.backward()
        assert unused.grad is None  # never touched by the graph
        assert np.allclose(theta.grad, 2.0)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            x.backward()

    def test_reuse_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        loss = x * x + x * 3.0
        loss.backward()
        assert x.grad == pytest.approx(7.0)


class TestOpGradients:
    def test_add_broadcast(self):
        rng = np.random.default_rng(0)
        a, b = fresh(rng, 4, 3), fresh(rng, 3)
        finite_difference_check(lambda a, b: ((a + b) * (a + b)).sum(), [a, b], rng)

    def test_mul_broadcast_and_constant(self):
        rng = np.random.default_rng(1)
        a, b = fresh(rng, 5, 1), fresh(rng, 5, 4)
        c = rng.standard_normal((5, 4))
        finite_difference_check(lambda a, b: ((a * b) * c).sum(), [a, b], rng)

    def test_sub_neg_div(self):
        rng = np.random.default_rng(2)
        a, b = fresh(rng, 6), fresh(rng, 6)
        b.data += 3.0  # keep divisor away from zero
        finite_difference_check(lambda a, b: ((a - b) / b).sum(), [a, b], rng)

    def test_matmul(self):
        rng = np.random.default_rng(3)
        a, w = fresh(rng, 7, 4), fresh(rng, 4, 5)
        finite_difference_check(lambda a, w: ((a @ w) * (a @ w)).sum(), [a, w], rng)

    def test_getitem_and_reshape(self):
        rng = np.random.default_rng(4)
        a = fresh(rng, 6, 4)
        finite_difference_check(
            lambda a: (a[:, 1:] * 2.0).reshape(-1).sum() + (a[:, 0] * a[:, 0]).sum(),
            [a], rng,
        )

    def test_sum_axis_keepdims(self):
        rng = np.random.default_rng(5)
        a = fresh(rng, 3, 5)
        finite_difference_check(
            lambda a: (a.sum(axis=1, keepdims=True) * a).sum(), [a], rng
        )

    def test_cumsum(self):
        rng = np.random.default_rng(6)
        a = fresh(rng, 4, 6)
        c = rng.standard_normal((4, 6))
        finite_difference_check(lambda a: (a.cumsum(-1) * c).sum(), [a], rng)

    def test_exp_sin_cos(self):
        rng = np.random.default_rng(7)
        a = fresh(rng, 8)
        finite_difference_check(
            lambda a: (a.exp() + a.sin() * a.cos()).sum(), [a], rng
        )

    def test_softplus_sigmoid(self):
        rng = np.random.default_rng(8)
        a = fresh(rng, 10)
        finite_difference_check(
            lambda a: (a.softplus() * a.sigmoid()).sum(), [a], rng
        )

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(9)
        a = Tensor(rng.uniform(0.5, 2.0, 8) * rng.choice([-1, 1], 8), requires_grad=True)
        finite_difference_check(lambda a: (a.relu() * 3.0).sum(), [a], rng)

    def test_concat(self):
        rng = np.random.default_rng(10)
        a, b = fresh(rng, 3, 2), fresh(rng, 3, 4)

        def loss(a, b):
            cat = ad.concat([a, b], axis=-1)
            return (cat * cat).sum()

        finite_difference_check(loss, [a, b], rng)

    def test_take_rows(self):
        rng = np.random.default_rng(11)
        table = fresh(rng, 9, 3)
        idx = rng.integers(0, 9, size=14)
        w = rng.standard_normal((14, 3))
        finite_difference_check(
            lambda t: (ad.take_rows(t, idx) * w).sum(), [table], rng
        )

    def test_indexed_weighted_sum(self):
        rng = np.random.default_rng(12)
        table = fresh(rng, 27, 2)
        idx = rng.integers(0, 27, size=(20, 8))
        w = rng.random((20, 8))
        g = rng.standard_normal((20, 2))
        finite_difference_check(
            lambda t: (ad.indexed_weighted_sum(t, idx, w) * g).sum(), [table], rng
        )

    def test_indexed_weighted_sum_forward(self):
        rng = np.random.default_rng(13)
        table = fresh(rng, 10, 4)
        idx = rng.integers(0, 10, size=(6, 3))
        w = rng.random((6, 3))
        out = ad.indexed_weighted_sum(table, idx, w)
        expect = np.zeros((6, 4))
        for n in range(6):
            for c in range(3):
                expect[n] += w[n, c] * table.data[idx[n, c]]
        assert np.allclose(out.data, expect, atol=1e-12)


class TestDualMode:
    def test_helpers_match_numpy(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((3, 4))
        t = Tensor(x)
        for fn, ref in [
            (ad.exp, np.exp), (ad.sin, np.sin), (ad.cos, np.cos),
            (ad.sigmoid, None), (ad.softplus, None),
        ]:
            a = fn(x)
            b = ad.value(fn(t))
            assert np.allclose(a, b, atol=1e-12)
            if ref is not None:
                assert np.allclose(a, ref(x), atol=1e-12)
        assert np.allclose(ad.cumsum(x, -1), ad.value(ad.cumsum(t, -1)))
        assert np.allclose(ad.sum_(x, axis=0), ad.value(ad.sum_(t, axis=0)))

    def test_softplus_large_input_stable(self):
        big = Tensor(np.array([500.0, -500.0]), requires_grad=True)
        y = big.softplus()
        assert np.isfinite(y.data).all()
        assert y.data[0] == pytest.approx(500.0)
        y.sum().backward()
        assert np.isfinite(big.grad).all()
