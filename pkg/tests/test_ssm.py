"""Selective scan: discretization analytics, oracle equivalence, gradients."""

import mpmath
import numpy as np
import pytest

from modem.ssm import (SERIES_THRESHOLD, DiscreteSSM, SSMParams,
                       decompose_output, scan_backward, selective_scan,
                       selective_scan_op, zoh_discretize, _zoh_factors)
from modem.tensor import Tensor

from test_tensor import fd_grad


def unrolled_oracle(x, Abar, Bbar, C, D):
    """y_k = sum_{m<=k} C_k . (prod_{m<r<=k} Abar_r) Bbar_m x_m + D x_k."""
    d, L = x.shape
    N = Abar.shape[2]
    y = np.zeros((d, L))
    for di in range(d):
        for k in range(L):
            acc = np.zeros(N)
            for m in range(k + 1):
                term = Bbar[di, m] * x[di, m]
                for r in range(m + 1, k + 1):
                    term = term * Abar[di, r]
                acc += term
            y[di, k] = acc @ C[k] + D[di] * x[di, k]
    return y


def random_instance(rng, d=None, N=None, L=None):
    d = d or int(rng.integers(1, 5))
    N = N or int(rng.integers(1, 9))
    L = L or int(rng.integers(1, 33))
    A = -np.exp(rng.normal(size=(d, N)))
    delta = np.exp(rng.normal(scale=0.5, size=(d, L)) - 2.0)
    B = rng.normal(size=(L, N))
    C = rng.normal(size=(L, N))
    D = rng.normal(size=d)
    x = rng.normal(size=(d, L))
    return x, delta, A, B, C, D


class TestZOH:
    def test_analytic_point(self):
        # A=-1, delta=ln 2: Abar = exp(-ln 2) = 1/2, Bbar = (1 - 1/2)/1 = 1/2
        disc = zoh_discretize(np.array([[-1.0]]), np.array([[np.log(2.0)]]),
                              np.array([[1.0]]))
        assert abs(disc.Abar[0, 0, 0] - 0.5) < 1e-14
        assert abs(disc.Bbar[0, 0, 0] - 0.5) < 1e-14

    def test_series_branch_vs_high_precision(self):
        # |delta*A| below the switch: compare against 128-bit arithmetic
        mpmath.mp.prec = 128
        A = np.array([[-1.0, -2.0]])
        for dval in (1e-9, 1e-10, 1e-12, 1e-15):
            delta = np.array([[dval]])
            Abar, phi = _zoh_factors(A, delta)
            for n in range(2):
                u = mpmath.mpf(dval) * mpmath.mpf(A[0, n])
                exact = (mpmath.exp(u) - 1) / mpmath.mpf(A[0, n])
                rel = abs(phi[0, 0, n] - float(exact)) / float(exact)
                assert rel < 1e-12

    def test_delta_to_zero_limit(self):
        Abar, phi = _zoh_factors(np.array([[-3.0]]), np.array([[0.0]]))
        assert Abar[0, 0, 0] == 1.0
        assert phi[0, 0, 0] == 0.0

    def test_abar_power_scaling(self):
        # Abar(c*delta) = Abar(delta)^c for diagonal ZOH
        A = np.array([[-0.7]])
        d1 = np.array([[0.3]])
        a1, _ = _zoh_factors(A, d1)
        a3, _ = _zoh_factors(A, 3 * d1)
        assert abs(a3[0, 0, 0] - a1[0, 0, 0] ** 3) < 1e-14

    def test_abar_in_unit_interval(self, rng):
        x, delta, A, B, C, D = random_instance(rng)
        disc = zoh_discretize(A, delta, B)
        assert np.all(disc.Abar > 0) and np.all(disc.Abar < 1)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            SSMParams(A=np.array([[0.5]]), D=np.zeros(1),
                      delta=np.array([[0.1]]), B=np.ones((1, 1)),
                      C=np.ones((1, 1)))
        with pytest.raises(ValueError):
            SSMParams(A=np.array([[-0.5]]), D=np.zeros(1),
                      delta=np.array([[-0.1]]), B=np.ones((1, 1)),
                      C=np.ones((1, 1)))


class TestScan:
    def test_matches_unrolled_oracle(self, rng):
        for _ in range(50):
            x, delta, A, B, C, D = random_instance(rng)
            disc = zoh_discretize(A, delta, B)
            y, _ = selective_scan(x, disc, C, D)
            expect = unrolled_oracle(x, disc.Abar, disc.Bbar, C, D)
            assert np.max(np.abs(y - expect)) < 1e-10

    def test_decomposition_identity_bit_exact(self, rng):
        for _ in range(20):
            x, delta, A, B, C, D = random_instance(rng)
            disc = zoh_discretize(A, delta, B)
            y, _ = selective_scan(x, disc, C, D)
            longrange, local = decompose_output(x, disc, C, D)
            np.testing.assert_array_equal(longrange + local + D[:, None] * x, y)

    def test_first_step_longrange_zero(self, rng):
        x, delta, A, B, C, D = random_instance(rng)
        disc = zoh_discretize(A, delta, B)
        longrange, _ = decompose_output(x, disc, C, D)
        np.testing.assert_array_equal(longrange[:, 0], 0.0)

    def test_long_sequence_stability(self, rng):
        # Abar in (0, 1) keeps the state bounded over 10^4 steps
        d, N, L = 2, 4, 10_000
        A = -np.exp(rng.normal(size=(d, N)))
        delta = np.full((d, L), 0.05)
        B = rng.normal(size=(L, N))
        C = rng.normal(size=(L, N))
        D = np.zeros(d)
        x = rng.normal(size=(d, L))
        y, states = selective_scan(x, zoh_discretize(A, delta, B), C, D)
        assert np.all(np.isfinite(y))
        assert np.max(np.abs(states)) < 1e4

    def test_shape_errors(self, rng):
        x, delta, A, B, C, D = random_instance(rng, d=2, N=3, L=4)
        disc = zoh_discretize(A, delta, B)
        with pytest.raises(ValueError):
            selective_scan(x[:, :3], disc, C, D)
        with pytest.raises(ValueError):
            selective_scan(x, disc, C[:3], D)


class TestScanGradients:
    def test_full_fd_check(self, rng):
        worst = 0.0
        for _ in range(5):
            xd, dd, Ad, Bd, Cd, Dd = random_instance(rng, d=2, N=3, L=6)
            tensors = {
                "x": Tensor(xd.copy(), requires_grad=True),
                "delta": Tensor(dd.copy(), requires_grad=True),
                "A": Tensor(Ad.copy(), requires_grad=True),
                "B": Tensor(Bd.copy(), requires_grad=True),
                "C": Tensor(Cd.copy(), requires_grad=True),
                "D": Tensor(Dd.copy(), requires_grad=True),
            }
            w = rng.normal(size=xd.shape)

            def loss_t():
                out = selective_scan_op(*tensors.values())
                return (out * Tensor(w)).sum()

            loss_t().backward()

            def loss_np(vals):
                disc = zoh_discretize(vals["A"], vals["delta"], vals["B"])
                y, _ = selective_scan(vals["x"], disc, vals["C"], vals["D"])
                return float((y * w).sum())

            for name, t in tensors.items():
                vals = {k: v.data for k, v in tensors.items()}
                fd = fd_grad(
                    lambda a: loss_np({**vals, name: a}), t.data.copy())
                err = np.max(np.abs(t.grad - fd) /
                             np.maximum(np.abs(fd), 1.0))
                worst = max(worst, err)
        assert worst < 1e-6

    def test_series_branch_gradient(self):
        # delta so small that every ZOH factor uses the series path
        d, N, L = 1, 2, 3
        rng = np.random.default_rng(7)
        A = np.array([[-1.0, -2.0]])
        delta = np.full((d, L), 1e-10)
        B = rng.normal(size=(L, N))
        C = rng.normal(size=(L, N))
        D = rng.normal(size=d)
        x = rng.normal(size=(d, L))
        assert np.all(np.abs(delta[:, :, None] * A[:, None, :])
                      < SERIES_THRESHOLD)
        t = {k: Tensor(v.copy(), requires_grad=True)
             for k, v in dict(x=x, delta=delta, A=A, B=B, C=C, D=D).items()}
        selective_scan_op(*t.values()).sum().backward()
        for v in t.values():
            assert np.all(np.isfinite(v.grad))
        # dA via central FD with a large step relative to delta*A curvature
        def f(a):
            disc = zoh_discretize(a, delta, B)
            y, _ = selective_scan(x, disc, C, D)
            return float(y.sum())
        fd = fd_grad(f, A.copy(), eps=1e-5)
        np.testing.assert_allclose(t["A"].grad, fd, rtol=1e-4, atol=1e-10)
