"""Closed forms vs quadrature, derivative consistency and map properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ntkphase import Activation, ActivationKernel, CovarianceDomainError, diag_second_moment

# frozen from the 200-node tensor Gauss-Hermite oracle (matches the arcsine
# closed form to machine precision)
ERF_TMAP_AT_HALF = 0.216346895938785


class TestClosedFormValues:
    def test_relu_boundary_is_half_variance(self):
        k = ActivationKernel(Activation.RELU, 1.0)
        assert k.t_map(1.0) == pytest.approx(0.5, abs=1e-15)
        assert k.t_dot(1.0) == pytest.approx(0.5, abs=1e-15)

    def test_relu_boundary_scales_with_variance(self):
        k = ActivationKernel(Activation.RELU, 2.7)
        assert k.t_map(2.7) == pytest.approx(1.35, abs=1e-14)
        assert k.t_dot(2.7) == pytest.approx(0.5, abs=1e-15)

    def test_erf_frozen_quadrature_value(self):
        k = ActivationKernel(Activation.ERF, 1.0)
        assert k.t_map(0.5) == pytest.approx(ERF_TMAP_AT_HALF, abs=1e-8)

    def test_erf_second_derivative_odd_symmetry(self):
        k = ActivationKernel(Activation.ERF, 1.0)
        assert k.t_ddot(0.0) == 0.0

    def test_relu_fractional_expansion_near_boundary(self):
        # 2*T(1-eps) = 1 - eps + (2 sqrt(2) / 3 pi) eps^{3/2} + O(eps^{5/2})
        k = ActivationKernel(Activation.RELU, 1.0)
        for eps in (1e-4, 1e-6):
            series = 1.0 - eps + (2.0 * math.sqrt(2) / (3 * math.pi)) * eps**1.5
            assert 2.0 * k.t_map(1.0 - eps) == pytest.approx(series, abs=3.0 * eps**2.5)

    def test_relu_derivative_expansion_near_boundary(self):
        # 2*T_dot(1-eps) = 1 - (sqrt(2)/pi) eps^{1/2} + O(eps^{3/2})
        k = ActivationKernel(Activation.RELU, 1.0)
        for eps in (1e-4, 1e-6):
            series = 1.0 - (math.sqrt(2) / math.pi) * eps**0.5
            assert 2.0 * k.t_dot(1.0 - eps) == pytest.approx(series, abs=3.0 * eps**1.5)


class TestQuadratureBackend:
    @pytest.mark.parametrize("activation", [Activation.ERF, Activation.RELU])
    @pytest.mark.parametrize("qstar", [1.0, 1.3])
    def test_agrees_with_closed_form(self, activation, qstar):
        kc = ActivationKernel(activation, qstar, "closed")
        kq = ActivationKernel(activation, qstar, "quadrature", nodes=200)
        grid = np.linspace(-qstar + 1e-3, qstar - 1e-3, 40)
        for q in grid:
            assert kq.t_map(q) == pytest.approx(kc.t_map(q), abs=1e-6)
            assert kq.t_dot(q) == pytest.approx(kc.t_dot(q), abs=1e-6)

    def test_tanh_node_convergence(self):
        k64 = ActivationKernel(Activation.TANH, 1.0, "quadrature", nodes=64)
        k128 = ActivationKernel(Activation.TANH, 1.0, "quadrature", nodes=128)
        for q in np.linspace(-0.95, 0.95, 21):
            assert abs(k64.t_map(q) - k128.t_map(q)) < 1e-9

    def test_tanh_closed_backend_falls_back_to_quadrature(self):
        ka = ActivationKernel(Activation.TANH, 1.0, "closed")
        kb = ActivationKernel(Activation.TANH, 1.0, "quadrature")
        assert ka.t_map(0.4) == kb.t_map(0.4)

    def test_array_evaluation_matches_scalars(self):
        k = ActivationKernel(Activation.ERF, 1.2)
        grid = np.linspace(-1.1, 1.1, 7)
        np.testing.assert_allclose(k.t_map(grid), [k.t_map(q) for q in grid], rtol=1e-15)


class TestDerivativeConsistency:
    @pytest.mark.parametrize(
        "activation,backend",
        [(Activation.ERF, "closed"), (Activation.RELU, "closed"), (Activation.TANH, "quadrature")],
    )
    def test_t_dot_is_derivative_of_t_map(self, activation, backend):
        k = ActivationKernel(activation, 1.0, backend)
        h = 1e-5
        for q in np.linspace(-0.9, 0.9, 50):
            fd = (k.t_map(q + h) - k.t_map(q - h)) / (2 * h)
            assert k.t_dot(q) == pytest.approx(fd, abs=1e-5)

    def test_erf_t_dot_finite_difference_spot(self):
        k = ActivationKernel(Activation.ERF, 1.0)
        h = 1e-5
        fd = (k.t_map(0.3 + h) - k.t_map(0.3 - h)) / (2 * h)
        assert k.t_dot(0.3) == pytest.approx(fd, abs=1e-6)

    def test_erf_t_ddot_vs_second_difference(self):
        k = ActivationKernel(Activation.ERF, 1.0)
        h = 1e-4
        fd = (k.t_map(0.5 + h) - 2 * k.t_map(0.5) + k.t_map(0.5 - h)) / h**2
        assert k.t_ddot(0.5) == pytest.approx(fd, abs=1e-5)

    def test_tanh_t_ddot_vs_second_difference(self):
        k = ActivationKernel(Activation.TANH, 1.0, "quadrature", nodes=128)
        h = 5e-3
        fd = (k.t_map(0.4 + h) - 2 * k.t_map(0.4) + k.t_map(0.4 - h)) / h**2
        assert k.t_ddot(0.4) == pytest.approx(fd, abs=1e-4)

    def test_relu_t_ddot_matches_arc_cosine_derivative(self):
        # d/dq (pi - theta)/(2 pi) = 1 / (2 pi sqrt(qstar^2 - q^2))
        k = ActivationKernel(Activation.RELU, 1.0)
        q = 0.3
        assert k.t_ddot(q) == pytest.approx(1 / (2 * math.pi * math.sqrt(1 - q * q)), rel=1e-6)


class TestDomainsAndErrors:
    def test_t_map_rejects_out_of_range(self):
        k = ActivationKernel(Activation.ERF, 1.0)
        with pytest.raises(CovarianceDomainError):
            k.t_map(1.0 + 1e-6)

    def test_tolerates_tiny_overshoot(self):
        k = ActivationKernel(Activation.RELU, 1.0)
        assert k.t_map(1.0 + 1e-13) == pytest.approx(0.5, abs=1e-12)

    def test_relu_t_ddot_boundary_raises(self):
        k = ActivationKernel(Activation.RELU, 1.0)
        with pytest.raises(CovarianceDomainError):
            k.t_ddot(1.0)

    def test_invalid_construction(self):
        with pytest.raises(ValueError):
            ActivationKernel(Activation.ERF, 0.0)
        with pytest.raises(ValueError):
            ActivationKernel(Activation.ERF, 1.0, backend="magic")


class TestMapProperties:
    @settings(max_examples=40, deadline=None)
    @given(
        activation=st.sampled_from([Activation.ERF, Activation.RELU, Activation.TANH]),
        frac=st.floats(min_value=0.01, max_value=1.0),
        qstar=st.floats(min_value=0.2, max_value=3.0),
    )
    def test_cauchy_schwarz_bound(self, activation, frac, qstar):
        # strictly positive on (0, qstar]; exactly 0 at q_ab = 0 for the odd
        # activations, so the open endpoint is excluded
        backend = "quadrature" if activation is Activation.TANH else "closed"
        k = ActivationKernel(activation, qstar, backend, nodes=64)
        value = k.t_map(frac * qstar)
        assert 0.0 < value <= k.t_map(qstar) + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(
        activation=st.sampled_from([Activation.ERF, Activation.RELU, Activation.TANH]),
        a=st.floats(min_value=-1.0, max_value=1.0),
        b=st.floats(min_value=-1.0, max_value=1.0),
    )
    def test_monotone_in_covariance(self, activation, a, b):
        backend = "quadrature" if activation is Activation.TANH else "closed"
        k = ActivationKernel(activation, 1.0, backend, nodes=64)
        lo, hi = min(a, b), max(a, b)
        assert k.t_map(hi) - k.t_map(lo) >= -1e-12

    def test_diag_second_moment_fixed_point(self):
        # the Erf variance map has its fixed point where q = 2 * second moment
        q = 0.8807506303959786
        assert 2.0 * float(diag_second_moment(Activation.ERF, q)) == pytest.approx(q, abs=1e-12)
