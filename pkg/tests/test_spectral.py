import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spde_ldp import ModelParams, PointMass, SourceSpec
from spde_ldp.spectral import (
    basis_matrix,
    bracket,
    density,
    eigenfunction_value,
    eigenvalue,
    eigenvalues,
    phase,
    sobolev_inner,
    sobolev_norm_sq,
    synthesize,
    theta_map,
)

PI_MODEL = ModelParams(1.0, 0.0, 1.0, math.pi)
coeffs = arrays(np.float64, 9, elements=st.floats(-10, 10))


def simpson(y, x):
    w = np.full(x.size, 2.0)
    w[1:-1:2] = 4.0
    w[0] = w[-1] = 1.0
    return (x[1] - x[0]) / 3.0 * (w @ y)


class TestParams:
    @pytest.mark.parametrize("kw", [dict(D=0.0), dict(ell=-1.0), dict(alpha=-0.1)])
    def test_invalid_rejected(self, kw):
        base = dict(D=1.0, V=0.0, alpha=1.0, ell=1.0)
        base.update(kw)
        with pytest.raises(ValueError):
            ModelParams(**base)

    def test_source_outside_domain(self):
        with pytest.raises(ValueError):
            ModelParams(1.0, 0.0, 1.0, 1.0, [SourceSpec(2.0, 1.0, PointMass(1.0))])

    def test_nonpositive_rate(self):
        with pytest.raises(ValueError):
            SourceSpec(0.5, 0.0, PointMass(1.0))

    def test_dict_roundtrip(self, mix_params):
        assert ModelParams.from_dict(mix_params.to_dict()) == mix_params


class TestEigen:
    def test_zero_mode(self, mix_params):
        assert eigenvalue(0, mix_params) == 0.0

    def test_hand_values(self):
        assert eigenvalue(2, PI_MODEL) == pytest.approx(4.0, rel=1e-15)
        p = ModelParams(2.0, 4.0, 0.0, 1.0)
        assert eigenvalue(1, p) == pytest.approx(2.0 * (1.0 + math.pi**2), rel=1e-14)

    def test_increasing(self, mix_params):
        lam = eigenvalues(40, mix_params)
        assert np.all(np.diff(lam[1:]) > 0)

    def test_negative_index(self):
        with pytest.raises(ValueError):
            eigenvalue(-1, PI_MODEL)

    def test_phi0_limit(self):
        p = ModelParams(1.0, 0.0, 0.0, 4.0)
        assert eigenfunction_value(0, 1.0, p) == pytest.approx(0.5)

    def test_small_drift_approaches_limit(self):
        x = np.linspace(0, 4, 9)
        p0 = ModelParams(1.0, 0.0, 0.0, 4.0)
        p1 = ModelParams(1.0, 1e-9, 0.0, 4.0)
        for j in range(4):
            assert np.allclose(eigenfunction_value(j, x, p0), eigenfunction_value(j, x, p1), atol=1e-7)

    def test_phase_branch(self):
        pos = ModelParams(1.0, 1.0, 0.0, 2.0)
        neg = ModelParams(1.0, -1.0, 0.0, 2.0)
        assert np.all((phase(np.arange(1, 6), pos) > -math.pi / 2) & (phase(np.arange(1, 6), pos) <= 0))
        assert np.all((phase(np.arange(1, 6), neg) >= 0) & (phase(np.arange(1, 6), neg) < math.pi / 2))

    @pytest.mark.parametrize("V", [0.0, 1.3, -0.7])
    def test_neumann(self, V):
        p = ModelParams(1.0, V, 0.0, 2.0)
        for j in range(1, 6):
            for x in (0.0, 2.0):
                assert abs(eigenfunction_value(j, x, p, derivative=1)) < 1e-12
        h = 1e-6
        fd = (eigenfunction_value(1, h, p) - eigenfunction_value(1, 0.0, p)) / h
        assert abs(fd) < 1e-4

    def test_derivatives_match_finite_differences(self, mix_params):
        x = np.linspace(0.3, 2.5, 7)
        h = 1e-5
        for j in range(5):
            d1 = (eigenfunction_value(j, x + h, mix_params) - eigenfunction_value(j, x - h, mix_params)) / (2 * h)
            assert np.allclose(d1, eigenfunction_value(j, x, mix_params, 1), atol=1e-7)
            d2 = (eigenfunction_value(j, x + h, mix_params, 1) - eigenfunction_value(j, x - h, mix_params, 1)) / (2 * h)
            assert np.allclose(d2, eigenfunction_value(j, x, mix_params, 2), atol=1e-6)

    def test_outside_domain(self):
        with pytest.raises(ValueError):
            eigenfunction_value(1, 3.5, PI_MODEL)

    def test_bad_derivative(self):
        with pytest.raises(ValueError):
            eigenfunction_value(1, 0.5, PI_MODEL, derivative=3)

    def test_gram_small_domain(self):
        p = ModelParams(1.0, 1.0, 0.0, 2.0)
        x = np.linspace(0.0, 2.0, 10_001)
        B = basis_matrix(x, 8, p)
        gram = np.array([[simpson(B[:, j] * B[:, k] * density(x, p), x) for k in range(9)] for j in range(9)])
        assert np.max(np.abs(gram - np.eye(9))) < 1e-8

    def test_synthesis_projection_roundtrip(self, mix_params):
        u = np.random.default_rng(0).standard_normal(7)
        x = np.linspace(0.0, mix_params.ell, 10_001)
        vals = synthesize(u, x, mix_params)
        B = basis_matrix(x, 6, mix_params)
        back = np.array([simpson(vals * B[:, j] * density(x, mix_params), x) for j in range(7)])
        assert np.allclose(back, u, atol=1e-9)


class TestNorms:
    def test_zero(self):
        assert sobolev_norm_sq(np.zeros(5), 2, PI_MODEL) == 0.0

    @pytest.mark.parametrize("n", [-3, -1, 0, 2])
    def test_unit_mode0(self, n):
        assert sobolev_norm_sq(np.eye(5)[0], n, PI_MODEL) == 1.0

    def test_hand_value(self):
        assert sobolev_norm_sq(np.eye(5)[2], -1, PI_MODEL) == pytest.approx(0.04)

    @given(coeffs, st.integers(-3, 3), st.integers(0, 3))
    def test_monotone_in_index(self, u, n, gap):
        assert sobolev_norm_sq(u, n, PI_MODEL) <= sobolev_norm_sq(u, n + gap, PI_MODEL) * (1 + 1e-12) + 1e-300


class TestThetaBracket:
    def test_theta_identity(self):
        u = np.arange(5.0)
        assert np.array_equal(theta_map(u, 0, PI_MODEL), u)

    def test_theta_hand(self):
        assert theta_map(np.eye(4)[1], 1, PI_MODEL)[1] == pytest.approx(0.25)

    def test_theta_negative(self):
        with pytest.raises(ValueError):
            theta_map(np.ones(3), -1, PI_MODEL)

    def test_bracket_unit(self):
        e = np.eye(4)
        assert bracket(e[1], e[1], 1, PI_MODEL) == pytest.approx(1.0)
        assert bracket(e[1], e[2], 1, PI_MODEL) == 0.0

    @given(coeffs, coeffs)
    @settings(max_examples=50)
    def test_bracket_index_free(self, u, v):
        ref = float(np.dot(u, v))
        for r in (0, 1, 3):
            assert bracket(u, v, r, PI_MODEL) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("p", [1, 2])
    def test_adjunction(self, p, mix_params):
        rng = np.random.default_rng(p)
        for _ in range(100):
            u, v = rng.standard_normal((2, 12))
            lhs = sobolev_inner(u, v, -p, mix_params)
            assert bracket(u, theta_map(v, p, mix_params), p, mix_params) == pytest.approx(lhs, rel=1e-10, abs=1e-14)

    def test_bracket_theta_is_norm(self):
        u = np.random.default_rng(5).standard_normal(10)
        assert bracket(u, theta_map(u, 2, PI_MODEL), 2, PI_MODEL) == pytest.approx(
            sobolev_norm_sq(u, -2, PI_MODEL), rel=1e-12)
