import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from spde_ldp import (
    Constant,
    ExponentialTilt,
    HalfNormal,
    IntegrabilityError,
    JumpPath,
    ModelParams,
    PointMass,
    SourceSpec,
    Tabulated,
    Uniform,
    cost_LT,
    entropy_inequalities,
    entropy_l,
    girsanov_log_weight,
    sample_controlled_prm,
    sample_prm,
)
from spde_ldp.marks import mark_from_dict
from spde_ldp.prm import compensator, sample_batch, stream


def single(f=1.0, marks=None):
    return ModelParams(1.0, 0.0, 1.0, 1.0, [SourceSpec(0.5, f, marks or PointMass(1.0))])


class TimeKernel:
    """``H_i(s) = (1 + i) (1 - s / 2)``, bounded by ``1 + i`` on ``[0, 1]``."""

    def time_factor(self, s, i):
        return (1.0 + i) * (1.0 - 0.5 * np.asarray(s, float))

    def bound(self, i):
        return 1.0 + i


def counts(params, eps, T, n, seed, control=None):
    owner, t, i, a = sample_batch(params, eps, T, n, stream(seed), control)
    return np.bincount(owner, minlength=n), owner, t, i, a


class TestMarks:
    @pytest.mark.parametrize("m", [PointMass(0.7), Uniform(2.0), HalfNormal(0.8)])
    def test_mgf_family(self, m):
        nodes, w = m.quadrature(64)
        assert w.sum() == pytest.approx(1.0, rel=1e-12)
        for t in (-1.3, 0.0, 0.9):
            assert np.dot(w, np.exp(t * nodes)) == pytest.approx(float(m.mgf(t)), rel=1e-11)
            assert np.dot(w, nodes * np.exp(t * nodes)) == pytest.approx(float(m.mgf_d1(t)), rel=1e-11)
            assert np.dot(w, nodes**2 * np.exp(t * nodes)) == pytest.approx(float(m.mgf_d2(t)), rel=1e-11)
        assert float(m.mgf_d1(0.0)) == pytest.approx(m.mean, rel=1e-12)

    def test_uniform_small_argument_series(self):
        m = Uniform(1.0)
        for x in (1e-3, -1e-3, 1e-9):
            exact = math.expm1(x) / x
            assert float(m.mgf(x)) == pytest.approx(exact, rel=1e-14)

    @pytest.mark.parametrize("m", [Uniform(2.0), HalfNormal(0.8)])
    def test_tilted_sampling_mean(self, m):
        rng = np.random.default_rng(0)
        t = 0.9
        draws = m.sample_tilted(rng, 200_000, t)
        expected = float(m.mgf_d1(t) / m.mgf(t))
        assert abs(draws.mean() - expected) < 4 * draws.std() / math.sqrt(draws.size)

    @pytest.mark.parametrize("m", [Uniform(2.0), HalfNormal(0.8)])
    def test_bins(self, m):
        edges = np.array([0.0, 0.3, 1.1, 1.7])
        p = m.prob(edges[:-1], edges[1:])
        nodes, w = m.quadrature(400)
        assert p.sum() == pytest.approx(float(m.cdf(1.7)))
        pm = m.partial_mean(edges[:-1], edges[1:])
        assert np.all(pm >= edges[:-1] * p - 1e-15) and np.all(pm <= edges[1:] * p + 1e-15)
        assert float(m.partial_mean(0.0, np.inf)) == pytest.approx(m.mean)

    def test_point_mass_half_open(self):
        m = PointMass(1.0)
        assert float(m.prob(1.0, 2.0)) == 1.0 and float(m.prob(0.0, 1.0)) == 0.0

    def test_halfnormal_integrability(self):
        assert HalfNormal(2.0).delta == pytest.approx(0.0625)
        with pytest.raises(IntegrabilityError):
            HalfNormal(1.0, delta=0.5)
        with pytest.raises(IntegrabilityError):
            mark_from_dict({"type": "half_normal", "sigma": 1.0, "delta": 0.6})

    def test_invalid(self):
        for bad in (lambda: PointMass(0.0), lambda: Uniform(-1.0), lambda: HalfNormal(0.0),
                    lambda: mark_from_dict({"type": "exponential"})):
            with pytest.raises(ValueError):
                bad()

    @pytest.mark.parametrize("m", [PointMass(0.7), Uniform(2.0), HalfNormal(0.8)])
    def test_dict_roundtrip(self, m):
        assert mark_from_dict(m.to_dict()) == m


class TestSampling:
    def test_poisson_mean(self):
        n, _, _, _, _ = counts(single(2.0), 1.0, 3.0, 10_000, 1)
        assert abs(n.mean() - 6.0) < 3 * math.sqrt(6.0 / 10_000)
        # chi-square goodness of fit against Poisson(6)
        k = np.arange(0, 15)
        obs = np.array([np.sum(n == v) for v in k[:-1]] + [np.sum(n >= k[-1])])
        exp = np.append(stats.poisson.pmf(k[:-1], 6.0), stats.poisson.sf(k[-1] - 1, 6.0)) * n.size
        assert stats.chisquare(obs, exp).pvalue > 0.01

    def test_epsilon_scaling(self):
        n1 = counts(single(1.0), 1.0, 1.0, 10_000, 2)[0]
        n2 = counts(single(1.0), 0.5, 1.0, 10_000, 3)[0]
        se = math.sqrt(n1.var() / n1.size + n2.var() / n2.size)
        assert abs(n2.mean() - 2 * n1.mean()) < 3 * 2 * se

    def test_superposition(self):
        params = ModelParams(1.0, 0.0, 1.0, 1.0, [SourceSpec(0.2, 1.0, PointMass(1.0)),
                                                  SourceSpec(0.8, 3.0, PointMass(1.0))])
        _, _, _, i, _ = counts(params, 1.0, 1.0, 10_000, 4)
        frac = np.mean(i == 1)
        assert abs(frac - 0.75) < 3 * math.sqrt(0.75 * 0.25 / i.size)

    def test_deterministic_and_sorted(self, mix_params):
        a = sample_prm(mix_params, 0.1, 1.0, seed=5)
        b = sample_prm(mix_params, 0.1, 1.0, seed=5)
        assert np.array_equal(a.t, b.t) and np.array_equal(a.a, b.a)
        assert np.all(np.diff(a.t) > 0)

    def test_identity_control_same_law(self):
        params = single(1.5, Uniform(1.0))
        n0, o0, t0, _, _ = counts(params, 0.5, 1.0, 10_000, 6)
        n1, o1, t1, _, _ = counts(params, 0.5, 1.0, 10_000, 7, Constant(1.0, 1.0))
        assert stats.ks_2samp(n0, n1).pvalue > 0.01

        def gaps(owner, t):
            first = np.r_[True, owner[1:] != owner[:-1]]
            return np.diff(np.r_[0.0, t])[~first]

        assert stats.ks_2samp(gaps(o0, t0), gaps(o1, t1)).pvalue > 0.01

    def test_constant_control_rate(self):
        n = counts(single(1.0), 0.5, 1.0, 10_000, 8, Constant(2.5, 1.0))[0]
        assert abs(n.mean() - 5.0) < 3 * math.sqrt(5.0 / n.size)

    def test_split_interval(self):
        ctrl = Tabulated(np.array([0.0, 0.5, 1.0]), np.array([0.0, 5.0]), np.array([[[2.0]], [[1.0]]]), 2.0)
        _, owner, t, _, _ = counts(single(1.0), 0.1, 1.0, 5_000, 9, ctrl)
        first = np.bincount(owner[t < 0.5], minlength=5_000)
        second = np.bincount(owner[t >= 0.5], minlength=5_000)
        se = math.sqrt(first.var() / 5_000 + 4 * second.var() / 5_000)
        assert abs(first.mean() - 2 * second.mean()) < 3 * se

    def test_tilt_thinning_mark_law(self):
        # under g = exp(beta a H) the accepted marks near s = 1 follow the tilted law
        params = single(1.0, Uniform(2.0))
        ctrl = ExponentialTilt(0.8, TimeKernel(), 1.0)
        _, _, t, _, a = counts(params, 0.05, 1.0, 2_000, 10, ctrl)
        late = a[t > 0.95]
        # conditional mean given s, averaged over the window: the intensity
        # factor M(tilt) weights each s
        s_grid = np.linspace(0.95, 1.0, 201)
        tilt = 0.8 * TimeKernel().time_factor(s_grid, 0)
        m = Uniform(2.0)
        expected = float(np.sum(m.mgf_d1(tilt)) / np.sum(m.mgf(tilt)))
        assert abs(late.mean() - expected) < 4 * late.std() / math.sqrt(late.size)

    def test_control_horizon_mismatch(self):
        with pytest.raises(ValueError):
            sample_controlled_prm(Constant(1.0, 2.0), single(), 0.1, 1.0, 0)

    def test_seed_required(self):
        with pytest.raises(ValueError):
            sample_prm(single(), 0.1, 1.0, None)

    def test_invalid_scale(self):
        with pytest.raises(ValueError):
            sample_prm(single(), 0.0, 1.0, 1)


class TestJumpPath:
    def test_validation(self):
        with pytest.raises(ValueError):
            JumpPath(np.array([0.5, 0.2]), np.array([0, 0]), np.array([1.0, 1.0]), 1.0, 0.1)
        with pytest.raises(ValueError):
            JumpPath(np.array([0.5]), np.array([0]), np.array([-1.0]), 1.0, 0.1)
        with pytest.raises(ValueError):
            JumpPath(np.array([1.5]), np.array([0]), np.array([1.0]), 1.0, 0.1)

    def test_csv_roundtrip(self, tmp_path, mix_params):
        jp = sample_prm(mix_params, 0.1, 1.0, seed=3)
        jp.to_csv(tmp_path / "j.csv")
        back = JumpPath.from_csv(tmp_path / "j.csv", 1.0, 0.1)
        assert np.array_equal(back.t, jp.t) and np.array_equal(back.a, jp.a) and np.array_equal(back.i, jp.i)
        assert (tmp_path / "j.csv").read_text().splitlines()[0] == "t,i,a"
        JumpPath.empty(1.0, 0.1).to_csv(tmp_path / "e.csv")
        assert len(JumpPath.from_csv(tmp_path / "e.csv", 1.0, 0.1)) == 0

    def test_counts(self):
        jp = JumpPath(np.array([0.1, 0.2, 0.3]), np.array([1, 0, 1]), np.ones(3), 1.0, 1.0)
        assert list(jp.counts(3)) == [1, 2, 0]


class TestEntropy:
    def test_values(self):
        assert entropy_l(1.0) == 0.0
        assert entropy_l(0.0) == 1.0
        assert entropy_l(math.e) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            entropy_l(-0.1)

    @given(st.floats(0, 1e6), st.floats(0, 1e6), st.floats(0, 1))
    def test_convex_nonnegative(self, x, y, lam):
        z = lam * x + (1 - lam) * y
        assert entropy_l(x) >= 0
        assert entropy_l(z) <= lam * entropy_l(x) + (1 - lam) * entropy_l(y) + 1e-9 * (1 + x + y) * 20

    def test_inequality_suite(self):
        rep = entropy_inequalities(10_000, seed=1)
        assert rep.passed
        assert rep.c1_envelope == pytest.approx(1.0 / entropy_l(2.0))

    def test_young_needs_sigma_at_least_one(self):
        a, sigma = 5.0, 0.5
        b = math.exp(sigma * a)
        assert a * b > math.exp(sigma * a) + entropy_l(b) / sigma
        # sharp form holds for every sigma > 0
        assert a * b <= (math.exp(sigma * a) - 1) / sigma + entropy_l(b) / sigma + 1e-12


class TestCostAndWeights:
    def test_cost_identity(self, mix_params):
        assert cost_LT(Constant(1.0, 1.0), mix_params) == 0.0

    def test_cost_constant(self):
        assert cost_LT(Constant(2.0, 2.0), single(), 2.0) == pytest.approx(2 * (2 * math.log(2) - 1), rel=1e-14)

    def test_cost_tabulated_mc(self, mix_params):
        rng = np.random.default_rng(0)
        ctrl = Tabulated(np.linspace(0, 1, 5), np.array([0.0, 0.5, 1.0, 2.5]),
                         rng.uniform(0.3, 3.0, (4, 2, 3)), 4.0)
        n = 200_000
        total, var = 0.0, 0.0
        for i, src in enumerate(mix_params.sources):
            s = rng.uniform(0, 1, n)
            a = src.marks.sample(rng, n)
            vals = src.f * entropy_l(ctrl(s, i, a))
            total += vals.mean()
            var += vals.var() / n
        assert abs(cost_LT(ctrl, mix_params) - total) < 3 * math.sqrt(var)

    def test_cost_zero_iff_one(self, mix_params):
        ones = Tabulated(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.ones((1, 2, 1)), 2.0)
        assert cost_LT(ones, mix_params) == 0.0
        bumped = Tabulated(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([[[1.0], [1.01]]]), 2.0)
        assert cost_LT(bumped, mix_params) > 0.0

    def test_tabulated_bound(self):
        with pytest.raises(ValueError):
            Tabulated(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([[[5.0]]]), 2.0)

    @pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
    def test_tilt_divergence(self):
        params = single(1.0, HalfNormal(1.0))
        with pytest.raises(OverflowError):
            cost_LT(ExponentialTilt(1e3, TimeKernel(), 1.0), params)

    def test_weight_identity(self, mix_params):
        jp = sample_prm(mix_params, 0.1, 1.0, 2)
        assert girsanov_log_weight(jp, Constant(1.0, 1.0), mix_params, 0.1) == 0.0

    def test_weight_constant(self):
        params = single(1.3)
        jp = sample_controlled_prm(Constant(1.7, 1.0), params, 0.2, 1.0, 4)
        expected = -len(jp) * math.log(1.7) + 1.3 * 1.0 * 0.7 / 0.2
        assert girsanov_log_weight(jp, Constant(1.7, 1.0), params, 0.2) == pytest.approx(expected, rel=1e-13)

    def test_weight_zero_control(self):
        params = single()
        ctrl = Constant(1.0, 1.0)
        jp = JumpPath(np.array([0.5]), np.array([0]), np.array([1.0]), 1.0, 0.1)
        zero = Tabulated(np.array([0.0, 1.0]), np.array([0.0, 2.0]), np.array([[[1.0]]]), 1.0)
        assert girsanov_log_weight(jp, zero, params, 0.1) == 0.0
        object.__setattr__(zero, "values", np.zeros((1, 1, 1)))
        with pytest.raises(ValueError):
            girsanov_log_weight(jp, zero, params, 0.1)
        assert girsanov_log_weight(jp, ctrl, params, 0.1) == 0.0

    @pytest.mark.parametrize("kind", ["constant", "tabulated", "tilt"])
    def test_mean_one(self, kind, mix_params):
        T, eps, n = 1.0, 0.5, 10_000
        if kind == "constant":
            ctrl = Constant(1.6, T)
        elif kind == "tabulated":
            ctrl = Tabulated(np.array([0.0, 0.4, 1.0]), np.array([0.0, 0.6, 1.5]),
                             np.array([[[2.0, 0.5], [1.5, 1.2]], [[0.7, 1.8], [0.9, 2.2]]]), 3.0)
        else:
            ctrl = ExponentialTilt(0.4, TimeKernel(), T)
        comp = compensator(ctrl, mix_params)
        owner, t, i, a = sample_batch(mix_params, eps, T, n, stream(17), ctrl)
        logw = -np.bincount(owner, weights=np.log(ctrl(t, i, a)), minlength=n) + comp / eps
        w = np.exp(logw)
        assert abs(w.mean() - 1.0) < 3 * w.std() / math.sqrt(n)
