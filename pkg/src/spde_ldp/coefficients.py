"""Drift and jump coefficients in spectral coordinates.

A :class:`CoefficientOperator` supplies ``A(t, u)`` and ``G(t, u, (i, a))`` on
the ``d + 1`` retained modes together with the jump intensity
``nu = sum_i f_i delta_i x F_i``. :func:`verify_conditions` probes the
coercivity, growth and monotonicity inequalities on sampled states; it can
falsify them but cannot prove them.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .marks import MarkDistribution
from .spectral import (
    DEFAULT_MODES,
    ModelParams,
    bracket,
    decay_rates,
    sobolev_inner,
    sobolev_norm_sq,
    source_kernel,
    theta_map,
)

MARK_NODES = 48


class CoefficientOperator(ABC):
    """Contract for the coefficients of a jump-driven evolution on ``d + 1`` modes.

    ``drift`` and ``jump`` broadcast over leading axes of ``u`` (and of ``t``
    and ``a`` where those are arrays).
    """

    p: int = 1
    q: int = 2
    d: int
    rates: tuple[float, ...]
    marks: tuple[MarkDistribution, ...]
    state_free_jump: bool = False

    @abstractmethod
    def drift(self, t, u) -> np.ndarray:
        ...

    @abstractmethod
    def jump(self, t, u, i: int, a) -> np.ndarray:
        ...

    @property
    def n_sources(self) -> int:
        return len(self.rates)

    @property
    def params(self) -> ModelParams | None:
        return None

    def restrict(self, d: int) -> "CoefficientOperator":
        if d == self.d:
            return self
        raise NotImplementedError(f"{type(self).__name__} cannot change its truncation")

    def expected_jump(self, t, u, weight=None) -> np.ndarray:
        """``sum_i f_i E_{F_i}[G(t, u, (i, a)) w(t, i, a)]`` with ``w = 1`` by default.

        ``weight(t, i, a)`` must broadcast ``t`` (shape of ``u`` without its
        last axis) against a trailing mark axis.
        """
        u = np.asarray(u, dtype=float)
        t = np.asarray(t, dtype=float)
        out = np.zeros(np.broadcast_shapes(u.shape, t.shape + (self.d + 1,)))
        for i, (f, marks) in enumerate(zip(self.rates, self.marks)):
            nodes, w = marks.quadrature(MARK_NODES)
            for a, wa in zip(nodes, w):
                term = self.jump(t, u, i, a)
                if weight is not None:
                    term = term * np.asarray(weight(t, i, a))[..., None]
                out = out + f * wa * term
        return out

    def lipschitz(self, u=None, n_probe: int = 8, seed: int = 0) -> float:
        """Crude finite-difference estimate of the drift Lipschitz constant in the Euclidean norm."""
        rng = np.random.default_rng(seed)
        u = np.zeros(self.d + 1) if u is None else np.asarray(u, dtype=float)
        base = self.drift(0.0, u)
        h = 1e-6 * (1.0 + np.linalg.norm(u))
        best = 0.0
        for _ in range(n_probe):
            v = rng.standard_normal(self.d + 1)
            v /= np.linalg.norm(v)
            best = max(best, np.linalg.norm(self.drift(0.0, u + h * v) - base) / h)
        return best

    def growth_constant(self) -> float:
        """A ``kappa`` with ``||A(t, y)|| <= kappa (1 + ||y||)`` in the Euclidean norm."""
        return max(self.lipschitz(), float(np.linalg.norm(self.drift(0.0, np.zeros(self.d + 1)))))


class PollutantCoefficients(CoefficientOperator):
    """Affine drift and state-free point-source jumps of the reservoir model.

    In coordinates, ``A(u)_j = -(alpha + lambda_j) u_j + sum_i a_i f_i K[i, j]``
    and ``G(i, a)_j = a K[i, j]`` with ``K[i, j] = phi_j(kappa_i) exp(-2 c kappa_i)``
    and ``a_i`` the mean mark of source ``i``.
    """

    state_free_jump = True

    def __init__(self, params: ModelParams, d_modes: int = DEFAULT_MODES, p: int = 1, q: int = 2):
        if d_modes < 0:
            raise ValueError("d_modes must be >= 0")
        if q < p:
            raise ValueError("need q >= p")
        self._params = params
        self.d = d_modes
        self.p, self.q = p, q
        self.kappa_rates = decay_rates(d_modes, params)
        self.kernel = source_kernel(params, d_modes)
        self.rates = tuple(s.f for s in params.sources)
        self.marks = tuple(s.marks for s in params.sources)
        self.mean_marks = np.array([m.mean for m in self.marks])
        self.source_term = (self.mean_marks * np.asarray(self.rates)) @ self.kernel \
            if params.sources else np.zeros(d_modes + 1)
        if not np.all(np.isfinite(self.kernel)):
            raise ValueError("non-finite source kernel")

    @property
    def params(self) -> ModelParams:
        return self._params

    def restrict(self, d: int) -> "PollutantCoefficients":
        if d == self.d:
            return self
        return PollutantCoefficients(self._params, d, self.p, self.q)

    def _check_dim(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.d + 1:
            raise ValueError(f"state has {u.shape[-1]} modes, operator expects {self.d + 1}")
        return u

    def drift(self, t, u):
        u = self._check_dim(u)
        return -self.kappa_rates * u + self.source_term

    def jump(self, t, u, i, a):
        if not 0 <= i < self.n_sources:
            raise IndexError(f"source index {i} out of range")
        a = np.asarray(a, dtype=float)
        return a[..., None] * self.kernel[i]

    def expected_jump(self, t, u, weight=None):
        if weight is None:
            u = np.asarray(u, dtype=float)
            t = np.asarray(t, dtype=float)
            shape = np.broadcast_shapes(u.shape, t.shape + (self.d + 1,))
            return np.broadcast_to(self.source_term, shape).copy()
        return super().expected_jump(t, u, weight)

    def lipschitz(self, u=None, n_probe=8, seed=0):
        return float(np.max(self.kappa_rates)) if self.d >= 0 else 0.0

    def growth_constant(self):
        return max(float(np.max(self.kappa_rates)), float(np.linalg.norm(self.source_term)))

    def jump_norm_sq(self, i: int, n: float) -> float:
        """``||G(i, 1)||_n^2``; scales as ``a^2`` in the mark."""
        return float(sobolev_norm_sq(self.kernel[i], n, self._params))


def pollutant_drift(u, op: PollutantCoefficients) -> np.ndarray:
    return op.drift(0.0, u)


def pollutant_jump(i: int, a: float, op: PollutantCoefficients) -> np.ndarray:
    if a < 0:
        raise ValueError("marks are nonnegative")
    return op.jump(0.0, None, i, a)


@dataclass
class ConditionReport:
    """Smallest constants consistent with the sampled states.

    A negative constant means the left-hand side was nonpositive at every
    sample, so any ``K >= 0`` works.
    """

    coercivity_K: float
    drift_growth_K: float
    jump_growth_K: float
    monotonicity_K: float
    degenerate_monotonicity_max: float
    exp_integrable: bool
    mark_deltas: list[float]
    jump_state_lipschitz: float
    n_samples: int
    notes: list[str] = field(default_factory=list)

    @property
    def growth_K(self) -> float:
        return max(self.drift_growth_K, self.jump_growth_K)

    def as_dict(self):
        return {
            "coercivity_K": self.coercivity_K,
            "drift_growth_K": self.drift_growth_K,
            "jump_growth_K": self.jump_growth_K,
            "monotonicity_K": self.monotonicity_K,
            "degenerate_monotonicity_max": self.degenerate_monotonicity_max,
            "exp_integrable": self.exp_integrable,
            "mark_deltas": self.mark_deltas,
            "jump_state_lipschitz": self.jump_state_lipschitz,
            "n_samples": self.n_samples,
            "notes": list(self.notes),
        }


def _jump_moment(op, t, u, n, diff_u=None):
    """``sum_i f_i E ||G(t, u, .)||_n^2`` (or of ``G(u) - G(diff_u)``)."""
    params = op.params
    total = 0.0
    for i, (f, marks) in enumerate(zip(op.rates, op.marks)):
        nodes, w = marks.quadrature(MARK_NODES)
        for a, wa in zip(nodes, w):
            g = op.jump(t, u, i, a)
            if diff_u is not None:
                g = g - op.jump(t, diff_u, i, a)
            total += f * wa * float(_norm_sq(g, n, params, op.d))
    return total


def _norm_sq(v, n, params, d):
    if params is None:
        return np.sum(np.asarray(v) ** 2)
    return sobolev_norm_sq(v, n, params)


def verify_conditions(op: CoefficientOperator, samples, tolerance: float = 0.0) -> ConditionReport:
    """Sample-based check of coercivity, growth and monotonicity.

    ``samples`` is a nonempty sequence of ``(t, u, u_prime)`` triples. Norms use
    the Sobolev scale of the operator's model when it has one and the
    Euclidean norm otherwise.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one sample")
    params = op.params
    p, q, d = op.p, op.q, op.d
    coerc, g_drift, g_jump, mono, degenerate, jlip = [], [], [], [], [], [0.0]
    for t, u, u2 in samples:
        u = np.asarray(u, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        Au = op.drift(t, u)
        nu_p = float(_norm_sq(u, -p, params, d))
        if params is not None:
            pairing = float(bracket(Au, theta_map(u, p, params), p, params))
        else:
            pairing = float(np.dot(Au, u))
        coerc.append(2.0 * pairing / (1.0 + nu_p))
        g_drift.append(float(_norm_sq(Au, -q, params, d)) / (1.0 + nu_p))
        g_jump.append(_jump_moment(op, t, u, -p) / (1.0 + nu_p))
        du = u - u2
        dA = Au - op.drift(t, u2)
        inner = float(sobolev_inner(dA, du, -q, params)) if params is not None else float(np.dot(dA, du))
        lhs = 2.0 * inner + _jump_moment(op, t, u, -q, diff_u=u2)
        den = float(_norm_sq(du, -q, params, d))
        if den > 0:
            mono.append(lhs / den)
            jlip.append(np.sqrt(_jump_moment(op, t, u, -q, diff_u=u2) / den))
        else:
            degenerate.append(lhs)
    deltas = [float(m.delta) for m in op.marks]
    exp_ok = all(dl > 0 for dl in deltas)
    notes = []
    if op.state_free_jump:
        notes.append("jump coefficient is state-free: its state-Lipschitz norm vanishes")
    else:
        notes.append("exponential integrability assessed from the mark laws only")
    degen_max = max(degenerate) if degenerate else 0.0
    if degen_max > tolerance:
        notes.append(f"monotonicity left side {degen_max} > 0 at u1 == u2")
    return ConditionReport(
        coercivity_K=max(coerc),
        drift_growth_K=max(g_drift),
        jump_growth_K=max(g_jump),
        monotonicity_K=max(mono) if mono else 0.0,
        degenerate_monotonicity_max=degen_max,
        exp_integrable=exp_ok,
        mark_deltas=deltas,
        jump_state_lipschitz=float(max(jlip)),
        n_samples=len(samples),
        notes=notes,
    )
