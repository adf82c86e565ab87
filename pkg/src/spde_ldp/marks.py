"""Jump-magnitude (mark) distributions.

Every family shipped here has a finite Gaussian-type exponential moment
``E[exp(delta * a**2)] < inf`` for some ``delta > 0``; the value of ``delta`` is
recorded on the instance. Exponential marks are deliberately absent because
they have no such moment.

Besides sampling, each family exposes its moment generating function
``M(t) = E[exp(t a)]`` and the first two derivatives. Exponential tilts of the
jump intensity are linear in the mark, so every mark integral needed by the
rate-function and importance-sampling code reduces to these three functions.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats


# P(|Z| > Z_CUT) is about 1e-38
Z_CUT = 13.0


class IntegrabilityError(ValueError):
    """Raised when a mark law violates the exponential-square moment condition."""


class MarkDistribution(ABC):
    """Law of the jump magnitudes released by one source."""

    delta: float

    @property
    @abstractmethod
    def mean(self) -> float:
        ...

    @property
    @abstractmethod
    def upper(self) -> float:
        """Supremum of the support (``inf`` when unbounded)."""

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        ...

    @abstractmethod
    def sample_tilted(self, rng: np.random.Generator, size: int, t: float) -> np.ndarray:
        """Sample from the tilted law ``exp(t a) F(da) / M(t)``."""

    @abstractmethod
    def mgf(self, t):
        ...

    @abstractmethod
    def mgf_d1(self, t):
        """``E[a exp(t a)]``."""

    @abstractmethod
    def mgf_d2(self, t):
        """``E[a**2 exp(t a)]``."""

    @abstractmethod
    def cdf(self, a):
        """``P(A < a)`` so that bins are half-open ``[lo, hi)``."""

    @abstractmethod
    def partial_mean(self, lo, hi):
        """``E[a; lo <= a < hi]``."""

    @abstractmethod
    def quadrature(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and probability weights of an ``n``-point rule for ``E_F``."""

    @abstractmethod
    def to_dict(self) -> dict:
        ...

    def expect(self, fn, n: int = 64) -> float:
        nodes, weights = self.quadrature(n)
        return float(np.dot(weights, fn(nodes)))

    def prob(self, lo, hi):
        return np.asarray(self.cdf(hi)) - np.asarray(self.cdf(lo))


@dataclass(frozen=True)
class PointMass(MarkDistribution):
    a0: float
    delta: float = field(default=1.0)

    def __post_init__(self):
        if not self.a0 > 0:
            raise ValueError(f"point-mass mark must be positive, got {self.a0}")
        if not self.delta > 0:
            raise IntegrabilityError("delta must be positive")

    @property
    def mean(self) -> float:
        return self.a0

    @property
    def upper(self) -> float:
        return self.a0

    def sample(self, rng, size):
        return np.full(size, self.a0)

    def sample_tilted(self, rng, size, t):
        return np.full(size, self.a0)

    def mgf(self, t):
        return np.exp(np.asarray(t) * self.a0)

    def mgf_d1(self, t):
        return self.a0 * self.mgf(t)

    def mgf_d2(self, t):
        return self.a0**2 * self.mgf(t)

    def cdf(self, a):
        return np.where(np.asarray(a) > self.a0, 1.0, 0.0)

    def partial_mean(self, lo, hi):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        return np.where((lo <= self.a0) & (self.a0 < hi), self.a0, 0.0)

    def quadrature(self, n):
        return np.array([self.a0]), np.array([1.0])

    def to_dict(self):
        return {"type": "point_mass", "a0": self.a0}


def _exprel_moments(x):
    """``(int_0^1 u^k e^{x u} du for k = 0, 1, 2)`` evaluated stably."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    xs = np.where(small, 1.0, x)
    e = np.exp(xs)
    m0 = np.expm1(xs) / xs
    m1 = (e * (xs - 1.0) + 1.0) / xs**2
    m2 = (e * (xs**2 - 2.0 * xs + 2.0) - 2.0) / xs**3
    # Taylor series: int u^k e^{xu} = sum_n x^n / (n! (n + k + 1))
    xz = np.where(small, x, 0.0)
    s0 = np.zeros_like(xz)
    s1 = np.zeros_like(xz)
    s2 = np.zeros_like(xz)
    term = np.ones_like(xz)
    for n in range(10):
        s0 = s0 + term / (n + 1)
        s1 = s1 + term / (n + 2)
        s2 = s2 + term / (n + 3)
        term = term * xz / (n + 1)
    return (np.where(small, s0, m0), np.where(small, s1, m1), np.where(small, s2, m2))


@dataclass(frozen=True)
class Uniform(MarkDistribution):
    a_max: float
    delta: float = field(default=1.0)

    def __post_init__(self):
        if not self.a_max > 0:
            raise ValueError(f"uniform mark bound must be positive, got {self.a_max}")
        if not self.delta > 0:
            raise IntegrabilityError("delta must be positive")

    @property
    def mean(self) -> float:
        return 0.5 * self.a_max

    @property
    def upper(self) -> float:
        return self.a_max

    def sample(self, rng, size):
        return rng.uniform(0.0, self.a_max, size)

    def sample_tilted(self, rng, size, t):
        u = rng.random(size)
        x = t * self.a_max
        if abs(x) < 1e-12:
            return u * self.a_max
        # inverse cdf of density proportional to exp(x v) on [0, 1]
        return np.log1p(u * np.expm1(x)) / x * self.a_max

    def mgf(self, t):
        return _exprel_moments(np.asarray(t) * self.a_max)[0]

    def mgf_d1(self, t):
        return self.a_max * _exprel_moments(np.asarray(t) * self.a_max)[1]

    def mgf_d2(self, t):
        return self.a_max**2 * _exprel_moments(np.asarray(t) * self.a_max)[2]

    def cdf(self, a):
        return np.clip(np.asarray(a, float) / self.a_max, 0.0, 1.0)

    def partial_mean(self, lo, hi):
        lo = np.clip(np.asarray(lo, float), 0.0, self.a_max)
        hi = np.clip(np.asarray(hi, float), 0.0, self.a_max)
        return np.where(hi > lo, (hi**2 - lo**2) / (2.0 * self.a_max), 0.0)

    def quadrature(self, n):
        x, w = np.polynomial.legendre.leggauss(n)
        return 0.5 * self.a_max * (x + 1.0), 0.5 * w

    def to_dict(self):
        return {"type": "uniform", "a_max": self.a_max}


@dataclass(frozen=True)
class HalfNormal(MarkDistribution):
    """Law of ``sigma * |Z|``; ``E exp(delta a^2)`` is finite iff ``2 delta sigma^2 < 1``."""

    sigma: float
    delta: float | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"half-normal scale must be positive, got {self.sigma}")
        if self.delta is None:
            object.__setattr__(self, "delta", 0.25 / self.sigma**2)
        if not self.delta > 0:
            raise IntegrabilityError("delta must be positive")
        if 2.0 * self.delta * self.sigma**2 >= 1.0:
            raise IntegrabilityError(
                f"E[exp(delta a^2)] diverges for half-normal marks when "
                f"2*delta*sigma^2 >= 1 (delta={self.delta}, sigma={self.sigma})"
            )

    @property
    def mean(self) -> float:
        return self.sigma * math.sqrt(2.0 / math.pi)

    @property
    def upper(self) -> float:
        return math.inf

    def sample(self, rng, size):
        return np.abs(rng.standard_normal(size)) * self.sigma

    def sample_tilted(self, rng, size, t):
        # exp(t a) * halfnormal density is a normal(sigma^2 t, sigma^2) truncated to a >= 0
        loc = self.sigma**2 * t
        lower = -loc / self.sigma
        if size == 0:
            return np.empty(0)
        return stats.truncnorm.rvs(lower, np.inf, loc=loc, scale=self.sigma,
                                   size=size, random_state=rng)

    def mgf(self, t):
        # 2 exp(s^2 t^2 / 2) Phi(s t) == erfcx(-s t / sqrt 2)
        return special.erfcx(-self.sigma * np.asarray(t, float) / math.sqrt(2.0))

    def mgf_d1(self, t):
        t = np.asarray(t, float)
        return self.sigma**2 * t * self.mgf(t) + self.sigma * math.sqrt(2.0 / math.pi)

    def mgf_d2(self, t):
        t = np.asarray(t, float)
        return self.sigma**2 * (self.mgf(t) + t * self.mgf_d1(t))

    def cdf(self, a):
        a = np.maximum(np.asarray(a, float), 0.0)
        return special.erf(a / (self.sigma * math.sqrt(2.0)))

    def partial_mean(self, lo, hi):
        lo = np.maximum(np.asarray(lo, float), 0.0)
        hi = np.maximum(np.asarray(hi, float), 0.0)
        c = self.sigma * math.sqrt(2.0 / math.pi)
        s2 = 2.0 * self.sigma**2
        return np.where(hi > lo, c * (np.exp(-lo**2 / s2) - np.exp(-hi**2 / s2)), 0.0)

    def quadrature(self, n):
        # Gauss-Legendre in z = a / sigma on [0, Z_CUT]; the integrands
        # exp(-z^2 / 2 + t sigma z) are entire, so the rule converges
        # geometrically (a Laguerre rule in z^2 / 2 only converges like 1/n).
        x, w = np.polynomial.legendre.leggauss(n)
        z = 0.5 * Z_CUT * (x + 1.0)
        return self.sigma * z, 0.5 * Z_CUT * w * math.sqrt(2.0 / math.pi) * np.exp(-0.5 * z * z)

    def to_dict(self):
        return {"type": "half_normal", "sigma": self.sigma, "delta": self.delta}


def mark_from_dict(data: dict) -> MarkDistribution:
    kind = data.get("type")
    if kind == "point_mass":
        return PointMass(float(data["a0"]))
    if kind == "uniform":
        return Uniform(float(data["a_max"]))
    if kind == "half_normal":
        delta = data.get("delta")
        return HalfNormal(float(data["sigma"]), None if delta is None else float(delta))
    raise ValueError(f"unknown mark distribution type {kind!r}")
