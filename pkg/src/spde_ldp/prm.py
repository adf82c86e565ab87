"""Marked Poisson point processes, intensity controls and change of measure.

The nominal noise is a marked point process on ``[0, T] x {0..r-1} x [0, inf)``
with intensity ``eps^{-1} f_i F_i(da) ds``. A control ``g(s, i, a) >= 0``
multiplies that intensity; controlled paths are produced by thinning a
dominating process. Source indices are zero-based throughout the package.

Random streams: a root ``seed`` and a stream index ``k`` give the generator
``default_rng(SeedSequence(seed, spawn_key=(k,)))``. Streams are independent of
one another and of the order in which they are consumed.
"""
from __future__ import annotations

import csv
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .marks import MarkDistribution
from .spectral import ModelParams

QUAD_OPTS = dict(epsabs=1e-15, epsrel=1e-13, limit=500)


def stream(seed, index: int | None = None) -> np.random.Generator:
    """Generator for stream ``index`` of root ``seed`` (or ``seed`` itself when it is a Generator)."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("a seed is required")
    if index is None:
        return np.random.default_rng(np.random.SeedSequence(int(seed)))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def entropy_l(r):
    """``l(r) = r log r - r + 1`` with ``l(0) = 1``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("entropy_l is defined for r >= 0")
    safe = np.where(r > 0, r, 1.0)
    out = np.where(r > 0, r * np.log(safe) - r + 1.0, 1.0)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------- paths


@dataclass(frozen=True)
class JumpPath:
    """Time-ordered events ``(t_k, i_k, a_k)`` on ``(0, horizon]``."""

    t: np.ndarray
    i: np.ndarray
    a: np.ndarray
    horizon: float
    epsilon: float

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        i = np.asarray(self.i, dtype=int)
        a = np.asarray(self.a, dtype=float)
        if not (t.shape == i.shape == a.shape) or t.ndim != 1:
            raise ValueError("t, i, a must be 1-d arrays of equal length")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] > self.horizon):
            raise ValueError("event times must be strictly increasing in (0, horizon]")
        if np.any(a < 0):
            raise ValueError("marks must be nonnegative")
        for name, val in (("t", t), ("i", i), ("a", a)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    def __len__(self):
        return self.t.size

    @classmethod
    def empty(cls, horizon: float, epsilon: float) -> "JumpPath":
        return cls(np.empty(0), np.empty(0, int), np.empty(0), horizon, epsilon)

    def counts(self, n_sources: int) -> np.ndarray:
        return np.bincount(self.i, minlength=n_sources)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "i", "a"])
            for t, i, a in zip(self.t, self.i, self.a):
                w.writerow([f"{t:.17g}", int(i), f"{a:.17g}"])

    @classmethod
    def from_csv(cls, path, horizon: float, epsilon: float) -> "JumpPath":
        data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
        if data.size == 0:
            return cls.empty(horizon, epsilon)
        return cls(data["t"], data["i"].astype(int), data["a"], horizon, epsilon)


# ------------------------------------------------------------------------ controls


class Control(ABC):
    """Nonnegative multiplicative tilt ``g(s, i, a)`` of the jump intensity on ``[0, horizon]``."""

    horizon: float

    @abstractmethod
    def __call__(self, s, i, a) -> np.ndarray:
        ...

    @abstractmethod
    def envelope(self, i: int, marks: MarkDistribution) -> tuple[float, float]:
        """``(n, t)`` with ``g(s, i, a) <= n exp(t a)`` on the horizon."""

    @abstractmethod
    def mark_moments(self, s, i: int, marks: MarkDistribution):
        """``(E[g], E[a g], E[l(g)])`` under ``F_i`` at times ``s``."""

    def integrate(self, params: ModelParams, which: str) -> float:
        """``sum_i f_i int_0^T E_{F_i}[...] ds`` for ``which`` in ``{"g-1", "l"}``."""
        k = {"g-1": 0, "l": 2}[which]
        total = 0.0
        for i, src in enumerate(params.sources):
            def fn(s, i=i, src=src):
                val = self.mark_moments(np.array([s]), i, src.marks)[k][0]
                return val - 1.0 if k == 0 else val
            val, _ = integrate.quad(fn, 0.0, self.horizon, **QUAD_OPTS)
            total += src.f * val
        return total

    def forcing_weight(self, s, i, a):
        return self(s, i, a) - 1.0


@dataclass(frozen=True)
class Constant(Control):
    theta: float
    horizon: float

    def __post_init__(self):
        if not self.theta > 0 or not math.isfinite(self.theta):
            raise ValueError("constant control needs 0 < theta < inf")

    def __call__(self, s, i, a):
        return np.full(np.broadcast_shapes(np.shape(s), np.shape(i), np.shape(a)), self.theta)

    def envelope(self, i, marks):
        return self.theta, 0.0

    def mark_moments(self, s, i, marks):
        s = np.asarray(s, dtype=float)
        one = np.ones_like(s)
        return self.theta * one, self.theta * marks.mean * one, entropy_l(self.theta) * one

    def integrate(self, params, which):
        per = self.theta - 1.0 if which == "g-1" else entropy_l(self.theta)
        return sum(src.f for src in params.sources) * self.horizon * per


@dataclass(frozen=True)
class Tabulated(Control):
    """Piecewise-constant control on time bins x sources x mark bins.

    Marks at or above ``mark_edges[-1]`` get ``g = 1``. Values must lie in
    ``[1/bound, bound]``.
    """

    time_edges: np.ndarray
    mark_edges: np.ndarray
    values: np.ndarray
    bound: float

    def __post_init__(self):
        te = np.asarray(self.time_edges, dtype=float)
        me = np.asarray(self.mark_edges, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if te[0] != 0.0 or np.any(np.diff(te) <= 0):
            raise ValueError("time edges must start at 0 and increase")
        if me[0] != 0.0 or np.any(np.diff(me) <= 0):
            raise ValueError("mark edges must start at 0 and increase")
        if v.ndim != 3 or v.shape[0] != te.size - 1 or v.shape[2] != me.size - 1:
            raise ValueError("values must have shape (time bins, sources, mark bins)")
        if not self.bound >= 1 or not math.isfinite(self.bound):
            raise ValueError("tabulated control needs a finite bound n >= 1")
        if np.any(v < 1.0 / self.bound) or np.any(v > self.bound):
            raise ValueError(f"control values must lie in [1/{self.bound}, {self.bound}]")
        object.__setattr__(self, "time_edges", te)
        object.__setattr__(self, "mark_edges", me)
        object.__setattr__(self, "values", v)

    @property
    def horizon(self):
        return float(self.time_edges[-1])

    def __call__(self, s, i, a):
        s, i, a = np.broadcast_arrays(np.asarray(s, float), np.asarray(i, int), np.asarray(a, float))
        tb = np.clip(np.searchsorted(self.time_edges, s, side="right") - 1, 0, self.values.shape[0] - 1)
        mb = np.searchsorted(self.mark_edges, a, side="right") - 1
        inside = mb < self.values.shape[2]
        mb = np.clip(mb, 0, self.values.shape[2] - 1)
        return np.where(inside, self.values[tb, i, mb], 1.0)

    def envelope(self, i, marks):
        return float(max(1.0, self.values[:, i, :].max())), 0.0

    def _bin_stats(self, marks):
        lo, hi = self.mark_edges[:-1], self.mark_edges[1:]
        top = float(self.mark_edges[-1])
        return (marks.prob(lo, hi), marks.partial_mean(lo, hi),
                1.0 - float(marks.cdf(top)), float(marks.partial_mean(top, np.inf)))

    def mark_moments(self, s, i, marks):
        s = np.asarray(s, dtype=float)
        tb = np.clip(np.searchsorted(self.time_edges, s, side="right") - 1, 0, self.values.shape[0] - 1)
        vals = self.values[tb, i, :]
        prob, pmean, tail_p, tail_m = self._bin_stats(marks)
        eg = vals @ prob + tail_p
        eag = vals @ pmean + tail_m
        el = entropy_l(vals) @ prob
        return eg, eag, el

    def integrate(self, params, which):
        dt = np.diff(self.time_edges)
        total = 0.0
        for i, src in enumerate(params.sources):
            prob, _, tail_p, _ = self._bin_stats(src.marks)
            vals = self.values[:, i, :]
            per = (vals @ prob + tail_p - 1.0) if which == "g-1" else entropy_l(vals) @ prob
            total += src.f * float(np.dot(dt, per))
        return total


@dataclass(frozen=True)
class ExponentialTilt(Control):
    """``g(s, i, a) = exp(beta * a * H_i(s))`` for a kernel linear in the mark.

    ``kernel`` must provide ``time_factor(s, i)`` (the function ``H_i``) and
    ``bound(i)`` (a bound on ``|H_i|`` over the horizon).
    """

    beta: float
    kernel: object
    horizon: float

    def __call__(self, s, i, a):
        s, i, a = np.broadcast_arrays(np.asarray(s, float), np.asarray(i, int), np.asarray(a, float))
        out = np.empty(s.shape)
        for src in np.unique(i):
            m = i == src
            out[m] = np.exp(self.beta * a[m] * self.kernel.time_factor(s[m], int(src)))
        return out

    def envelope(self, i, marks):
        return 1.0, abs(self.beta) * float(self.kernel.bound(i))

    def mark_moments(self, s, i, marks):
        x = self.beta * self.kernel.time_factor(np.asarray(s, float), i)
        m0, m1 = marks.mgf(x), marks.mgf_d1(x)
        return m0, m1, x * m1 - m0 + 1.0

    def integrate(self, params, which):
        k = {"g-1": 0, "l": 2}[which]
        total = 0.0
        for i, src in enumerate(params.sources):
            def fn(s, i=i, src=src):
                x = self.beta * float(self.kernel.time_factor(np.array([s]), i)[0])
                if k == 0:
                    return float(src.marks.mgf(x)) - 1.0
                return x * float(src.marks.mgf_d1(x)) - float(src.marks.mgf(x)) + 1.0
            val, _ = integrate.quad(fn, 0.0, self.horizon, points=_breakpoints(self.kernel, self.horizon), **QUAD_OPTS)
            total += src.f * val
        return total


def _breakpoints(kernel, T):
    fn = getattr(kernel, "breakpoints", None)
    return None if fn is None else fn(T)


def identity_control(T: float) -> Constant:
    return Constant(1.0, T)


def cost_LT(control: Control, params: ModelParams, T: float | None = None) -> float:
    """Entropy cost ``L_T(g) = int l(g) d nu_T``."""
    if T is not None and abs(T - control.horizon) > 1e-12 * max(1.0, T):
        raise ValueError("control horizon does not match T")
    val = control.integrate(params, "l")
    if not math.isfinite(val):
        raise OverflowError("entropy cost diverges for this control")
    return val


def compensator(control: Control, params: ModelParams) -> float:
    """``int (g - 1) d nu_T``."""
    return control.integrate(params, "g-1")


# ------------------------------------------------------------------------ sampling


def _source_events(rng, src, T, epsilon, n_paths, envelope=None):
    """Candidate events of one source for ``n_paths`` independent paths."""
    if envelope is None:
        scale, tilt, mass = 1.0, 0.0, 1.0
    else:
        scale, tilt = envelope
        mass = float(src.marks.mgf(tilt))
    rate = src.f * scale * mass / epsilon
    counts = rng.poisson(rate * T, size=n_paths)
    total = int(counts.sum())
    t = rng.uniform(0.0, T, size=total)
    a = src.marks.sample_tilted(rng, total, tilt) if tilt != 0.0 else src.marks.sample(rng, total)
    owner = np.repeat(np.arange(n_paths), counts)
    return owner, t, a, scale, tilt


def sample_batch(params: ModelParams, epsilon: float, T: float, n_paths: int, rng,
                 control: Control | None = None):
    """Events for ``n_paths`` paths as flat arrays ``(path, t, i, a)`` sorted by path then time.

    With ``control`` the events are thinned from a dominating process whose
    intensity is ``eps^{-1} n exp(t a) f_i F_i(da) ds``; each candidate is kept
    with probability ``g / (n exp(t a))``.
    """
    if not epsilon > 0 or not T > 0:
        raise ValueError("need epsilon > 0 and T > 0")
    parts = []
    for i, src in enumerate(params.sources):
        env = None if control is None else control.envelope(i, src.marks)
        owner, t, a, scale, tilt = _source_events(rng, src, T, epsilon, n_paths, env)
        if control is not None:
            u = rng.random(t.size)
            g = control(t, i, a)
            if np.any(g > scale * np.exp(tilt * a) * (1 + 1e-12)):
                raise ValueError("control exceeds its declared envelope")
            keep = u * scale * np.exp(tilt * a) < g
            owner, t, a = owner[keep], t[keep], a[keep]
        parts.append((owner, t, np.full(t.size, i), a))
    if not parts:
        e = np.empty(0)
        return e.astype(int), e, e.astype(int), e
    owner = np.concatenate([p[0] for p in parts])
    t = np.concatenate([p[1] for p in parts])
    i = np.concatenate([p[2] for p in parts])
    a = np.concatenate([p[3] for p in parts])
    order = np.lexsort((t, owner))
    return owner[order], t[order], i[order], a[order]


def sample_prm(params: ModelParams, epsilon: float, T: float, seed) -> JumpPath:
    """Nominal path: per source a Poisson process of rate ``f_i / eps`` with i.i.d. marks."""
    _, t, i, a = sample_batch(params, epsilon, T, 1, stream(seed))
    return JumpPath(t, i, a, T, epsilon)


def sample_controlled_prm(control: Control, params: ModelParams, epsilon: float, T: float, seed) -> JumpPath:
    """Path with intensity ``eps^{-1} g(s, i, a) f_i F_i(da) ds``, by thinning."""
    if abs(control.horizon - T) > 1e-12 * max(1.0, T):
        raise ValueError("control horizon does not match T")
    _, t, i, a = sample_batch(params, epsilon, T, 1, stream(seed), control)
    return JumpPath(t, i, a, T, epsilon)


def girsanov_log_weight(path: JumpPath, control: Control, params: ModelParams,
                        epsilon: float, T: float | None = None, comp: float | None = None) -> float:
    """``log dP/dQ`` on a path sampled under the ``g``-tilted law.

    Equals ``-sum_k log g(t_k, i_k, a_k) + eps^{-1} int (g - 1) d nu_T``; the
    weighted average of any path functional under the tilted law estimates
    its nominal expectation. ``comp`` may pass a precomputed compensator.
    """
    g = control(path.t, path.i, path.a) if len(path) else np.empty(0)
    if np.any(g <= 0):
        raise ValueError("control vanishes at an event; weight undefined")
    comp = compensator(control, params) if comp is None else comp
    return float(-np.sum(np.log(g)) + comp / epsilon)


# ------------------------------------------------------------- inequality suite


@dataclass
class InequalityReport:
    young_violations: int
    young_max_excess: float
    c1_envelope: float
    c2_envelope: float
    n_triples: int
    grids: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.young_violations == 0 and math.isfinite(self.c1_envelope) and math.isfinite(self.c2_envelope)


def entropy_inequalities(n_triples: int = 10_000, seed: int = 0) -> InequalityReport:
    """Check ``a b <= exp(sigma a) + l(b) / sigma`` on random triples and
    measure envelopes ``sup |x-1| / l(x)`` on ``{0} U [2, 100]`` and
    ``sup |x-1|^2 / l(x)`` on ``[0, 2]``.

    The first bound needs ``sigma >= 1``: its sharp form is
    ``a b <= (exp(sigma a) - 1) / sigma + l(b) / sigma``, and for ``sigma < 1``
    the right side of the sharp form can exceed ``exp(sigma a)``
    (``a = 5, sigma = 1/2, b = e^{5/2}`` is a counterexample). Triples are
    drawn with ``sigma`` log-uniform on ``[1, e^3]``.
    """
    rng = stream(seed)
    a = np.exp(rng.uniform(-5, 3, n_triples))
    b = np.exp(rng.uniform(-5, 5, n_triples))
    sig = np.exp(rng.uniform(0, 3, n_triples))
    rhs = np.exp(sig * a) + entropy_l(b) / sig
    excess = a * b - rhs
    tol = 1e-12 * np.maximum(1.0, np.abs(rhs))
    x1 = np.concatenate([[0.0], np.linspace(2.0, 100.0, 9801)])
    c1 = float(np.max(np.abs(x1 - 1.0) / entropy_l(x1)))
    x2 = np.linspace(0.0, 2.0, 20001)
    x2 = x2[np.abs(x2 - 1.0) > 1e-6]
    c2 = float(np.max((x2 - 1.0) ** 2 / entropy_l(x2)))
    return InequalityReport(
        young_violations=int(np.sum(excess > tol)),
        young_max_excess=float(np.max(excess)),
        c1_envelope=c1,
        c2_envelope=c2,
        n_triples=n_triples,
        grids={"c1": "{0} U linspace(2, 100, 9801)", "c2": "linspace(0, 2, 20001) minus |x-1|<=1e-6",
               "sigma": "log-uniform on [1, e^3]"},
    )
