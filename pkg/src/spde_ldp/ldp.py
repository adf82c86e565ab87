"""Rate function of endpoint events and rare-event estimators.

An endpoint event asks whether ``u_T[psi] = sum_j u_j(T) psi_j`` crosses a
level. Started from ``u0``, the skeleton endpoint is affine in the control:

    u_T^g[psi] = u_T^1[psi] + int h (g - 1) d nu_T,
    h(s, i, a) = a * H_i(s),   H_i(s) = sum_j exp(-Lambda_j (T - s)) K[i, j] psi_j,

so the rate is the entropy cost of the cheapest ``g`` meeting one linear
constraint. Pointwise stationarity of the Lagrangian gives ``g = exp(beta h)``
with a scalar ``beta`` fixed by the constraint. Two independent solvers are
provided: a one-dimensional root find on ``beta`` using closed-form mark
integrals and adaptive time quadrature, and a Newton solver for the
discretized program on a tensor grid of quadrature cells that does not
assume the exponential form.

The same kernel gives the exact noisy endpoint,
``u_T^eps[psi] = sum_j exp(-Lambda_j T) u0_j psi_j + eps * sum_k h(t_k, i_k, a_k)``,
which the estimators use directly.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, stats

from .dynamics import _phi_kernel, simulate_exact, steady_state
from .prm import (
    QUAD_OPTS,
    Constant,
    Control,
    ExponentialTilt,
    JumpPath,
    compensator,
    entropy_l,
    sample_batch,
    stream,
)
from .spectral import DEFAULT_MODES, ModelParams, decay_rates, source_kernel

log = logging.getLogger(__name__)

REACH_BOUND = 1e6
CHUNK = 4096


@dataclass(frozen=True)
class EndpointEvent:
    """``{u_T[test] >= level}`` (or ``<=``) at horizon ``T``."""

    test: np.ndarray
    level: float
    direction: str = ">="
    horizon: float = 1.0

    def __post_init__(self):
        test = np.asarray(self.test, dtype=float)
        if not np.any(test != 0):
            raise ValueError("test functional must be nonzero")
        if self.direction not in (">=", "<="):
            raise ValueError("direction must be '>=' or '<='")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "test", test)

    def occurs(self, value):
        return value >= self.level if self.direction == ">=" else value <= self.level


class EndpointKernel:
    """``H_i(s)`` for an endpoint event; ``h(s, i, a) = a H_i(s)``."""

    def __init__(self, event: EndpointEvent, params: ModelParams, d_modes: int = DEFAULT_MODES, u0=None):
        self.params = params
        self.T = event.horizon
        self.d = d_modes
        psi = np.zeros(d_modes + 1)
        n = min(event.test.size, d_modes + 1)
        psi[:n] = event.test[:n]
        self.psi = psi
        rates = decay_rates(d_modes, params)
        K = source_kernel(params, d_modes)
        coef = K * psi
        if event.test.size > d_modes + 1:
            K_full = source_kernel(params, event.test.size - 1)
            self.tail = float(np.max(np.sum(np.abs(K_full[:, d_modes + 1:] * event.test[d_modes + 1:]), axis=1),
                                     initial=0.0))
        else:
            self.tail = 0.0
        active = np.any(coef != 0, axis=0)
        self.rates = rates[active]
        self.coef = coef[:, active]
        self.u0 = steady_state(params, d_modes) if u0 is None else np.asarray(u0, dtype=float)[: d_modes + 1]
        self.base = float(np.sum(np.exp(-rates * self.T) * self.u0 * psi))

    def time_factor(self, s, i: int):
        s = np.asarray(s, dtype=float)
        lag = self.T - s
        return np.exp(-lag[..., None] * self.rates) @ self.coef[i]

    def __call__(self, s, i, a):
        s, i, a = np.broadcast_arrays(np.asarray(s, float), np.asarray(i, int), np.asarray(a, float))
        out = np.empty(s.shape)
        for src in np.unique(i):
            m = i == src
            out[m] = a[m] * self.time_factor(s[m], int(src))
        return out

    def bound(self, i: int) -> float:
        return float(np.sum(np.abs(self.coef[i])))

    def breakpoints(self, T):
        fast = self.rates[self.rates * T > 20.0]
        if fast.size == 0:
            return None
        pts = T - np.unique(np.concatenate([1.0 / fast, 10.0 / fast]))
        return np.sort(pts[(pts > 0) & (pts < T)])[:40]

    def integral(self, i: int) -> float:
        """``int_0^T H_i(s) ds``."""
        return float(np.sum(self.coef[i] * _phi_kernel(self.rates, self.T)))

    def integral_abs(self, i: int, sign: int) -> float:
        """``int_0^T max(sign * H_i, 0) ds``."""
        fn = lambda s: max(sign * float(self.time_factor(np.array([s]), i)[0]), 0.0)
        return integrate.quad(fn, 0.0, self.T, points=self.breakpoints(self.T), **QUAD_OPTS)[0]

    def nominal(self) -> float:
        """Skeleton endpoint under the nominal intensity ``g = 1``."""
        return self.base + sum(src.f * src.marks.mean * self.integral(i)
                               for i, src in enumerate(self.params.sources))

    def endpoint(self, h_sum, epsilon):
        return self.base + epsilon * h_sum


def endpoint_kernel(event: EndpointEvent, params: ModelParams, d_modes: int = DEFAULT_MODES, u0=None) -> EndpointKernel:
    return EndpointKernel(event, params, d_modes, u0)


@dataclass
class RateResult:
    rate: float
    beta: float
    control: Control | None
    achieved_value: float
    nominal: float
    level: float
    attainable: bool = True
    method: str = "dual"
    diagnostics: dict = field(default_factory=dict)

    def to_report(self) -> dict:
        """Plain report; the control is an exponential tilt ``exp(beta * a * H_i(s))``."""
        kernel = getattr(self.control, "kernel", None)
        ctrl = None
        if isinstance(self.control, ExponentialTilt) and kernel is not None:
            ctrl = {"type": "exponential_tilt", "beta": self.beta, "horizon": self.control.horizon,
                    "kernel_rates": kernel.rates.tolist(), "kernel_coefficients": kernel.coef.tolist()}
        elif isinstance(self.control, Constant):
            ctrl = {"type": "constant", "theta": self.control.theta, "horizon": self.control.horizon}
        diag = {k: v for k, v in self.diagnostics.items() if isinstance(v, (int, float, str, bool))}
        return {"method": self.method, "attainable": self.attainable,
                "rate": self.rate if math.isfinite(self.rate) else "inf",
                "beta": self.beta, "level": self.level, "nominal": self.nominal,
                "achieved_value": self.achieved_value, "control": ctrl, "diagnostics": diag}


def _moment_integrals(kernel: EndpointKernel, beta: float):
    """``(int h (e^{beta h} - 1) d nu, int h^2 e^{beta h} d nu, int l(e^{beta h}) d nu)``."""
    out = np.zeros(3)
    pts = kernel.breakpoints(kernel.T)
    for i, src in enumerate(kernel.params.sources):
        m = src.marks

        def shift(s):
            H = float(kernel.time_factor(np.array([s]), i)[0])
            return H * (float(m.mgf_d1(beta * H)) - m.mean)

        def curv(s):
            H = float(kernel.time_factor(np.array([s]), i)[0])
            return H * H * float(m.mgf_d2(beta * H))

        def cost(s):
            x = beta * float(kernel.time_factor(np.array([s]), i)[0])
            return x * float(m.mgf_d1(x)) - float(m.mgf(x)) + 1.0

        for k, fn in enumerate((shift, curv, cost)):
            out[k] += src.f * integrate.quad(fn, 0.0, kernel.T, points=pts, **QUAD_OPTS)[0]
    return out


def reachable_interval(kernel: EndpointKernel, bound: float = REACH_BOUND):
    """Range of ``int h (g - 1) d nu`` over controls with values in ``[1/bound, bound]``."""
    pos = sum(s.f * s.marks.mean * kernel.integral_abs(i, +1) for i, s in enumerate(kernel.params.sources))
    neg = sum(s.f * s.marks.mean * kernel.integral_abs(i, -1) for i, s in enumerate(kernel.params.sources))
    lo = -(1.0 - 1.0 / bound) * pos - (bound - 1.0) * neg
    hi = (bound - 1.0) * pos + (1.0 - 1.0 / bound) * neg
    return lo, hi


def _target_shift(event, nominal):
    """Constraint level for the event, or ``None`` when the nominal path already lies inside it."""
    if event.occurs(nominal):
        return None
    return event.level - nominal


def rate_endpoint_dual(event: EndpointEvent, params: ModelParams, T: float | None = None,
                       d_modes: int = DEFAULT_MODES, tol: float = 1e-12, u0=None) -> RateResult:
    """Rate of an endpoint event by a monotone root find on the tilt multiplier."""
    T = event.horizon if T is None else T
    if abs(T - event.horizon) > 1e-12 * max(1.0, T):
        raise ValueError("T must equal the event horizon")
    kernel = EndpointKernel(event, params, d_modes, u0)
    nominal = kernel.nominal()
    shift = _target_shift(event, nominal)
    diag = {"truncation_tail": kernel.tail, "d_modes": d_modes}
    if shift is None:
        return RateResult(0.0, 0.0, ExponentialTilt(0.0, kernel, T), nominal, nominal, event.level,
                          diagnostics={**diag, "evaluations": 0})
    lo, hi = reachable_interval(kernel)
    diag.update({"reachable_lo": lo, "reachable_hi": hi})
    if not lo < shift < hi:
        return RateResult(math.inf, math.nan, None, math.nan, nominal, event.level, attainable=False,
                          diagnostics=diag)
    calls = [0]

    def F(beta):
        calls[0] += 1
        return _moment_integrals(kernel, beta)[0] - shift

    sign = 1.0 if shift > 0 else -1.0
    a, b = 0.0, sign
    fb = F(b)
    while fb * sign < 0:
        a, b = b, 2.0 * b
        if abs(b) > 1e4:
            raise RuntimeError(f"could not bracket the multiplier (|beta| > 1e4, residual {fb:.3e})")
        fb = F(b)
    lo_b, hi_b = sorted((a, b))
    beta = optimize.brentq(F, lo_b, hi_b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    moments = _moment_integrals(kernel, beta)
    # one Newton polish on the constraint
    if moments[1] > 0:
        beta -= (moments[0] - shift) / moments[1]
        moments = _moment_integrals(kernel, beta)
    residual = moments[0] - shift
    if abs(residual) > max(tol, 1e-12 * abs(shift)) * 10:
        raise RuntimeError(f"constraint residual {residual:.3e} above tolerance")
    diag.update({"evaluations": calls[0], "constraint_residual": residual,
                 "curvature": moments[1]})
    control = ExponentialTilt(beta, kernel, T)
    return RateResult(float(moments[2]), float(beta), control, nominal + moments[0], nominal,
                      event.level, diagnostics=diag)


def _grid_cells(kernel: EndpointKernel, time_bins: int, mark_bins: int):
    xt, wt = np.polynomial.legendre.leggauss(time_bins)
    s = 0.5 * kernel.T * (xt + 1.0)
    ws = 0.5 * kernel.T * wt
    h, w = [], []
    for i, src in enumerate(kernel.params.sources):
        a, wa = src.marks.quadrature(mark_bins)
        H = kernel.time_factor(s, i)
        h.append(np.outer(H, a).ravel())
        w.append(src.f * np.outer(ws, wa).ravel())
    return np.concatenate(h), np.concatenate(w)


def _newton_entropy(h, w, shift, tol, max_iter=500):
    """Minimize ``sum w l(g)`` subject to ``sum w h (g - 1) = shift`` over ``g > 0``."""
    g = np.ones_like(h)
    wh = w * h
    target = shift + np.sum(wh)
    for it in range(1, max_iter + 1):
        lg = np.log(g)
        r = target - np.dot(wh, g)
        mu = -(r + np.dot(wh * g, lg)) / np.dot(wh * h, g)
        dg = -g * (lg + h * mu)
        neg = dg < 0
        step = 1.0
        if np.any(neg):
            step = min(1.0, 0.9 * float(np.min(g[neg] / -dg[neg])))
        g = g + step * dg
        if step == 1.0 and np.max(np.abs(dg) / g) < 1e-14 and abs(r) <= tol:
            break
    else:
        raise RuntimeError("Newton iteration for the discretized program did not converge")
    r = target - np.dot(wh, g)
    return g, -mu, it, r


def rate_endpoint_grid(event: EndpointEvent, params: ModelParams, T: float | None = None,
                       time_bins: int = 64, mark_bins: int = 64, tol: float = 1e-13,
                       d_modes: int = DEFAULT_MODES, u0=None) -> RateResult:
    """Rate of an endpoint event from the discretized convex program.

    Cells are the nodes of a tensor quadrature rule (Gauss-Legendre in time,
    the mark law's own rule in the mark; a point mass has one mark cell).
    The objective ``sum w l(g)`` is minimized under the linear constraint by
    a Newton iteration with a positivity-preserving step.
    """
    T = event.horizon if T is None else T
    if time_bins < 2 or mark_bins < 2:
        raise ValueError("need at least two bins per axis")
    kernel = EndpointKernel(event, params, d_modes, u0)
    h, w = _grid_cells(kernel, time_bins, mark_bins)
    nominal = kernel.base + float(np.dot(w, h))
    shift = _target_shift(event, nominal)
    if shift is None:
        return RateResult(0.0, 0.0, ExponentialTilt(0.0, kernel, T), nominal, nominal, event.level,
                          method="grid", diagnostics={"iterations": 0, "kkt_max_deviation": 0.0,
                                                      "cells": h.size, "g_cells": np.ones_like(h)})
    pos = float(np.dot(w, np.maximum(h, 0.0)))
    neg = float(np.dot(w, np.maximum(-h, 0.0)))
    # with g > 0 unbounded the reachable shifts form the open interval (-pos - inf*neg, inf*pos + neg)
    lower = -pos if neg == 0.0 else -math.inf
    upper = neg if pos == 0.0 else math.inf
    if not lower < shift < upper:
        return RateResult(math.inf, math.nan, None, math.nan, nominal, event.level, attainable=False,
                          method="grid", diagnostics={"cells": h.size, "reason": "infeasible discretization"})
    g, beta_hat, it, r = _newton_entropy(h, w, shift, tol)
    mask = np.abs(h) > 1e-12 * np.max(np.abs(h))
    kkt = float(np.max(np.abs(np.log(g[mask]) - beta_hat * h[mask]))) if np.any(mask) else 0.0
    rate = float(np.dot(w, entropy_l(g)))
    diag = {"iterations": it, "kkt_max_deviation": kkt, "constraint_residual": r,
            "cells": h.size, "g_cells": g, "h_cells": h, "weights": w}
    return RateResult(rate, beta_hat, ExponentialTilt(beta_hat, kernel, T), nominal + shift - r, nominal,
                      event.level, method="grid", diagnostics=diag)


def saddlepoint_probability(rate: RateResult, epsilon: float) -> float:
    """Lugannani-Rice approximation of the event probability at noise level ``epsilon``.

    The noisy endpoint is ``base + eps * sum_k h(t_k, i_k, a_k)``, a compound
    Poisson sum with cumulant ``eps^{-1} int (e^{theta h} - 1) d nu``, whose
    saddle point is the rate multiplier ``beta``. With ``w = sign(beta) sqrt(2 I / eps)``
    and ``u = beta sqrt(V / eps)``, ``V = int h^2 e^{beta h} d nu``, the tail is
    ``Q(|w|) + phi(w) (1/|u| - 1/|w|)``. Its relative error is ``O(eps)``,
    so ``-eps log p`` is resolved to ``O(eps^2)``, well inside the prefactor
    term ``eps log(|beta| sqrt(2 pi V / eps))`` that separates it from ``I``.
    """
    if not rate.attainable:
        return 0.0
    if rate.rate == 0.0:
        return math.nan
    curv = rate.diagnostics.get("curvature")
    if curv is None:
        moments = _moment_integrals(rate.control.kernel, rate.beta)
        curv = moments[1]
    w = math.sqrt(2.0 * rate.rate / epsilon)
    u = abs(rate.beta) * math.sqrt(curv / epsilon)
    return float(stats.norm.sf(w) + stats.norm.pdf(w) * (1.0 / u - 1.0 / w))


# --------------------------------------------------------------------- estimators


@dataclass
class Estimate:
    p_hat: float
    std_err: float
    eps_log_p: float
    epsilon: float
    n_samples: int
    hits: int
    log_p_ci: tuple[float, float]
    mean_weight: float
    weight_std_err: float
    warning: str | None = None

    @property
    def rel_err(self) -> float:
        return self.std_err / self.p_hat if self.p_hat > 0 else math.inf


def _chunk_sizes(n, chunk):
    sizes = [chunk] * (n // chunk)
    if n % chunk:
        sizes.append(n % chunk)
    return sizes


def _endpoint_chunk(kernel, event, control, comp, params, epsilon, size, rng):
    owner, t, i, a = sample_batch(params, epsilon, event.horizon, size, rng, control)
    hs = np.bincount(owner, weights=kernel(t, i, a), minlength=size) if t.size else np.zeros(size)
    value = kernel.endpoint(hs, epsilon)
    g = control(t, i, a) if t.size else np.empty(0)
    logw = -np.bincount(owner, weights=np.log(g), minlength=size) + comp / epsilon if t.size \
        else np.full(size, comp / epsilon)
    wgt = np.exp(logw)
    y = np.where(event.occurs(value), wgt, 0.0)
    return (math.fsum(y), math.fsum(y * y), int(np.count_nonzero(y)), math.fsum(wgt), math.fsum(wgt * wgt))


def _predicate_chunk(kernel, event, control, comp, params, epsilon, size, rng, predicate, grid):
    ys, ws = [], []
    for _ in range(size):
        _, t, i, a = sample_batch(params, epsilon, event.horizon, 1, rng, control)
        jp = JumpPath(t, i, a, event.horizon, epsilon)
        path = simulate_exact(params, epsilon, kernel.u0, event.horizon, grid, jumps=jp)
        g = control(t, i, a) if t.size else np.empty(0)
        wgt = math.exp(-float(np.sum(np.log(g))) + comp / epsilon)
        ys.append(wgt if predicate(path) else 0.0)
        ws.append(wgt)
    y, wv = np.array(ys), np.array(ws)
    return (math.fsum(y), math.fsum(y * y), int(np.count_nonzero(y)), math.fsum(wv), math.fsum(wv * wv))


def estimate_is(event: EndpointEvent, control: Control, params: ModelParams, epsilon: float,
                n_samples: int, seed, d_modes: int = DEFAULT_MODES, u0=None, workers: int = 1,
                chunk: int = CHUNK, predicate=None, grid=100) -> Estimate:
    """Importance-sampling estimate of the event probability under ``control``.

    Paths are drawn with intensity ``eps^{-1} g f_i F_i`` and reweighted by the
    likelihood ratio. Samples are split into fixed chunks; chunk ``c`` uses
    random stream ``c`` of ``seed`` and the per-chunk sums are combined in
    chunk order, so the result does not depend on ``workers``. A ``predicate``
    on the simulated :class:`PathGrid` replaces the endpoint test when given.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    kernel = EndpointKernel(event, params, d_modes, u0)
    comp = compensator(control, params)
    sizes = _chunk_sizes(n_samples, chunk)

    def run(c):
        rng = stream(seed, c)
        if predicate is None:
            return _endpoint_chunk(kernel, event, control, comp, params, epsilon, sizes[c], rng)
        return _predicate_chunk(kernel, event, control, comp, params, epsilon, sizes[c], rng, predicate, grid)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(c) for c in range(len(sizes))]
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    hits = sum(p[2] for p in parts)
    w1 = math.fsum(p[3] for p in parts)
    w2 = math.fsum(p[4] for p in parts)
    n = n_samples
    p_hat = s1 / n
    var = max(s2 / n - p_hat**2, 0.0) * n / (n - 1)
    se = math.sqrt(var / n)
    wm = w1 / n
    wse = math.sqrt(max(w2 / n - wm**2, 0.0) * n / (n - 1) / n)
    warning = None
    if hits == 0:
        warning = "no sample hit the event; the control likely mis-targets it"
        log.warning(warning)
        return Estimate(0.0, 0.0, -math.inf, epsilon, n, 0, (-math.inf, -math.inf), wm, wse, warning)
    half = 1.96 * se / p_hat
    return Estimate(p_hat, se, epsilon * math.log(p_hat), epsilon, n, hits,
                    (math.log(p_hat) - half, math.log(p_hat) + half), wm, wse, warning)


def estimate_plain(event: EndpointEvent, params: ModelParams, epsilon: float, n_samples: int, seed,
                   d_modes: int = DEFAULT_MODES, u0=None, workers: int = 1, chunk: int = CHUNK,
                   predicate=None, grid=100) -> Estimate:
    """Plain Monte Carlo: the importance-sampling estimator with the identity control."""
    return estimate_is(event, Constant(1.0, event.horizon), params, epsilon, n_samples, seed,
                       d_modes, u0, workers, chunk, predicate, grid)


def ldp_diagnostic(event: EndpointEvent, params: ModelParams, epsilons, n_samples: int, seed,
                   d_modes: int = DEFAULT_MODES, u0=None, workers: int = 1, control: Control | None = None,
                   plain: bool = False, rate: RateResult | None = None) -> list[dict]:
    """Rows ``(epsilon, p_hat, std_err, -eps log p_hat, I, relative gap)`` per noise level."""
    rate = rate_endpoint_dual(event, params, d_modes=d_modes, u0=u0) if rate is None else rate
    if control is None and not plain:
        if rate.control is None:
            raise ValueError("event is unattainable; no optimal control to sample under")
        control = rate.control
    rows = []
    for eps in epsilons:
        if plain:
            est = estimate_plain(event, params, eps, n_samples, seed, d_modes, u0, workers)
        else:
            est = estimate_is(event, control, params, eps, n_samples, seed, d_modes, u0, workers)
        neg = -est.eps_log_p
        I = rate.rate
        gap = abs(neg - I) / I if I > 0 and math.isfinite(neg) else (abs(neg) if I == 0 else math.inf)
        lo, hi = est.log_p_ci
        rows.append({"epsilon": eps, "p_hat": est.p_hat, "std_err": est.std_err,
                     "neg_eps_log_p": neg, "rate": I, "gap": gap,
                     "neg_eps_log_p_lo": -eps * hi, "neg_eps_log_p_hi": -eps * lo,
                     "hits": est.hits, "n_samples": est.n_samples,
                     "p_saddle": saddlepoint_probability(rate, eps) if rate.rate > 0 else math.nan})
    return rows


TABLE_COLUMNS = ["epsilon", "p_hat", "std_err", "neg_eps_log_p", "rate", "gap"]


def write_table(rows, path, columns=TABLE_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([f"{float(row[c]):.17g}" for c in columns])


def write_control_table(result: RateResult, path, n_times: int = 101, n_marks: int = 11) -> None:
    """Optimal control on a grid: columns ``s, i, a, g``."""
    control = result.control
    params = control.kernel.params
    s = np.linspace(0.0, control.horizon, n_times)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "i", "a", "g"])
        for i, src in enumerate(params.sources):
            up = src.marks.upper if math.isfinite(src.marks.upper) else 4.0 * src.marks.mean
            marks = np.array([src.marks.mean]) if src.marks.upper == src.marks.mean else np.linspace(0.0, up, n_marks)
            for a in marks:
                g = control(s, i, a)
                for sv, gv in zip(s, g):
                    w.writerow([f"{sv:.17g}", i, f"{a:.17g}", f"{gv:.17g}"])
