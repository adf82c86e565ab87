"""Sample paths of the small-noise equation and solutions of the skeleton equation.

States are spectral coordinate vectors of length ``d + 1``. For the reservoir
model the drift is ``A(u) = -Lambda u + q`` with ``Lambda = diag(alpha + lambda_j)``
and ``q = sum_i a_i f_i K_i``. The compensator of ``eps * N^{1/eps}`` is
``int G d nu = q``, so between jumps a noisy path simply decays:

    u_j(t) = exp(-Lambda_j t) u_j(0) + eps * sum_{t_k <= t} a_k K[i_k, j] exp(-Lambda_j (t - t_k)).

Averaging the jump sum gives back the relaxation toward the steady state.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientOperator, PollutantCoefficients
from .prm import Control, JumpPath, sample_controlled_prm, sample_prm
from .spectral import ModelParams, decay_rates, sobolev_inner, sobolev_norm_sq, source_kernel, synthesize

RESONANCE_TOL = 1e-12


class ConvergenceError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class BlowUpError(RuntimeError):
    pass


@dataclass
class PathGrid:
    """States on a time grid, plus the jump realization that produced them (if any)."""

    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)
    jumps: JumpPath | None = None
    jump_states: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.states.shape[0] != self.times.size or self.states.ndim != 2:
            raise ValueError("states must have shape (len(times), d + 1)")

    @property
    def d(self) -> int:
        return self.states.shape[1] - 1

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} not on grid")
        return self.states[k]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time"] + [f"mode_{j}" for j in range(self.d + 1)])
            for t, row in zip(self.times, self.states):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])

    def physical_to_csv(self, path, x, params: ModelParams) -> None:
        """Write ``u(t, x)`` on the grid ``x`` (columns ``time, x_0..``)."""
        x = np.asarray(x, dtype=float)
        values = synthesize(self.states, x, params)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time"] + [f"x={xv:.17g}" for xv in x])
            for t, row in zip(self.times, values):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def _time_grid(T, grid):
    if np.ndim(grid) == 0:
        n = int(grid)
        if n < 1:
            raise ValueError("grid needs at least one step")
        return np.linspace(0.0, T, n + 1)
    times = np.asarray(grid, dtype=float)
    if times[0] != 0.0 or abs(times[-1] - T) > 1e-12 * max(1.0, T) or np.any(np.diff(times) <= 0):
        raise ValueError("grid must increase from 0 to T")
    return times


def _phi_kernel(rate, t):
    """``(1 - exp(-rate t)) / rate`` with the ``t`` limit for vanishing rate."""
    rate = np.asarray(rate, dtype=float)
    small = rate < RESONANCE_TOL
    safe = np.where(small, 1.0, rate)
    return np.where(small, t, -np.expm1(-safe * t) / safe)


# --------------------------------------------------------------------- steady state


def steady_state(params: ModelParams, d_modes: int) -> np.ndarray:
    """Coordinates ``u_j = sum_i a_i f_i K[i, j] / (alpha + lambda_j)`` of the stationary profile."""
    rates = decay_rates(d_modes, params)
    if not params.sources:
        return np.zeros(d_modes + 1)
    op = PollutantCoefficients(params, d_modes)
    q = op.source_term
    if params.alpha == 0.0 and abs(q[0]) > 0:
        raise ValueError(
            "no stationary profile: with alpha = 0 the constant mode has zero decay "
            "rate but receives a positive mean load, so it grows linearly"
        )
    out = np.zeros(d_modes + 1)
    nz = rates > RESONANCE_TOL
    out[nz] = q[nz] / rates[nz]
    return out


# ------------------------------------------------------------------ noisy dynamics


def _check_noiseless(epsilon, jumps):
    """``epsilon = 0`` removes the noise term, compensator included."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if epsilon == 0:
        if jumps is not None and len(jumps):
            raise ValueError("epsilon = 0 admits no jumps")
        return True
    return False


def simulate_exact(params: ModelParams, epsilon: float, u0, T: float, grid, seed=None,
                   jumps: JumpPath | None = None, control: Control | None = None) -> PathGrid:
    """Exact path of the reservoir model at the grid times.

    Each grid value is computed directly from ``u0`` and the events with
    ``t_k <= t`` (events are added in time order), so values at a common time
    do not depend on the rest of the grid.
    """
    u0 = np.asarray(u0, dtype=float)
    d = u0.size - 1
    times = _time_grid(T, grid)
    noiseless = _check_noiseless(epsilon, jumps)
    if noiseless:
        jumps = JumpPath.empty(T, 0.0)
    elif jumps is None:
        jumps = (sample_prm(params, epsilon, T, seed) if control is None
                 else sample_controlled_prm(control, params, epsilon, T, seed))
    rates = decay_rates(d, params)
    K = source_kernel(params, d)
    q = PollutantCoefficients(params, d).source_term if noiseless else None

    def evaluate(at, strict):
        at = np.asarray(at, dtype=float)
        acc = np.exp(-np.outer(at, rates)) * u0
        if noiseless:
            acc = acc + _phi_kernel(rates, at[:, None]) * q
        for tk, ik, ak in zip(jumps.t, jumps.i, jumps.a):
            lag = at - tk
            active = (lag > 0) if strict else (lag >= 0)
            contrib = epsilon * ak * K[ik] * np.exp(-np.outer(np.maximum(lag, 0.0), rates))
            acc = acc + np.where(active[:, None], contrib, 0.0)
        return acc

    states = evaluate(times, strict=False)
    pre = evaluate(jumps.t, strict=True) if len(jumps) else np.empty((0, d + 1))
    return PathGrid(times, states, {"integrator": "exact", "epsilon": epsilon, "seed": seed},
                    jumps, pre)


def simulate_euler(op: CoefficientOperator, epsilon: float, u0, T: float, dt: float, seed=None,
                   jumps: JumpPath | None = None, control: Control | None = None,
                   blowup: float = 1e12) -> PathGrid:
    """Explicit Euler for the drift and compensator, jumps applied at their exact times.

    The step from ``t_n`` to ``t_{n+1}`` is split at every event inside it;
    the compensator ``int G nu`` is evaluated on the same sub-steps.
    """
    if not dt > 0 or dt > T:
        raise ValueError("need 0 < dt <= T")
    u0 = np.asarray(u0, dtype=float)
    noiseless = _check_noiseless(epsilon, jumps)
    if noiseless:
        jumps = JumpPath.empty(T, 0.0)
    elif jumps is None:
        params = op.params
        if params is None:
            raise ValueError("operator without model parameters needs an explicit jump path")
        jumps = (sample_prm(params, epsilon, T, seed) if control is None
                 else sample_controlled_prm(control, params, epsilon, T, seed))
    n = int(math.ceil(T / dt - 1e-9))
    times = np.minimum(np.arange(n + 1) * dt, T)
    times[-1] = T
    states = np.empty((n + 1, u0.size))
    states[0] = u0
    pre = np.empty((len(jumps), u0.size))
    u = u0.copy()
    t = 0.0
    k = 0

    def advance(u, t, h):
        if noiseless:
            return u + h * op.drift(t, u)
        return u + h * (op.drift(t, u) - op.expected_jump(t, u))

    for step in range(1, n + 1):
        t_next = times[step]
        while k < len(jumps) and jumps.t[k] <= t_next:
            tk = jumps.t[k]
            if tk > t:
                u = advance(u, t, tk - t)
                t = tk
            pre[k] = u
            u = u + epsilon * op.jump(t, u, int(jumps.i[k]), jumps.a[k])
            k += 1
        if t_next > t:
            u = advance(u, t, t_next - t)
            t = t_next
        if not np.all(np.isfinite(u)) or np.linalg.norm(u) > blowup:
            raise BlowUpError(f"state norm exceeded {blowup:g} at t={t:g}; reduce dt")
        states[step] = u
    return PathGrid(times, states, {"integrator": "euler", "epsilon": epsilon, "seed": seed, "dt": dt},
                    jumps, pre)


# ------------------------------------------------------------------------ skeleton


def _trapezoid_cumulative(f, times, start):
    """``start + cumulative trapezoid of f`` along the first axis."""
    h = np.diff(times)[:, None]
    incr = 0.5 * h * (f[1:] + f[:-1])
    out = np.empty_like(f)
    out[0] = start
    out[1:] = start + np.cumsum(incr, axis=0)
    return out


def _jump_forcing(op, control, times, states):
    """``int G(t, x, v) (g(t, v) - 1) nu(dv)`` at the grid times."""
    return op.expected_jump(times, states, weight=control.forcing_weight)


def _gronwall_bound(op, x0, forcing_sup_integral, T):
    kappa = op.growth_constant()
    expo = kappa * (forcing_sup_integral + T)
    log_bound = math.log(np.linalg.norm(x0) + kappa * (forcing_sup_integral + T)) + expo
    return math.exp(log_bound) if log_bound < 700 else math.inf


def solve_skeleton_picard(control: Control, op: CoefficientOperator, u0, T: float, d_modes: int,
                          dt: float, tol: float = 1e-12, max_iter: int = 500,
                          initial: str = "constant", window: float | None = None) -> PathGrid:
    """Galerkin-truncated skeleton equation solved by Picard iteration.

    The map ``x -> u0 + int A(x) ds + int int G(x, v) (g - 1) nu(dv) ds`` is
    iterated with trapezoidal time integrals. To keep intermediate iterates
    bounded for stiff modes the horizon is marched in windows on which the
    drift is a contraction (``L * window <= 1/2``); inside each window the
    iteration is plain and undamped. When ``dt`` exceeds the window the
    step is subdivided internally and the result reported on the ``dt``
    grid. ``initial`` picks the starting iterate
    of every window: ``"constant"`` (state at window start) or ``"zero"``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    op = op.restrict(d_modes)
    u0 = np.asarray(u0, dtype=float)[: d_modes + 1]
    if u0.size < d_modes + 1:
        u0 = np.pad(u0, (0, d_modes + 1 - u0.size))
    n_out = int(math.ceil(T / dt - 1e-9))
    if window is None:
        L = max(op.lipschitz(u0), 1e-12)
        window = 0.5 / L
    # a trapezoid step longer than the window cannot contract; subdivide
    sub = max(1, int(math.ceil((T / n_out) / window - 1e-9)))
    n = n_out * sub
    times = np.linspace(0.0, T, n + 1)
    steps_per_window = max(1, int(window / (T / n)))
    states = np.empty((n + 1, d_modes + 1))
    states[0] = u0
    precomputed = None
    if op.state_free_jump:
        precomputed = _jump_forcing(op, control, times, np.zeros((n + 1, d_modes + 1)))
    total_iter, worst, history = 0, 0.0, []
    for start in range(0, n, steps_per_window):
        stop = min(n, start + steps_per_window)
        tw = times[start:stop + 1]
        x0 = states[start]
        x = np.broadcast_to(x0, (tw.size, d_modes + 1)).copy()
        if initial == "zero":
            x[1:] = 0.0
        elif initial != "constant":
            raise ValueError("initial must be 'constant' or 'zero'")
        for it in range(1, max_iter + 1):
            force = precomputed[start:stop + 1] if precomputed is not None else _jump_forcing(op, control, tw, x)
            rhs = op.drift(tw[:, None], x) + force
            new = _trapezoid_cumulative(rhs, tw, x0)
            gap = float(np.max(np.abs(new - x)))
            x = new
            if gap < tol:
                break
        else:
            history.append(gap)
            raise ConvergenceError(
                f"Picard iteration did not converge on [{tw[0]:g}, {tw[-1]:g}] "
                f"after {max_iter} iterations (last gap {gap:.3e})", history)
        total_iter += it
        worst = max(worst, gap)
        history.append(gap)
        states[start + 1:stop + 1] = x[1:]
    force = precomputed if precomputed is not None else _jump_forcing(op, control, times, states)
    sup_force = float(np.sum(0.5 * np.diff(times) * (np.linalg.norm(force[1:], axis=1)
                                                     + np.linalg.norm(force[:-1], axis=1))))
    bound = _gronwall_bound(op, u0, sup_force, T)
    sup_norm = float(np.max(np.linalg.norm(states, axis=1)))
    if not sup_norm <= bound:
        raise ConvergenceError(f"solution norm {sup_norm} exceeds the a-priori bound {bound}")
    meta = {"integrator": "picard", "iterations": total_iter, "residual": worst,
            "windows": len(history), "sup_norm": sup_norm, "gronwall_bound": bound,
            "dt": T / n_out, "substeps": sub, "d_modes": d_modes}
    return PathGrid(times[::sub], states[::sub], meta)


def _mean_tilted_mark(control, i, marks, s):
    return control.mark_moments(s, i, marks)[1]


def skeleton_closed_form(control: Control, params: ModelParams, T: float, grid, d_modes: int,
                         u0=None, substeps: int = 8) -> PathGrid:
    """Skeleton path started from the steady state, via its explicit mode formula

        u_j(t) = exp(-Lambda_j t) u0_j + sum_i f_i K[i, j] int_0^t exp(-Lambda_j (t - s)) E_{F_i}[a g(s, i, a)] ds.

    The mark expectation is closed-form for every shipped control; the time
    integral is exact per grid interval for constant controls and uses
    Gauss-Legendre panels no wider than ``1 / max Lambda`` otherwise.
    """
    times = _time_grid(T, grid)
    ss = steady_state(params, d_modes)
    if u0 is not None:
        u0 = np.asarray(u0, dtype=float)
        if u0.shape != ss.shape or np.max(np.abs(u0 - ss)) > 1e-10 * max(1.0, np.max(np.abs(ss))):
            raise ValueError("closed form assumes the steady state as initial value; use solve_skeleton_picard")
    rates = decay_rates(d_modes, params)
    K = source_kernel(params, d_modes)
    states = np.empty((times.size, d_modes + 1))
    states[0] = ss
    integral = np.zeros(d_modes + 1)
    xg, wg = np.polynomial.legendre.leggauss(substeps)
    from .prm import Constant
    for n in range(1, times.size):
        t0, t1 = times[n - 1], times[n]
        h = t1 - t0
        integral = integral * np.exp(-rates * h)
        if isinstance(control, Constant):
            for i, src in enumerate(params.sources):
                integral += src.f * K[i] * control.theta * src.marks.mean * _phi_kernel(rates, h)
        else:
            m = max(1, int(math.ceil(h * max(float(rates.max()), 1.0))))
            edges = np.linspace(t0, t1, m + 1)
            mid = 0.5 * (edges[1:] + edges[:-1])
            half = 0.5 * (edges[1] - edges[0])
            s = (mid[:, None] + half * xg[None, :]).ravel()
            w = np.tile(half * wg, m)
            decay = np.exp(-np.outer(t1 - s, rates)) * w[:, None]
            for i, src in enumerate(params.sources):
                mean_ag = _mean_tilted_mark(control, i, src.marks, s)
                integral += src.f * K[i] * (mean_ag @ decay)
        states[n] = np.exp(-rates * t1) * ss + integral
    return PathGrid(times, states, {"integrator": "closed-form", "d_modes": d_modes})


# -------------------------------------------------------------- energy diagnostic


def energy_residual(path: PathGrid, jumps: JumpPath | None, op: CoefficientOperator,
                    epsilon: float, p: float = 1) -> float:
    """Sup over grid times of the mismatch in the squared-norm balance

        ||X_t||^2 = ||X_0||^2 + 2 int A(X)[theta_p X] ds - 2 int <int G nu, X> ds
                    + sum_{t_k <= t} (eps^2 ||G_k||^2 + 2 eps <G_k, X_{t_k-}>)

    in ``Phi_{-p}``. Time integrals use the trapezoid rule on the path grid;
    the jump sum uses the pre-jump states stored with the path. The balance is
    the same under any intensity control, so controlled paths qualify too.
    """
    jumps = path.jumps if jumps is None else jumps
    if jumps is None:
        raise ValueError("path carries no jump realization")
    if path.jumps is not None and jumps is not path.jumps:
        same = (len(jumps) == len(path.jumps) and np.array_equal(jumps.t, path.jumps.t)
                and np.array_equal(jumps.a, path.jumps.a))
        if not same:
            raise ValueError("jump path does not match the one that produced this path")
    if path.jump_states is None or len(path.jump_states) != len(jumps):
        raise ValueError("path lacks pre-jump states for its jump realization")
    if path.times.size == 1:
        return 0.0
    params = op.params
    times, X = path.times, path.states

    def inner(u, v):
        return sobolev_inner(u, v, -p, params) if params is not None else np.sum(u * v, axis=-1)

    drift = op.drift(times[:, None], X)
    comp = op.expected_jump(times, X) if epsilon > 0 else np.zeros_like(X)
    integrand = 2.0 * inner(drift, X) - 2.0 * inner(comp, X)
    smooth = _trapezoid_cumulative(integrand[:, None], times, 0.0)[:, 0]
    jump_terms = np.empty(len(jumps))
    for k, (tk, ik, ak) in enumerate(zip(jumps.t, jumps.i, jumps.a)):
        G = epsilon * op.jump(tk, path.jump_states[k], int(ik), ak)
        jump_terms[k] = inner(G, G) + 2.0 * inner(G, path.jump_states[k])
    idx = np.searchsorted(times, jumps.t, side="left")
    jump_cum = np.zeros(times.size)
    np.add.at(jump_cum, idx, jump_terms)
    jump_cum = np.cumsum(jump_cum)
    lhs = inner(X, X)
    rhs = inner(X[0], X[0]) + smooth + jump_cum
    return float(np.max(np.abs(lhs - rhs)))


def sup_distance(a: PathGrid, b: PathGrid, n: float | None = None, params: ModelParams | None = None) -> float:
    """Sup over common grid times of the coordinate max-gap (or of the ``||.||_n`` norm)."""
    if a.times.size != b.times.size or np.max(np.abs(a.times - b.times)) > 1e-12:
        raise ValueError("paths live on different grids")
    d = max(a.d, b.d)
    sa = np.pad(a.states, ((0, 0), (0, d - a.d)))
    sb = np.pad(b.states, ((0, 0), (0, d - b.d)))
    diff = sa - sb
    if n is None:
        return float(np.max(np.abs(diff)))
    return float(np.sqrt(np.max(sobolev_norm_sq(diff, n, params))))
