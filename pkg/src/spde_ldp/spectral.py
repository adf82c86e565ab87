"""Eigen-system of the 1-D convection-diffusion operator and its Sobolev scale.

The operator ``L = D d^2/dx^2 - V d/dx`` on ``[0, ell]`` with Neumann boundary
conditions is self-adjoint in ``H = L^2([0, ell], rho)`` where
``rho(dx) = exp(-2 c x) dx`` and ``c = V / (2 D)``. Its eigenfunctions form an
orthonormal basis of ``H``; states are stored as their ``H``-coordinates
``u_j = <u, phi_j>``, ``j = 0..d``. Every norm and pairing below is written in
those coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .marks import MarkDistribution, mark_from_dict

DEFAULT_MODES = 64


@dataclass(frozen=True)
class SourceSpec:
    """A point source at ``kappa`` releasing marks ``marks`` at Poisson rate ``f``."""

    kappa: float
    f: float
    marks: MarkDistribution

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError(f"source rate must be positive, got {self.f}")

    def to_dict(self):
        return {"kappa": self.kappa, "f": self.f, "marks": self.marks.to_dict()}


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the reservoir model."""

    D: float
    V: float
    alpha: float
    ell: float
    sources: tuple[SourceSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.D > 0:
            raise ValueError(f"diffusion coefficient D must be positive, got {self.D}")
        if not self.ell > 0:
            raise ValueError(f"domain length ell must be positive, got {self.ell}")
        if not self.alpha >= 0:
            raise ValueError(f"dissipation rate alpha must be >= 0, got {self.alpha}")
        if not math.isfinite(self.c):
            raise ValueError("V / (2 D) must be finite")
        for s in self.sources:
            if not 0.0 <= s.kappa <= self.ell:
                raise ValueError(f"source location {s.kappa} outside [0, {self.ell}]")

    @property
    def c(self) -> float:
        return self.V / (2.0 * self.D)

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    def to_dict(self):
        return {"D": self.D, "V": self.V, "alpha": self.alpha, "ell": self.ell,
                "sources": [s.to_dict() for s in self.sources]}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        sources = tuple(
            SourceSpec(float(s["kappa"]), float(s["f"]), mark_from_dict(s["marks"]))
            for s in data.get("sources", [])
        )
        return cls(float(data["D"]), float(data.get("V", 0.0)), float(data["alpha"]),
                   float(data["ell"]), sources)


def eigenvalue(j, params: ModelParams):
    """``lambda_j``; the eigenvalues of ``L`` are ``-lambda_j``."""
    j = np.asarray(j)
    if np.any(j < 0):
        raise ValueError("mode index must be nonnegative")
    lam = params.D * (params.c**2 + (j * math.pi / params.ell) ** 2)
    return np.where(j == 0, 0.0, lam)


def eigenvalues(d: int, params: ModelParams) -> np.ndarray:
    return eigenvalue(np.arange(d + 1), params)


def decay_rates(d: int, params: ModelParams) -> np.ndarray:
    """``alpha + lambda_j`` for ``j = 0..d``."""
    return params.alpha + eigenvalues(d, params)


def phase(j, params: ModelParams):
    """Phase shift ``arctan(-j pi / (ell c))``; ``-pi/2`` when ``V = 0``."""
    j = np.asarray(j, dtype=float)
    if params.c == 0.0:
        return np.full_like(j, -0.5 * math.pi)
    return np.arctan(-j * math.pi / (params.ell * params.c))


def _check_x(x, params):
    x = np.asarray(x, dtype=float)
    tol = 1e-12 * params.ell
    if np.any(x < -tol) or np.any(x > params.ell + tol):
        raise ValueError(f"location outside [0, {params.ell}]")
    return np.clip(x, 0.0, params.ell)


def _phi0(params):
    c, ell = params.c, params.ell
    if c == 0.0:
        return 1.0 / math.sqrt(ell)
    return math.sqrt(2.0 * c / -math.expm1(-2.0 * c * ell))


def eigenfunction_value(j, x, params: ModelParams, derivative: int = 0):
    """``phi_j(x)`` or one of its first two derivatives; broadcasts over ``j`` and ``x``."""
    x = _check_x(x, params)
    j = np.asarray(j)
    c, ell = params.c, params.ell
    k = j * math.pi / ell
    amp = math.sqrt(2.0 / ell) * np.exp(c * x)
    if c == 0.0:
        # sin(k x - pi/2) = -cos(k x)
        s, co = -np.cos(k * x), np.sin(k * x)
    else:
        arg = k * x + phase(j, params)
        s, co = np.sin(arg), np.cos(arg)
    if derivative == 0:
        val = amp * s
    elif derivative == 1:
        val = amp * (c * s + k * co)
    elif derivative == 2:
        val = amp * ((c**2 - k**2) * s + 2.0 * c * k * co)
    else:
        raise ValueError("derivative order must be 0, 1 or 2")
    const = _phi0(params) if derivative == 0 else 0.0
    return np.where(j == 0, const, val)


def basis_matrix(x, d: int, params: ModelParams, derivative: int = 0) -> np.ndarray:
    """Matrix ``B[n, j] = phi_j^{(derivative)}(x_n)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return eigenfunction_value(np.arange(d + 1)[None, :], x[:, None], params, derivative)


def density(x, params: ModelParams):
    """Density ``exp(-2 c x)`` of the reference measure ``rho``."""
    return np.exp(-2.0 * params.c * np.asarray(x, dtype=float))


def source_kernel(params: ModelParams, d: int) -> np.ndarray:
    """``K[i, j] = phi_j(kappa_i) * exp(-2 c kappa_i)``, the coordinates of a unit jump at source ``i``."""
    if not params.sources:
        return np.zeros((0, d + 1))
    kappas = np.array([s.kappa for s in params.sources])
    return basis_matrix(kappas, d, params) * density(kappas, params)[:, None]


def synthesize(coeffs, x, params: ModelParams) -> np.ndarray:
    """Physical-space values ``u(x) = sum_j u_j phi_j(x)``; ``coeffs`` may carry leading axes."""
    coeffs = np.asarray(coeffs, dtype=float)
    B = basis_matrix(x, coeffs.shape[-1] - 1, params)
    return coeffs @ B.T


def sobolev_weights(d: int, n: float, params: ModelParams) -> np.ndarray:
    return (1.0 + eigenvalues(d, params)) ** (2.0 * n)


def sobolev_norm_sq(u, n: float, params: ModelParams):
    """``||u||_n^2 = sum_j u_j^2 (1 + lambda_j)^{2n}`` over the last axis."""
    u = np.asarray(u, dtype=float)
    return np.sum(u**2 * sobolev_weights(u.shape[-1] - 1, n, params), axis=-1)


def sobolev_inner(u, v, n: float, params: ModelParams):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.sum(u * v * sobolev_weights(u.shape[-1] - 1, n, params), axis=-1)


def theta_map(u, p: float, params: ModelParams) -> np.ndarray:
    """Canonical map from ``Phi_{-p}`` to ``Phi_p``: multiplies coordinate ``j`` by ``(1 + lambda_j)^{-2p}``."""
    if p < 0:
        raise ValueError("theta_map needs p >= 0")
    u = np.asarray(u, dtype=float)
    return u * sobolev_weights(u.shape[-1] - 1, -p, params)


def bracket(eta, phi, r: float, params: ModelParams):
    """Duality pairing ``eta[phi] = sum_j <eta, phi_j^{-r}>_{-r} <phi, phi_j^{r}>_r``.

    The pairing is evaluated through the scaled bases literally, so that the
    ``r``-independence of the result is something tests can observe rather
    than something assumed.
    """
    eta = np.asarray(eta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    d = eta.shape[-1] - 1
    scale = (1.0 + eigenvalues(d, params)) ** r
    # phi_j^{-r} = phi_j (1+lambda_j)^r and phi_j^{r} = phi_j (1+lambda_j)^{-r}
    eta_r = eta * scale * sobolev_weights(d, -r, params)
    phi_r = phi * sobolev_weights(d, r, params) / scale
    return np.sum(eta_r * phi_r, axis=-1)
