"""Averaged, limiting and steady-state log moment generating functions.

``omega(t) = int_0^t psi(tau)/tau dtau`` feeds the limiting function
``phi(t) = sum_l omega(p_l t)``.  The steady-state LMGF of agent ``k`` is the
double sum ``phi_{k,mu}(t) = sum_i sum_l psi(xi_{i,l} t)`` over the weight
kernel, truncated at its horizon.
"""

from __future__ import annotations

import math
import threading

import numpy as np
from scipy import integrate

from .models import Hypothesis, StatModel
from .network import WeightKernel

__all__ = [
    "QuadratureError",
    "LimitingLmgf",
    "TruncatedLmgf",
    "omega",
    "phi_trunc",
    "phi_trunc_prime",
    "convergence_errors",
]

QUAD_EPSABS = 1e-10
QUAD_LIMIT = 200
# Below this |u| the ratios psi(u)/u and (u psi'(u) - psi(u))/u^2 lose digits to
# cancellation; they are evaluated instead as int_0^1 psi'(s u) ds and
# int_0^1 s psi''(s u) ds by Gauss-Legendre quadrature.
SMALL_ARG = 1.0
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_X = (_GL_X + 1.0) / 2.0
_GL_W = _GL_W / 2.0


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""


def _quad(f, a: float, b: float, epsabs: float) -> float:
    val, err, info = integrate.quad(f, a, b, epsabs=epsabs, epsrel=1e-13, limit=QUAD_LIMIT, full_output=1)[:3]
    if err > max(epsabs, 1e-13 * abs(val)) * 10:
        raise QuadratureError(f"quadrature over [{a}, {b}] did not converge (error estimate {err:.3g})")
    return val


class LimitingLmgf:
    """Limiting normalized LMGF ``phi`` for a model, hypothesis and Perron vector."""

    def __init__(self, model: StatModel, hypothesis, perron, epsabs: float = QUAD_EPSABS):
        self.model = model
        self.hypothesis = Hypothesis.parse(hypothesis)
        self.perron = np.array(perron, dtype=float)
        self.perron.setflags(write=False)
        self.epsabs = epsabs
        self._omega_cache: dict[float, float] = {}
        self._lock = threading.Lock()

    def psi(self, t):
        return self.model.psi(t, self.hypothesis)

    def psi_prime(self, t):
        return self.model.psi_prime(t, self.hypothesis)

    def _ratio1(self, u) -> np.ndarray:
        """``psi(u)/u`` elementwise, with value ``psi'(0)`` at 0."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty_like(u)
        small = np.abs(u) < SMALL_ARG
        if small.any():
            nodes = u[small, None] * _GL_X
            out[small] = np.asarray(self.model.psi_prime(nodes, self.hypothesis)) @ _GL_W
        big = ~small
        if big.any():
            out[big] = np.asarray(self.model.psi(u[big], self.hypothesis)) / u[big]
        return out

    def _ratio2(self, u) -> np.ndarray:
        """``(u psi'(u) - psi(u))/u^2`` elementwise, with value ``psi''(0)/2`` at 0."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty_like(u)
        small = np.abs(u) < SMALL_ARG
        if small.any():
            nodes = u[small, None] * _GL_X
            out[small] = np.asarray(self.model.psi_second(nodes, self.hypothesis)) @ (_GL_W * _GL_X)
        big = ~small
        if big.any():
            ub = u[big]
            num = ub * np.asarray(self.model.psi_prime(ub, self.hypothesis)) - np.asarray(
                self.model.psi(ub, self.hypothesis))
            out[big] = num / (ub * ub)
        return out

    def _psi_over_tau(self, tau: float) -> float:
        return float(self._ratio1(tau)[0])

    def omega(self, t: float) -> float:
        """Averaged LMGF ``int_0^t psi(tau)/tau dtau``; memoized on ``t``."""
        t = float(t)
        if t == 0.0:
            return 0.0
        with self._lock:
            hit = self._omega_cache.get(t)
        if hit is not None:
            return hit
        val = _quad(self._psi_over_tau, 0.0, t, self.epsabs)
        with self._lock:
            self._omega_cache[t] = val
        return val

    def phi(self, t: float) -> float:
        return math.fsum(self.omega(pl * t) for pl in self.perron)

    def phi_prime(self, t: float) -> float:
        """``(1/t) sum_l psi(p_l t)``, written as ``sum_l p_l psi(u)/u`` with ``u = p_l t``."""
        p = self.perron
        return math.fsum(p * self._ratio1(p * float(t)))

    def phi_second(self, t: float) -> float:
        """``(1/t^2) sum_l [u psi'(u) - psi(u)]`` with ``u = p_l t``."""
        p = self.perron
        return math.fsum(p * p * self._ratio2(p * float(t)))

    def phi_via_psibar(self, t: float) -> float:
        """``int_0^t psibar(tau)/tau dtau`` with ``psibar(t) = sum_l psi(p_l t)``."""
        t = float(t)
        if t == 0.0:
            return 0.0
        return _quad(lambda tau: self.phi_prime(tau), 0.0, t, self.epsabs)

    def derivative_at_zero(self, r: int) -> float:
        """``phi^(r)(0) = psi^(r)(0)/r * sum_l p_l^r``."""
        return self.model.cumulant(r, self.hypothesis) / r * float(np.sum(self.perron ** r))


class TruncatedLmgf:
    """Steady-state LMGF ``phi_{k,mu}`` of agent ``k`` over a weight kernel."""

    def __init__(self, model: StatModel, hypothesis, kernel: WeightKernel, k: int):
        self.model = model
        self.hypothesis = Hypothesis.parse(hypothesis)
        self.kernel = kernel
        self.k = k
        self.xi = kernel.xi(k).ravel()
        self.xi.setflags(write=False)

    @property
    def mu(self) -> float:
        return self.kernel.mu

    def derivative(self, t: float, r: int = 0) -> float:
        """``sum xi^r psi^(r)(xi t)`` summed i-outer, l-inner with fsum."""
        vals = self.model.psi_derivative(self.xi * t, r, self.hypothesis)
        if r:
            vals = self.xi ** r * vals
        return math.fsum(vals)

    def __call__(self, t: float) -> float:
        return self.derivative(t, 0)

    def prime(self, t: float) -> float:
        return self.derivative(t, 1)

    def cumulant(self, r: int) -> float:
        """``phi_{k,mu}^(r)(0)`` with the series summed to infinity in closed form."""
        return self.model.cumulant(r, self.hypothesis) * self.kernel.xi_power_sum(self.k, r)

    def variance(self) -> float:
        """Variance of the truncated steady-state sum."""
        return self.model.variance(self.hypothesis) * math.fsum(self.xi ** 2)

    def mean(self) -> float:
        return self.model.mean(self.hypothesis) * math.fsum(self.xi)


def omega(model: StatModel, t: float, hypothesis=Hypothesis.H0) -> float:
    return LimitingLmgf(model, hypothesis, [1.0]).omega(t)


def phi_trunc(t: float, k: int, kernel: WeightKernel, model: StatModel, hypothesis=Hypothesis.H0) -> float:
    return TruncatedLmgf(model, hypothesis, kernel, k)(t)


def phi_trunc_prime(t: float, k: int, kernel: WeightKernel, model: StatModel, hypothesis=Hypothesis.H0) -> float:
    return TruncatedLmgf(model, hypothesis, kernel, k).prime(t)


def convergence_errors(theta: float, k: int, kernel: WeightKernel, limiting: LimitingLmgf,
                       truncated: TruncatedLmgf | None = None) -> tuple[float, float]:
    """``(phi(theta) - mu phi_{k,mu}(theta/mu), phi'(theta) - phi'_{k,mu}(theta/mu))``."""
    if truncated is None:
        truncated = TruncatedLmgf(limiting.model, limiting.hypothesis, kernel, k)
    mu = kernel.mu
    c1 = limiting.phi(theta) - mu * truncated(theta / mu)
    c2 = limiting.phi_prime(theta) - truncated.prime(theta / mu)
    return c1, c2
