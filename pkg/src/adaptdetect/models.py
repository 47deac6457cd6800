"""Local-statistic models: log moment generating functions and samplers.

Every model exposes, per hypothesis, the LMGF ``psi`` and its first three
derivatives, a direct sampler and an exponentially twisted sampler drawing
from ``exp(eta*x - psi(eta)) m(dx)``.  Functions accept scalars or arrays.
"""

from __future__ import annotations

import enum
import math
from abc import ABC, abstractmethod

import numpy as np
from scipy.special import bernoulli, logsumexp

__all__ = [
    "Hypothesis",
    "StatModel",
    "LaplaceShiftModel",
    "GaussianShiftModel",
    "laplace_psi0",
    "laplace_llr",
    "log_sinch",
    "model_from_config",
]


class Hypothesis(enum.Enum):
    H0 = "H0"
    H1 = "H1"

    @classmethod
    def parse(cls, value) -> "Hypothesis":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"hypothesis must be 'H0' or 'H1', got {value!r}") from None


class StatModel(ABC):
    """Contract for the distribution of the local statistic under each hypothesis."""

    is_lattice = False

    @abstractmethod
    def psi(self, t, h: Hypothesis = Hypothesis.H0): ...

    @abstractmethod
    def psi_prime(self, t, h: Hypothesis = Hypothesis.H0): ...

    @abstractmethod
    def psi_second(self, t, h: Hypothesis = Hypothesis.H0): ...

    @abstractmethod
    def psi_third(self, t, h: Hypothesis = Hypothesis.H0): ...

    @abstractmethod
    def sample(self, rng: np.random.Generator, h: Hypothesis = Hypothesis.H0, size=None): ...

    @abstractmethod
    def sample_twisted(self, rng: np.random.Generator, eta, h: Hypothesis = Hypothesis.H0, size=None): ...

    def twisted_sampler(self, eta, h: Hypothesis = Hypothesis.H0):
        """Callable ``(rng, size) -> draws`` for a fixed twist ``eta`` (broadcast over trailing axes)."""
        return lambda rng, size: self.sample_twisted(rng, eta, h, size=size)

    def psi_derivative(self, t, r: int, h: Hypothesis = Hypothesis.H0):
        funcs = (self.psi, self.psi_prime, self.psi_second, self.psi_third)
        if not 0 <= r < len(funcs):
            raise ValueError(f"derivative order must be 0..3, got {r}")
        return funcs[r](t, h)

    def cumulant(self, r: int, h: Hypothesis = Hypothesis.H0) -> float:
        if r < 1:
            raise ValueError(f"cumulant order must be >= 1, got {r}")
        return float(self.psi_derivative(0.0, r, h))

    def mean(self, h: Hypothesis = Hypothesis.H0) -> float:
        return self.cumulant(1, h)

    def variance(self, h: Hypothesis = Hypothesis.H0) -> float:
        return self.cumulant(2, h)

    def to_dict(self) -> dict:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Laplace shift-in-mean log-likelihood ratio


def log_sinch(x):
    """``log(sinh(x)/x)`` with the removable singularity at 0, stable for large |x|."""
    x = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    small = x < 1.0
    # sinh(x)/x - 1 = sum_n x^(2n)/(2n+1)!; ten terms reach machine precision on [0, 1)
    x2 = x[small] ** 2
    u = np.zeros_like(x2)
    for n in range(10, 0, -1):
        u = (u + 1.0) * x2 / ((2 * n) * (2 * n + 1))
    out[small] = np.log1p(u)
    xl = x[~small]
    out[~small] = xl + np.log(-np.expm1(-2.0 * xl)) - math.log(2.0) - np.log(xl)
    return out if out.ndim else float(out)


def laplace_llr(d, rho: float):
    """Log-likelihood ratio ``|d| - |d - rho|`` of a Laplace shift by ``rho``."""
    d = np.asarray(d, dtype=float)
    x = np.where(d < 0.0, -rho, np.where(d > rho, rho, 2.0 * d - rho))
    return x if x.ndim else float(x)


def _laplace_log_weights(t, rho):
    """Log masses of the (-rho atom, +rho atom, continuous part) under the H0 law tilted by t."""
    t = np.asarray(t, dtype=float)
    log_half = -math.log(2.0)
    a = -t * rho + log_half
    b = (t - 1.0) * rho + log_half
    c = -rho / 2.0 + math.log(rho / 2.0) + log_sinch(rho * (t - 0.5))
    return np.stack(np.broadcast_arrays(a, b, c))


def laplace_psi0(t, rho: float):
    """Closed-form LMGF of the Laplace log-likelihood ratio under H0."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho!r}")
    out = logsumexp(_laplace_log_weights(t, rho), axis=0)
    # exact at the origin, where the three masses only sum to one up to rounding
    out = np.where(np.asarray(t) == 0.0, 0.0, out)
    return out if np.ndim(out) else float(out)


# coth(u) - 1/u = sum_n c_n u^(2n-1) with c_n = 2^(2n) B_(2n) / (2n)!; fourteen terms
# give full precision for |u| < 1/2 (the series converges for |u| < pi).
_COTH_N = np.arange(1, 15)
_COTH_C = np.array([2.0 ** (2 * n) * bernoulli(2 * n)[-1] / math.factorial(2 * n) for n in _COTH_N])
_SERIES_CUT = 0.5


def _series_coefficients(deriv):
    """Horner coefficients in ``u^2`` and the leading power of ``u`` for a derivative of the series."""
    powers = 2 * _COTH_N - 1
    coef = _COTH_C.copy()
    for _ in range(deriv):
        coef = coef * powers
        powers = powers - 1
    keep = coef != 0.0
    return coef[keep], int(powers[keep][0])


_SERIES = [_series_coefficients(d) for d in range(3)]


def _coth_series(u, deriv):
    """``d^deriv/du^deriv (coth u - 1/u)`` by the Bernoulli series."""
    coef, lead = _SERIES[deriv]
    val = np.polynomial.polynomial.polyval(u * u, coef)
    return val * u if lead == 1 else val


def _tilted_uniform_cumulants(s, rho):
    """Mean, variance and third cumulant of the density ``∝ exp(s x)`` on ``[-rho, rho]``.

    With ``u = rho s`` these are ``rho^r`` times the r-th derivative of
    ``coth(u) - 1/u``; the closed forms cancel badly near ``u = 0``, where the
    series is used instead.
    """
    u = rho * np.asarray(s, dtype=float)
    m, v, k3 = np.empty_like(u), np.empty_like(u), np.empty_like(u)
    small = np.abs(u) < _SERIES_CUT
    us = u[small]
    m[small], v[small], k3[small] = (_coth_series(us, d) for d in range(3))
    big = ~small
    ul = u[big]
    with np.errstate(over="ignore"):
        sh = np.sinh(ul)
        m[big] = 1.0 / np.tanh(ul) - 1.0 / ul
        vb = 1.0 / ul ** 2 - 1.0 / sh ** 2
        kb = -2.0 / ul ** 3 + 2.0 * np.cosh(ul) / sh ** 3
    v[big] = np.where(np.isfinite(vb), vb, 1.0 / ul ** 2)
    k3[big] = np.where(np.isfinite(kb), kb, -2.0 / ul ** 3)
    return rho * m, rho ** 2 * v, rho ** 3 * k3


def _laplace_cumulants0(t, rho):
    """First three cumulants of the H0 law tilted by t, i.e. psi0', psi0'', psi0'''."""
    w = np.exp(_laplace_log_weights(t, rho) - laplace_psi0(t, rho))
    pm, pp, pc = w
    mc, vc, kc = _tilted_uniform_cumulants(np.asarray(t, dtype=float) - 0.5, rho)
    # raw moments of each mixture component
    m1 = -rho * pm + rho * pp + pc * mc
    m2 = rho ** 2 * (pm + pp) + pc * (vc + mc ** 2)
    m3 = rho ** 3 * (pp - pm) + pc * (kc + 3 * mc * vc + mc ** 3)
    k1 = m1
    k2 = m2 - m1 ** 2
    k3 = m3 - 3 * m2 * m1 + 2 * m1 ** 3
    return k1, k2, k3


def _scalar(x):
    return x if np.ndim(x) else float(x)


class LaplaceShiftModel(StatModel):
    """Log-likelihood ratio for a unit Laplace shifted by ``rho`` under H1.

    Under H0 the statistic has atoms at ``-rho`` (mass 1/2) and ``+rho``
    (mass ``exp(-rho)/2``) plus a continuous part on ``(-rho, rho)``.  The H1
    law is the mirror image, so ``psi1(t) = psi0(-t)``.
    """

    def __init__(self, rho: float):
        rho = float(rho)
        if not rho > 0 or not math.isfinite(rho):
            raise ValueError(f"rho must be positive and finite, got {rho!r}")
        self.rho = rho

    def _sign(self, h):
        return 1.0 if Hypothesis.parse(h) is Hypothesis.H0 else -1.0

    def psi(self, t, h=Hypothesis.H0):
        return laplace_psi0(self._sign(h) * np.asarray(t, dtype=float), self.rho)

    def psi_prime(self, t, h=Hypothesis.H0):
        s = self._sign(h)
        return _scalar(s * _laplace_cumulants0(s * np.asarray(t, dtype=float), self.rho)[0])

    def psi_second(self, t, h=Hypothesis.H0):
        s = self._sign(h)
        return _scalar(_laplace_cumulants0(s * np.asarray(t, dtype=float), self.rho)[1])

    def psi_third(self, t, h=Hypothesis.H0):
        s = self._sign(h)
        return _scalar(s * _laplace_cumulants0(s * np.asarray(t, dtype=float), self.rho)[2])

    def sample(self, rng, h=Hypothesis.H0, size=None):
        shift = 0.0 if Hypothesis.parse(h) is Hypothesis.H0 else self.rho
        d = rng.laplace(loc=shift, scale=1.0, size=size)
        return laplace_llr(d, self.rho)

    def twisted_mixture(self, eta):
        """Mixture weights ``(p_minus, p_plus)`` of the H0 law twisted by ``eta``."""
        w = np.exp(_laplace_log_weights(eta, self.rho) - laplace_psi0(eta, self.rho))
        return _scalar(w[0]), _scalar(w[1])

    def sample_twisted(self, rng, eta, h=Hypothesis.H0, size=None):
        eta = np.asarray(eta, dtype=float)
        return _scalar(self.twisted_sampler(eta, h)(rng, eta.shape if size is None else size))

    def twisted_sampler(self, eta, h=Hypothesis.H0):
        s = self._sign(h)
        table = _TwistedLaplaceTable(s * np.asarray(eta, dtype=float), self.rho)
        if s > 0:
            return table.draw
        return lambda rng, size: -table.draw(rng, size)

    def to_dict(self) -> dict:
        return {"model": "laplace", "rho": self.rho}

    def __repr__(self) -> str:
        return f"LaplaceShiftModel(rho={self.rho})"


class _TwistedLaplaceTable:
    """Per-eta constants for sampling the H0 law twisted by ``eta`` with one uniform per draw.

    ``u < p_minus`` gives the atom at ``-rho`` and ``u >= 1 - p_plus`` the atom
    at ``+rho``.  Otherwise ``v = (u - p_minus)/p_cont`` is uniform and goes
    through the closed-form inverse CDF of the density ``∝ exp(s x)`` on
    ``[-rho, rho]``, with ``s = eta - 1/2``:

        s < 0:  x = -rho + log1p(v * expm1(2 rho s)) / s
        s > 0:  x = +rho + log1p((1 - v) * expm1(-2 rho s)) / s

    Both are written as ``base + log1p(w * c) / s`` with ``w`` affine in ``u``.
    """

    def __init__(self, eta0, rho):
        logw = _laplace_log_weights(eta0, rho)
        logw = logw - logsumexp(logw, axis=0)
        self.p_minus = np.exp(logw[0])
        self.p_plus = np.exp(logw[1])
        self.upper_cut = 1.0 - self.p_plus
        p_cont = np.maximum(1.0 - self.p_minus - self.p_plus, 1e-300)
        s = np.asarray(eta0, dtype=float) - 0.5
        # |s| below 1e-12 is indistinguishable from the uniform limit
        s = np.where(np.abs(s) < 1e-12, 1e-12, s)
        pos = s > 0
        sign = np.where(pos, -1.0, 1.0)
        self.scale = sign / p_cont
        self.offset = np.where(pos, 1.0, 0.0) - self.p_minus * self.scale
        self.c = np.expm1(-2.0 * rho * np.abs(s))
        self.inv_s = 1.0 / s
        self.base = np.where(pos, rho, -rho)
        self.rho = rho

    def draw(self, rng, size):
        u = rng.random(size=size)
        x = u * self.scale
        x += self.offset
        x *= self.c
        # entries falling on the atoms may leave log1p's domain; they are overwritten below
        with np.errstate(invalid="ignore", divide="ignore"):
            np.log1p(x, out=x)
        x *= self.inv_s
        x += self.base
        np.copyto(x, -self.rho, where=u < self.p_minus)
        np.copyto(x, self.rho, where=u >= self.upper_cut)
        return x


# ---------------------------------------------------------------------------
# Gaussian shift-in-mean (analytic oracle)


class GaussianShiftModel(StatModel):
    """Gaussian statistic with mean ``mean0``/``mean1`` and common variance."""

    def __init__(self, mean0: float, mean1: float, var: float):
        if not var > 0:
            raise ValueError(f"var must be positive, got {var!r}")
        if not mean0 < mean1:
            raise ValueError(f"need mean0 < mean1 for an identifiable test, got {mean0!r}, {mean1!r}")
        self.mean0 = float(mean0)
        self.mean1 = float(mean1)
        self.var = float(var)

    def _m(self, h):
        return self.mean0 if Hypothesis.parse(h) is Hypothesis.H0 else self.mean1

    def psi(self, t, h=Hypothesis.H0):
        t = np.asarray(t, dtype=float)
        return _scalar(self._m(h) * t + 0.5 * self.var * t * t)

    def psi_prime(self, t, h=Hypothesis.H0):
        t = np.asarray(t, dtype=float)
        return _scalar(self._m(h) + self.var * t)

    def psi_second(self, t, h=Hypothesis.H0):
        return _scalar(np.full(np.shape(t), self.var))

    def psi_third(self, t, h=Hypothesis.H0):
        return _scalar(np.zeros(np.shape(t)))

    def sample(self, rng, h=Hypothesis.H0, size=None):
        return rng.normal(self._m(h), math.sqrt(self.var), size=size)

    def sample_twisted(self, rng, eta, h=Hypothesis.H0, size=None):
        eta = np.asarray(eta, dtype=float)
        if size is None:
            size = eta.shape
        return _scalar(rng.normal(self._m(h) + self.var * eta, math.sqrt(self.var), size=size))

    def to_dict(self) -> dict:
        return {"model": "gaussian", "mean0": self.mean0, "mean1": self.mean1, "var": self.var}

    def __repr__(self) -> str:
        return f"GaussianShiftModel(mean0={self.mean0}, mean1={self.mean1}, var={self.var})"


def model_from_config(spec: dict) -> StatModel:
    """Build a model from ``{"model": "laplace", "rho": ...}`` or the gaussian form."""
    if not isinstance(spec, dict) or "model" not in spec:
        raise ValueError("model spec must be an object with a 'model' key")
    kind = spec["model"]
    if kind == "laplace":
        return LaplaceShiftModel(spec["rho"])
    if kind == "gaussian":
        return GaussianShiftModel(spec["mean0"], spec["mean1"], spec["var"])
    raise ValueError(f"unknown model {kind!r}")
