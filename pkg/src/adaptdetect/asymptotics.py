"""Rate function, exact asymptotics and normal approximations of steady-state tails.

For a threshold ``gamma`` the tail probability of agent ``k`` is approximated by

    P ~ sqrt(mu / (2 pi theta^2 phi''(theta))) * exp(-(Phi(gamma) + eps) / mu)

where ``theta`` solves ``phi'(theta) = gamma`` and ``eps`` is an agent-dependent
correction built from the finite-mu convergence errors.  All probabilities are
returned as natural logarithms.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .lmgf import LimitingLmgf, TruncatedLmgf, convergence_errors
from .models import Hypothesis, StatModel
from .network import CombinationMatrix, WeightKernel

__all__ = [
    "Direction",
    "Variant",
    "NormalMode",
    "TailSpec",
    "AsymptoticReport",
    "NoBracketError",
    "LatticeModelError",
    "solve_theta",
    "rate_function",
    "correction",
    "exact_asymptotic",
    "normal_approximation",
    "limiting_variance",
    "evaluate",
    "sweep",
    "REPORT_FIELDS",
]


class Direction(enum.Enum):
    UPPER = "upper"  # P[y > gamma]
    LOWER = "lower"  # P[y <= gamma]

    @classmethod
    def parse(cls, value) -> "Direction":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"direction must be 'upper' or 'lower', got {value!r}") from None


class Variant(enum.Enum):
    PLAIN = "plain"
    REFINED = "refined"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"correction variant must be 'plain' or 'refined', got {value!r}") from None


class NormalMode(enum.Enum):
    CLT_LIMIT = "clt_limit"
    EXACT_VAR = "exact_var"


class NoBracketError(ValueError):
    """The stationary equation has no root: gamma lies outside the interior of the rate domain."""


class LatticeModelError(ValueError):
    """Exact asymptotics are not available for lattice statistics."""


@dataclass(frozen=True)
class TailSpec:
    gamma: float
    direction: Direction
    hypothesis: Hypothesis

    def __init__(self, gamma: float, direction=Direction.UPPER, hypothesis=Hypothesis.H0):
        object.__setattr__(self, "gamma", float(gamma))
        object.__setattr__(self, "direction", Direction.parse(direction))
        object.__setattr__(self, "hypothesis", Hypothesis.parse(hypothesis))

    @classmethod
    def error_probability(cls, gamma: float, hypothesis) -> "TailSpec":
        """Type-I tail (upper, under H0) or Type-II tail (lower, under H1)."""
        h = Hypothesis.parse(hypothesis)
        return cls(gamma, Direction.UPPER if h is Hypothesis.H0 else Direction.LOWER, h)

    def validate(self, model: StatModel) -> None:
        mean = model.mean(self.hypothesis)
        if not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be finite, got {self.gamma!r}")
        if self.direction is Direction.UPPER and not self.gamma > mean:
            raise ValueError(
                f"upper tail needs gamma > E[x] = {mean:.6g} under {self.hypothesis.value}, got {self.gamma!r}"
            )
        if self.direction is Direction.LOWER and not self.gamma < mean:
            raise ValueError(
                f"lower tail needs gamma < E[x] = {mean:.6g} under {self.hypothesis.value}, got {self.gamma!r}"
            )

    @property
    def sign(self) -> float:
        return 1.0 if self.direction is Direction.UPPER else -1.0


def solve_theta(tail: TailSpec, limiting: LimitingLmgf, *, t0: float = 1e-3, t_max: float = 1e6,
                max_iter: int = 200) -> float:
    """Root of ``phi'(theta) = gamma`` on the side of zero fixed by the tail direction."""
    tail.validate(limiting.model)
    gamma = tail.gamma
    sign = tail.sign

    def g(t):
        return limiting.phi_prime(t) - gamma

    # g is increasing; g(0) has the opposite sign of the tail direction.
    lo, hi = 0.0, sign * t0
    while sign * g(hi) < 0:
        lo = hi
        hi *= 2.0
        if abs(hi) > t_max:
            raise NoBracketError(
                f"phi' saturates before reaching gamma={gamma!r} (|theta| > {t_max:g}); "
                "gamma is outside the interior of the rate domain"
            )
    a, b = (lo, hi) if lo < hi else (hi, lo)
    tol = 1e-12 * max(1.0, abs(gamma))
    theta = 0.5 * (a + b)
    for _ in range(max_iter):
        r = g(theta)
        if abs(r) <= tol:
            return theta
        if r > 0:
            b = theta
        else:
            a = theta
        d = limiting.phi_second(theta)
        step = theta - r / d if d > 0 else None
        theta = step if step is not None and a < step < b else 0.5 * (a + b)
        if b - a <= 4 * np.finfo(float).eps * max(1.0, abs(theta)):
            break
    if abs(g(theta)) <= tol:
        return theta
    raise NoBracketError(f"stationary equation did not converge for gamma={gamma!r}")


def rate_function(gamma: float, theta: float, limiting: LimitingLmgf) -> float:
    """Legendre transform value ``gamma*theta - phi(theta)`` at the stationary point."""
    return gamma * theta - limiting.phi(theta)


def correction(theta: float, k: int, kernel: WeightKernel, limiting: LimitingLmgf,
               variant=Variant.REFINED, truncated: TruncatedLmgf | None = None) -> float:
    c1, c2 = convergence_errors(theta, k, kernel, limiting, truncated)
    if Variant.parse(variant) is Variant.PLAIN:
        return c1
    return c1 + c2 * c2 / (2.0 * limiting.phi_second(theta))


def _log_prefactor(mu: float, theta: float, phi2: float) -> float:
    return 0.5 * (math.log(mu) - math.log(2 * math.pi * theta * theta * phi2))


def exact_asymptotic(tail: TailSpec, k: int, kernel: WeightKernel, limiting: LimitingLmgf,
                     variant=Variant.REFINED, theta: float | None = None) -> float:
    """Natural log of the exact-asymptotic tail approximation for agent ``k``."""
    if limiting.model.is_lattice:
        raise LatticeModelError("exact asymptotics require a non-lattice local statistic")
    if theta is None:
        theta = solve_theta(tail, limiting)
    mu = kernel.mu
    rate = rate_function(tail.gamma, theta, limiting)
    eps = correction(theta, k, kernel, limiting, variant)
    return _log_prefactor(mu, theta, limiting.phi_second(theta)) - (rate + eps) / mu


def limiting_variance(model: StatModel, hypothesis, perron) -> float:
    """``sigma_lim^2 = (sigma_x^2 / 2) sum_l p_l^2``."""
    return model.variance(hypothesis) / 2.0 * float(np.sum(np.asarray(perron) ** 2))


def normal_approximation(tail: TailSpec, k: int, kernel: WeightKernel, model: StatModel,
                         mode=NormalMode.EXACT_VAR) -> float:
    """Log of the Gaussian tail with the limiting (CLT) or exact steady-state variance."""
    mode = NormalMode(mode)
    if mode is NormalMode.CLT_LIMIT:
        var = kernel.mu * limiting_variance(model, tail.hypothesis, kernel.perron)
    else:
        var = TruncatedLmgf(model, tail.hypothesis, kernel, k).variance()
    z = (tail.gamma - model.mean(tail.hypothesis)) / math.sqrt(var)
    if tail.direction is Direction.UPPER:
        return float(norm.logsf(z))
    return float(norm.logcdf(z))


REPORT_FIELDS = (
    "mu", "agent", "theta", "rate", "eps_plain", "eps_refined",
    "ln_p_asym", "ln_p_normal_clt", "ln_p_normal_exactvar",
)


@dataclass
class AsymptoticReport:
    mu: float
    agent: int
    theta: float = math.nan
    rate: float = math.nan
    phi_second_at_theta: float = math.nan
    eps_plain: float = math.nan
    eps_refined: float = math.nan
    ln_p_asym: float = math.nan
    ln_p_normal_clt: float = math.nan
    ln_p_normal_exactvar: float = math.nan
    variant: str = Variant.REFINED.value
    error: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.error

    @property
    def p_asym(self) -> float:
        """Linear-scale value, or NaN when not representable."""
        return math.exp(self.ln_p_asym) if self.ln_p_asym > math.log(1e-300) else math.nan

    def row(self) -> dict:
        d = {name: getattr(self, name) for name in REPORT_FIELDS}
        d.update(self.extra)
        d["error"] = self.error
        return d

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(tail: TailSpec, k: int, kernel: WeightKernel, limiting: LimitingLmgf,
             theta: float, variant=Variant.REFINED) -> AsymptoticReport:
    """All report quantities for one (mu, agent) cell, given the solved ``theta``."""
    variant = Variant.parse(variant)
    if limiting.model.is_lattice:
        raise LatticeModelError("exact asymptotics require a non-lattice local statistic")
    mu = kernel.mu
    trunc = TruncatedLmgf(limiting.model, tail.hypothesis, kernel, k)
    c1, c2 = convergence_errors(theta, k, kernel, limiting, trunc)
    phi2 = limiting.phi_second(theta)
    rate = rate_function(tail.gamma, theta, limiting)
    eps_plain = c1
    eps_refined = c1 + c2 * c2 / (2.0 * phi2)
    eps = eps_refined if variant is Variant.REFINED else eps_plain
    return AsymptoticReport(
        mu=mu,
        agent=k,
        theta=theta,
        rate=rate,
        phi_second_at_theta=phi2,
        eps_plain=eps_plain,
        eps_refined=eps_refined,
        ln_p_asym=_log_prefactor(mu, theta, phi2) - (rate + eps) / mu,
        ln_p_normal_clt=normal_approximation(tail, k, kernel, limiting.model, NormalMode.CLT_LIMIT),
        ln_p_normal_exactvar=normal_approximation(tail, k, kernel, limiting.model, NormalMode.EXACT_VAR),
        variant=variant.value,
    )


def sweep(tail: TailSpec, A: CombinationMatrix, model: StatModel, mu_grid, agents=None, *,
          trunc_tol: float = 1e-12, variant=Variant.REFINED, workers: int = 1) -> list[AsymptoticReport]:
    """One report per (mu, agent), ordered by the given mu grid then agent.

    ``theta`` and the rate depend only on the Perron vector, so they are solved
    once and shared by every cell.  Per-cell failures are recorded in the
    report's ``error`` field instead of aborting the sweep.
    """
    mu_grid = [float(m) for m in mu_grid]
    if not mu_grid:
        raise ValueError("mu_grid is empty")
    if any(not 0 < m < 1 for m in mu_grid):
        raise ValueError(f"every step-size must lie in (0, 1), got {mu_grid}")
    if any(b >= a for a, b in zip(mu_grid, mu_grid[1:])):
        raise ValueError(f"mu_grid must be strictly descending, got {mu_grid}")
    agents = list(range(A.S)) if agents is None else [int(a) for a in agents]
    variant = Variant.parse(variant)

    theta = None
    global_error = ""
    limiting = None
    try:
        if model.is_lattice:
            raise LatticeModelError("exact asymptotics require a non-lattice local statistic")
        tail.validate(model)
        kernel0 = WeightKernel(A, mu_grid[0], trunc_tol)
        limiting = LimitingLmgf(model, tail.hypothesis, kernel0.perron)
        theta = solve_theta(tail, limiting)
    except (ValueError, ArithmeticError) as exc:
        global_error = f"{type(exc).__name__}: {exc}"

    def run_mu(mu):
        if global_error:
            return [AsymptoticReport(mu=mu, agent=k, error=global_error) for k in agents]
        try:
            kernel = WeightKernel(A, mu, trunc_tol)
        except (ValueError, ArithmeticError) as exc:
            return [AsymptoticReport(mu=mu, agent=k, error=f"{type(exc).__name__}: {exc}") for k in agents]
        out = []
        for k in agents:
            try:
                out.append(evaluate(tail, k, kernel, limiting, theta, variant))
            except (ValueError, ArithmeticError, IndexError) as exc:
                out.append(AsymptoticReport(mu=mu, agent=k, error=f"{type(exc).__name__}: {exc}"))
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_mu, mu_grid))
    else:
        chunks = [run_mu(mu) for mu in mu_grid]
    return [rep for chunk in chunks for rep in chunk]
