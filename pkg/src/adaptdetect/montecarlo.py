"""Diffusion simulation, plain Monte Carlo and importance sampling of steady-state tails.

Steady-state samples are drawn directly from the truncated series
``y = sum_i sum_l xi_{i,l} x_l(i)`` rather than by running the recursion.
Importance sampling twists the ``(i, l)``-th draw by
``eta_{i,l} = (1 - mu)^(i-1) b_{k,l}(i) theta``, which twists ``y`` by
``theta/mu``.

Replications are split into fixed-size blocks, each with its own RNG stream
spawned from the root seed, so results do not depend on the worker count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .asymptotics import Direction, TailSpec, solve_theta
from .lmgf import LimitingLmgf
from .models import Hypothesis, StatModel
from .network import CombinationMatrix, WeightKernel

__all__ = [
    "DiffusionState",
    "ISEstimate",
    "DegenerateESSWarning",
    "atc_step",
    "run_diffusion",
    "steady_state_sample",
    "twisted_steady_state_sample",
    "plain_mc_tail",
    "is_tail",
    "block_plan",
]

ESS_WARN_FRACTION = 0.01
BLOCK_ELEMENTS = 1 << 21
MAX_BLOCK = 4096


class DegenerateESSWarning(RuntimeWarning):
    pass


@dataclass
class DiffusionState:
    y: np.ndarray
    n: int = 0


def atc_step(state: DiffusionState, A, mu: float, x) -> DiffusionState:
    """Adapt ``v = y + mu (x - y)``, then combine ``y_k = sum_l a_{k,l} v_l``."""
    M = A.matrix if isinstance(A, CombinationMatrix) else np.asarray(A)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != M.shape[0] or state.y.shape[-1] != M.shape[0]:
        raise ValueError(f"dimension mismatch: S={M.shape[0]}, y {state.y.shape}, x {x.shape}")
    v = state.y + mu * (x - state.y)
    # trailing axis indexes agents so a batch of runs can be stepped at once
    return DiffusionState(v @ M.T, state.n + 1)


def run_diffusion(rng: np.random.Generator, A, mu: float, model: StatModel, hypothesis,
                  n_steps: int, n_runs: int = 1, y0=None) -> DiffusionState:
    """Run ``n_runs`` independent copies of the recursion for ``n_steps`` steps."""
    M = A.matrix if isinstance(A, CombinationMatrix) else np.asarray(A)
    S = M.shape[0]
    h = Hypothesis.parse(hypothesis)
    y = np.zeros((n_runs, S)) if y0 is None else np.broadcast_to(np.asarray(y0, float), (n_runs, S)).copy()
    state = DiffusionState(y)
    for _ in range(n_steps):
        state = atc_step(state, M, mu, model.sample(rng, h, size=(n_runs, S)))
    return state


@dataclass(frozen=True)
class ISEstimate:
    p_hat: float
    std_err: float
    n_samples: int
    ess: float
    log_p_hat: float
    n_hits: int

    @property
    def rel_err(self) -> float:
        return self.std_err / self.p_hat if self.p_hat > 0 else math.inf

    @property
    def degenerate(self) -> bool:
        return self.ess < ESS_WARN_FRACTION * self.n_samples


def steady_state_sample(rng: np.random.Generator, k: int, kernel: WeightKernel, model: StatModel,
                        hypothesis=Hypothesis.H0, size: int | None = None):
    """Draw from the (truncated) steady-state law of agent ``k``."""
    h = Hypothesis.parse(hypothesis)
    xi = kernel.xi(k).ravel()
    n = 1 if size is None else int(size)
    y = model.sample(rng, h, size=(n, xi.size)) @ xi
    return float(y[0]) if size is None else y


def _eta_grid(kernel: WeightKernel, k: int, theta: float) -> np.ndarray:
    return (kernel.weights(k) * theta).ravel()


def twisted_steady_state_sample(rng: np.random.Generator, k: int, kernel: WeightKernel, model: StatModel,
                                hypothesis, theta: float, size: int):
    """Draws of ``y`` under the twisted law, with their log likelihood-ratio weights.

    The weight of a replication is ``prod p(x)/p~(x)``, accumulated in log form
    as ``-sum eta_{i,l} x_l(i) + sum psi(eta_{i,l})``.
    """
    h = Hypothesis.parse(hypothesis)
    xi = kernel.xi(k).ravel()
    eta = _eta_grid(kernel, k, theta)
    log_norm = math.fsum(np.atleast_1d(model.psi(eta, h)))
    x = model.twisted_sampler(eta, h)(rng, (int(size), xi.size))
    return x @ xi, log_norm - x @ eta


def block_plan(n_samples: int, grid_size: int) -> list[int]:
    """Replication counts per block; depends only on the problem size."""
    b = max(1, min(MAX_BLOCK, BLOCK_ELEMENTS // max(grid_size, 1)))
    sizes = [b] * (n_samples // b)
    if n_samples % b:
        sizes.append(n_samples % b)
    return sizes


def _reduce_block(y, logw, tail: TailSpec):
    hit = y > tail.gamma if tail.direction is Direction.UPPER else y <= tail.gamma
    n_hit = int(np.count_nonzero(hit))
    if n_hit == 0:
        return 0, -math.inf, 0.0, 0.0
    lw = logw[hit]
    m = float(lw.max())
    z = lw - m
    return n_hit, m, math.fsum(np.exp(z)), math.fsum(np.exp(2.0 * z))


def _combine(blocks, n: int) -> ISEstimate:
    hits = sum(b[0] for b in blocks)
    if hits == 0:
        return ISEstimate(0.0, 0.0, n, 0.0, -math.inf, 0)
    M = max(b[1] for b in blocks if b[0])
    s1 = math.fsum(b[2] * math.exp(b[1] - M) for b in blocks if b[0])
    s2 = math.fsum(b[3] * math.exp(2.0 * (b[1] - M)) for b in blocks if b[0])
    log_p = M + math.log(s1) - math.log(n)
    # population variance of w*1 relative to p^2, then standard error of the mean
    rel_var = max(n * s2 / (s1 * s1) - 1.0, 0.0)
    p_hat = math.exp(log_p) if log_p > -745 else 0.0
    return ISEstimate(
        p_hat=p_hat,
        std_err=p_hat * math.sqrt(rel_var / n),
        n_samples=n,
        ess=s1 * s1 / s2,
        log_p_hat=log_p,
        n_hits=hits,
    )


def _run(tail: TailSpec, k: int, kernel: WeightKernel, model: StatModel, n_samples: int, seed,
         theta: float, workers: int) -> ISEstimate:
    if n_samples < 1:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    h = tail.hypothesis
    xi = kernel.xi(k).ravel()
    if theta == 0.0:
        draw = lambda rng, shape: model.sample(rng, h, size=shape)  # noqa: E731
        coef = xi[:, None]
        log_norm = 0.0
    else:
        eta = _eta_grid(kernel, k, theta)
        draw = model.twisted_sampler(eta, h)
        coef = np.column_stack([xi, eta])
        log_norm = math.fsum(np.atleast_1d(model.psi(eta, h)))
    sizes = block_plan(n_samples, xi.size)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = root.spawn(len(sizes))

    def one_block(i):
        rng = np.random.default_rng(streams[i])
        proj = draw(rng, (sizes[i], xi.size)) @ coef
        y = proj[:, 0]
        logw = np.zeros_like(y) if theta == 0.0 else log_norm - proj[:, 1]
        return _reduce_block(y, logw, tail)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(one_block, range(len(sizes))))
    else:
        blocks = [one_block(i) for i in range(len(sizes))]
    return _combine(blocks, n_samples)


def plain_mc_tail(tail: TailSpec, k: int, kernel: WeightKernel, model: StatModel, n_samples: int,
                  seed=None, workers: int = 1) -> ISEstimate:
    """Fraction of steady-state draws in the tail, with its binomial standard error."""
    if n_samples < 100:
        raise ValueError(f"plain Monte Carlo needs at least 100 samples, got {n_samples}")
    return _run(tail, k, kernel, model, n_samples, seed, 0.0, workers)


def is_tail(tail: TailSpec, k: int, kernel: WeightKernel, model: StatModel, n_samples: int,
            seed=None, theta: float | None = None, workers: int = 1) -> ISEstimate:
    """Importance-sampling estimate of the tail probability with twist ``theta/mu``.

    ``theta`` defaults to the root of the stationary equation for ``tail``;
    passing ``theta=0`` reproduces plain Monte Carlo draw for draw.
    """
    if theta is None:
        limiting = LimitingLmgf(model, tail.hypothesis, kernel.perron)
        theta = solve_theta(tail, limiting)
    est = _run(tail, k, kernel, model, n_samples, seed, float(theta), workers)
    if est.degenerate:
        warnings.warn(
            f"importance weights are degenerate (ESS {est.ess:.1f} of {n_samples}); "
            "check the tail direction and twist",
            DegenerateESSWarning,
            stacklevel=2,
        )
    return est
