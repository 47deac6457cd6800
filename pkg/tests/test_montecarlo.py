import math
import warnings

import numpy as np
import pytest
from scipy import stats

from adaptdetect.asymptotics import TailSpec, exact_asymptotic, solve_theta
from adaptdetect.lmgf import LimitingLmgf, TruncatedLmgf
from adaptdetect.models import GaussianShiftModel, Hypothesis, LaplaceShiftModel
from adaptdetect.montecarlo import (
    DegenerateESSWarning,
    DiffusionState,
    ISEstimate,
    atc_step,
    block_plan,
    is_tail,
    plain_mc_tail,
    run_diffusion,
    steady_state_sample,
    twisted_steady_state_sample,
)
from adaptdetect.network import (
    CombinationMatrix,
    WeightKernel,
    build_metropolis,
    build_uniform_averaging,
    full,
    path,
)

H0, H1 = Hypothesis.H0, Hypothesis.H1
LAPLACE = LaplaceShiftModel(0.6)
GAUSS = GaussianShiftModel(0.0, 1.0, 1.0)


def _combined_z(a: ISEstimate, b: ISEstimate) -> float:
    return abs(a.p_hat - b.p_hat) / math.hypot(a.std_err, b.std_err)


class TestAtcStep:
    def test_fixed_point(self):
        A = build_metropolis(path(4))
        state = DiffusionState(np.full(4, 2.5))
        for _ in range(5):
            state = atc_step(state, A, 0.3, np.full(4, 2.5))
        np.testing.assert_allclose(state.y, 2.5, rtol=1e-15)
        assert state.n == 5

    def test_identity_decouples(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(20, 3))
        state = DiffusionState(np.zeros(3))
        ewma = np.zeros(3)
        for row in x:
            state = atc_step(state, np.eye(3), 0.2, row)
            ewma = 0.8 * ewma + 0.2 * row
        np.testing.assert_allclose(state.y, ewma, rtol=1e-13)

    def test_hand_evaluation(self):
        A = np.full((2, 2), 0.5)
        out = atc_step(DiffusionState(np.zeros(2)), A, 0.5, np.array([2.0, 0.0]))
        np.testing.assert_allclose(out.y, [0.5, 0.5])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            atc_step(DiffusionState(np.zeros(3)), np.eye(2), 0.5, np.zeros(2))

    def test_batched_runs(self):
        A = build_uniform_averaging(path(3))
        y = np.arange(6.0).reshape(2, 3)
        x = np.ones((2, 3))
        batched = atc_step(DiffusionState(y), A, 0.1, x).y
        for r in range(2):
            np.testing.assert_allclose(batched[r], atc_step(DiffusionState(y[r]), A, 0.1, x[r]).y)


class TestSteadyState:
    def test_diffusion_matches_direct_sampling(self):
        mu = 0.1
        A = build_uniform_averaging(path(3))
        K = WeightKernel(A, mu)
        n = 100_000
        warm = math.ceil(8 / mu)
        run = run_diffusion(np.random.default_rng(1), A, mu, LAPLACE, H0, warm, n_runs=n).y[:, 0]
        direct = steady_state_sample(np.random.default_rng(2), 0, K, LAPLACE, H0, size=n)
        se_mean = math.sqrt(run.var() / n + direct.var() / n)
        assert abs(run.mean() - direct.mean()) < 4 * se_mean
        c_run, c_dir = run - run.mean(), direct - direct.mean()
        se_var = math.sqrt((np.var(c_run ** 2) + np.var(c_dir ** 2)) / n)
        assert abs(run.var() - direct.var()) < 4 * se_var

    @pytest.mark.parametrize("h", [H0, H1])
    def test_moments(self, h):
        mu = 0.3
        K = WeightKernel(build_metropolis(path(2)), mu)
        tr = TruncatedLmgf(LAPLACE, h, K, 1)
        rng = np.random.default_rng(3)
        y = np.concatenate([steady_state_sample(rng, 1, K, LAPLACE, h, size=100_000) for _ in range(3)])
        n = y.size
        assert abs(y.mean() - LAPLACE.mean(h)) < 4 * y.std() / math.sqrt(n)
        c = y - y.mean()
        se_var = math.sqrt(np.var(c ** 2) / n)
        assert abs(y.var() - tr.variance()) < 4 * se_var

    def test_gaussian_law_ks(self):
        K = WeightKernel(build_uniform_averaging(path(3)), 0.1)
        tr = TruncatedLmgf(GAUSS, H0, K, 2)
        y = steady_state_sample(np.random.default_rng(4), 2, K, GAUSS, H0, size=100_000)
        res = stats.kstest(y, stats.norm(tr.mean(), math.sqrt(tr.variance())).cdf)
        assert res.statistic < 1.628 / math.sqrt(y.size)

    def test_scalar_draw(self):
        K = WeightKernel(build_metropolis(path(2)), 0.3)
        assert isinstance(steady_state_sample(np.random.default_rng(0), 0, K, LAPLACE), float)


class TestPlainMonteCarlo:
    def _kernel(self):
        return WeightKernel(build_metropolis(full(3)), 0.1)

    def test_certain_event(self):
        est = plain_mc_tail(TailSpec(-5.0, "upper", H0), 0, self._kernel(), LAPLACE, 1000, seed=1)
        assert est.p_hat == 1.0 and est.std_err == 0.0 and est.n_hits == 1000

    def test_impossible_event(self):
        est = plain_mc_tail(TailSpec(0.61, "upper", H0), 0, self._kernel(), LAPLACE, 1000, seed=1)
        assert est.p_hat == 0.0 and est.n_hits == 0

    def test_binomial_standard_error(self):
        est = plain_mc_tail(TailSpec(-0.05, "upper", H0), 0, self._kernel(), LAPLACE, 20_000, seed=2)
        p = est.p_hat
        assert est.std_err == pytest.approx(math.sqrt(p * (1 - p) / 20_000), rel=1e-9)
        assert est.ess <= est.n_samples

    def test_min_samples(self):
        with pytest.raises(ValueError):
            plain_mc_tail(TailSpec(0.0, "upper", H0), 0, self._kernel(), LAPLACE, 50, seed=1)


class TestImportanceSampling:
    MU = 0.1

    def _setup(self, model=LAPLACE, A=None):
        A = A if A is not None else build_metropolis(full(3))
        K = WeightKernel(A, self.MU)
        return K, LimitingLmgf(model, H0, K.perron)

    def test_zero_twist_is_plain_mc(self):
        K, _ = self._setup()
        tail = TailSpec(-0.05, "upper", H0)
        a = plain_mc_tail(tail, 1, K, LAPLACE, 5000, seed=11)
        b = is_tail(tail, 1, K, LAPLACE, 5000, seed=11, theta=0.0)
        assert a == b

    def test_weight_identity(self):
        K, lim = self._setup(A=build_uniform_averaging(path(4)))
        tail = TailSpec(0.05, "upper", H0)
        theta = solve_theta(tail, lim)
        y, logw = twisted_steady_state_sample(np.random.default_rng(5), 2, K, LAPLACE, H0, theta, 2000)
        phi_k = TruncatedLmgf(LAPLACE, H0, K, 2)(theta / self.MU)
        np.testing.assert_allclose(logw, -(theta / self.MU) * y + phi_k, atol=1e-9, rtol=0)

    def test_twisted_draws_centered_on_gamma(self):
        K, lim = self._setup()
        tail = TailSpec(0.0, "upper", H0)
        theta = solve_theta(tail, lim)
        y, _ = twisted_steady_state_sample(np.random.default_rng(6), 0, K, LAPLACE, H0, theta, 100_000)
        target = TruncatedLmgf(LAPLACE, H0, K, 0).prime(theta / self.MU)
        assert abs(y.mean() - target) < 4 * y.std() / math.sqrt(y.size)
        assert target == pytest.approx(0.0, abs=0.02)

    @pytest.mark.parametrize("gamma", [-0.05, -0.03])
    def test_agrees_with_plain_mc(self, gamma):
        K, _ = self._setup()
        tail = TailSpec(gamma, "upper", H0)
        mc = plain_mc_tail(tail, 0, K, LAPLACE, 40_000, seed=21)
        est = is_tail(tail, 0, K, LAPLACE, 40_000, seed=22)
        assert 0.02 <= mc.p_hat <= 0.2
        assert _combined_z(mc, est) < 3

    def test_lower_tail_under_h1(self):
        K = WeightKernel(build_metropolis(full(3)), self.MU)
        tail = TailSpec(0.05, "lower", H1)
        mc = plain_mc_tail(tail, 0, K, LAPLACE, 40_000, seed=31)
        est = is_tail(tail, 0, K, LAPLACE, 40_000, seed=32)
        assert _combined_z(mc, est) < 3
        # mirror of the H0 upper tail at -0.05
        mirror = is_tail(TailSpec(-0.05, "upper", H0), 0, K, LAPLACE, 40_000, seed=33)
        assert _combined_z(mirror, est) < 3

    def test_gaussian_exact_tail(self):
        A = build_uniform_averaging(path(3))
        K, lim = self._setup(GAUSS, A)
        tail = TailSpec(0.5, "upper", H0)
        tr = TruncatedLmgf(GAUSS, H0, K, 1)
        exact = stats.norm.sf((0.5 - tr.mean()) / math.sqrt(tr.variance()))
        est = is_tail(tail, 1, K, GAUSS, 50_000, seed=41)
        assert abs(est.p_hat - exact) < 3 * est.std_err
        assert est.rel_err < 0.05

    def test_deep_tail_relative_error(self):
        K = WeightKernel(build_metropolis(full(3)), 0.05)
        lim = LimitingLmgf(LAPLACE, H0, K.perron)
        tail = TailSpec(0.05, "upper", H0)
        est = is_tail(tail, 0, K, LAPLACE, 20_000, seed=51)
        asym = math.exp(exact_asymptotic(tail, 0, K, lim))
        assert asym < 1e-4
        assert est.rel_err < 0.05
        assert abs(est.p_hat / asym - 1) < 0.2

    def test_reproducible_and_thread_independent(self):
        K, _ = self._setup()
        tail = TailSpec(0.0, "upper", H0)
        a = is_tail(tail, 0, K, LAPLACE, 30_000, seed=7)
        b = is_tail(tail, 0, K, LAPLACE, 30_000, seed=7)
        c = is_tail(tail, 0, K, LAPLACE, 30_000, seed=7, workers=4)
        assert a == b
        assert c.p_hat == pytest.approx(a.p_hat, rel=1e-14)
        assert c.std_err == pytest.approx(a.std_err, rel=1e-12)
        d = is_tail(tail, 0, K, LAPLACE, 30_000, seed=8)
        assert d.p_hat != a.p_hat

    def test_seed_sequence_accepted(self):
        K, _ = self._setup()
        tail = TailSpec(0.0, "upper", H0)
        a = is_tail(tail, 0, K, LAPLACE, 1000, seed=np.random.SeedSequence(3))
        b = is_tail(tail, 0, K, LAPLACE, 1000, seed=3)
        assert a == b

    def test_degenerate_ess_warns(self):
        K, lim = self._setup()
        tail = TailSpec(0.0, "upper", H0)
        theta = solve_theta(tail, lim)
        with pytest.warns(DegenerateESSWarning):
            est = is_tail(tail, 0, K, LAPLACE, 2000, seed=9, theta=4 * theta)
        assert est.degenerate

    def test_no_warning_for_good_twist(self):
        K, _ = self._setup()
        with warnings.catch_warnings():
            warnings.simplefilter("error", DegenerateESSWarning)
            est = is_tail(TailSpec(0.0, "upper", H0), 0, K, LAPLACE, 5000, seed=10)
        assert 0 < est.ess <= est.n_samples
        assert est.log_p_hat == pytest.approx(math.log(est.p_hat))


class TestBlocks:
    @pytest.mark.parametrize("n, grid", [(100, 10), (100_000, 789), (5, 1 << 22), (4096 * 3, 10)])
    def test_plan_covers_samples(self, n, grid):
        plan = block_plan(n, grid)
        assert sum(plan) == n
        assert all(b >= 1 for b in plan)
        assert len(set(plan[:-1])) <= 1

    def test_rank_one_network_agents_share_estimates(self):
        p = np.array([0.5, 0.5])
        K = WeightKernel(CombinationMatrix(np.tile(p, (2, 1))), 0.1)
        tail = TailSpec(0.0, "upper", H0)
        assert is_tail(tail, 0, K, LAPLACE, 2000, seed=1) == is_tail(tail, 1, K, LAPLACE, 2000, seed=1)
