"""Subproblem-engine tests.

Covers the difference formula for third-derivative actions, the setup
arithmetic (difference step, ball radius, accuracy floor), single Bregman
steps against scalar and dense reference solves, and full certified solves
against the damped-Newton reference minimizer.
"""

import numpy as np
import pytest

from hyperfast import bdgm
from hyperfast.bdgm import (
    STEP_SCALE,
    TAU_FLOOR,
    SubproblemError,
    approx_grad,
    bregman_step,
    bregman_step_dense,
    fd_third_action,
)
from hyperfast.oracles import ProblemOracle, counted
from hyperfast.problems import (
    LogisticLoss,
    QuarticObjective,
    make_quartic,
    synth_logreg,
)
from hyperfast.taylor import ModelSpec, exact_model_min, membership_residual, model_grad, model_value

# 3e-6 / (8*(2+sqrt(2))), the difference step at delta=1e-6, unit gradient.
TAU_EXAMPLE = 1.0983495705504468e-07
# 2*((2+sqrt(2))/24)^(1/3), the ball radius at L3=24, unit gradient.
BALL_EXAMPLE = 1.0440544356661505
# Positive root of STEP_SCALE*(2s + 3s^3) = 0.7 by 200-step bisection.
SCALAR_STEP_ROOT = 0.10096861533445309


class _Cubic1D(ProblemOracle):
    """f(x) = x^3 on the line; only used to exercise the difference formula
    (never minimized, so convexity does not matter here)."""

    def __init__(self):
        super().__init__(1, 6.0)

    def value(self, x):
        return float(x[0] ** 3)

    def grad(self, x):
        return np.array([3.0 * x[0] ** 2])

    def hess(self, x):
        return np.array([[6.0 * x[0]]])


class TestFdThirdAction:
    def test_zero_direction(self):
        orc = make_quartic(np.eye(2), np.zeros(2), 1.0)
        out = fd_third_action(orc, np.ones(2), np.zeros(2), 1e-3)
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_quadratic_gives_zero(self):
        orc = make_quartic(np.diag([2.0, 5.0]), np.array([1.0, -1.0]), 0.0)
        rng = np.random.default_rng(1)
        for tau in (1e-1, 1e-3):
            out = fd_third_action(orc, rng.standard_normal(2),
                                  rng.standard_normal(2), tau)
            np.testing.assert_allclose(out, 0.0, atol=1e-9)

    def test_cubic_is_exact(self):
        orc = _Cubic1D()
        for z in (0.5, -2.0, 3.0):
            for tau in (1e-1, 1e-4):
                out = fd_third_action(orc, np.zeros(1), np.array([z]), tau)
                assert out[0] == pytest.approx(6.0 * z * z, rel=1e-9)

    def test_exact_on_quartics_for_any_step(self):
        rng = np.random.default_rng(2)
        orc = QuarticObjective(np.eye(3), rng.standard_normal(3), 0.7)
        x = rng.standard_normal(3)
        s = rng.standard_normal(3)
        want = orc.third_action(x, s)
        for tau in (0.5, 1e-2, 1e-4):
            got = fd_third_action(orc, x, s, tau)
            np.testing.assert_allclose(got, want, rtol=1e-7, atol=1e-9)

    def test_quadratic_convergence_on_logistic(self):
        """Halving the step must quarter the error while truncation still
        dominates roundoff."""
        orc = LogisticLoss(synth_logreg(3, 60, 8), ridge=1e-3)
        rng = np.random.default_rng(5)
        x = rng.standard_normal(8) * 0.3
        s = rng.standard_normal(8)
        exact = orc.third_action(x, s)
        wide = float(np.linalg.norm(fd_third_action(orc, x, s, 2e-2) - exact))
        narrow = float(np.linalg.norm(fd_third_action(orc, x, s, 1e-2) - exact))
        assert 3.5 <= wide / narrow <= 4.5

    def test_cached_gradient_saves_one_call(self):
        co = counted(make_quartic(np.eye(2), np.ones(2), 0.5))
        x, s = np.zeros(2), np.ones(2)
        g0 = co.grad(x)
        co.reset()
        fd_third_action(co, x, s, 1e-2)
        assert co.n_grad == 3
        co.reset()
        fd_third_action(co, x, s, 1e-2, g0=g0)
        assert co.n_grad == 2

    def test_nonpositive_step_rejected(self):
        orc = make_quartic(np.eye(1), np.zeros(1), 1.0)
        with pytest.raises(ValueError):
            fd_third_action(orc, np.zeros(1), np.ones(1), 0.0)


class TestSetup:
    def test_difference_step_arithmetic(self):
        # ||grad|| = 1 and zero Hessian at the anchor make delta = eps^1.5,
        # so eps = 1e-4 pins delta = 1e-6 and the nominal step follows.
        orc = make_quartic(np.zeros((1, 1)), np.ones(1), 1.0 / 6.0)
        st = bdgm.setup(orc, np.zeros(1), eps=1e-4)
        assert st.delta == pytest.approx(1e-6, rel=1e-12)
        assert st.tau == pytest.approx(TAU_EXAMPLE, rel=1e-12)
        assert st.tau_used == TAU_FLOOR
        assert st.tau == pytest.approx(
            3.0 * st.delta / (8.0 * (2.0 + np.sqrt(2.0)) * st.grad_norm0),
            rel=1e-14)

    def test_ball_radius_arithmetic(self):
        orc = make_quartic(np.zeros((1, 1)), np.ones(1), 4.0)
        st = bdgm.setup(orc, np.zeros(1), eps=1e-8)
        assert st.L3 == 24.0
        assert st.ball_radius == pytest.approx(BALL_EXAMPLE, rel=1e-12)

    def test_zero_gradient_short_circuit(self):
        orc = make_quartic(np.eye(2), np.zeros(2), 1.0)
        st = bdgm.setup(orc, np.zeros(2), eps=1e-8)
        assert st.solved_reason == "zero_gradient"
        res = bdgm.solve(st)
        assert res.converged
        assert res.iters == 0
        np.testing.assert_array_equal(res.z, np.zeros(2))

    def test_accuracy_floor_short_circuit(self):
        # Asking for eps far above the anchor gradient scale makes the
        # difference-error margin unmeetable; setup reports it up front.
        orc = make_quartic(np.zeros((1, 1)), np.ones(1), 0.25)
        st = bdgm.setup(orc, np.zeros(1), eps=10.0)
        assert st.solved_reason == "accuracy_floor"
        res = bdgm.solve(st)
        assert res.reason == "accuracy_floor"
        np.testing.assert_array_equal(res.z, np.zeros(1))

    def test_bad_eps_rejected(self):
        orc = make_quartic(np.eye(1), np.ones(1), 1.0)
        with pytest.raises(ValueError):
            bdgm.setup(orc, np.zeros(1), eps=0.0)

    def test_step_scale_constant(self):
        assert STEP_SCALE == pytest.approx(2.0 + np.sqrt(2.0), rel=1e-15)


class TestApproxGrad:
    def test_at_anchor_returns_cached_gradient(self):
        orc = make_quartic(np.eye(2), np.array([0.5, -0.25]), 0.5)
        st = bdgm.setup(orc, np.zeros(2), eps=1e-8)
        out = approx_grad(st, np.zeros(2))
        np.testing.assert_array_equal(out, st.g0)
        assert out is not st.g0

    def test_quadratic_matches_model_gradient_exactly(self):
        rng = np.random.default_rng(7)
        orc = make_quartic(np.diag([1.0, 3.0]), rng.standard_normal(2), 0.0)
        x = rng.standard_normal(2)
        st = bdgm.setup(orc, x, eps=1e-8)
        spec = ModelSpec(orc, x, H=1.5 * orc.lipschitz_L3)
        for _ in range(5):
            z = x + 0.3 * rng.standard_normal(2)
            np.testing.assert_allclose(approx_grad(st, z), model_grad(spec, z),
                                       rtol=1e-9, atol=1e-12)

    def test_quartic_matches_model_gradient(self):
        rng = np.random.default_rng(8)
        orc = QuarticObjective(np.eye(3), rng.standard_normal(3), 0.9)
        x = rng.standard_normal(3) * 0.5
        st = bdgm.setup(orc, x, eps=1e-8)
        spec = ModelSpec(orc, x, H=1.5 * orc.lipschitz_L3)
        for _ in range(5):
            z = x + 0.2 * rng.standard_normal(3)
            np.testing.assert_allclose(approx_grad(st, z), model_grad(spec, z),
                                       rtol=1e-7, atol=1e-10)


class TestBregmanStep:
    def test_zero_gradient_stays_put(self):
        orc = make_quartic(np.eye(2), np.array([1.0, 0.0]), 0.5)
        st = bdgm.setup(orc, np.zeros(2), eps=1e-8)
        z_i = st.x_tilde + np.array([0.05, -0.02])
        out = bregman_step(st, z_i, np.zeros(2))
        np.testing.assert_allclose(out, z_i, atol=1e-12)

    def test_scalar_reference_root(self):
        """One step from the anchor solves a*(mu*s + L3*s^3) = -g in 1D;
        the root for mu=2, L3=3, g=-0.7 was bisected up front."""
        orc = make_quartic(np.array([[2.0]]), np.array([0.7]), 0.5)
        st = bdgm.setup(orc, np.zeros(1), eps=1e-8)
        assert st.L3 == 3.0
        out = bregman_step(st, st.x_tilde, np.array([-0.7]))
        assert out[0] == pytest.approx(SCALAR_STEP_ROOT, abs=1e-11)

    def test_first_order_condition_interior(self):
        rng = np.random.default_rng(11)
        for n in (2, 5):
            M = rng.standard_normal((n, n)) / np.sqrt(n)
            orc = QuarticObjective(M.T @ M + 0.2 * np.eye(n),
                                   rng.standard_normal(n), 0.6)
            x = 0.3 * rng.standard_normal(n)
            st = bdgm.setup(orc, x, eps=1e-8)
            z_i = x + 0.05 * rng.standard_normal(n)
            g = 0.1 * rng.standard_normal(n)
            z_next = bregman_step(st, z_i, g)
            s_i = z_i - x
            s_n = z_next - x
            rho = lambda s: st.B @ s + st.L3 * float(s @ s) * s
            resid = STEP_SCALE * (rho(s_n) - rho(s_i)) + g
            assert np.linalg.norm(resid) <= 1e-8 * (1.0 + np.linalg.norm(g))

    def test_dense_and_eig_paths_agree(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            n = int(rng.integers(1, 6))
            M = rng.standard_normal((n, n)) / np.sqrt(n)
            orc = QuarticObjective(M.T @ M + 0.1 * np.eye(n),
                                   rng.standard_normal(n), 0.8)
            x = 0.2 * rng.standard_normal(n)
            st = bdgm.setup(orc, x, eps=1e-8)
            z_i = x + 0.03 * rng.standard_normal(n)
            g = rng.standard_normal(n)
            a = bregman_step(st, z_i, g)
            b = bregman_step_dense(st, z_i, g)
            np.testing.assert_allclose(a, b, atol=1e-10)

    def test_boundary_case_lands_on_ball(self):
        orc = make_quartic(np.eye(2), np.array([0.1, 0.0]), 0.5)
        st = bdgm.setup(orc, np.zeros(2), eps=1e-8)
        g = np.array([500.0, -250.0])
        out = bregman_step(st, st.x_tilde, g)
        assert np.linalg.norm(out - st.x_tilde) == pytest.approx(
            st.ball_radius, abs=1e-10)
        out_dense = bregman_step_dense(st, st.x_tilde, g)
        np.testing.assert_allclose(out, out_dense, atol=1e-10)

    def test_model_value_decreases_until_certified(self):
        """Replay the solve loop by hand on an exact-third-derivative
        problem and check the regularized model value never increases."""
        rng = np.random.default_rng(13)
        orc = QuarticObjective(np.eye(3), rng.standard_normal(3), 0.5)
        x = rng.standard_normal(3) * 0.4
        st = bdgm.setup(orc, x, eps=1e-8)
        spec = ModelSpec(orc, x, H=1.5 * orc.lipschitz_L3)
        z = st.x_tilde.copy()
        previous = model_value(spec, z)
        for _ in range(60):
            z = bregman_step(st, z, approx_grad(st, z))
            current = model_value(spec, z)
            assert current <= previous + 1e-12
            previous = current


class TestSolve:
    def test_agrees_with_reference_minimizer(self):
        orc = make_quartic(np.zeros((1, 1)), np.zeros(1), 0.25)
        st = bdgm.setup(orc, np.ones(1), eps=1e-8)
        res = bdgm.solve(st)
        assert res.converged
        assert res.reason == "certified"
        spec = ModelSpec(orc, np.ones(1), H=1.5 * orc.lipschitz_L3)
        ystar = exact_model_min(spec)
        assert np.linalg.norm(res.z - ystar) <= 1e-4 * (1.0 + np.linalg.norm(ystar))

    def test_certified_answer_is_member(self):
        rng = np.random.default_rng(15)
        for n in (2, 4):
            orc = QuarticObjective(np.eye(n), rng.standard_normal(n), 0.7)
            x = 0.5 * rng.standard_normal(n)
            st = bdgm.setup(orc, x, eps=1e-8)
            res = bdgm.solve(st)
            assert res.converged
            spec = ModelSpec(orc, x, H=1.5 * orc.lipschitz_L3)
            assert membership_residual(spec, 1.0 / 6.0, res.z).member

    def test_iteration_count_growth_is_additive(self):
        # Tightening eps by two decades may add iterations but not multiply
        # them; the full four-decade sweep lives in the acceptance tests.
        orc = QuarticObjective(np.eye(2), np.array([0.8, -0.6]), 0.5)
        iters = {}
        for eps in (1e-6, 1e-8):
            st = bdgm.setup(orc, np.zeros(2), eps=eps)
            iters[eps] = bdgm.solve(st).iters
        assert iters[1e-8] - iters[1e-6] <= 40

    def test_budget_exhaustion_raises(self):
        orc = make_quartic(np.zeros((1, 1)), np.zeros(1), 0.25)
        st = bdgm.setup(orc, np.ones(1), eps=1e-8)
        with pytest.raises(SubproblemError):
            bdgm.solve(st, max_iters=1)

    def test_custom_setup_matches_plain_path(self):
        """Feeding the engine hand-assembled model pieces (exact third
        action instead of differences) must land on the same subproblem
        answer as the stock path."""
        orc = QuarticObjective(np.eye(2), np.array([0.9, -0.3]), 0.8)
        x = np.zeros(2)
        g0 = orc.grad(x)
        B = orc.hess(x)
        L3 = orc.lipschitz_L3

        def inexact(state, z):
            s = z - state.x_tilde
            if not np.any(s):
                return state.g0.copy()
            return (state.g0 + state.B @ s + 0.5 * orc.third_action(x, s)
                    + state.L3 * float(s @ s) * s)

        st_custom = bdgm.custom_setup(x, g0, B, L3, eps=1e-8,
                                      inexact_grad_fn=inexact,
                                      target_grad_fn=orc.grad)
        st_plain = bdgm.setup(orc, x, eps=1e-8)
        rc = bdgm.solve(st_custom)
        rp = bdgm.solve(st_plain)
        assert rc.converged and rp.converged
        spec = ModelSpec(orc, x, H=1.5 * L3)
        ystar = exact_model_min(spec)
        for res in (rc, rp):
            assert np.linalg.norm(res.z - ystar) <= 1e-4 * (1.0 + np.linalg.norm(ystar))
