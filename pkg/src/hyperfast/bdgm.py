"""Gradient-driven minimization of the quartic-regularized cubic model.

The subproblem at an anchor x~ is

    min_y  <g, s> + 0.5*<Bs, s> + (1/6)*D3f(x~)[s]^3 + (L3/4)*||s||^4,

s = y - x~, which is the third-order model with regularization weight
H = 3*L3/2. The solver touches the objective only through gradients: the
cubic term's gradient contribution 0.5*D3f(x~)[s]^2 is replaced by half of a
second central difference of the gradient along s. Iterations are Bregman
proximal steps with the scaling kernel

    rho(z) = 0.5*<B s, s> + (L3/4)*||s||^4,

restricted to a ball around the anchor large enough to contain the model
minimizer. The relative-smoothness constant of the model with respect to rho
fixes the step scale a = 2*(1 + 1/sqrt(2)).

Termination certifies the relative inexactness condition: once the estimated
model gradient at z is below (1/6)*||grad f(z)|| minus the difference-error
margin delta, z is an acceptable subproblem answer for the outer loop. An
additional absolute floor drives z to delta-level proximity of the exact
minimizer so that downstream agreement checks are meaningful; see solve().
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .oracles import Matrix, ProblemOracle, Vector, operator_norm

_EPS = float(np.finfo(np.float64).eps)

#: Bregman step scale 2*(1 + 1/sqrt(2)), equal to 2 + sqrt(2).
STEP_SCALE = 2.0 * (1.0 + 1.0 / np.sqrt(2.0))

#: Same constant in the difference-step and ball formulas.
_W = 2.0 + np.sqrt(2.0)

#: Floor on the difference step. The nominal step is proportional to delta
#: and collapses below float64 resolution for small eps; second differences
#: of gradients amplify roundoff by 1/tau^2, so tau below ~1e-5 is useless
#: and tau ~ 1e-2 keeps the amplification near 1e-12 while the truncation
#: bias (zero on quartic objectives) stays fourth order in the step radius.
TAU_FLOOR = 1e-2


class SubproblemError(RuntimeError):
    """Inner solver exhausted its iteration budget."""


def fd_third_action(oracle: ProblemOracle, x: Vector, s: Vector, tau: float,
                    g0: Vector | None = None) -> Vector:
    """Estimate D3f(x)[s, s] by a second central difference of the gradient.

    Exact (up to roundoff) whenever the gradient is cubic along s, e.g. on
    the quartic family; otherwise the error is quadratic in tau. Pass the
    cached gradient at x as g0 to spend two gradient calls instead of three.
    """
    tau = float(tau)
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if g0 is None:
        g0 = oracle.grad(x)
    plus = oracle.grad(x + tau * s)
    minus = oracle.grad(x - tau * s)
    return (plus + minus - 2.0 * g0) / (tau * tau)


@dataclass
class BdgmState:
    """Frozen subproblem data plus the current iterate.

    tau is the nominal difference step 3*delta/(8*(2+sqrt(2))*||grad f(x~)||);
    tau_used = max(tau, TAU_FLOOR) is what the solver actually passes to the
    difference formula. ball_radius = 2*((2+sqrt(2))*||grad f(x~)||/L3)^(1/3).
    """

    oracle: ProblemOracle | None
    x_tilde: Vector
    eps: float
    c_delta: float
    gamma: float
    g0: Vector
    B: Matrix
    L3: float
    H: float
    grad_norm0: float
    hess_norm0: float
    delta: float
    tau: float
    tau_used: float
    theta_abs: float
    ball_radius: float
    step_scale: float
    evals: Vector
    evecs: Matrix
    solved_reason: str | None = None
    z: Vector = field(default=None)  # type: ignore[assignment]
    iters: int = 0
    inexact_grad_fn: Callable[["BdgmState", Vector], Vector] | None = None
    target_grad_fn: Callable[[Vector], Vector] | None = None

    def target_grad(self, z: Vector) -> Vector:
        if self.target_grad_fn is not None:
            return self.target_grad_fn(z)
        assert self.oracle is not None
        return self.oracle.grad(z)


@dataclass
class BdgmResult:
    z: Vector
    iters: int
    converged: bool
    reason: str
    grad_at_z: Vector
    stop_lhs: float
    stop_rhs: float


def _build_state(oracle, x_tilde, eps, c_delta, gamma, xi, g0, B, L3,
                 inexact_grad_fn=None, target_grad_fn=None) -> BdgmState:
    eps = float(eps)
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if L3 <= 0.0:
        raise ValueError("L3 must be positive")
    grad_norm0 = float(np.linalg.norm(g0))
    hess_norm0 = operator_norm(B)
    solved_reason = None
    if grad_norm0 == 0.0:
        delta = tau = tau_used = theta_abs = 0.0
        ball = 0.0
        solved_reason = "zero_gradient"
    else:
        delta = c_delta * eps**1.5 / (np.sqrt(grad_norm0) + hess_norm0**1.5 / np.sqrt(L3))
        tau = 3.0 * delta / (8.0 * _W * grad_norm0)
        tau_used = max(tau, TAU_FLOOR)
        ball = 2.0 * (_W * grad_norm0 / L3) ** (1.0 / 3.0)
        noise = 4.0 * _EPS * (grad_norm0 + hess_norm0 * ball + L3 * ball**3) / tau_used**2
        theta_abs = max(delta, 2.0 * noise)
        if delta >= gamma * grad_norm0:
            # The certification margin exceeds what any iterate could attain:
            # the anchor gradient is already at the accuracy floor for eps.
            solved_reason = "accuracy_floor"
    evals, evecs = np.linalg.eigh(B)
    state = BdgmState(
        oracle=oracle, x_tilde=np.array(x_tilde, dtype=np.float64), eps=eps,
        c_delta=float(c_delta), gamma=float(gamma), g0=np.asarray(g0, dtype=np.float64),
        B=np.asarray(B, dtype=np.float64), L3=float(L3), H=float(xi) * float(L3),
        grad_norm0=grad_norm0, hess_norm0=hess_norm0, delta=float(delta),
        tau=float(tau), tau_used=float(tau_used), theta_abs=float(theta_abs),
        ball_radius=float(ball), step_scale=STEP_SCALE, evals=evals, evecs=evecs,
        solved_reason=solved_reason, inexact_grad_fn=inexact_grad_fn,
        target_grad_fn=target_grad_fn,
    )
    state.z = state.x_tilde.copy()
    return state


def setup(oracle: ProblemOracle, x_tilde: Vector, eps: float,
          c_delta: float = 1.0, gamma: float = 1.0 / 6.0,
          xi: float = 1.5) -> BdgmState:
    """Prepare the subproblem at an anchor: one gradient and one Hessian."""
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    g0 = oracle.grad(x_tilde)
    B = oracle.hess(x_tilde)
    return _build_state(oracle, x_tilde, eps, c_delta, gamma, xi, g0, B,
                        oracle.lipschitz_L3)


def custom_setup(anchor: Vector, g0: Vector, B: Matrix, L3: float, eps: float,
                 inexact_grad_fn, target_grad_fn, c_delta: float = 1.0,
                 gamma: float = 1.0 / 6.0) -> BdgmState:
    """Engine entry for callers that assemble their own model gradients.

    Used by the composite path, where the objective is a sum of two cached
    models and the stopping gradient belongs to the enclosing subproblem.
    """
    return _build_state(None, anchor, eps, c_delta, gamma, 1.5, g0, B, L3,
                        inexact_grad_fn=inexact_grad_fn,
                        target_grad_fn=target_grad_fn)


def approx_grad(state: BdgmState, z: Vector) -> Vector:
    """Estimated gradient of the regularized model at z.

    g0 + B s + 0.5*(gradient second difference along s) + L3*||s||^2 * s,
    where the last term is the regularizer gradient at H = 3*L3/2.
    """
    if state.inexact_grad_fn is not None:
        return state.inexact_grad_fn(state, z)
    s = np.asarray(z, dtype=np.float64) - state.x_tilde
    if not np.any(s):
        return state.g0.copy()
    fd3 = fd_third_action(state.oracle, state.x_tilde, s, state.tau_used,
                          g0=state.g0)
    return (state.g0 + state.B @ s + 0.5 * fd3
            + state.L3 * float(s @ s) * s)


def _rho_grad(state: BdgmState, s: Vector) -> Vector:
    return state.B @ s + state.L3 * float(s @ s) * s


def _solve_shifted(state: BdgmState, b_proj: Vector, sigma: float) -> Vector:
    return b_proj / (state.evals + sigma)


def bregman_step(state: BdgmState, z_i: Vector, g: Vector) -> Vector:
    """Minimize <g, z - z_i> + a*breg_rho(z_i, z) over the anchor ball.

    The first-order condition reduces to the shifted linear system
    (B + L3*r^2*I)s = rho'(z_i) - g/a with r = ||s||; r is found by
    bisection (the norm of the solution is decreasing in r, so the crossing
    is unique) and capped at the ball radius, where the bisection switches
    to the boundary multiplier. Uses the one-time eigendecomposition of B so
    each trial is O(n); a dense per-trial variant for cross-checking lives
    in bregman_step_dense.
    """
    return _bregman_core(state, z_i, g, _eig_norm_and_vec)


def bregman_step_dense(state: BdgmState, z_i: Vector, g: Vector) -> Vector:
    """Same contract as bregman_step with a dense solve per trial radius."""
    return _bregman_core(state, z_i, g, _dense_norm_and_vec)


def _eig_norm_and_vec(state, b, sigma, want_vec):
    proj = state.evecs.T @ b
    coeff = _solve_shifted(state, proj, sigma)
    if want_vec:
        return float(np.linalg.norm(coeff)), state.evecs @ coeff
    return float(np.linalg.norm(coeff)), None


def _dense_norm_and_vec(state, b, sigma, want_vec):
    s = np.linalg.solve(state.B + sigma * np.eye(b.size), b)
    return float(np.linalg.norm(s)), (s if want_vec else None)


def _bregman_core(state, z_i, g, norm_and_vec):
    a = state.step_scale
    s_i = np.asarray(z_i, dtype=np.float64) - state.x_tilde
    b = _rho_grad(state, s_i) - np.asarray(g, dtype=np.float64) / a
    R = state.ball_radius
    if float(np.linalg.norm(b)) == 0.0 or R == 0.0:
        return state.x_tilde.copy()

    norm_at_cap, _ = norm_and_vec(state, b, state.L3 * R * R, False)
    if norm_at_cap >= R:
        # Crossing sits beyond the ball: pin ||s|| = R via the multiplier.
        sig_lo = state.L3 * R * R
        sig_hi = max(2.0 * sig_lo, float(np.linalg.norm(b)) / R)
        for _ in range(200):
            if norm_and_vec(state, b, sig_hi, False)[0] <= R:
                break
            sig_hi *= 2.0
        else:
            raise SubproblemError("no upper bracket for the boundary multiplier")
        for _ in range(200):
            mid = 0.5 * (sig_lo + sig_hi)
            if norm_and_vec(state, b, mid, False)[0] > R:
                sig_lo = mid
            else:
                sig_hi = mid
            if sig_hi - sig_lo <= 1e-13 * sig_hi:
                break
        _, s = norm_and_vec(state, b, sig_hi, True)
        return state.x_tilde + s

    # Interior: ||s(L3 r^2)|| - r changes sign on (0, R]. It is positive as
    # r -> 0 because b != 0, and non-positive at r = R by the check above.
    lo, hi = 0.0, R
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if norm_and_vec(state, b, state.L3 * mid * mid, False)[0] > mid:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    _, s = norm_and_vec(state, b, state.L3 * hi * hi, True)
    return state.x_tilde + s


def solve(state: BdgmState, max_iters: int = 10000) -> BdgmResult:
    """Run Bregman steps until the subproblem answer is certified.

    Stops at the first iterate z with

        ||approx_grad(z)|| <= gamma*||grad F(z)|| - delta    (certification)
        ||approx_grad(z)|| <= theta_abs                      (proximity floor)

    The first line alone is the acceptance contract for the outer loop; the
    floor theta_abs = max(delta, difference-noise estimate) additionally
    pins z to the exact model minimizer at the accuracy the arithmetic
    supports, which the cross-validation against the reference Newton
    minimizer relies on.
    """
    if state.solved_reason is not None:
        return BdgmResult(state.x_tilde.copy(), 0, True, state.solved_reason,
                          state.g0.copy(), 0.0, 0.0)
    z = state.x_tilde.copy()
    for i in range(max_iters):
        g_hat = approx_grad(state, z)
        grad_z = state.g0 if i == 0 else state.target_grad(z)
        grad_z_norm = float(np.linalg.norm(grad_z))
        lhs = float(np.linalg.norm(g_hat))
        rhs = state.gamma * grad_z_norm - state.delta
        if grad_z_norm == 0.0:
            state.z, state.iters = z, i
            return BdgmResult(z, i, True, "zero_gradient_at_iterate",
                              grad_z, lhs, rhs)
        if lhs <= rhs and lhs <= state.theta_abs:
            state.z, state.iters = z, i
            return BdgmResult(z, i, True, "certified", grad_z, lhs, rhs)
        if lhs <= state.theta_abs:
            # rhs < lhs <= theta_abs: the certification line sits below the
            # arithmetic floor, so no further step can reach it. z already
            # minimizes the model to that floor; hand it back as the same
            # accuracy-floor outcome the setup short-circuit reports.
            state.z, state.iters = z, i
            return BdgmResult(z, i, True, "accuracy_floor", grad_z, lhs, rhs)
        z = bregman_step(state, z, g_hat)
        shift = float(np.linalg.norm(z - state.x_tilde))
        if shift > state.ball_radius * (1.0 + 1e-9):
            raise SubproblemError("iterate escaped the anchor ball")
    raise SubproblemError(
        f"no certificate in {max_iters} iterations "
        f"(last lhs {lhs:.3e}, threshold {min(rhs, state.theta_abs):.3e})")
