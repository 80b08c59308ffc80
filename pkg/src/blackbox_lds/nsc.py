"""Phase 3: online nonstochastic control with a disturbance-action controller.

Controls are u_t = K x_t + sum_i M^{i-1} w_hat_{t-i} with the history
matrices M updated by projected online gradient descent on a surrogate loss:
the cost of the H-step zero-reset counterfactual trajectory replayed through
the estimated dynamics. States are affine in M, so the surrogate is convex
and its gradient is exact chain rule through the unrolled recursion.

The offline comparator (best DAC in hindsight) minimizes the true
counterfactual cost over the same constraint set by projected gradient
descent with backtracking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatchError
from .lds import CostFunction, CostSpec, LinearSystem, cost_at
from .plant import BlackBoxPlant


@dataclass
class DacParams:
    """Disturbance-action weights M = [M^0 ... M^{H-1}], each d_u x d_x.

    Membership in the constraint set requires ||M^{i-1}|| <= kappa^4 (1-gamma)^i.
    """

    M: np.ndarray  # (H, d_u, d_x)

    @property
    def H(self) -> int:
        return self.M.shape[0]

    @staticmethod
    def zeros(H: int, d_u: int, d_x: int) -> "DacParams":
        return DacParams(M=np.zeros((H, d_u, d_x)))

    def block_bounds(self, kappa: float, gamma: float) -> np.ndarray:
        i = np.arange(1, self.H + 1)
        return kappa**4 * (1.0 - gamma) ** i

    def max_violation(self, kappa: float, gamma: float) -> float:
        bounds = self.block_bounds(kappa, gamma)
        norms = np.array([np.linalg.norm(self.M[i], 2) for i in range(self.H)])
        return float(np.max(norms - bounds))


def project_M(params: DacParams, kappa: float, gamma: float) -> DacParams:
    """Per-block spectral projection: clip singular values at
    b_i = kappa^4 (1-gamma)^i (exact Frobenius projection onto the ball)."""
    bounds = params.block_bounds(kappa, gamma)
    out = np.empty_like(params.M)
    for i in range(params.H):
        block = params.M[i]
        bound = bounds[i]
        if np.linalg.norm(block, 2) <= bound:
            out[i] = block
            continue
        U, s, Vt = np.linalg.svd(block, full_matrices=False)
        out[i] = (U * np.minimum(s, bound)) @ Vt
    return DacParams(M=out)


def dac_control(K, params: DacParams, x, w_buffer) -> np.ndarray:
    """u = K x + sum_{i=1}^H M^{i-1} w_hat_{t-i}.

    w_buffer rows are time ordered, most recent last: w_buffer[-i] = w_hat_{t-i}.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    w_buffer = np.atleast_2d(np.asarray(w_buffer, dtype=float))
    H = params.H
    if len(w_buffer) < H:
        raise DimensionMismatchError("disturbance buffer", (f">= {H}", K.shape[1]),
                                     w_buffer.shape)
    window_desc = w_buffer[::-1][:H]  # rows w_{t-1}, ..., w_{t-H}
    return K @ np.asarray(x, dtype=float) + np.einsum(
        "hux,hx->u", params.M, window_desc)


def estimate_disturbance(A_est, B_est, x_t, u_t, x_next) -> np.ndarray:
    """w_hat_t = x_{t+1} - A~ x_t - B~ u_t.

    Grouped as x_next - (A x + B u), mirroring the forward transition's
    arithmetic order so that with exact estimates the only deviation from the
    true w_t is the single rounding of the forward addition.
    """
    A_est = np.atleast_2d(np.asarray(A_est, dtype=float))
    B_est = np.asarray(B_est, dtype=float)
    if B_est.ndim == 1:
        B_est = B_est.reshape(-1, 1)
    drift = A_est @ np.asarray(x_t, dtype=float) \
        + B_est @ np.asarray(u_t, dtype=float)
    return np.asarray(x_next, dtype=float) - drift


def _window_stack(w_window, H):
    """stack[s] = [w_window[s+H-1], ..., w_window[s]] for s = 0..H: the
    descending disturbance windows feeding the controls of the H-step
    counterfactual (stack[H] feeds the terminal control)."""
    from numpy.lib.stride_tricks import sliding_window_view
    d_x = w_window.shape[1]
    asc = sliding_window_view(w_window, (H, d_x)).reshape(H + 1, H, d_x)
    return asc[:, ::-1, :]


def _surrogate_forward(M, A_est, B_est, K, w_window):
    """Zero-reset counterfactual over the last H steps.

    w_window has 2H rows, oldest first: w_window[j] = w_hat_{t-2H+j}.
    Returns intermediate states plus the terminal control for the backward pass.
    """
    H = M.shape[0]
    d_x = A_est.shape[0]
    stack = _window_stack(w_window, H)
    offsets = np.einsum("hux,shx->su", M, stack)
    ys = np.zeros((H + 1, d_x))
    for s in range(H):
        u = K @ ys[s] + offsets[s]
        ys[s + 1] = A_est @ ys[s] + B_est @ u + w_window[s + H]
    u_final = K @ ys[H] + offsets[H]
    return ys, u_final, stack


def surrogate_cost(params: DacParams, A_est, B_est, K, w_window,
                   cost_fn: CostFunction) -> float:
    """f_t(M): cost of the H-step counterfactual rolled from the zero state
    through the estimated dynamics under the recorded disturbance estimates."""
    A_est, B_est, K, w_window = _normalize_surrogate_args(A_est, B_est, K,
                                                          w_window, params.H)
    ys, u_final, _ = _surrogate_forward(params.M, A_est, B_est, K, w_window)
    return float(cost_fn.value(ys[-1], u_final))


def surrogate_gradient(params: DacParams, A_est, B_est, K, w_window,
                       cost_fn: CostFunction) -> np.ndarray:
    """Exact gradient of surrogate_cost in the shape of M, by reverse
    accumulation through the affine rollout."""
    A_est, B_est, K, w_window = _normalize_surrogate_args(A_est, B_est, K,
                                                          w_window, params.H)
    M = params.M
    H = M.shape[0]
    ys, u_final, stack = _surrogate_forward(M, A_est, B_est, K, w_window)
    gx, gu = cost_fn.gradient(ys[-1], u_final)
    g_u_all = np.empty((H + 1, M.shape[1]))
    g_u_all[H] = np.asarray(gu, dtype=float)
    g_y = np.asarray(gx, dtype=float) + K.T @ g_u_all[H]  # d f / d y_t
    for s in range(H - 1, -1, -1):
        g_u_all[s] = B_est.T @ g_y
        g_y = A_est.T @ g_y + K.T @ g_u_all[s]
    return np.einsum("su,shx->hux", g_u_all, stack)


def _normalize_surrogate_args(A_est, B_est, K, w_window, H):
    A_est = np.atleast_2d(np.asarray(A_est, dtype=float))
    B_est = np.asarray(B_est, dtype=float)
    if B_est.ndim == 1:
        B_est = B_est.reshape(-1, 1)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    w_window = np.atleast_2d(np.asarray(w_window, dtype=float))
    if len(w_window) != 2 * H:
        raise DimensionMismatchError("disturbance window", (2 * H, A_est.shape[0]),
                                     w_window.shape)
    return A_est, B_est, K, w_window


@dataclass
class GpcState:
    """Mutable learner state for one online run."""

    params: DacParams
    w_buffer: np.ndarray  # (2H, d_x), most recent last; zero padded at start
    A_est: np.ndarray
    B_est: np.ndarray
    K: np.ndarray
    eta: float
    kappa: float
    gamma: float


@dataclass
class GpcResult:
    params: DacParams
    steps: int
    total_cost: float
    max_constraint_violation: float
    param_history: Optional[list] = None


def gpc_run(plant: BlackBoxPlant, K, kappa_star: float, gamma_tilde: float,
            W: float, H: int, eta: float, T: int, A_est, B_est,
            record_params: bool = False) -> GpcResult:
    """Online loop: play the DAC, observe, estimate the disturbance, take a
    projected gradient step on the surrogate loss.

    The buffer is initialized with the current plant state in the most recent
    slot (the state left over from earlier phases enters as the first
    "disturbance") and zeros before that. W is the disturbance-magnitude
    bound the step size was derived from; it is recorded but not consulted.
    """
    if H < 1 or T < 0:
        raise ValueError("H must be >= 1 and T >= 0")
    if eta < 0 or W <= 0:
        raise ValueError("eta must be >= 0 and W > 0")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    A_est = np.atleast_2d(np.asarray(A_est, dtype=float))
    B_est = np.asarray(B_est, dtype=float)
    if B_est.ndim == 1:
        B_est = B_est.reshape(-1, 1)
    d_x, d_u = A_est.shape[0], B_est.shape[1]
    state = GpcState(
        params=project_M(DacParams.zeros(H, d_u, d_x), kappa_star, gamma_tilde),
        w_buffer=np.zeros((2 * H, d_x)),
        A_est=A_est, B_est=B_est, K=K, eta=eta,
        kappa=kappa_star, gamma=gamma_tilde)
    state.w_buffer[-1] = plant.state
    total = 0.0
    max_viol = -math.inf
    history = [] if record_params else None
    for _ in range(T):
        x = plant.state
        u = dac_control(K, state.params, x, state.w_buffer)
        outcome = plant.apply(u, phase="gpc")
        total += outcome.cost
        w_hat = estimate_disturbance(A_est, B_est, x, u, outcome.x_next)
        if eta > 0.0:
            g = surrogate_gradient(state.params, A_est, B_est, K,
                                   state.w_buffer, outcome.cost_fn)
            state.params = project_M(DacParams(M=state.params.M - eta * g),
                                     kappa_star, gamma_tilde)
        max_viol = max(max_viol, state.params.max_violation(kappa_star, gamma_tilde))
        if record_params:
            history.append(state.params.M.copy())
        state.w_buffer = np.vstack([state.w_buffer[1:], w_hat])
    return GpcResult(params=state.params, steps=T, total_cost=total,
                     max_constraint_violation=(max_viol if T else 0.0),
                     param_history=history)


# -- offline comparator ------------------------------------------------------

def _dac_trajectory(sys: LinearSystem, K, M, w_seq, x1):
    """States/controls of the fixed-M DAC on the true system under the
    recorded disturbances (w_s = 0 for s < 1). Returns (X, U, Wdesc) where
    Wdesc[t] rows are w_{t-1}, ..., w_{t-H} for the control at round t+1."""
    w_seq = np.atleast_2d(np.asarray(w_seq, dtype=float))
    T = len(w_seq)
    H = M.shape[0]
    d_x = sys.d_x
    Wpad = np.vstack([np.zeros((H, d_x)), w_seq])
    # windows[t] = rows (w_{t-H+1+j})... build descending windows per round
    from numpy.lib.stride_tricks import sliding_window_view
    asc = sliding_window_view(Wpad, (H, d_x)).reshape(T + 1, H, d_x)[:T]
    Wdesc = asc[:, ::-1, :]  # Wdesc[t-1] = [w_{t-1}, ..., w_{t-H}] for round t
    du_all = np.einsum("hux,thx->tu", M, Wdesc)
    Acl = sys.A + sys.B @ np.atleast_2d(K)
    X = np.empty((T, d_x))
    X[0] = np.asarray(x1, dtype=float)
    for t in range(T - 1):
        X[t + 1] = Acl @ X[t] + sys.B @ du_all[t] + w_seq[t]
    U = X @ np.atleast_2d(K).T + du_all
    return X, U, Wdesc


def _batch_cost(costs: CostSpec) -> Optional[CostFunction]:
    """The single time-invariant cost with batch callbacks, if that is what
    the cost spec is (the fast path for trajectory evaluation)."""
    if isinstance(costs, CostFunction) and costs.batch_value is not None:
        return costs
    return None


def dac_total_cost(sys: LinearSystem, K, M, w_seq, costs: CostSpec, x1) -> float:
    X, U, _ = _dac_trajectory(sys, K, M, w_seq, x1)
    batch = _batch_cost(costs)
    if batch is not None:
        return float(np.sum(batch.batch_value(X, U)))
    total = 0.0
    for t in range(len(X)):
        total += float(cost_at(costs, t + 1).value(X[t], U[t]))
    return total


def _dac_cost_and_gradient(sys: LinearSystem, K, M, w_seq, costs, x1):
    X, U, Wdesc = _dac_trajectory(sys, K, M, w_seq, x1)
    T = len(X)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    batch = _batch_cost(costs)
    if batch is not None:
        total = float(np.sum(batch.batch_value(X, U)))
        gx, gu = batch.batch_gradient(X, U)
        gx = np.asarray(gx, dtype=float)
        gu = np.asarray(gu, dtype=float)
    else:
        gx = np.empty_like(X)
        gu = np.empty_like(U)
        total = 0.0
        for t in range(T):
            c = cost_at(costs, t + 1)
            total += float(c.value(X[t], U[t]))
            gxt, gut = c.gradient(X[t], U[t])
            gx[t] = gxt
            gu[t] = gut
    Acl = (sys.A + sys.B @ K).T
    Bt = sys.B.T
    # adjoint pass: lam_t = d J / d x_t, s_t = d J / d (DAC offset at t)
    base = gx + gu @ K
    S = np.empty_like(U)
    lam = np.zeros(sys.d_x)
    for t in range(T - 1, -1, -1):
        S[t] = gu[t] + Bt @ lam
        lam = base[t] + Acl @ lam
    grad = np.einsum("tu,thx->hux", S, Wdesc)
    return total, grad


@dataclass
class HindsightResult:
    params: DacParams
    cost: float
    grad_norm: float
    iterations: int
    converged: bool
    cost_history: list = field(default_factory=list)


def best_dac_in_hindsight(sys: LinearSystem, w_seq, costs: CostSpec, K,
                          H: int, kappa: float, gamma: float, x1,
                          iters: int = 200, grad_tol: float = 1e-8) -> HindsightResult:
    """Minimize the true total cost over M in the constraint set by projected
    gradient descent with backtracking (the cost is convex in M since states
    are affine in M). Deterministic given its inputs; the returned grad_norm
    is the projected-gradient stationarity measure at the solution."""
    w_seq = np.atleast_2d(np.asarray(w_seq, dtype=float))
    params = DacParams.zeros(H, sys.d_u, sys.d_x)
    J, g = _dac_cost_and_gradient(sys, K, params.M, w_seq, costs, x1)
    step = 1.0 / max(float(np.linalg.norm(g)), 1e-12)
    history = [J]
    pg_norm = math.inf
    converged = False
    it = 0
    for it in range(1, iters + 1):
        moved = False
        while step > 1e-18:
            cand = project_M(DacParams(M=params.M - step * g), kappa, gamma)
            delta = params.M - cand.M
            decrease = float(np.sum(g * delta))
            J_cand = dac_total_cost(sys, K, cand.M, w_seq, costs, x1)
            if J_cand <= J - 1e-4 * decrease:
                pg_norm = float(np.linalg.norm(delta)) / step
                improvement = J - J_cand
                params, J = cand, J_cand
                moved = True
                break
            step *= 0.5
        history.append(J)
        if not moved or pg_norm <= grad_tol:
            converged = True
            break
        if improvement <= 1e-12 * max(abs(J), 1.0):
            converged = True
            break
        _, g = _dac_cost_and_gradient(sys, K, params.M, w_seq, costs, x1)
        step *= 1.5
    return HindsightResult(params=params, cost=J, grad_norm=pg_norm,
                           iterations=it, converged=converged,
                           cost_history=history)
