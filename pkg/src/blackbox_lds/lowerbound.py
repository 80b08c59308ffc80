"""Attack harnesses showing that black-box control pays an exponential
startup cost: a randomized Gaussian-system adversary (the state component
orthogonal to everything the controller has seen doubles per round with high
probability) and a deterministic adaptive adversary that constructs the
system online, row by row, so that the state provably reaches 2^{d_x - 1}.

Both harnesses attack an arbitrary user-supplied controller, given as a
zero-argument factory returning a deterministic-or-not callback
history -> control, where history is the list of observed states x_1..x_t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import NonDeterministicControllerError

ControllerFn = Callable[[List[np.ndarray]], np.ndarray]
ControllerFactory = Callable[[], ControllerFn]

_ORTHO_TOL = 1e-10


class SubspaceTracker:
    """Orthonormal basis of span(x_1..x_t, u_1..u_t), grown incrementally by
    Gram-Schmidt with one reorthogonalization pass."""

    def __init__(self, dim: int):
        self.dim = dim
        self.basis = np.zeros((dim, 0))

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def residual(self, x) -> np.ndarray:
        """Component of x orthogonal to the tracked span; its norm equals the
        norm of the coordinates of x outside the span."""
        x = np.asarray(x, dtype=float)
        r = x - self.basis @ (self.basis.T @ x)
        r = r - self.basis @ (self.basis.T @ r)
        return r

    def extend(self, v) -> bool:
        """Add v to the span; returns True if the rank grew."""
        v = np.asarray(v, dtype=float)
        r = self.residual(v)
        n = np.linalg.norm(r)
        if n <= _ORTHO_TOL * max(1.0, np.linalg.norm(v)) or self.rank >= self.dim:
            return False
        self.basis = np.hstack([self.basis, (r / n).reshape(-1, 1)])
        return True


def orthogonal_residual(tracker: SubspaceTracker, x) -> np.ndarray:
    return tracker.residual(x)


def sample_gaussian_system(d_x: int, gamma: float, seed) -> np.ndarray:
    """A with i.i.d. N(0, gamma/d_x) entries from the seeded generator."""
    if d_x < 1 or gamma <= 0:
        raise ValueError("d_x must be >= 1 and gamma > 0")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, math.sqrt(gamma / d_x), size=(d_x, d_x))


@dataclass
class TranscriptStep:
    t: int
    x: np.ndarray
    u: np.ndarray
    h_sq: float
    doubled: Optional[bool]  # ||h_{t+1}||^2 >= 2 ||h_t||^2; None for the last step


@dataclass
class AdversaryTranscript:
    kind: str  # "randomized" | "deterministic"
    d_x: int
    steps: list
    final_state_norm: float
    total_cost: float
    seed: Optional[int] = None
    gamma: Optional[float] = None
    system_norm: Optional[float] = None  # ||A|| or ||Q'V||
    A: Optional[np.ndarray] = None
    # deterministic-construction artifacts
    V: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    D: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None
    c_diag: list = field(default_factory=list)   # c_t^t
    a_next: list = field(default_factory=list)   # a_{t+1}^t
    d_signs: list = field(default_factory=list)  # d_t

    @property
    def h_sq(self) -> np.ndarray:
        return np.array([s.h_sq for s in self.steps])

    @property
    def all_doubled(self) -> bool:
        return all(s.doubled for s in self.steps if s.doubled is not None)


def randomized_lb_trial(controller_factory: ControllerFactory, d_x: int,
                        gamma: float = 40.0, seed=0) -> AdversaryTranscript:
    """One trial against a Gaussian system A ~ N(d_x, d_x, gamma/d_x):
    simulate x_{t+1} = A x_t + u_t from x_1 = e_1 for T = floor(d_x/8) rounds
    with costs ||x||^2 + ||u||^2, tracking the unseen-subspace residual h_t
    and whether it doubled."""
    A = sample_gaussian_system(d_x, gamma, seed)
    controller = controller_factory()
    T = max(d_x // 8, 1)
    tracker = SubspaceTracker(d_x)
    x = np.zeros(d_x)
    x[0] = 1.0
    history = [x.copy()]
    steps = []
    h_prev_sq = None
    total_cost = 0.0
    for t in range(1, T + 1):
        h = tracker.residual(x)
        h_sq = float(h @ h)
        if h_prev_sq is not None:
            steps[-1].doubled = bool(h_sq >= 2.0 * h_prev_sq)
        u = np.asarray(controller(history), dtype=float).reshape(-1)
        total_cost += float(x @ x + u @ u)
        steps.append(TranscriptStep(t=t, x=x.copy(), u=u.copy(), h_sq=h_sq,
                                    doubled=None))
        h_prev_sq = h_sq
        tracker.extend(x)
        tracker.extend(u)
        if t < T:
            x = A @ x + u
            history.append(x.copy())
    return AdversaryTranscript(
        kind="randomized", d_x=d_x, steps=steps,
        final_state_norm=float(np.linalg.norm(steps[-1].x)),
        total_cost=total_cost, seed=seed, gamma=gamma,
        system_norm=float(np.linalg.norm(A, 2)), A=A)


def _unit_outside_span(rows: np.ndarray, dim: int) -> np.ndarray:
    """Deterministic unit vector orthogonal to the given orthonormal rows:
    the standard basis vector with the largest residual, projected and
    normalized."""
    residuals = np.eye(dim) - rows.T @ rows  # column j = residual of e_j
    norms = np.linalg.norm(residuals, axis=0)
    j = int(np.argmax(norms))
    if norms[j] <= _ORTHO_TOL:
        raise ValueError("no direction left outside the span")
    return residuals[:, j] / norms[j]


def _sign(v: float) -> float:
    # sign(0) fixed to +1: any fixed choice preserves the doubling recursion
    return 1.0 if v >= 0.0 else -1.0


def deterministic_adversary(controller_factory: ControllerFactory,
                            d_x: int) -> AdversaryTranscript:
    """Adaptive construction defeating any deterministic controller.

    The system is x_{t+1} = Q'V x_t + u_t with orthonormal V and Q = D P V
    built online: V_1 = e_1'; after seeing u_t, the new direction y_t is the
    normalized component of u_t outside span(V_1..V_t) (or an arbitrary unit
    vector there when u_t adds nothing new), Q_t = d_t y_t' with
    d_t = sign(c_t^t) sign(a_{t+1}^t) * 2, and V_{t+1} = y_t'. Writing
    x_t = sum_i c_i^t V_i' + c_t^t y_{t-1}, the choice of d_t forces
    |c_{t+1}^{t+1}| = 2 |c_t^t| + |a_{t+1}^t|, so ||x_{d_x}|| >= 2^{d_x - 1},
    while ||Q'V|| <= 2. Only rows fixed so far are ever exercised, so the
    trajectory is independent of the rows chosen later.

    Determinism of the controller is verified by running two independently
    constructed instances on the same history and comparing controls.
    """
    if d_x < 2:
        raise ValueError("d_x must be >= 2")
    controller = controller_factory()
    witness = controller_factory()
    V_rows = np.zeros((1, d_x))
    V_rows[0, 0] = 1.0  # V_1 = e_1'
    Q_rows = []
    d_signs = []
    c_diag = [1.0]  # c_1^1: x_1 = e_1 = V_1'
    a_next = []
    x = np.zeros(d_x)
    x[0] = 1.0
    history = [x.copy()]
    steps = []
    total_cost = 0.0
    for t in range(1, d_x):
        u = np.asarray(controller(history), dtype=float).reshape(-1)
        u_check = np.asarray(witness([h.copy() for h in history]),
                             dtype=float).reshape(-1)
        if u.shape != u_check.shape or not np.array_equal(u, u_check):
            raise NonDeterministicControllerError(
                f"controller produced different controls at step {t}")
        # y_t: new orthonormal direction extracted from u_t
        coeffs = V_rows @ u
        r = u - V_rows.T @ coeffs
        rnorm = np.linalg.norm(r)
        if rnorm > _ORTHO_TOL * max(1.0, np.linalg.norm(u)):
            y = r / rnorm
            y = y - V_rows.T @ (V_rows @ y)
            y = y / np.linalg.norm(y)
        else:
            y = _unit_outside_span(V_rows, d_x)
        a_t = float(y @ u)
        c_t = c_diag[-1]
        d_t = _sign(c_t) * _sign(a_t) * 2.0
        Q_rows.append(d_t * y)
        d_signs.append(d_t)
        a_next.append(a_t)
        total_cost += float(x @ x + u @ u)
        steps.append(TranscriptStep(t=t, x=x.copy(), u=u.copy(),
                                    h_sq=c_t**2, doubled=None))
        # x_{t+1} = Q'V x_t + u_t; x_t lives in span(V_1..V_t), so only the
        # rows fixed so far contribute
        coords = V_rows @ x
        x = np.array(Q_rows).T @ coords + u
        V_rows = np.vstack([V_rows, y])
        history.append(x.copy())
        # the diagonal coefficient obeys c_{t+1} = c_t d_t + a_t; the signs
        # make the terms add constructively, so |c| at least doubles
        c_diag.append(c_t * d_t + a_t)
    total_cost += float(x @ x)  # terminal state cost, zero-control round
    steps.append(TranscriptStep(t=d_x, x=x.copy(), u=np.zeros(d_x),
                                h_sq=c_diag[-1] ** 2, doubled=None))
    measured = float(V_rows[d_x - 1] @ x)
    if abs(measured - c_diag[-1]) > 1e-6 * max(1.0, abs(c_diag[-1])):
        raise AssertionError("construction drifted: recursion and measured "
                             f"coefficients disagree ({c_diag[-1]} vs {measured})")
    # complete the system: Q_{d_x} = 2 V_1, Q = D P V with the cyclic shift P
    Q_rows.append(2.0 * V_rows[0])
    d_signs.append(2.0)
    V = V_rows
    Q = np.array(Q_rows)
    D = np.diag(d_signs)
    P = np.zeros((d_x, d_x))
    for i in range(d_x):
        P[i, (i + 1) % d_x] = 1.0
    return AdversaryTranscript(
        kind="deterministic", d_x=d_x, steps=steps,
        final_state_norm=float(np.linalg.norm(x)),
        total_cost=total_cost, system_norm=float(np.linalg.norm(Q.T @ V, 2)),
        V=V, Q=Q, D=D, P=P, c_diag=c_diag, a_next=a_next, d_signs=d_signs)


# -- built-in controllers to attack ------------------------------------------

def zero_controller() -> ControllerFn:
    """u_t = 0."""
    return lambda history: np.zeros_like(history[-1])


def negative_identity_controller() -> ControllerFn:
    """u_t = -x_t."""
    return lambda history: -history[-1]


def certainty_equivalent_controller() -> ControllerFn:
    """Least-squares certainty equivalence: fit x_{t+1} - u_t = A x_t on the
    observed transitions and play u_t = -A_hat x_t."""
    past_controls = []

    def act(history):
        x = history[-1]
        if len(history) >= 2:
            X = np.array(history[:-1]).T
            Y = (np.array(history[1:]) - np.array(past_controls)).T
            A_hat = Y @ np.linalg.pinv(X)
            u = -A_hat @ x
        else:
            u = np.zeros_like(x)
        past_controls.append(u)
        return u

    return act


def frozen_random_controller(seed: int = 12345, scale: float = 1.0) -> ControllerFn:
    """Linear feedback u_t = R x_t with R drawn once from a fixed seed."""
    state = {"R": None}

    def act(history):
        x = history[-1]
        if state["R"] is None:
            rng = np.random.default_rng(seed)
            d = x.shape[0]
            state["R"] = rng.normal(0.0, scale / math.sqrt(d), size=(d, d))
        return state["R"] @ x

    return act


BUILTIN_CONTROLLERS = {
    "zero": zero_controller,
    "negative_identity": negative_identity_controller,
    "certainty_equivalent": certainty_equivalent_controller,
    "frozen_random": frozen_random_controller,
}
