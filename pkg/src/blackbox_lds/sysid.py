"""Phase 1: robust identification of (A, B) from a single trajectory.

The probing schedule injects exponentially scaled basis-vector controls, one
input direction every k+1 rounds, with zero controls in between. Because each
probe dwarfs everything the bounded adversarial noise (and earlier probes)
contributed, the normalized responses recover the impulse blocks A^j B to an
accuracy linear in the base scale eps0, and A itself from the overdetermined
system X C_0 = C_1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonFiniteValueError, NotControllableError, ProbeScalingError
from .lds import RANK_RTOL
from .plant import BlackBoxPlant


@dataclass(frozen=True)
class ProbePlan:
    """Control schedule for the identification phase.

    Probe i fires at round t = (i-1)(k+1) + 1 with u_t = xi_i * e_i and
    xi_i = lam^{t-1} * eps0^{-i}; all other rounds use zero control.
    """

    k: int
    d_u: int
    lam: float
    eps0: float
    xi: np.ndarray  # (d_u,) probe scales, strictly increasing

    @property
    def horizon(self) -> int:
        """Number of controlled rounds, (k+1) * d_u."""
        return (self.k + 1) * self.d_u

    def probe_round(self, i: int) -> int:
        """Round at which probe i (1-based) fires."""
        return (i - 1) * (self.k + 1) + 1

    def control_at(self, t: int) -> np.ndarray:
        """Scheduled control for round t (1-based), zero off the probe grid."""
        u = np.zeros(self.d_u)
        if 1 <= t <= self.horizon and (t - 1) % (self.k + 1) == 0:
            i = (t - 1) // (self.k + 1) + 1
            u[i - 1] = self.xi[i - 1]
        return u

    def state_bound(self, t: int) -> float:
        """Worst-case ||x_t|| along the probing trajectory, valid for
        2 <= t <= horizon + 1 when ||x_1|| <= 1 and ||w|| <= 1:
        lam^{t-1} * eps0^{-i} with i the index of the latest fired probe."""
        if t < 2:
            raise ValueError("bound defined for t >= 2")
        j = (t - 2) % (self.k + 1)
        i = (t - 2 - j) // (self.k + 1) + 1
        return self.lam ** (t - 1) * self.eps0 ** (-i)


@dataclass
class EstimateBundle:
    """Identification output: impulse-block estimates and derived (A, B)."""

    M_hat: list  # M_hat[j] estimates A^j B, j = 0..k
    C0: np.ndarray  # [M_0 ... M_{k-1}]
    C1: np.ndarray  # [M_1 ... M_k]
    B_hat: np.ndarray
    x_final: np.ndarray
    A_hat: Optional[np.ndarray] = None


def epsilon_zero(eps: float, d_u: int, k: int, lam: float, d_x: int,
                 kappa: float) -> float:
    """Base probe scale eps0 = eps / (100 d_u^2 k^2 lam^{3k} d_x sqrt(kappa))."""
    if min(eps, d_u, k, lam, d_x, kappa) <= 0:
        raise ValueError("all arguments must be positive")
    if eps >= 0.5:
        raise ValueError("accuracy parameter eps must be < 1/2")
    try:
        denom = 1e2 * d_u**2 * k**2 * lam ** (3 * k) * d_x * math.sqrt(kappa)
    except OverflowError:
        denom = math.inf
    if not math.isfinite(denom):
        raise ProbeScalingError("probe scaling not representable: lam^{3k} overflows")
    value = eps / denom
    if value == 0.0:
        raise ProbeScalingError(
            "probe scaling not representable: eps0 underflows to zero")
    return value


def probe_plan(k: int, d_u: int, lam: float, eps0: float) -> ProbePlan:
    if not 0.0 < eps0 < 1.0:
        raise ValueError("eps0 must be in (0, 1)")
    if lam < 1.0:
        raise ValueError("lam must be >= 1")
    xi = np.empty(d_u)
    for i in range(1, d_u + 1):
        t = (i - 1) * (k + 1) + 1
        try:
            val = lam ** (t - 1) * eps0 ** (-i)
        except OverflowError:
            val = math.inf
        if not math.isfinite(val):
            raise ProbeScalingError(f"probe scaling overflow at probe i={i}")
        xi[i - 1] = val
    return ProbePlan(k=k, d_u=d_u, lam=float(lam), eps0=float(eps0), xi=xi)


def assemble_estimates(states, plan: ProbePlan) -> EstimateBundle:
    """Build M_hat_j, C0, C1 from the recorded states x_1..x_{(k+1)d_u + 1}.

    The response to probe i observed j+1 rounds later sits at
    x_{(i-1)(k+1) + j + 2}; dividing by xi_i isolates column i of A^j B.
    A_hat is left unset; see solve_A.
    """
    k, d_u = plan.k, plan.d_u
    need = plan.horizon + 1
    if len(states) < need:
        raise IndexError(f"need {need} recorded states, got {len(states)}")
    states = [np.asarray(s, dtype=float) for s in states]
    d_x = states[0].shape[0]
    M_hat = []
    for j in range(k + 1):
        cols = np.empty((d_x, d_u))
        for i in range(1, d_u + 1):
            l = (i - 1) * (k + 1) + j + 2
            cols[:, i - 1] = states[l - 1] / plan.xi[i - 1]
        M_hat.append(cols)
    C0 = np.hstack(M_hat[:k])
    C1 = np.hstack(M_hat[1:])
    return EstimateBundle(M_hat=M_hat, C0=C0, C1=C1, B_hat=M_hat[0].copy(),
                          x_final=states[need - 1].copy())


def solve_A(C0: np.ndarray, C1: np.ndarray) -> np.ndarray:
    """A_hat = C1 C0' (C0 C0')^{-1}, the row-wise least-squares solution of
    X C0 = C1. C0 here estimates the controllability matrix, so a singular
    Gram matrix signals a broken identification run."""
    svals = np.linalg.svd(C0, compute_uv=False)
    if (C0.shape[1] < C0.shape[0] or svals[0] == 0.0
            or svals[C0.shape[0] - 1] < RANK_RTOL * svals[0]):
        raise NotControllableError(
            "estimates not controllable; increase eps accuracy or check k, kappa")
    gram = C0 @ C0.T
    return np.linalg.solve(gram, C0 @ C1.T).T


def adv_sys_id(plant: BlackBoxPlant, eps: float, lam: float, k: int,
               kappa: float, x1=None) -> EstimateBundle:
    """Run the probing schedule on the live plant and identify (A, B).

    Requires lam >= 4 (max(||A||, ||B||) + 1); under bounded noise the output
    satisfies ||A_hat - A|| <= eps and ||B_hat - B|| <= eps. The phase pays
    the (exponentially large) probing costs on the plant's own cost sequence.
    """
    x_now = plant.state
    if x1 is not None:
        x1 = np.asarray(x1, dtype=float).reshape(-1)
        if not np.allclose(x1, x_now):
            raise ValueError("x1 does not match the plant's current state")
    if np.linalg.norm(x_now) > 1.0:
        warnings.warn("||x1|| > 1: identification error bounds degrade",
                      stacklevel=2)
    eps0 = epsilon_zero(eps, plant.d_u, k, lam, plant.d_x, kappa)
    plan = probe_plan(k, plant.d_u, lam, eps0)
    states = [x_now]
    for t in range(1, plan.horizon + 1):
        outcome = plant.apply(plan.control_at(t), phase="sysid")
        if not np.isfinite(outcome.x_next).all():
            raise NonFiniteValueError("state", t + 1)
        states.append(outcome.x_next)
    bundle = assemble_estimates(states, plan)
    bundle.A_hat = solve_A(bundle.C0, bundle.C1)
    return bundle
