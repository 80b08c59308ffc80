"""End-to-end orchestration: derive every phase constant from the prior
bounds (k, kappa, beta) and the horizon, run identification, controller
recovery + decay, and online control on a live plant, then report per-phase
costs and (in simulation mode) regret against the best DAC in hindsight.

Worst-case constants are sufficient conditions and quickly leave double
precision range, so every derived constant accepts an override; overrides
are recorded with provenance in the report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ComparatorUnavailableError, PhaseError, ProbeScalingError
from .lds import PriorBounds, RunLog, cost_at
from .nsc import GpcResult, HindsightResult, best_dac_in_hindsight, gpc_run
from .plant import BlackBoxPlant
from .stabilize import RecoveryResult, controller_recovery, decay
from .sysid import EstimateBundle, adv_sys_id, epsilon_zero, probe_plan

_DERIVABLE = ("lam", "C", "kappa_prime", "gamma_prime", "eps", "eps0", "nu",
              "kappa_tilde", "gamma_tilde", "kappa_star", "W", "H", "eta", "T0")


@dataclass
class PhaseConstants:
    """All derived quantities consumed by the three phases, with provenance
    ("default" formula, "override", or "derived-from-override")."""

    k: int
    kappa: float
    beta: float
    d_x: int
    d_u: int
    T: int
    G: float
    lam: float
    C: float
    kappa_prime: float
    gamma_prime: float
    eps: float
    eps0: float
    nu: float
    kappa_tilde: float
    gamma_tilde: float
    kappa_star: float
    W: float
    T1: int
    H: int
    eta: float
    T0: int
    provenance: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {name: getattr(self, name) for name in
               ("k", "kappa", "beta", "d_x", "d_u", "T", "G", "T1") + _DERIVABLE}
        return out


def derive_constants(k: int, kappa: float, beta: float, d_x: int, d_u: int,
                     T: int, overrides: Optional[dict] = None,
                     G: float = 2.0) -> PhaseConstants:
    """Evaluate the phase-constant formulas, honoring overrides.

    Overriding a constant reroutes everything downstream of it; provenance
    marks each value as default, override, or derived-from-override. Raises
    if the probe scalings are unrepresentable and no override rescues them.
    """
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(_DERIVABLE)
    if unknown:
        raise ValueError(f"unknown constant overrides: {sorted(unknown)}")
    prov = {}
    tainted = set()

    def resolve(name, formula, *parents):
        if name in overrides:
            prov[name] = "override"
            tainted.add(name)
            return float(overrides[name])
        value = formula()
        if any(p in tainted for p in parents):
            prov[name] = "derived-from-override"
            tainted.add(name)
        else:
            prov[name] = "default"
        return value

    lam = resolve("lam", lambda: 8.0 * beta)
    C = resolve("C", lambda: 3.0 * kappa**2 * k**2 * beta ** (6 * k))
    kappa_prime = resolve("kappa_prime", lambda: math.sqrt(C * d_x), "C")
    gamma_prime = resolve("gamma_prime", lambda: 1.0 / (2.0 * kappa_prime**2),
                          "kappa_prime")
    eps = resolve("eps", lambda: gamma_prime**2 / (1e5 * d_x**2 * kappa_prime**8),
                  "gamma_prime", "kappa_prime")
    if eps >= 0.5:
        raise ValueError("accuracy parameter eps must be < 1/2")

    def eps0_formula():
        try:
            eps0 = epsilon_zero(eps, d_u, k, lam, d_x, kappa)
            probe_plan(k, d_u, lam, eps0)  # reject unrepresentable schedules now
            return eps0
        except ProbeScalingError as exc:
            raise ProbeScalingError(
                "worst-case constants exceed floating range; "
                f"supply eps override ({exc})")

    eps0 = resolve("eps0", eps0_formula, "eps", "lam")
    margin = gamma_prime - 2.0 * eps * kappa_prime**2
    if margin <= 0.0:
        raise ValueError("gamma' must exceed 2 eps kappa'^2: choose a smaller eps")
    nu = resolve("nu", lambda: 2.0 * kappa_prime**4 * d_x / margin,
                 "kappa_prime", "gamma_prime", "eps")
    kappa_tilde = resolve(
        "kappa_tilde",
        lambda: 2.0 * kappa_prime**2 * math.sqrt(d_x) / math.sqrt(gamma_prime),
        "kappa_prime", "gamma_prime")
    gamma_tilde = resolve(
        "gamma_tilde", lambda: gamma_prime / (16.0 * d_x * kappa_prime**4),
        "kappa_prime", "gamma_prime")
    kappa_star = resolve(
        "kappa_star", lambda: 4.0 * kappa_tilde**2 * k**2 * beta ** (2 * k) * kappa,
        "kappa_tilde")
    W = resolve("W", lambda: 2.0 * kappa_star / gamma_tilde,
                "kappa_star", "gamma_tilde")
    T1 = d_u * (k + 1) + 1
    H = resolve("H", lambda: max(
        1, math.ceil(math.log(max(kappa_star**2 * T, math.e)) / gamma_tilde)),
        "kappa_star", "gamma_tilde")
    H = int(H)
    eta = resolve("eta", lambda: 1.0 / (G * W * math.sqrt(T)), "W")
    T0 = int(resolve("T0", lambda: math.ceil(T ** (2.0 / 3.0))))
    consts = PhaseConstants(
        k=k, kappa=float(kappa), beta=float(beta), d_x=d_x, d_u=d_u, T=T, G=G,
        lam=lam, C=C, kappa_prime=kappa_prime, gamma_prime=gamma_prime,
        eps=eps, eps0=eps0, nu=nu, kappa_tilde=kappa_tilde,
        gamma_tilde=gamma_tilde, kappa_star=kappa_star, W=W, T1=T1, H=H,
        eta=eta, T0=T0, provenance=prov)
    for name in _DERIVABLE:
        if getattr(consts, name) <= 0 or not math.isfinite(getattr(consts, name)):
            raise ValueError(f"derived constant {name} must be positive and finite")
    return consts


@dataclass
class PipelineReport:
    constants: PhaseConstants
    prior: PriorBounds
    estimates: EstimateBundle
    recovery: RecoveryResult
    stability_used: dict  # kappa/gamma actually used for decay + phase 3
    phase_costs: dict
    total_cost: float
    log: RunLog
    decay_steps: int
    gpc_steps: int
    x_after_sysid_norm: float
    x_after_decay_norm: float
    simulation_mode: bool
    comparator: Optional[HindsightResult] = None
    regret_value: Optional[float] = None
    gpc_result: Optional[GpcResult] = None
    seed: Optional[int] = None
    config_echo: dict = field(default_factory=dict)


def regret(report: PipelineReport) -> float:
    """Total pipeline cost minus the best-DAC-in-hindsight cost."""
    if report.comparator is None:
        raise ComparatorUnavailableError(
            "regret unavailable outside simulation mode")
    return report.total_cost - report.comparator.cost


def run_pipeline(plant: BlackBoxPlant, prior: PriorBounds, T: int,
                 constants: Optional[PhaseConstants] = None,
                 overrides: Optional[dict] = None,
                 use_certified_stability: bool = False,
                 reidentify: bool = False,
                 comparator_iters: int = 200,
                 seed: Optional[int] = None,
                 config_echo: Optional[dict] = None) -> PipelineReport:
    """Run all three phases on the live plant.

    Phases observe only states and costs. With use_certified_stability, the
    decay length and phase-3 constants are rebuilt from the strong-stability
    certificate the SDP witness actually provides on the estimates (degraded
    by the 2 eps kappa^2 transfer margin for the true system) instead of the
    worst-case formulas; provenance records the substitution.

    The comparator (hence regret) is computed only in simulation mode, by
    replaying the recorded disturbances through the true system.
    """
    G = _cost_scale(plant)
    if constants is None:
        constants = derive_constants(prior.k, prior.kappa, prior.beta,
                                     plant.d_x, plant.d_u, T,
                                     overrides=overrides, G=G)
    cst = constants
    if T <= cst.T1:
        raise PhaseError("sysid", f"horizon T={T} must exceed T1={cst.T1}")
    x1 = plant.state

    # Phase 1: identification (rounds 1 .. T1-1 pay probing costs).
    try:
        bundle = adv_sys_id(plant, cst.eps, cst.lam, prior.k, prior.kappa)
    except Exception as exc:
        raise PhaseError("sysid", str(exc)) from exc
    x_after_sysid = plant.state

    # Phase 2: controller recovery (zero plant cost), then decay.
    try:
        recovery = controller_recovery(bundle.A_hat, bundle.B_hat, cst.eps,
                                       cst.kappa_prime, cst.gamma_prime)
    except Exception as exc:
        raise PhaseError("recover", str(exc)) from exc
    kappa_use, gamma_use = cst.kappa_tilde, cst.gamma_tilde
    source = "worst-case"
    if use_certified_stability:
        kappa_cert = recovery.kappa_est
        gamma_cert = recovery.gamma_est - 2.0 * cst.eps * recovery.kappa_est**2
        if gamma_cert <= 0.0:
            raise PhaseError("recover",
                             "certified stability margin nonpositive after the "
                             "estimation-error transfer; decrease eps")
        kappa_use, gamma_use = kappa_cert, gamma_cert
        source = "certified"
    try:
        dec = decay(plant, recovery.K, kappa_use, gamma_use)
    except Exception as exc:
        raise PhaseError("decay", str(exc)) from exc

    rounds_used = plant.t - 1
    T3 = T - rounds_used
    if T3 <= 0:
        raise PhaseError("gpc", f"decay consumed the horizon: T1-1 + T2 = "
                         f"{rounds_used} >= T = {T}")

    # Phase 3 constants follow the stability parameters actually in force.
    kappa_star = 4.0 * kappa_use**2 * prior.k**2 * prior.beta ** (2 * prior.k) \
        * prior.kappa
    W = 2.0 * kappa_star / gamma_use
    H = max(1, math.ceil(math.log(max(kappa_star**2 * T, math.e)) / gamma_use))
    eta = 1.0 / (G * W * math.sqrt(T))
    ovr = dict(overrides or {})
    if not use_certified_stability or "kappa_star" in ovr:
        kappa_star = cst.kappa_star
    if not use_certified_stability or "W" in ovr:
        W = cst.W
    if not use_certified_stability or "H" in ovr:
        H = cst.H
    if not use_certified_stability or "eta" in ovr:
        eta = cst.eta
    stability_used = {"kappa": kappa_use, "gamma": gamma_use, "source": source,
                      "kappa_star": kappa_star, "W": W, "H": H, "eta": eta}

    A_p3, B_p3 = bundle.A_hat, bundle.B_hat
    T_gpc = T3
    if reidentify:
        A_p3, B_p3, spent = _reidentify(plant, recovery.K, cst.T0, T3, seed)
        T_gpc = T3 - spent
    try:
        gpc = gpc_run(plant, recovery.K, kappa_star, gamma_use, W, H, eta,
                      T_gpc, A_p3, B_p3)
    except Exception as exc:
        raise PhaseError("gpc", str(exc)) from exc

    log = plant.log if plant.simulation_mode else None
    phase_costs = {}
    total = plant.total_cost
    if log is not None:
        for r in log.records:
            phase_costs[r.phase] = phase_costs.get(r.phase, 0.0) + r.cost

    comparator = None
    regret_value = None
    if plant.simulation_mode:
        sys_true = plant.true_system()
        w_seq = plant.disturbance_history()
        comparator = best_dac_in_hindsight(
            sys_true, w_seq, plant.cost_spec(), recovery.K, H, kappa_star,
            gamma_use, x1, iters=comparator_iters)
        regret_value = total - comparator.cost

    return PipelineReport(
        constants=cst, prior=prior, estimates=bundle, recovery=recovery,
        stability_used=stability_used, phase_costs=phase_costs,
        total_cost=total, log=log, decay_steps=dec.steps, gpc_steps=T_gpc,
        x_after_sysid_norm=float(np.linalg.norm(x_after_sysid)),
        x_after_decay_norm=float(np.linalg.norm(dec.x_final)),
        simulation_mode=plant.simulation_mode, comparator=comparator,
        regret_value=regret_value, gpc_result=gpc, seed=seed,
        config_echo=dict(config_echo or {}))


def _cost_scale(plant: BlackBoxPlant) -> float:
    try:
        return float(cost_at(plant._costs, 1).G)
    except Exception:
        return 2.0


def _reidentify(plant: BlackBoxPlant, K, T0: int, T3: int, seed):
    """Optional phase-3 re-identification: stabilized unit-sign probing for
    T0 rounds, then joint least squares on the residual transitions."""
    budget = min(T0, max(T3 // 2, 1))
    rng = np.random.default_rng(seed if seed is not None else 0)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    xs, us, xn = [], [], []
    x = plant.state
    for _ in range(budget):
        probe = rng.choice([-1.0, 1.0], size=plant.d_u)
        u = K @ x + probe
        outcome = plant.apply(u, phase="gpc")
        xs.append(x)
        us.append(u)
        x = outcome.x_next
        xn.append(x)
    Z = np.hstack([np.array(xs), np.array(us)])  # (budget, d_x + d_u)
    Y = np.array(xn)
    theta, *_ = np.linalg.lstsq(Z, Y, rcond=None)
    AB = theta.T
    return AB[:, : plant.d_x], AB[:, plant.d_x:], budget
