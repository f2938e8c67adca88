"""Cost-capped scheduling: search the cost weight of the relaxed objective.

For a given weight beta the discounted solver yields a stationary policy;
its long-run purchase cost B and mean queue length D are estimated by
simulation (common random numbers across candidates). Raising beta trades
queue length for cost, so the smallest weight whose policy respects the
cap is found by doubling then bisection. On finite instances B(beta) is a
step function, so exact attainment of the cap generally needs randomising
between the two policies bracketing it; the deterministic feasible policy
is returned, with the bracketing mixture as an optional extra.

An exact stationary-distribution evaluator over the truncated grid is
provided as a cross-check for small single-block instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chains import BatchLaw, ChainSet
from .mdp import ModelParams, PolicyTable, solve_discounted
from .policies import MixedPolicy, Policy, TablePolicy
from .simulate import RunResult, replicate

__all__ = [
    "PolicyEvaluation",
    "BetaPoint",
    "MixtureResult",
    "BetaSearchResult",
    "ConstrainedSearchError",
    "evaluate_policy",
    "average_cost_linear_system",
    "solve_constrained",
]

_Z95 = 1.959963984540054


class ConstrainedSearchError(RuntimeError):
    def __init__(self, message: str, history: list["BetaPoint"]):
        super().__init__(message)
        self.history = history


@dataclass
class PolicyEvaluation:
    """Monte Carlo estimate of long-run cost and queue length."""

    avg_cost: float
    avg_queue_ev: float
    avg_queue_demand: float
    cost_halfwidth: float
    queue_halfwidth: float
    clamp_events: int
    replications: list[RunResult]

    @property
    def clamped(self) -> bool:
        return self.clamp_events > 0


def evaluate_policy(
    policy: Policy,
    params: ModelParams,
    chains: ChainSet,
    batch_law: BatchLaw,
    horizon: int = 100_000,
    replications: int = 1,
    seed: int = 0,
    initial_queue: int = 0,
    initial_battery: float = 0.0,
) -> PolicyEvaluation:
    """Time-average cost and queue lengths over independent replications.

    With several replications the halfwidth is the normal-approximation
    95% interval across replication means; a single replication falls back
    to its batch-means halfwidth.
    """
    if horizon < 10_000:
        raise ValueError("horizon below 10^4 gives unreliable long-run averages")
    results = replicate(
        params,
        chains,
        batch_law,
        policy,
        horizon,
        seed,
        replications,
        initial_queue=initial_queue,
        initial_battery=initial_battery,
    )
    costs = np.array([r.avg_cost for r in results])
    qevs = np.array([r.avg_queue_ev for r in results])
    qes = np.array([r.avg_queue_demand for r in results])
    if replications >= 2:
        cost_hw = _Z95 * float(costs.std(ddof=1)) / math.sqrt(replications)
        queue_hw = _Z95 * float(qes.std(ddof=1)) / math.sqrt(replications)
    else:
        cost_hw = results[0].cost_halfwidth
        queue_hw = results[0].queue_demand_halfwidth
    return PolicyEvaluation(
        avg_cost=float(costs.mean()),
        avg_queue_ev=float(qevs.mean()),
        avg_queue_demand=float(qes.mean()),
        cost_halfwidth=cost_hw,
        queue_halfwidth=queue_hw,
        clamp_events=sum(r.clamp_events for r in results),
        replications=results,
    )


def average_cost_linear_system(
    policy: Policy, params: ModelParams, chains: ChainSet
) -> tuple[float, float]:
    """Exact long-run (cost, queue length) of a stationary policy on the
    truncated single-block model, via its stationary distribution.

    Mirrors the simulator's event order (the current renewable arrival tops
    the battery up, the next arrival joins the queue), so it cross-checks
    the Monte Carlo evaluator. Only valid when truncation is effectively
    inactive for the policy under study.
    """
    from .mdp import StateGrid

    grid = StateGrid(params, chains)
    n = grid.n_states
    if n > 20_000:
        raise ValueError(f"state space too large for the exact evaluator: {n}")
    nq, na, neb, ne, np_ = grid.shape
    a_vals = grid.arrival_counts()
    e_steps = grid.renewable_steps()
    p_vals = grid.price_values()
    step = params.energy_step
    pa = np.asarray(chains.arrival.transition)
    pe = np.asarray(chains.renewable.transition)
    pp = np.asarray(chains.price.transition)

    idx = np.arange(n).reshape(grid.shape)
    p_mat = np.zeros((n, n))
    cost = np.zeros(n)
    qlen = np.zeros(n)
    from .mdp import SystemState

    for q in range(nq):
        for ia in range(na):
            for h in range(neb):
                for ie in range(ne):
                    for ip in range(np_):
                        i = idx[q, ia, h, ie, ip]
                        x = SystemState(q, ia, h * step, ie, ip)
                        act = policy.decide(x, p_vals[ip])
                        draw = act.w * params.period
                        hs = int(round(draw / step))
                        if abs(draw - hs * step) > 1e-9 or not 0 <= hs <= h:
                            raise ValueError(
                                f"policy draw {draw} off-grid in state {x}"
                            )
                        cost[i] = (
                            max(act.k * params.energy_block / params.period - act.w, 0.0)
                            * p_vals[ip]
                        )
                        qlen[i] = q
                        hn = min(h - hs + e_steps[ie], neb - 1)
                        for ja in range(na):
                            wa = pa[ia, ja]
                            if wa == 0.0:
                                continue
                            qn = min(q - act.k + a_vals[ja], params.queue_cap)
                            for je in range(ne):
                                we = pe[ie, je]
                                if we == 0.0:
                                    continue
                                for jp in range(np_):
                                    wp = pp[ip, jp]
                                    if wp == 0.0:
                                        continue
                                    p_mat[i, idx[qn, ja, hn, je, jp]] += wa * we * wp

    a_mat = p_mat.T - np.eye(n)
    a_mat[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a_mat, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    return float(pi @ cost), float(pi @ qlen)


@dataclass
class BetaPoint:
    beta: float
    avg_cost: float
    avg_delay: float
    cost_halfwidth: float


@dataclass
class MixtureResult:
    """Randomisation between the bracketing policies attaining the cap."""

    beta_low: float
    policy_low: PolicyTable
    weight_low: float
    attained_cost: float


@dataclass
class BetaSearchResult:
    beta_star: float
    policy: PolicyTable
    avg_cost: float
    avg_delay: float
    cost_halfwidth: float
    history: list[BetaPoint]
    mixture: MixtureResult | None
    clamp_events: int

    def mixed_policy(self) -> Policy:
        """Simulator policy attaining the cap (the mixture when present)."""
        base = TablePolicy(self.policy)
        if self.mixture is None:
            return base
        return MixedPolicy(
            TablePolicy(self.mixture.policy_low), base, self.mixture.weight_low
        )


def solve_constrained(
    params: ModelParams,
    chains: ChainSet,
    batch_law: BatchLaw | None = None,
    cost_cap: float | None = None,
    alpha_schedule: tuple[float, ...] = (0.9, 0.99, 0.999, 0.9999),
    vi_tol: float = 1e-9,
    horizon: int = 100_000,
    replications: int = 3,
    seed: int = 0,
    beta_rel_tol: float = 1e-3,
    max_doublings: int = 40,
    max_bisections: int = 60,
    initial_queue: int = 0,
    initial_battery: float = 0.0,
) -> BetaSearchResult:
    """Smallest cost weight whose policy meets the long-run cost cap.

    The unconstrained (beta=0) policy is evaluated first and returned
    outright when already feasible. Otherwise the weight is doubled until
    feasible, then bisected to relative tolerance ``beta_rel_tol`` (or until
    the feasible cost sits within one halfwidth of the cap). Evaluations
    share the same seed, so candidate comparisons use common random numbers.
    """
    cap = params.cost_cap if cost_cap is None else cost_cap
    law = batch_law if batch_law is not None else BatchLaw(1)
    alpha = max(alpha_schedule)
    history: list[BetaPoint] = []
    cache: dict[float, tuple[PolicyTable, PolicyEvaluation]] = {}

    def solve_eval(beta: float) -> tuple[PolicyTable, PolicyEvaluation]:
        if beta in cache:
            return cache[beta]
        p = params.with_beta(beta).with_alpha(alpha)
        _, pt, _ = solve_discounted(p, chains, tol=vi_tol)
        ev = evaluate_policy(
            TablePolicy(pt),
            p,
            chains,
            law,
            horizon=horizon,
            replications=replications,
            seed=seed,
            initial_queue=initial_queue,
            initial_battery=initial_battery,
        )
        history.append(BetaPoint(beta, ev.avg_cost, ev.avg_queue_demand, ev.cost_halfwidth))
        cache[beta] = (pt, ev)
        return pt, ev

    def result_for(beta: float, mixture: MixtureResult | None) -> BetaSearchResult:
        pt, ev = solve_eval(beta)
        return BetaSearchResult(
            beta_star=beta,
            policy=pt,
            avg_cost=ev.avg_cost,
            avg_delay=ev.avg_queue_demand,
            cost_halfwidth=ev.cost_halfwidth,
            history=list(history),
            mixture=mixture,
            clamp_events=ev.clamp_events,
        )

    _, ev0 = solve_eval(0.0)
    if not math.isfinite(cap) or ev0.avg_cost <= cap:
        return result_for(0.0, None)

    lo, b_lo = 0.0, ev0
    hi = 1.0
    for _ in range(max_doublings):
        _, ev_hi = solve_eval(hi)
        if ev_hi.avg_cost <= cap:
            break
        lo, b_lo = hi, ev_hi
        hi *= 2.0
    else:
        raise ConstrainedSearchError(
            f"no feasible weight found up to beta={hi}", history
        )

    for _ in range(max_bisections):
        _, ev_hi = solve_eval(hi)
        if hi - lo <= beta_rel_tol * max(hi, 1.0):
            break
        if abs(ev_hi.avg_cost - cap) <= ev_hi.cost_halfwidth:
            break
        mid = 0.5 * (lo + hi)
        _, ev_mid = solve_eval(mid)
        if ev_mid.avg_cost <= cap:
            hi, ev_hi = mid, ev_mid
        else:
            lo, b_lo = mid, ev_mid
    else:
        raise ConstrainedSearchError("bisection did not converge", history)

    pt_hi, ev_hi = solve_eval(hi)
    mixture = None
    if ev_hi.avg_cost < cap - ev_hi.cost_halfwidth and b_lo.avg_cost > cap:
        pt_lo, ev_lo = solve_eval(lo)
        denom = ev_lo.avg_cost - ev_hi.avg_cost
        if denom > 0:
            weight = (cap - ev_hi.avg_cost) / denom
            mixture = MixtureResult(
                beta_low=lo,
                policy_low=pt_lo,
                weight_low=float(np.clip(weight, 0.0, 1.0)),
                attained_cost=float(
                    weight * ev_lo.avg_cost + (1.0 - weight) * ev_hi.avg_cost
                ),
            )
    return result_for(hi, mixture)
