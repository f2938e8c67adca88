"""Optimality diagnostics for solved policies.

The solved value table induces expected one-step marginals: how much the
discounted continuation changes when one more EV is left unserved, when one
more battery unit is held back, or both together. A greedy-optimal action
must sandwich the corresponding price thresholds between the marginals at
the chosen action and at its one-step perturbations; these checks, together
with a direct dominance predicate (under-serving while the incoming
renewable would overflow the battery), form the audit surface.

Marginals are computed against the truncated kernel the solver actually
optimises: paired operands clamp together at the queue cap, so the audit
tests exactly the optimality conditions of the solved model. A check whose
comparison action is infeasible (range or draw-limit) is reported as
skipped, never silently passed.

All evaluations are read-only over a frozen value table and may run
concurrently across states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chains import ChainSet
from .mdp import (
    ModelParams,
    PolicyTable,
    SystemState,
    TransformedAction,
    ValueTable,
    _Workspace,
    solve_discounted,
)

__all__ = [
    "CheckRow",
    "ConditionReport",
    "PolicyAuditResult",
    "ConditionEvaluator",
    "VanishingDiscountResult",
    "queue_value_diff",
    "is_dominated_action",
    "greedy_battery_remainder",
    "expected_queue_marginal",
    "expected_battery_marginal",
    "expected_joint_marginal",
    "reduced_queue_marginal",
    "audit_action",
    "audit_policy",
    "classify_service_extreme",
    "vanishing_discount_limits",
]

TOLERANCE = 1e-9

CONDITION_NAMES = ("queue_marginal", "battery_marginal", "joint_marginal")


def queue_value_diff(vt: ValueTable, x: SystemState) -> float:
    """First difference of the value table in the queue coordinate (q >= 1)."""
    if x.q < 1:
        raise ValueError("queue difference undefined at q=0")
    idx = vt.grid.state_to_index(x)
    lower = (x.q - 1,) + idx[1:]
    return float(vt.values[idx] - vt.values[lower])


def is_dominated_action(
    x: SystemState,
    t: TransformedAction,
    params: ModelParams,
    chains: ChainSet,
) -> bool:
    """True when the action under-serves the queue while the state's renewable
    arrival would overflow the battery left behind; such an action cannot be
    optimal, so a solved policy must return False everywhere."""
    floor_u = x.q - min(x.q, params.n_charge_points)
    e_a_value = chains.renewable.values[x.e_a]
    return t.u > floor_u and t.eta + e_a_value > params.battery_cap + TOLERANCE


def greedy_battery_remainder(x: SystemState, u: int, params: ModelParams) -> float:
    """Battery left after drawing as much as the chosen service can absorb."""
    return max(0.0, x.e_b - (x.q - u) * params.energy_block)


@dataclass
class CheckRow:
    """One sandwich condition: lower <= threshold <= upper, sides optional."""

    name: str
    lower: float | None
    threshold: float
    upper: float | None
    satisfied: bool
    note: str = ""


@dataclass
class ConditionReport:
    state: SystemState
    action: TransformedAction
    checks: list[CheckRow] = field(default_factory=list)

    @property
    def all_satisfied(self) -> bool:
        return all(c.satisfied for c in self.checks)


class ConditionEvaluator:
    """Caches the expected-continuation tensor of a value table so marginal
    queries and whole-policy audits stay cheap."""

    def __init__(self, vt: ValueTable):
        self.vt = vt
        self.params = vt.params
        self.chains = vt.chains
        self.grid = vt.grid
        ws = _Workspace(vt.params, vt.chains)
        # ev[u, a, h, e, p] = E[ V(next state) | residuals (u, h), chain states (a, e, p) ]
        self.ev = ws.continuation(vt.values)

    # -- marginals ---------------------------------------------------------

    def queue_marginal(self, u: int, a: int, eta: float, e_a: int, p: int) -> float:
        """Discounted expected value change from leaving one more EV queued."""
        if u < 1:
            raise ValueError("queue marginal undefined at u=0")
        h = self.grid.battery_index(eta)
        return self.params.alpha * float(
            self.ev[u, a, h, e_a, p] - self.ev[u - 1, a, h, e_a, p]
        )

    def battery_marginal(self, u: int, a: int, eta: float, e_a: int, p: int) -> float:
        """Discounted expected value change from holding one more grid unit of
        battery; non-positive since value never increases with less energy."""
        h = self.grid.battery_index(eta)
        if h < 1:
            raise ValueError("battery marginal undefined at eta=0")
        return self.params.alpha * float(
            self.ev[u, a, h, e_a, p] - self.ev[u, a, h - 1, e_a, p]
        )

    def joint_marginal(self, u: int, a: int, eta: float, e_a: int, p: int) -> float:
        """Discounted expected value change of the diagonal perturbation."""
        h = self.grid.battery_index(eta)
        if u < 1 or h < 1:
            raise ValueError("joint marginal undefined at u=0 or eta=0")
        return self.params.alpha * float(
            self.ev[u, a, h, e_a, p] - self.ev[u - 1, a, h - 1, e_a, p]
        )

    def reduced_marginal(self, x: SystemState, u: int) -> float:
        """Marginal along the greedy-battery curve eta(u), including the
        battery cost correction for the extra unit held back."""
        if u < 1:
            raise ValueError("reduced marginal undefined at u=0")
        p_val = self.chains.price.values[x.p]
        eta_u = greedy_battery_remainder(x, u, self.params)
        eta_um1 = greedy_battery_remainder(x, u - 1, self.params)
        h_u = self.grid.battery_index(eta_u)
        h_um1 = self.grid.battery_index(eta_um1)
        cont = self.params.alpha * float(
            self.ev[u, x.a, h_u, x.e_a, x.p] - self.ev[u - 1, x.a, h_um1, x.e_a, x.p]
        )
        return cont + self.params.beta * (eta_u - eta_um1) * p_val / self.params.period

    # -- thresholds --------------------------------------------------------

    def thresholds(self, p: int) -> tuple[float, float, float]:
        pr = self.params
        p_val = self.chains.price.values[p]
        t_q = pr.beta * pr.energy_block * p_val / pr.period
        t_b = -pr.beta * pr.energy_step * p_val / pr.period
        t_j = pr.beta * (pr.energy_block - pr.energy_step) * p_val / pr.period
        return t_q, t_b, t_j

    # -- sandwich audit ----------------------------------------------------

    def _purchase(self, x: SystemState, u: int, eta: float) -> float:
        return (x.q - u) * self.params.energy_block - (x.e_b - eta)

    def _pair_feasible(self, x: SystemState, u: int, eta: float) -> bool:
        floor_u = x.q - min(x.q, self.params.n_charge_points)
        if not floor_u <= u <= x.q:
            return False
        if eta < -TOLERANCE or eta > x.e_b + TOLERANCE:
            return False
        if self.params.limit_draw_to_demand and self._purchase(x, u, eta) < -TOLERANCE:
            return False
        return True

    def audit_action(self, x: SystemState, t: TransformedAction) -> ConditionReport:
        """Evaluate the three sandwich conditions at (u, eta); each side only
        applies when the corresponding comparison action is feasible."""
        step = self.params.energy_step
        u, eta = t.u, t.eta
        t_q, t_b, t_j = self.thresholds(x.p)
        report = ConditionReport(state=x, action=t)

        def row(name, thr, lo_args, up_args, fn):
            lower = fn(*lo_args) if lo_args is not None else None
            upper = fn(*up_args) if up_args is not None else None
            ok = True
            notes = []
            if lower is None:
                notes.append("lower skipped")
            elif lower > thr + TOLERANCE:
                ok = False
            if upper is None:
                notes.append("upper skipped")
            elif thr > upper + TOLERANCE:
                ok = False
            report.checks.append(
                CheckRow(name, lower, thr, upper, ok, "; ".join(notes))
            )

        margs = (x.a, x.e_a, x.p)

        def zq(uu, ee):
            return self.queue_marginal(uu, margs[0], ee, margs[1], margs[2])

        def zb(uu, ee):
            return self.battery_marginal(uu, margs[0], ee, margs[1], margs[2])

        def zj(uu, ee):
            return self.joint_marginal(uu, margs[0], ee, margs[1], margs[2])

        lo = (u, eta) if u >= 1 and self._pair_feasible(x, u - 1, eta) else None
        up = (u + 1, eta) if self._pair_feasible(x, u + 1, eta) else None
        row("queue_marginal", t_q, lo, up, zq)

        lo = (u, eta) if eta >= step and self._pair_feasible(x, u, eta - step) else None
        up = (u, eta + step) if self._pair_feasible(x, u, eta + step) else None
        row("battery_marginal", t_b, lo, up, zb)

        lo = (
            (u, eta)
            if u >= 1 and eta >= step and self._pair_feasible(x, u - 1, eta - step)
            else None
        )
        up = (
            (u + 1, eta + step)
            if self._pair_feasible(x, u + 1, eta + step)
            else None
        )
        row("joint_marginal", t_j, lo, up, zj)
        return report

    def reduced_sandwich(self, x: SystemState, u: int) -> CheckRow:
        """Sandwich of the greedy-battery-curve marginal around the chosen u."""
        floor_u = x.q - min(x.q, self.params.n_charge_points)
        t_q, _, _ = self.thresholds(x.p)
        lower = self.reduced_marginal(x, u) if u >= max(1, floor_u + 1) else None
        upper = self.reduced_marginal(x, u + 1) if u + 1 <= x.q else None
        ok = True
        notes = []
        if lower is None:
            notes.append("lower skipped")
        elif lower > t_q + TOLERANCE:
            ok = False
        if upper is None:
            notes.append("upper skipped")
        elif t_q > upper + TOLERANCE:
            ok = False
        return CheckRow("reduced_marginal", lower, t_q, upper, ok, "; ".join(notes))


# -- whole-policy audit ------------------------------------------------------


@dataclass
class PolicyAuditResult:
    reports: list[ConditionReport]
    dominated_states: list[SystemState]
    n_states: int

    @property
    def n_condition_violations(self) -> int:
        return sum(1 for r in self.reports if not r.all_satisfied)

    @property
    def n_dominated(self) -> int:
        return len(self.dominated_states)

    @property
    def clean(self) -> bool:
        return self.n_dominated == 0 and self.n_condition_violations == 0


def audit_policy(vt: ValueTable, policy: PolicyTable) -> PolicyAuditResult:
    """Run the dominance predicate and sandwich conditions at every state."""
    ev = ConditionEvaluator(vt)
    reports: list[ConditionReport] = []
    dominated: list[SystemState] = []
    n = 0
    for x in vt.grid.states():
        n += 1
        act = policy.action_of(x)
        if is_dominated_action(x, act, vt.params, vt.chains):
            dominated.append(x)
        reports.append(ev.audit_action(x, act))
    return PolicyAuditResult(reports=reports, dominated_states=dominated, n_states=n)


# -- spec-level scalar wrappers ----------------------------------------------


def expected_queue_marginal(
    vt: ValueTable, u: int, a: int, eta: float, e_a: int, p: int
) -> float:
    return ConditionEvaluator(vt).queue_marginal(u, a, eta, e_a, p)


def expected_battery_marginal(
    vt: ValueTable, u: int, a: int, eta: float, e_a: int, p: int
) -> float:
    return ConditionEvaluator(vt).battery_marginal(u, a, eta, e_a, p)


def expected_joint_marginal(
    vt: ValueTable, u: int, a: int, eta: float, e_a: int, p: int
) -> float:
    return ConditionEvaluator(vt).joint_marginal(u, a, eta, e_a, p)


def reduced_queue_marginal(vt: ValueTable, x: SystemState, u: int) -> float:
    return ConditionEvaluator(vt).reduced_marginal(x, u)


def audit_action(vt: ValueTable, x: SystemState, t: TransformedAction) -> ConditionReport:
    return ConditionEvaluator(vt).audit_action(x, t)


def classify_service_extreme(
    vt: ValueTable, x: SystemState, evaluator: ConditionEvaluator | None = None
) -> str:
    """Classify the state by the greedy-battery-curve marginal: 'serve-max'
    when even the fullest service leaves the marginal above the price
    threshold, 'serve-none' when serving the last EV is already not worth
    it, 'interior' otherwise. At q=0 both extremes coincide."""
    if x.q == 0:
        return "serve-max"
    ev = evaluator if evaluator is not None else ConditionEvaluator(vt)
    t_q, _, _ = ev.thresholds(x.p)
    floor_u = x.q - min(x.q, vt.params.n_charge_points)
    probe = floor_u if floor_u >= 1 else 1
    if ev.reduced_marginal(x, probe) > t_q + TOLERANCE:
        return "serve-max"
    if ev.reduced_marginal(x, x.q) < t_q - TOLERANCE:
        return "serve-none"
    return "interior"


# -- vanishing-discount limits -------------------------------------------------


@dataclass
class VanishingDiscountResult:
    alphas: tuple[float, ...]
    policies: list[PolicyTable]
    stabilized_from: int | None
    warning: str | None
    queue_marginal_limit: np.ndarray
    battery_marginal_limit: np.ndarray
    joint_marginal_limit: np.ndarray
    queue_marginal_per_alpha: list[np.ndarray]
    battery_marginal_per_alpha: list[np.ndarray]
    joint_marginal_per_alpha: list[np.ndarray]


def _marginal_tensors(vt: ValueTable) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full-grid marginal tensors indexed (u, a, h, e, p); NaN where undefined."""
    ev = ConditionEvaluator(vt).ev
    alpha = vt.params.alpha
    z1 = np.full(ev.shape, np.nan)
    z2 = np.full(ev.shape, np.nan)
    z3 = np.full(ev.shape, np.nan)
    z1[1:] = alpha * (ev[1:] - ev[:-1])
    z2[:, :, 1:] = alpha * (ev[:, :, 1:] - ev[:, :, :-1])
    z3[1:, :, 1:] = alpha * (ev[1:, :, 1:] - ev[:-1, :, :-1])
    return z1, z2, z3


def _richardson(nodes: np.ndarray, tables: list[np.ndarray]) -> np.ndarray:
    """Neville extrapolation of tables sampled at nodes -> value at node 0."""
    work = [t.astype(float) for t in tables]
    n = len(work)
    for j in range(1, n):
        for i in range(n - 1, j - 1, -1):
            hi, hij = nodes[i], nodes[i - j]
            work[i] = (work[i] * hij - work[i - 1] * hi) / (hij - hi)
    return work[n - 1]


def vanishing_discount_limits(
    params: ModelParams,
    chains: ChainSet,
    schedule: tuple[float, ...] = (0.9, 0.99, 0.999, 0.9999),
    tol: float = 1e-9,
    max_iters: int = 500_000,
) -> VanishingDiscountResult:
    """Re-solve along an increasing discount schedule, extrapolate the
    marginals to the undiscounted limit (Richardson in 1 - alpha), and report
    where the greedy policy stabilises."""
    if list(schedule) != sorted(schedule) or len(schedule) < 2:
        raise ValueError("schedule must be increasing with at least two points")
    policies: list[PolicyTable] = []
    z1s, z2s, z3s = [], [], []
    for alpha in schedule:
        vt, pt, _ = solve_discounted(
            params.with_alpha(alpha), chains, tol=tol, max_iters=max_iters
        )
        policies.append(pt)
        z1, z2, z3 = _marginal_tensors(vt)
        z1s.append(z1)
        z2s.append(z2)
        z3s.append(z3)
    stabilized_from: int | None = None
    for i in range(len(schedule)):
        if all(policies[i].same_actions(p) for p in policies[i + 1 :]):
            stabilized_from = i
            break
    warning = None
    if not policies[-2].same_actions(policies[-1]):
        warning = (
            "greedy policy differs between the last two discount factors; "
            "limits may not have stabilised"
        )
        stabilized_from = None
    nodes = np.array([1.0 - a for a in schedule])
    return VanishingDiscountResult(
        alphas=tuple(schedule),
        policies=policies,
        stabilized_from=stabilized_from,
        warning=warning,
        queue_marginal_limit=_richardson(nodes, z1s),
        battery_marginal_limit=_richardson(nodes, z2s),
        joint_marginal_limit=_richardson(nodes, z3s),
        queue_marginal_per_alpha=z1s,
        battery_marginal_per_alpha=z2s,
        joint_marginal_per_alpha=z3s,
    )
