"""Truncated-state MDP for the single-block-per-EV station.

State is the 5-tuple (queue length, arrival state, battery energy, renewable
state, price state); the action is (EVs charged, battery power drawn),
handled internally in the transformed coordinates (u, eta) = (queue left
unserved, battery left undrawn). Stage cost is the grid energy purchased
times the current price; the solver minimises the discounted relaxed
objective beta * purchase_cost + queue_length by value iteration and
extracts the greedy stationary policy.

The queue is truncated at ``queue_cap`` (successor queue lengths clamp) and
battery energy lives on a uniform grid of ``energy_step`` units. Ties in the
greedy argmin break toward the smallest u, then the smallest eta, so repeated
solves are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, NamedTuple

import numpy as np

from .chains import ChainSet, MarkovChainSpec

__all__ = [
    "ModelParams",
    "SystemState",
    "Action",
    "TransformedAction",
    "ValueTable",
    "PolicyTable",
    "StateGrid",
    "ModelValidationError",
    "InfeasibleActionError",
    "ConvergenceError",
    "feasible_actions",
    "stage_cost",
    "lagrangian_cost",
    "next_state_distribution",
    "value_iteration_step",
    "solve_discounted",
    "validate_for_solver",
]

INFINITE_CAPACITY = math.inf

_GRID_TOL = 1e-9


class ModelValidationError(ValueError):
    """Model parameters / chain combination unusable for the requested task."""


class InfeasibleActionError(ValueError):
    """An action outside the feasible set of its state was supplied."""


class ConvergenceError(RuntimeError):
    """Value iteration failed to reach the span tolerance."""

    def __init__(self, span: float, iterations: int):
        super().__init__(
            f"value iteration did not converge: span {span!r} after {iterations} sweeps"
        )
        self.span = span
        self.iterations = iterations


@dataclass(frozen=True)
class ModelParams:
    """Station and solver parameters.

    battery_cap may be ``INFINITE_CAPACITY`` for simulation-only use; the
    solver requires a finite battery on the ``energy_step`` grid.
    """

    n_charge_points: int
    energy_block: float
    period: float = 1.0
    battery_cap: float = INFINITE_CAPACITY
    queue_cap: int = 0
    beta: float = 0.0
    alpha: float = 0.9
    cost_cap: float = math.inf
    energy_step: float = 1.0
    limit_draw_to_demand: bool = True

    def __post_init__(self):
        if self.n_charge_points < 1:
            raise ModelValidationError("n_charge_points must be >= 1")
        if self.energy_block <= 0:
            raise ModelValidationError("energy_block must be positive")
        if self.period <= 0:
            raise ModelValidationError("period must be positive")
        if self.battery_cap < 0:
            raise ModelValidationError("battery_cap must be non-negative")
        if self.queue_cap < 0:
            raise ModelValidationError("queue_cap must be non-negative")
        if self.beta < 0:
            raise ModelValidationError("beta must be non-negative")
        if not 0.0 < self.alpha < 1.0:
            raise ModelValidationError("alpha must lie in (0, 1)")
        if self.energy_step <= 0:
            raise ModelValidationError("energy_step must be positive")

    def with_beta(self, beta: float) -> "ModelParams":
        return replace(self, beta=beta)

    def with_alpha(self, alpha: float) -> "ModelParams":
        return replace(self, alpha=alpha)


class SystemState(NamedTuple):
    """(queue length, arrival index, battery energy, renewable index, price index)."""

    q: int
    a: int
    e_b: float
    e_a: int
    p: int


class Action(NamedTuple):
    """Raw action: EVs charged this period and battery power drawn."""

    k: int
    w: float


class TransformedAction(NamedTuple):
    """Post-action remainders: u = q - k, eta = e_b - w * period."""

    u: int
    eta: float


def _is_grid_multiple(x: float, step: float) -> bool:
    r = x / step
    return abs(r - round(r)) <= _GRID_TOL * max(1.0, abs(r))


def validate_for_solver(params: ModelParams, chains: ChainSet) -> None:
    """Reject parameter/chain combinations the table solver cannot represent."""
    problems: list[str] = []
    if not math.isfinite(params.battery_cap):
        problems.append("solver requires a finite battery_cap")
    elif not _is_grid_multiple(params.battery_cap, params.energy_step):
        problems.append("battery_cap must be a multiple of energy_step")
    for v in chains.arrival.values:
        if abs(v - round(v)) > _GRID_TOL:
            problems.append(f"arrival value {v} is not an integer EV count")
            break
    for v in chains.renewable.values:
        if not _is_grid_multiple(v, params.energy_step):
            problems.append(
                f"renewable value {v} is not on the {params.energy_step} energy grid"
            )
            break
    max_arrival = max(chains.arrival.values)
    if params.queue_cap < 2 * max_arrival:
        problems.append(
            f"queue_cap {params.queue_cap} below twice the max arrival {max_arrival}"
        )
    if problems:
        raise ModelValidationError("; ".join(problems))


@dataclass(frozen=True)
class StateGrid:
    """Index bookkeeping for the dense tables over the truncated state space."""

    params: ModelParams
    chains: ChainSet
    nq: int = field(init=False)
    na: int = field(init=False)
    neb: int = field(init=False)
    ne: int = field(init=False)
    np_: int = field(init=False)

    def __post_init__(self):
        p = self.params
        object.__setattr__(self, "nq", p.queue_cap + 1)
        object.__setattr__(self, "na", self.chains.arrival.n_states)
        object.__setattr__(
            self, "neb", int(round(p.battery_cap / p.energy_step)) + 1
        )
        object.__setattr__(self, "ne", self.chains.renewable.n_states)
        object.__setattr__(self, "np_", self.chains.price.n_states)

    @property
    def shape(self) -> tuple[int, int, int, int, int]:
        return (self.nq, self.na, self.neb, self.ne, self.np_)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.shape))

    def arrival_counts(self) -> np.ndarray:
        return np.array([int(round(v)) for v in self.chains.arrival.values])

    def renewable_steps(self) -> np.ndarray:
        step = self.params.energy_step
        return np.array([int(round(v / step)) for v in self.chains.renewable.values])

    def price_values(self) -> np.ndarray:
        return np.asarray(self.chains.price.values, dtype=float)

    def battery_index(self, e_b: float) -> int:
        step = self.params.energy_step
        idx = int(round(e_b / step))
        if not 0 <= idx < self.neb or abs(e_b - idx * step) > _GRID_TOL * max(1.0, e_b):
            raise ValueError(f"battery energy {e_b} is off the solver grid")
        return idx

    def battery_value(self, idx: int) -> float:
        return idx * self.params.energy_step

    def state_to_index(self, x: SystemState) -> tuple[int, int, int, int, int]:
        if not 0 <= x.q < self.nq:
            raise ValueError(f"queue length {x.q} outside [0, {self.nq - 1}]")
        return (x.q, x.a, self.battery_index(x.e_b), x.e_a, x.p)

    def states(self) -> Iterator[SystemState]:
        for q in range(self.nq):
            for a in range(self.na):
                for h in range(self.neb):
                    for e in range(self.ne):
                        for p in range(self.np_):
                            yield SystemState(q, a, self.battery_value(h), e, p)


def _floor_u(q: int, params: ModelParams) -> int:
    return q - min(q, params.n_charge_points)


def feasible_actions(x: SystemState, params: ModelParams) -> list[TransformedAction]:
    """All (u, eta) pairs available in state x, in (u asc, eta asc) order.

    When ``limit_draw_to_demand`` is set, pairs whose battery draw would
    exceed the energy actually being charged are dropped.
    """
    step = params.energy_step
    heb = int(round(x.e_b / step))
    out: list[TransformedAction] = []
    for u in range(_floor_u(x.q, params), x.q + 1):
        for h in range(heb + 1):
            if params.limit_draw_to_demand:
                if (x.q - u) * params.energy_block < (heb - h) * step - _GRID_TOL:
                    continue
            out.append(TransformedAction(u, h * step))
    return out


def to_transformed(x: SystemState, act: Action, params: ModelParams) -> TransformedAction:
    return TransformedAction(x.q - act.k, x.e_b - act.w * params.period)


def to_raw(x: SystemState, t: TransformedAction, params: ModelParams) -> Action:
    return Action(x.q - t.u, (x.e_b - t.eta) / params.period)


def _check_raw_feasible(x: SystemState, act: Action, params: ModelParams) -> None:
    if act.k < 0 or act.k > min(x.q, params.n_charge_points):
        raise InfeasibleActionError(
            f"k={act.k} outside [0, {min(x.q, params.n_charge_points)}] in state {x}"
        )
    draw = act.w * params.period
    if draw < -_GRID_TOL or draw > x.e_b + _GRID_TOL:
        raise InfeasibleActionError(
            f"battery draw {draw} outside [0, {x.e_b}] in state {x}"
        )


def stage_cost(
    x: SystemState, act: Action, params: ModelParams, chains: ChainSet
) -> float:
    """Grid energy purchased this period times the current price; never negative."""
    _check_raw_feasible(x, act, params)
    price = chains.price.values[x.p]
    purchase = act.k * params.energy_block / params.period - act.w
    return max(purchase, 0.0) * price


def lagrangian_cost(
    x: SystemState, act: Action, params: ModelParams, chains: ChainSet
) -> float:
    """Relaxed stage cost: beta * purchase cost + queue length."""
    return params.beta * stage_cost(x, act, params, chains) + x.q


def next_state_distribution(
    x: SystemState,
    t: TransformedAction,
    params: ModelParams,
    chains: ChainSet,
) -> list[tuple[SystemState, float]]:
    """Successor distribution: fresh draws of all three chains, with the new
    arrival joining the residual queue and the new renewable topping up the
    residual battery (clamped at queue_cap / battery_cap)."""
    pa = chains.arrival.transition[x.a]
    pe = chains.renewable.transition[x.e_a]
    pp = chains.price.transition[x.p]
    acc: dict[SystemState, float] = {}
    for ja, wa in enumerate(pa):
        if wa == 0.0:
            continue
        qn = min(t.u + int(round(chains.arrival.values[ja])), params.queue_cap)
        for je, we in enumerate(pe):
            if we == 0.0:
                continue
            ebn = min(t.eta + chains.renewable.values[je], params.battery_cap)
            for jp, wp in enumerate(pp):
                if wp == 0.0:
                    continue
                s = SystemState(qn, ja, ebn, je, jp)
                acc[s] = acc.get(s, 0.0) + wa * we * wp
    return sorted(acc.items(), key=lambda kv: kv[0])


@dataclass
class ValueTable:
    """Dense discounted value function over the truncated state grid."""

    values: np.ndarray
    params: ModelParams
    chains: ChainSet
    iterations: int = 0

    @property
    def grid(self) -> StateGrid:
        return StateGrid(self.params, self.chains)

    def value_of(self, x: SystemState) -> float:
        return float(self.values[self.grid.state_to_index(x)])


@dataclass
class PolicyTable:
    """Stationary deterministic map state -> (u, eta), stored index-wise."""

    u: np.ndarray
    eta_steps: np.ndarray
    params: ModelParams
    chains: ChainSet

    @property
    def grid(self) -> StateGrid:
        return StateGrid(self.params, self.chains)

    def action_of(self, x: SystemState) -> TransformedAction:
        idx = self.grid.state_to_index(x)
        return TransformedAction(
            int(self.u[idx]), float(self.eta_steps[idx]) * self.params.energy_step
        )

    def raw_action_of(self, x: SystemState) -> Action:
        return to_raw(x, self.action_of(x), self.params)

    def same_actions(self, other: "PolicyTable") -> bool:
        return bool(
            np.array_equal(self.u, other.u)
            and np.array_equal(self.eta_steps, other.eta_steps)
        )


class _Workspace:
    """Precomputed gather indices and stage costs for vectorised sweeps.

    Action slots are enumerated u-major then eta over a padded
    (min(M, queue_cap)+1) x battery-levels rectangle per (q, e_b) pair;
    infeasible slots carry +inf cost, so a flat argmin realises the
    smallest-u-then-smallest-eta tie break.
    """

    _CHUNK_BYTES = 64 << 20

    def __init__(self, params: ModelParams, chains: ChainSet):
        validate_for_solver(params, chains)
        self.params = params
        self.chains = chains
        g = StateGrid(params, chains)
        self.grid = g
        nq, na, neb, ne, np_ = g.shape

        val_a = g.arrival_counts()
        val_e = g.renewable_steps()
        val_p = g.price_values()
        self.pa = np.asarray(chains.arrival.transition)
        self.pe = np.asarray(chains.renewable.transition)
        self.pp = np.asarray(chains.price.transition)

        u_axis = np.arange(nq)
        self.qnext = np.minimum(u_axis[:, None] + val_a[None, :], params.queue_cap)
        h_axis = np.arange(neb)
        self.ebnext = np.minimum(h_axis[:, None] + val_e[None, :], neb - 1)

        su = min(params.n_charge_points, params.queue_cap) + 1
        self.n_slots = su * neb
        q_pair, eb_pair = np.meshgrid(np.arange(nq), h_axis, indexing="ij")
        q_pair = q_pair.reshape(-1)
        eb_pair = eb_pair.reshape(-1)
        u0 = q_pair - np.minimum(q_pair, params.n_charge_points)
        self.u0_pair = u0

        slot = np.arange(self.n_slots)
        u_rel = slot // neb
        h_slot = slot % neb
        u_abs = u0[:, None] + u_rel[None, :]
        feasible = (u_abs <= q_pair[:, None]) & (h_slot[None, :] <= eb_pair[:, None])
        needed = (q_pair[:, None] - u_abs) * params.energy_block - (
            eb_pair[:, None] - h_slot[None, :]
        ) * params.energy_step
        if params.limit_draw_to_demand:
            feasible &= needed >= -_GRID_TOL
        base = params.beta * np.maximum(needed, 0.0) / params.period
        cost = base[:, :, None] * val_p[None, None, :] + q_pair[:, None, None]
        cost = np.where(feasible[:, :, None], cost, np.inf)
        self.cost_pad = np.ascontiguousarray(cost)
        self.gather_idx = np.where(feasible, u_abs * neb + h_slot[None, :], 0).astype(
            np.int64
        )
        self.u_of_slot = u_rel
        self.h_of_slot = h_slot

        per_pair = self.n_slots * na * ne * np_ * 8
        self.chunk = max(1, int(self._CHUNK_BYTES // max(per_pair, 1)))
        self.n_pairs = nq * neb

    def continuation(self, v: np.ndarray) -> np.ndarray:
        """E[V(next state)] indexed by (u, arrival, eta_steps, renewable, price)."""
        g = self.grid
        nq, na, neb, ne, np_ = g.shape
        gathered = np.empty((nq, na, neb, ne, np_))
        for ja in range(na):
            gathered[:, ja] = v[self.qnext[:, ja], ja]
        h = np.einsum("ij,ujklm->uiklm", self.pa, gathered)
        k = np.empty_like(h)
        for je in range(ne):
            k[:, :, :, je, :] = h[:, :, self.ebnext[:, je], je, :]
        l = np.einsum("ij,uahjm->uahim", self.pe, k)
        return np.einsum("ij,uahej->uahei", self.pp, l)

    def sweep(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One Bellman update; returns (V_next, argmin slot per state)."""
        g = self.grid
        nq, na, neb, ne, np_ = g.shape
        ev = self.continuation(v)
        evflat = np.ascontiguousarray(ev.transpose(0, 2, 1, 3, 4)).reshape(
            nq * neb, na, ne, np_
        )
        vmin = np.empty((self.n_pairs, na, ne, np_))
        slots = np.empty((self.n_pairs, na, ne, np_), dtype=np.int64)
        alpha = self.params.alpha
        for lo in range(0, self.n_pairs, self.chunk):
            hi = min(lo + self.chunk, self.n_pairs)
            cand = evflat[self.gather_idx[lo:hi]]
            cand *= alpha
            cand += self.cost_pad[lo:hi, :, None, None, :]
            am = cand.argmin(axis=1)
            slots[lo:hi] = am
            vmin[lo:hi] = np.take_along_axis(cand, am[:, None], axis=1)[:, 0]
        v_next = np.moveaxis(vmin.reshape(nq, neb, na, ne, np_), 1, 2)
        return np.ascontiguousarray(v_next), slots

    def decode(self, slots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Slot indices -> absolute (u, eta_steps) arrays on the state grid."""
        g = self.grid
        nq, na, neb, ne, np_ = g.shape
        u = self.u0_pair[:, None, None, None] + self.u_of_slot[slots]
        h = self.h_of_slot[slots]
        u = np.moveaxis(u.reshape(nq, neb, na, ne, np_), 1, 2)
        h = np.moveaxis(h.reshape(nq, neb, na, ne, np_), 1, 2)
        return (
            np.ascontiguousarray(u, dtype=np.int32),
            np.ascontiguousarray(h, dtype=np.int32),
        )


def value_iteration_step(
    v_prev: np.ndarray, params: ModelParams, chains: ChainSet
) -> tuple[np.ndarray, PolicyTable]:
    """One Bellman sweep plus the greedy policy against ``v_prev``."""
    ws = _Workspace(params, chains)
    v_next, slots = ws.sweep(np.asarray(v_prev, dtype=float))
    u, h = ws.decode(slots)
    return v_next, PolicyTable(u=u, eta_steps=h, params=params, chains=chains)


def solve_discounted(
    params: ModelParams,
    chains: ChainSet,
    tol: float = 1e-8,
    max_iters: int = 500_000,
    on_iterate: Callable[[int, np.ndarray], None] | None = None,
    value_tol: float | None = None,
) -> tuple[ValueTable, PolicyTable, int]:
    """Iterate the Bellman update from V=0 until the span of the increment
    falls below ``tol``; returns the fixed-point approximation, its greedy
    policy, and the sweep count.

    The span criterion pins down the *shape* of the value function (and
    hence the greedy policy) long before the absolute level settles at
    discount factors close to 1. Pass ``value_tol`` to additionally require
    the contraction bound alpha/(1-alpha) * ||V_n - V_{n-1}||_inf below
    that tolerance, certifying ``||V - V*||_inf <= value_tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    ws = _Workspace(params, chains)
    v = np.zeros(ws.grid.shape)
    span = math.inf
    sup_factor = params.alpha / (1.0 - params.alpha)
    for it in range(1, max_iters + 1):
        v_next, slots = ws.sweep(v)
        diff = v_next - v
        span = float(diff.max() - diff.min())
        if on_iterate is not None:
            on_iterate(it, v_next)
        v = v_next
        done = span < tol
        if done and value_tol is not None:
            done = sup_factor * float(np.abs(diff).max()) < value_tol
        if done:
            u, h = ws.decode(slots)
            vt = ValueTable(values=v, params=params, chains=chains, iterations=it)
            pt = PolicyTable(u=u, eta_steps=h, params=params, chains=chains)
            return vt, pt, it
    raise ConvergenceError(span=span, iterations=max_iters)
