"""Closed-form scheduling policies and adapters for solved policy tables.

The closed forms operate on the charge-demand queue, so they are defined for
any batch size: ``q`` below is the number of demands (energy blocks) waiting,
and ``k`` the number of demands charged this period. Both draw battery
greedily: whatever the battery holds covers the charged energy first and the
grid supplies the rest.
"""

from __future__ import annotations

import math

import numpy as np

from .mdp import Action, ModelParams, PolicyTable, SystemState

__all__ = [
    "radical_action",
    "conservative_action",
    "Policy",
    "RadicalPolicy",
    "ConservativePolicy",
    "TablePolicy",
    "MixedPolicy",
]


def radical_action(q: int, e_b: float, params: ModelParams) -> Action:
    """Charge as many demands as the points allow; drain the battery greedily."""
    k = min(q, params.n_charge_points)
    w = min(e_b, k * params.energy_block) / params.period
    return Action(k, w)


def conservative_action(
    q: int, e_b: float, price: float, params: ModelParams
) -> Action:
    """Radical service capped so the period's purchase cost never exceeds the
    long-run cost bound, then greedy battery draw. The cap floors to an
    integer k, which preserves the per-period guarantee."""
    if price <= 0:
        raise ValueError("price must be positive")
    cap = (e_b + params.cost_cap * params.period / price) / params.energy_block
    k = min(q, params.n_charge_points, int(math.floor(cap + 1e-12)))
    k = max(k, 0)
    w = min(e_b, k * params.energy_block) / params.period
    return Action(k, w)


class Policy:
    """Stationary decision rule consulted once per period by the simulator."""

    name = "policy"

    def reset(self, rng: np.random.Generator) -> None:
        """Called once per replication before the first period."""

    def decide(self, x: SystemState, price_value: float) -> Action:
        raise NotImplementedError

    @property
    def clamp_events(self) -> int:
        return 0


class RadicalPolicy(Policy):
    name = "radical"

    def __init__(self, params: ModelParams):
        self.params = params

    def decide(self, x: SystemState, price_value: float) -> Action:
        return radical_action(x.q, x.e_b, self.params)


class ConservativePolicy(Policy):
    name = "conservative"

    def __init__(self, params: ModelParams):
        if not math.isfinite(params.cost_cap):
            raise ValueError("conservative policy needs a finite cost_cap")
        self.params = params

    def decide(self, x: SystemState, price_value: float) -> Action:
        return conservative_action(x.q, x.e_b, price_value, self.params)


class TablePolicy(Policy):
    """Adapter for a solved policy table; queue lengths beyond the table's
    truncation clamp to the last row and are counted as clamp events."""

    name = "table"

    def __init__(self, table: PolicyTable):
        self.table = table
        self._clamps = 0

    def reset(self, rng: np.random.Generator) -> None:
        self._clamps = 0

    def decide(self, x: SystemState, price_value: float) -> Action:
        cap = self.table.params.queue_cap
        q = x.q
        if q > cap:
            self._clamps += 1
            q = cap
        lookup = SystemState(q, x.a, x.e_b, x.e_a, x.p)
        t = self.table.action_of(lookup)
        k = q - t.u
        w = (x.e_b - t.eta) / self.table.params.period
        return Action(k, w)

    @property
    def clamp_events(self) -> int:
        return self._clamps


class MixedPolicy(Policy):
    """Randomises once per replication between two stationary policies; the
    long-run averages interpolate linearly in the mixing weight."""

    name = "mixed"

    def __init__(self, first: Policy, second: Policy, first_weight: float):
        if not 0.0 <= first_weight <= 1.0:
            raise ValueError("first_weight must lie in [0, 1]")
        self.first = first
        self.second = second
        self.first_weight = first_weight
        self._active = first

    def reset(self, rng: np.random.Generator) -> None:
        self._active = self.first if rng.random() < self.first_weight else self.second
        self._active.reset(rng)

    def decide(self, x: SystemState, price_value: float) -> Action:
        return self._active.decide(x, price_value)

    @property
    def clamp_events(self) -> int:
        return self._active.clamp_events
