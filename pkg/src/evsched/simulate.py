"""Discrete-time Monte Carlo engine for the charging station.

Per period, in fixed order: observe the state, let the policy pick
(k, w), serve k demands from the head of the dual queue, accrue the
purchase cost at the current price, top the battery up with the current
renewable arrival (clamped at capacity), sample the next chain states, and
enqueue the new arrivals (batch-sampled when EVs demand multiple blocks).
Queue lengths are sampled at period start, so their averages estimate the
long-run mean queue lengths.

One engine per replication; replications run with independently spawned
seed streams and identical (config, seed) runs are bit-identical.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .chains import BatchLaw, ChainSet
from .mdp import ModelParams, SystemState
from .policies import Policy
from .queues import DualQueue

__all__ = ["TraceRow", "RunResult", "SimulationError", "Engine", "run", "replicate"]

_N_BATCHES = 10
_Z95 = 1.959963984540054


class SimulationError(RuntimeError):
    """A policy returned an action outside the feasible set."""


@dataclass(slots=True)
class TraceRow:
    period: int
    q: int
    q_e: int
    a: float
    a_prime: int
    e_b: float
    e_a: float
    p: float
    k: int
    w: float
    cost: float
    clamps: int


@dataclass
class RunResult:
    """Time averages over one replication, with batch-means halfwidths."""

    horizon: int
    seed: int
    avg_cost: float
    avg_queue_ev: float
    avg_queue_demand: float
    cost_halfwidth: float
    queue_ev_halfwidth: float
    queue_demand_halfwidth: float
    clamp_events: int
    max_period_cost: float
    final_state: SystemState
    warmup_periods: int = 0
    trace: list[TraceRow] | None = None


def _halfwidth(batch_means: np.ndarray) -> float:
    if len(batch_means) < 2:
        return 0.0
    return _Z95 * float(batch_means.std(ddof=1)) / math.sqrt(len(batch_means))


class Engine:
    """Mutable per-replication simulation state."""

    def __init__(
        self,
        params: ModelParams,
        chains: ChainSet,
        batch_law: BatchLaw,
        policy: Policy,
        seed: int,
        initial_queue: int = 0,
        initial_battery: float = 0.0,
    ):
        self.params = params
        self.chains = chains
        self.batch_law = batch_law
        self.policy = policy
        self.seed = seed
        streams = np.random.SeedSequence(seed).spawn(5)
        self.rng_arrival = np.random.default_rng(streams[0])
        self.rng_renewable = np.random.default_rng(streams[1])
        self.rng_price = np.random.default_rng(streams[2])
        self.rng_batch = np.random.default_rng(streams[3])
        self.rng_policy = np.random.default_rng(streams[4])

        self.queue = DualQueue()
        self.queue.enqueue_arrivals(initial_queue, batch_law, self.rng_batch, period=0)
        self.e_b = float(initial_battery)
        self.ia = chains.arrival.initial
        self.ie = chains.renewable.initial
        self.ip = chains.price.initial
        self.period = 0
        policy.reset(self.rng_policy)

    def state(self) -> SystemState:
        return SystemState(self.queue.demand_len, self.ia, self.e_b, self.ie, self.ip)

    def step(self) -> TraceRow:
        """Advance one period; returns the period's record."""
        params = self.params
        q_ev, q_e = self.queue.queue_lengths()
        a_val = self.chains.arrival.values[self.ia]
        ea_val = self.chains.renewable.values[self.ie]
        p_val = self.chains.price.values[self.ip]

        x = SystemState(q_e, self.ia, self.e_b, self.ie, self.ip)
        act = self.policy.decide(x, p_val)
        k, w = act.k, act.w
        k_cap = min(q_e, params.n_charge_points)
        draw = w * params.period
        if not (0 <= k <= k_cap) or k != int(k):
            raise SimulationError(
                f"policy {self.policy.name!r} chose k={k} outside [0, {k_cap}] "
                f"at period {self.period}, state {x}"
            )
        if draw < -1e-9 or draw > self.e_b + 1e-9:
            raise SimulationError(
                f"policy {self.policy.name!r} drew {draw} from battery {self.e_b} "
                f"at period {self.period}, state {x}"
            )

        served, _ = self.queue.serve_demands(k, period=self.period)
        cost = max(k * params.energy_block / params.period - w, 0.0) * p_val
        self.e_b = min(max(self.e_b - draw, 0.0) + ea_val, params.battery_cap)

        self.ia = self._draw(self.chains.arrival, self.ia, self.rng_arrival)
        self.ie = self._draw(self.chains.renewable, self.ie, self.rng_renewable)
        self.ip = self._draw(self.chains.price, self.ip, self.rng_price)

        n_ev = int(round(self.chains.arrival.values[self.ia]))
        a_prime = self.queue.enqueue_arrivals(
            n_ev, self.batch_law, self.rng_batch, period=self.period + 1
        )
        row = TraceRow(
            period=self.period,
            q=q_ev,
            q_e=q_e,
            a=a_val,
            a_prime=a_prime,
            e_b=x.e_b,
            e_a=ea_val,
            p=p_val,
            k=k,
            w=w,
            cost=cost,
            clamps=self.policy.clamp_events,
        )
        self.period += 1
        return row

    @staticmethod
    def _draw(chain, current: int, rng: np.random.Generator) -> int:
        idx = bisect_right(chain._cum_rows[current], rng.random())
        return min(idx, chain.n_states - 1)


def run(
    params: ModelParams,
    chains: ChainSet,
    batch_law: BatchLaw,
    policy: Policy,
    horizon: int,
    seed: int,
    initial_queue: int = 0,
    initial_battery: float = 0.0,
    record_trace: bool = False,
    warmup_fraction: float = 0.0,
) -> RunResult:
    """Simulate ``horizon`` periods and return time averages.

    ``warmup_fraction`` (default 0: average from period 0) excludes the
    leading fraction of periods from all averages.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not 0.0 <= warmup_fraction < 1.0:
        raise ValueError("warmup_fraction must lie in [0, 1)")
    eng = Engine(
        params,
        chains,
        batch_law,
        policy,
        seed,
        initial_queue=initial_queue,
        initial_battery=initial_battery,
    )
    warmup = int(warmup_fraction * horizon)
    measured = horizon - warmup
    bounds = [warmup + (measured * (i + 1)) // _N_BATCHES for i in range(_N_BATCHES)]
    cost_b = np.zeros(_N_BATCHES)
    qev_b = np.zeros(_N_BATCHES)
    qe_b = np.zeros(_N_BATCHES)
    counts = np.zeros(_N_BATCHES)
    trace: list[TraceRow] | None = [] if record_trace else None
    max_cost = 0.0
    batch_i = 0
    for t in range(horizon):
        row = eng.step()
        if trace is not None:
            trace.append(row)
        if t < warmup:
            continue
        while batch_i < _N_BATCHES - 1 and t >= bounds[batch_i]:
            batch_i += 1
        cost_b[batch_i] += row.cost
        qev_b[batch_i] += row.q
        qe_b[batch_i] += row.q_e
        counts[batch_i] += 1
        if row.cost > max_cost:
            max_cost = row.cost
    live = counts > 0
    means_cost = cost_b[live] / counts[live]
    means_qev = qev_b[live] / counts[live]
    means_qe = qe_b[live] / counts[live]
    return RunResult(
        horizon=horizon,
        seed=seed,
        avg_cost=float(cost_b.sum() / measured),
        avg_queue_ev=float(qev_b.sum() / measured),
        avg_queue_demand=float(qe_b.sum() / measured),
        cost_halfwidth=_halfwidth(means_cost),
        queue_ev_halfwidth=_halfwidth(means_qev),
        queue_demand_halfwidth=_halfwidth(means_qe),
        clamp_events=eng.policy.clamp_events,
        max_period_cost=max_cost,
        final_state=eng.state(),
        warmup_periods=warmup,
        trace=trace,
    )


def replicate(
    params: ModelParams,
    chains: ChainSet,
    batch_law: BatchLaw,
    policy: Policy,
    horizon: int,
    seed: int,
    replications: int,
    **kwargs,
) -> list[RunResult]:
    """Independent replications with per-replication child seeds."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    children = np.random.SeedSequence(seed).spawn(replications)
    out = []
    for i, child in enumerate(children):
        rep_seed = int(child.generate_state(1)[0])
        out.append(
            run(params, chains, batch_law, policy, horizon, rep_seed, **kwargs)
        )
    return out
