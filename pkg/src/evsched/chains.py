"""Finite-state Markov processes driving the station: EV arrivals, renewable
energy arrivals, and the grid power price, plus the per-EV batch-size law.

Chains operate on state *indices*; the physical values (EV counts, energy
amounts, prices) are attached metadata. Every spec is immutable after
construction and safe to share; random draws go through caller-owned
``numpy.random.Generator`` streams so each process can own an independent
sub-stream.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MarkovChainSpec",
    "IidSpec",
    "BatchLaw",
    "ChainSet",
    "iid_to_chain",
    "sample_next",
    "sample_path",
    "sample_batch_arrival",
    "stationary_distribution",
]

_ROW_SUM_TOL = 1e-12


class ChainConstructionError(ValueError):
    """Raised when a chain spec violates its structural invariants."""


def _reachable_from(transition: np.ndarray, start: int) -> set[int]:
    n = transition.shape[0]
    seen = {start}
    stack = [start]
    while stack:
        i = stack.pop()
        for j in range(n):
            if transition[i, j] > 0.0 and j not in seen:
                seen.add(j)
                stack.append(j)
    return seen


def _is_irreducible(transition: np.ndarray) -> bool:
    n = transition.shape[0]
    if any(len(_reachable_from(transition, i)) != n for i in range(n)):
        return False
    return True


def _period_through_state0(transition: np.ndarray) -> int:
    """gcd of cycle lengths through state 0, via BFS level differences.

    For an irreducible chain the period of the graph equals
    gcd{ d(u) + 1 - d(v) : edge u -> v } with d = BFS distance from 0.
    """
    n = transition.shape[0]
    dist = [-1] * n
    dist[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in range(n):
                if transition[u, v] > 0.0 and dist[v] < 0:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    g = 0
    for u in range(n):
        if dist[u] < 0:
            continue
        for v in range(n):
            if transition[u, v] > 0.0 and dist[v] >= 0:
                g = math.gcd(g, abs(dist[u] + 1 - dist[v]))
    return g if g > 0 else 1


@dataclass(frozen=True)
class MarkovChainSpec:
    """A finite-state chain with values attached to the state indices.

    ``values[i]`` is the physical quantity emitted while the chain sits in
    state ``i`` (EVs per period, energy units per period, or a price).
    ``transition`` is row-stochastic. By default construction rejects
    non-ergodic chains (the model assumes ergodicity); degenerate chains
    used in closed-form tests may pass ``require_ergodic=False``.
    """

    values: tuple[float, ...]
    transition: np.ndarray
    initial: int = 0
    require_ergodic: bool = True
    _cum_rows: tuple[tuple[float, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        t = np.array(self.transition, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "transition", t)
        n = len(values)
        if n == 0:
            raise ChainConstructionError("chain needs at least one state")
        if t.shape != (n, n):
            raise ChainConstructionError(
                f"transition shape {t.shape} does not match {n} states"
            )
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise ChainConstructionError("transition entries must lie in [0, 1]")
        rowsums = t.sum(axis=1)
        if np.any(np.abs(rowsums - 1.0) > _ROW_SUM_TOL):
            bad = int(np.argmax(np.abs(rowsums - 1.0)))
            raise ChainConstructionError(
                f"row {bad} sums to {rowsums[bad]!r}, not 1 within {_ROW_SUM_TOL}"
            )
        if any(v < 0 for v in values):
            raise ChainConstructionError("state values must be non-negative")
        if not 0 <= self.initial < n:
            raise ChainConstructionError(f"initial index {self.initial} out of range")
        if self.require_ergodic:
            if not _is_irreducible(t):
                raise ChainConstructionError("chain is not irreducible")
            if _period_through_state0(t) != 1:
                raise ChainConstructionError("chain is periodic (not aperiodic)")
        t.setflags(write=False)
        cum = tuple(tuple(np.cumsum(row)) for row in t)
        object.__setattr__(self, "_cum_rows", cum)

    @property
    def n_states(self) -> int:
        return len(self.values)

    @property
    def max_value(self) -> float:
        return max(self.values)

    def value(self, index: int) -> float:
        return self.values[index]


@dataclass(frozen=True)
class IidSpec:
    """Convenience constructor input for an i.i.d. process: values + probs."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.values) != len(self.probs):
            raise ChainConstructionError("values and probs must have equal length")
        if abs(sum(self.probs) - 1.0) > _ROW_SUM_TOL:
            raise ChainConstructionError("probs must sum to 1")
        if any(p < 0 for p in self.probs):
            raise ChainConstructionError("probs must be non-negative")


@dataclass(frozen=True)
class BatchLaw:
    """Per-EV energy demand in blocks: uniform on {1, ..., batch_max}."""

    batch_max: int = 1

    def __post_init__(self):
        if self.batch_max < 1:
            raise ChainConstructionError("batch_max must be >= 1")

    @property
    def probabilities(self) -> tuple[float, ...]:
        return tuple(1.0 / self.batch_max for _ in range(self.batch_max))

    @property
    def mean(self) -> float:
        return (1 + self.batch_max) / 2.0


@dataclass(frozen=True)
class ChainSet:
    """The three exogenous processes: EV arrivals, renewable arrivals, price."""

    arrival: MarkovChainSpec
    renewable: MarkovChainSpec
    price: MarkovChainSpec


def iid_to_chain(spec: IidSpec, require_ergodic: bool = True) -> MarkovChainSpec:
    """Represent an i.i.d. process as a chain whose rows all equal ``probs``."""
    n = len(spec.values)
    t = np.tile(np.asarray(spec.probs, dtype=float), (n, 1))
    return MarkovChainSpec(
        values=spec.values, transition=t, initial=0, require_ergodic=require_ergodic
    )


def sample_next(chain: MarkovChainSpec, current: int, rng: np.random.Generator) -> int:
    """One transition from state index ``current``; deterministic given the stream."""
    if not 0 <= current < chain.n_states:
        raise ValueError(f"state index {current} out of range [0, {chain.n_states})")
    u = rng.random()
    idx = bisect_right(chain._cum_rows[current], u)
    return min(idx, chain.n_states - 1)


def sample_path(
    chain: MarkovChainSpec, n: int, rng: np.random.Generator, start: int | None = None
) -> np.ndarray:
    """Length-``n`` index path starting one step after ``start`` (default: initial)."""
    state = chain.initial if start is None else start
    out = np.empty(n, dtype=np.int64)
    cum = chain._cum_rows
    hi = chain.n_states - 1
    draws = rng.random(n)
    for i in range(n):
        state = bisect_right(cum[state], draws[i])
        if state > hi:
            state = hi
        out[i] = state
    return out


def sample_batch_arrival(a: int, law: BatchLaw, rng: np.random.Generator) -> int:
    """Total charge demands brought by ``a`` arriving EVs (sum of batch sizes)."""
    if a < 0:
        raise ValueError("arrival count must be non-negative")
    if a == 0:
        return 0
    if law.batch_max == 1:
        return a
    return int(rng.integers(1, law.batch_max + 1, size=a).sum())


def stationary_distribution(chain: MarkovChainSpec) -> np.ndarray:
    """Solve pi @ T = pi with sum(pi) = 1 by direct linear solve."""
    n = chain.n_states
    a = chain.transition.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()
