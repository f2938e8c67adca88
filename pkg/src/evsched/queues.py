"""EV queue and the mapped charge-demand queue, kept in lockstep.

Each waiting EV owes a run of consecutive charge demands (one per energy
block). The demand queue length is always the sum of remaining blocks over
queued EVs, and service decrements blocks strictly from the head, so an EV
departs no later than any EV that arrived after it (the mapping is isotone).
Partial service of the head EV across periods is allowed.

Single-owner mutable structure: not safe for concurrent mutation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .chains import BatchLaw

__all__ = ["EvRecord", "DualQueue"]


@dataclass(slots=True)
class EvRecord:
    ev_id: int
    blocks_total: int
    blocks_remaining: int
    arrival_period: int
    departure_period: int = -1

    def __post_init__(self):
        if self.blocks_total < 1:
            raise ValueError("an EV owes at least one energy block")
        if not 0 <= self.blocks_remaining <= self.blocks_total:
            raise ValueError("blocks_remaining out of range")


class DualQueue:
    """FIFO EV queue with its demand-queue view maintained incrementally."""

    def __init__(self):
        self.evs: deque[EvRecord] = deque()
        self._demand_len = 0
        self._next_id = 0

    @property
    def ev_len(self) -> int:
        return len(self.evs)

    @property
    def demand_len(self) -> int:
        return self._demand_len

    def queue_lengths(self) -> tuple[int, int]:
        """(EV queue length, charge demand queue length)."""
        return len(self.evs), self._demand_len

    def enqueue_arrivals(
        self,
        a: int,
        law: BatchLaw,
        rng: np.random.Generator,
        period: int = 0,
    ) -> int:
        """Append ``a`` EVs with freshly drawn batch sizes; returns demands added."""
        if a < 0:
            raise ValueError("arrival count must be non-negative")
        if a == 0:
            return 0
        if law.batch_max == 1:
            draws = [1] * a
        else:
            draws = rng.integers(1, law.batch_max + 1, size=a).tolist()
        append = self.evs.append
        nid = self._next_id
        for blocks in draws:
            append(
                EvRecord(
                    ev_id=nid,
                    blocks_total=blocks,
                    blocks_remaining=blocks,
                    arrival_period=period,
                )
            )
            nid += 1
        self._next_id = nid
        added = sum(draws)
        self._demand_len += added
        return added

    def append_ev(self, blocks: int, period: int = 0) -> EvRecord:
        """Append one EV with a known block count (deterministic test hook)."""
        rec = EvRecord(
            ev_id=self._next_id,
            blocks_total=blocks,
            blocks_remaining=blocks,
            arrival_period=period,
        )
        self.evs.append(rec)
        self._next_id += 1
        self._demand_len += blocks
        return rec

    def serve_demands(self, k_prime: int, period: int = 0) -> tuple[int, list[EvRecord]]:
        """Charge up to ``k_prime`` demands from the head; over-requests clamp.

        Returns (demands actually served, EVs that departed this call, in
        FIFO order). Departing records carry their departure period.
        """
        if k_prime < 0:
            raise ValueError("service count must be non-negative")
        served = min(k_prime, self._demand_len)
        remaining = served
        departed: list[EvRecord] = []
        while remaining > 0:
            head = self.evs[0]
            take = min(remaining, head.blocks_remaining)
            head.blocks_remaining -= take
            remaining -= take
            if head.blocks_remaining == 0:
                head.departure_period = period
                departed.append(head)
                self.evs.popleft()
        self._demand_len -= served
        return served, departed

    def check_mapping_identity(self) -> bool:
        return self._demand_len == sum(ev.blocks_remaining for ev in self.evs)
