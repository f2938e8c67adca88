"""Independent reference machinery for validating the solver.

Everything here is built from first principles with plain loops and dicts:
the transition kernel is re-derived directly from the chain specs and the
clamping rules, policies are evaluated exactly by solving the discounted
linear system, and optimality comes from either exhaustive policy
enumeration (micro instances) or exact policy iteration, never from value
iteration. Deliberately unoptimised except for batched linear solves.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from evsched.chains import ChainSet
from evsched.mdp import ModelParams


class OracleKernel:
    """Explicit finite MDP: states, per-state actions, costs, transitions."""

    def __init__(self, params: ModelParams, chains: ChainSet):
        self.params = params
        self.chains = chains
        step = params.energy_step
        neb = int(round(params.battery_cap / step)) + 1
        na = chains.arrival.n_states
        ne = chains.renewable.n_states
        npp = chains.price.n_states
        a_vals = [int(round(v)) for v in chains.arrival.values]
        e_steps = [int(round(v / step)) for v in chains.renewable.values]
        p_vals = list(chains.price.values)

        self.states: list[tuple[int, int, int, int, int]] = []
        for q in range(params.queue_cap + 1):
            for ia in range(na):
                for h in range(neb):
                    for ie in range(ne):
                        for ip in range(npp):
                            self.states.append((q, ia, h, ie, ip))
        self.index = {s: i for i, s in enumerate(self.states)}
        self.n = len(self.states)

        self.actions: list[list[tuple[int, int]]] = []
        self.costs: list[list[float]] = []
        self.trans: list[list[dict[int, float]]] = []
        for (q, ia, h, ie, ip) in self.states:
            acts: list[tuple[int, int]] = []
            costs: list[float] = []
            trans: list[dict[int, float]] = []
            for u in range(q - min(q, params.n_charge_points), q + 1):
                for eta in range(h + 1):
                    bought = (q - u) * params.energy_block - (h - eta) * step
                    if params.limit_draw_to_demand and bought < -1e-9:
                        continue
                    cost = (
                        params.beta * max(bought, 0.0) * p_vals[ip] / params.period + q
                    )
                    dist: dict[int, float] = {}
                    for ja in range(na):
                        wa = chains.arrival.transition[ia][ja]
                        if wa == 0.0:
                            continue
                        qn = min(u + a_vals[ja], params.queue_cap)
                        for je in range(ne):
                            we = chains.renewable.transition[ie][je]
                            if we == 0.0:
                                continue
                            hn = min(eta + e_steps[je], neb - 1)
                            for jp in range(npp):
                                wp = chains.price.transition[ip][jp]
                                if wp == 0.0:
                                    continue
                                j = self.index[(qn, ja, hn, je, jp)]
                                dist[j] = dist.get(j, 0.0) + wa * we * wp
                    acts.append((u, eta))
                    costs.append(cost)
                    trans.append(dist)
            self.actions.append(acts)
            self.costs.append(costs)
            self.trans.append(trans)

    def policy_value(self, choice: list[int]) -> np.ndarray:
        """Exact discounted value of a stationary policy via linear solve."""
        p = np.zeros((self.n, self.n))
        c = np.zeros(self.n)
        for i, a in enumerate(choice):
            c[i] = self.costs[i][a]
            for j, w in self.trans[i][a].items():
                p[i, j] = w
        a_mat = np.eye(self.n) - self.params.alpha * p
        return np.linalg.solve(a_mat, c)

    def greedy_against(self, v: np.ndarray) -> list[int]:
        alpha = self.params.alpha
        choice = []
        for i in range(self.n):
            best, best_a = math.inf, 0
            for a in range(len(self.actions[i])):
                qv = self.costs[i][a] + alpha * sum(
                    w * v[j] for j, w in self.trans[i][a].items()
                )
                if qv < best - 1e-12:
                    best, best_a = qv, a
            choice.append(best_a)
        return choice

    def exact_policy_iteration(self, max_rounds: int = 200) -> tuple[np.ndarray, list[int]]:
        """Howard policy iteration with exact evaluation; terminates at the
        global optimum over all stationary deterministic policies."""
        choice = [0] * self.n
        for _ in range(max_rounds):
            v = self.policy_value(choice)
            improved = self.greedy_against(v)
            if improved == choice:
                return v, choice
            choice = improved
        raise RuntimeError("policy iteration did not stabilise")

    def action_counts(self) -> list[int]:
        return [len(a) for a in self.actions]

    def brute_force_min_values(self, chunk: int = 4096) -> np.ndarray:
        """Pointwise minimum of the exact value over EVERY stationary
        deterministic policy. Only viable when the product of per-state
        action counts is small; batched linear solves keep it quick."""
        counts = self.action_counts()
        total = 1
        for cnt in counts:
            total *= cnt
        if total > 2_000_000:
            raise RuntimeError(f"policy space too large to enumerate: {total}")
        amax = max(counts)
        p_sa = np.zeros((self.n, amax, self.n))
        c_sa = np.zeros((self.n, amax))
        for i in range(self.n):
            for a in range(counts[i]):
                c_sa[i, a] = self.costs[i][a]
                for j, w in self.trans[i][a].items():
                    p_sa[i, a, j] = w
        eye = np.eye(self.n)
        alpha = self.params.alpha
        best = np.full(self.n, np.inf)
        rows = np.arange(self.n)
        it = itertools.product(*[range(cnt) for cnt in counts])
        while True:
            block = list(itertools.islice(it, chunk))
            if not block:
                break
            choice = np.array(block)
            p_g = p_sa[rows[None, :], choice]
            c_g = c_sa[rows[None, :], choice]
            a_mat = eye[None, :, :] - alpha * p_g
            v = np.linalg.solve(a_mat, c_g[..., None])[..., 0]
            best = np.minimum(best, v.min(axis=0))
        return best


def run_queue_reference(
    arrivals: list[int], services: list[int], batch_sizes: list[list[int]]
) -> tuple[list[int], list[int]]:
    """Naive list-of-blocks walk of the dual queue for cross-checking.

    ``batch_sizes[t]`` holds the block counts of the EVs arriving at step t.
    Returns per-step (EV queue length, demand queue length) AFTER the step's
    service and arrivals, serving strictly from the head.
    """
    blocks: list[int] = []
    ev_lens, demand_lens = [], []
    for t in range(len(arrivals)):
        remaining = min(services[t], sum(blocks))
        while remaining > 0 and blocks:
            take = min(remaining, blocks[0])
            blocks[0] -= take
            remaining -= take
            if blocks[0] == 0:
                blocks.pop(0)
        for b in batch_sizes[t][: arrivals[t]]:
            blocks.append(b)
        ev_lens.append(len(blocks))
        demand_lens.append(sum(blocks))
    return ev_lens, demand_lens
