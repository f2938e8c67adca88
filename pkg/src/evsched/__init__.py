"""Delay-optimal EV charging scheduling at a station with renewable storage.

Core pieces: finite-state chains for arrivals / renewable energy / prices
(:mod:`evsched.chains`), the EV-to-demand dual queue (:mod:`evsched.queues`),
the truncated-state discounted solver (:mod:`evsched.mdp`), optimality
diagnostics (:mod:`evsched.conditions`), closed-form policies
(:mod:`evsched.policies`), the Monte Carlo engine (:mod:`evsched.simulate`),
and the cost-capped weight search (:mod:`evsched.constrained`). The
``evsched`` command line (:mod:`evsched.cli`) drives experiment recipes.
"""

from .chains import (
    BatchLaw,
    ChainSet,
    IidSpec,
    MarkovChainSpec,
    iid_to_chain,
    sample_batch_arrival,
    sample_next,
    stationary_distribution,
)
from .mdp import (
    Action,
    INFINITE_CAPACITY,
    ModelParams,
    PolicyTable,
    SystemState,
    TransformedAction,
    ValueTable,
    feasible_actions,
    lagrangian_cost,
    next_state_distribution,
    solve_discounted,
    stage_cost,
    value_iteration_step,
)
from .policies import ConservativePolicy, MixedPolicy, RadicalPolicy, TablePolicy
from .queues import DualQueue, EvRecord
from .simulate import Engine, RunResult, run

__version__ = "0.1.0"
