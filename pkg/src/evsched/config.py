"""Experiment configuration: flat key-value text with sections.

Sections are [model], [chains.A], [chains.Ea], [chains.P], [policy],
[solver], [simulate] and optionally [sweep]. Unknown sections or keys are
errors, and validation collects every failing field before reporting.

Chain specs come in four kinds:

- ``iid``: explicit ``values`` and ``probs``;
- ``markov``: explicit ``values``, row-stochastic ``transition`` (rows
  separated by ';'), optional ``initial`` index;
- ``two_point_mean``: values {0, 2*mean} with equal probability;
- ``three_point_mean``: values {0, 5*mean/7, 10*mean/7} with probabilities
  {0.1, 0.4, 0.5} (so the stationary mean is ``mean``).
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .chains import BatchLaw, ChainSet, IidSpec, MarkovChainSpec, iid_to_chain
from .mdp import INFINITE_CAPACITY, ModelParams
from .policies import ConservativePolicy, Policy, RadicalPolicy, TablePolicy

__all__ = [
    "ConfigError",
    "SweepSpec",
    "ExperimentConfig",
    "load_config",
    "parse_config_text",
    "build_policy",
    "recipe_path",
]


class ConfigError(ValueError):
    """Invalid configuration; message lists every failing field."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems


_MODEL_KEYS = {
    "charge_points",
    "energy_block",
    "period",
    "battery_cap",
    "queue_cap",
    "batch_max",
    "energy_step",
    "beta",
    "alpha",
    "cost_cap",
    "limit_draw_to_demand",
}
_CHAIN_KEYS = {"kind", "values", "probs", "transition", "initial", "mean"}
_POLICY_KEYS = {"kind"}
_SOLVER_KEYS = {
    "tol",
    "max_iters",
    "alpha_schedule",
    "mode",
    "horizon",
    "replications",
}
_SIMULATE_KEYS = {
    "horizon",
    "seed",
    "replications",
    "initial_queue",
    "initial_battery",
    "warmup_fraction",
    "record_trace",
}
_SWEEP_KEYS = {"key", "values"}
_SECTIONS = {
    "model": _MODEL_KEYS,
    "chains.A": _CHAIN_KEYS,
    "chains.Ea": _CHAIN_KEYS,
    "chains.P": _CHAIN_KEYS,
    "policy": _POLICY_KEYS,
    "solver": _SOLVER_KEYS,
    "simulate": _SIMULATE_KEYS,
    "sweep": _SWEEP_KEYS,
}


@dataclass
class SweepSpec:
    key: str
    values: list[str]


@dataclass
class ExperimentConfig:
    params: ModelParams
    chains: ChainSet
    batch_law: BatchLaw
    policy_kind: str
    solver_tol: float
    solver_max_iters: int
    alpha_schedule: tuple[float, ...]
    solver_mode: str
    solver_horizon: int
    solver_replications: int
    sim_horizon: int
    sim_seed: int
    sim_replications: int
    initial_queue: int
    initial_battery: float
    warmup_fraction: float
    record_trace: bool
    sweep: SweepSpec | None
    config_hash: str
    base_dir: Path = field(default_factory=Path)


def _float(raw: str) -> float:
    if raw.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(raw)


def _floats(raw: str) -> list[float]:
    return [_float(tok) for tok in raw.replace(";", ",").split(",") if tok.strip()]


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _build_chain(section: str, opts: dict[str, str], problems: list[str]):
    kind = opts.get("kind", "iid").strip().lower()
    initial = int(opts.get("initial", "0"))
    try:
        if kind == "iid":
            spec = IidSpec(
                values=tuple(_floats(opts["values"])),
                probs=tuple(_floats(opts["probs"])),
            )
            chain = iid_to_chain(spec)
            if initial:
                chain = MarkovChainSpec(
                    values=chain.values, transition=chain.transition, initial=initial
                )
            return chain
        if kind == "markov":
            rows = [
                _floats(row) for row in opts["transition"].split(";") if row.strip()
            ]
            return MarkovChainSpec(
                values=tuple(_floats(opts["values"])),
                transition=np.array(rows),
                initial=initial,
            )
        if kind == "two_point_mean":
            mean = _float(opts["mean"])
            return iid_to_chain(IidSpec(values=(0.0, 2.0 * mean), probs=(0.5, 0.5)))
        if kind == "three_point_mean":
            mean = _float(opts["mean"])
            return iid_to_chain(
                IidSpec(
                    values=(0.0, 5.0 * mean / 7.0, 10.0 * mean / 7.0),
                    probs=(0.1, 0.4, 0.5),
                )
            )
        problems.append(f"[{section}] unknown kind {kind!r}")
    except KeyError as exc:
        problems.append(f"[{section}] kind {kind!r} needs key {exc.args[0]!r}")
    except Exception as exc:
        problems.append(f"[{section}] {exc}")
    return None


def _canonical_text(cp: configparser.ConfigParser) -> str:
    parts = []
    for section in sorted(cp.sections()):
        parts.append(f"[{section}]")
        for key in sorted(cp[section]):
            parts.append(f"{key}={cp[section][key]}")
    return "\n".join(parts)


def parse_config_text(
    text: str, overrides: tuple[str, ...] = (), base_dir: Path | None = None
) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keep key case
    cp.read_string(text)

    problems: list[str] = []
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            problems.append(f"override {ov!r} is not section.key=value")
            continue
        target, value = ov.split("=", 1)
        section, key = target.rsplit(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = value
    if problems:
        raise ConfigError(problems)

    for section in cp.sections():
        if section not in _SECTIONS:
            problems.append(f"unknown section [{section}]")
            continue
        for key in cp[section]:
            if key not in _SECTIONS[section]:
                problems.append(f"unknown key {key!r} in [{section}]")
    for required in ("model", "chains.A", "chains.Ea", "chains.P"):
        if not cp.has_section(required):
            problems.append(f"missing section [{required}]")
    if problems:
        raise ConfigError(problems)

    def get(section: str, key: str, cast, default=None):
        if not cp.has_option(section, key):
            if default is None:
                problems.append(f"missing key {key!r} in [{section}]")
                return None
            return default
        try:
            return cast(cp[section][key])
        except Exception as exc:
            problems.append(f"[{section}] {key}: {exc}")
            return None

    m = "model"
    charge_points = get(m, "charge_points", int)
    energy_block = get(m, "energy_block", _float)
    period = get(m, "period", _float, 1.0)
    battery_cap = get(m, "battery_cap", _float)
    queue_cap = get(m, "queue_cap", int)
    batch_max = get(m, "batch_max", int, 1)
    energy_step = get(m, "energy_step", _float, 1.0)
    beta = get(m, "beta", _float, 0.0)
    alpha = get(m, "alpha", _float, 0.9)
    cost_cap = get(m, "cost_cap", _float, math.inf)
    limit_draw = get(m, "limit_draw_to_demand", _bool, True)

    arrival = _build_chain("chains.A", dict(cp["chains.A"]), problems)
    renewable = _build_chain("chains.Ea", dict(cp["chains.Ea"]), problems)
    price = _build_chain("chains.P", dict(cp["chains.P"]), problems)

    policy_kind = (
        cp["policy"]["kind"].strip() if cp.has_section("policy") else "radical"
    )
    if not (
        policy_kind in ("radical", "conservative") or policy_kind.startswith("table:")
    ):
        problems.append(f"[policy] unknown kind {policy_kind!r}")

    s = "solver"
    has_solver = cp.has_section(s)
    solver_tol = get(s, "tol", _float, 1e-8) if has_solver else 1e-8
    solver_max_iters = get(s, "max_iters", int, 500_000) if has_solver else 500_000
    schedule = (
        tuple(get(s, "alpha_schedule", _floats, [0.9, 0.99, 0.999, 0.9999]))
        if has_solver
        else (0.9, 0.99, 0.999, 0.9999)
    )
    solver_mode = get(s, "mode", str, "discounted") if has_solver else "discounted"
    if solver_mode not in ("discounted", "constrained"):
        problems.append(f"[solver] unknown mode {solver_mode!r}")
    solver_horizon = get(s, "horizon", int, 20_000) if has_solver else 20_000
    solver_reps = get(s, "replications", int, 3) if has_solver else 3

    sm = "simulate"
    has_sim = cp.has_section(sm)
    sim_horizon = get(sm, "horizon", int, 100_000) if has_sim else 100_000
    sim_seed = get(sm, "seed", int, 0) if has_sim else 0
    sim_reps = get(sm, "replications", int, 1) if has_sim else 1
    initial_queue = get(sm, "initial_queue", int, 0) if has_sim else 0
    initial_battery = get(sm, "initial_battery", _float, 0.0) if has_sim else 0.0
    warmup = get(sm, "warmup_fraction", _float, 0.0) if has_sim else 0.0
    record_trace = get(sm, "record_trace", _bool, False) if has_sim else False

    sweep = None
    if cp.has_section("sweep"):
        key = get("sweep", "key", str)
        raw_vals = get("sweep", "values", str)
        if key is not None and raw_vals is not None:
            if key.rsplit(".", 1)[0] not in _SECTIONS:
                problems.append(f"[sweep] key {key!r} targets an unknown section")
            sweep = SweepSpec(
                key=key, values=[v.strip() for v in raw_vals.split(",") if v.strip()]
            )

    if problems:
        raise ConfigError(problems)

    try:
        params = ModelParams(
            n_charge_points=charge_points,
            energy_block=energy_block,
            period=period,
            battery_cap=battery_cap if battery_cap is not None else INFINITE_CAPACITY,
            queue_cap=queue_cap,
            beta=beta,
            alpha=alpha,
            cost_cap=cost_cap,
            energy_step=energy_step,
            limit_draw_to_demand=limit_draw,
        )
        batch_law = BatchLaw(batch_max)
        chains = ChainSet(arrival, renewable, price)
    except Exception as exc:
        raise ConfigError([str(exc)]) from exc

    max_arrival = max(chains.arrival.values)
    if queue_cap < 2 * max_arrival:
        raise ConfigError(
            [f"[model] queue_cap {queue_cap} below twice the max arrival {max_arrival}"]
        )

    digest = hashlib.sha256(_canonical_text(cp).encode()).hexdigest()[:16]
    return ExperimentConfig(
        params=params,
        chains=chains,
        batch_law=batch_law,
        policy_kind=policy_kind,
        solver_tol=solver_tol,
        solver_max_iters=solver_max_iters,
        alpha_schedule=schedule,
        solver_mode=solver_mode,
        solver_horizon=solver_horizon,
        solver_replications=solver_reps,
        sim_horizon=sim_horizon,
        sim_seed=sim_seed,
        sim_replications=sim_reps,
        initial_queue=initial_queue,
        initial_battery=initial_battery,
        warmup_fraction=warmup,
        record_trace=record_trace,
        sweep=sweep,
        config_hash=digest,
        base_dir=base_dir or Path("."),
    )


def load_config(path: str | Path, overrides: tuple[str, ...] = ()) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {p}: {exc}"]) from exc
    return parse_config_text(text, overrides, base_dir=p.parent)


def build_policy(cfg: ExperimentConfig) -> Policy:
    """Instantiate the configured policy ('radical', 'conservative', or
    'table:<path>' relative to the config file)."""
    kind = cfg.policy_kind
    if kind == "radical":
        return RadicalPolicy(cfg.params)
    if kind == "conservative":
        return ConservativePolicy(cfg.params)
    if kind.startswith("table:"):
        from .fileio import load_policy_table

        rel = kind.split(":", 1)[1]
        table = load_policy_table(cfg.base_dir / rel, cfg.params, cfg.chains)
        return TablePolicy(table)
    raise ConfigError([f"[policy] unknown kind {kind!r}"])


def recipe_path(name: str) -> Path:
    """Path of a packaged recipe config, e.g. 'fig3_m50'."""
    res = resources.files("evsched").joinpath("recipes", f"{name}.cfg")
    return Path(str(res))
