"""On-disk formats: value/policy tables, run summaries, traces, sweeps, audits.

Everything is plain CSV with a fixed, documented column order; floats are
written with ``repr`` so identical runs produce byte-identical files. Table
files carry their grid shape in ``#`` header lines and loading validates it
against the config's dimensions.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

import numpy as np

from .chains import ChainSet
from .conditions import ConditionReport, PolicyAuditResult
from .constrained import BetaPoint
from .mdp import ModelParams, PolicyTable, StateGrid, SystemState, ValueTable
from .simulate import TraceRow

__all__ = [
    "save_value_table",
    "load_value_table",
    "save_policy_table",
    "load_policy_table",
    "write_summary_csv",
    "write_trace_csv",
    "write_sweep_csv",
    "write_audit_csv",
    "write_beta_history_csv",
    "write_result_kv",
    "SUMMARY_COLUMNS",
    "TRACE_COLUMNS",
    "SWEEP_COLUMNS",
    "AUDIT_COLUMNS",
]

SUMMARY_COLUMNS = (
    "config_hash",
    "seed",
    "avg_cost",
    "avg_queue_ev",
    "avg_queue_demand",
    "clamp_events",
)
TRACE_COLUMNS = (
    "period",
    "q",
    "q_e",
    "a",
    "a_prime",
    "e_b",
    "e_a",
    "p",
    "k",
    "w",
    "cost",
    "clamps",
)
SWEEP_COLUMNS = (
    "key",
    "value",
    "avg_cost",
    "cost_halfwidth",
    "avg_queue_ev",
    "avg_queue_demand",
    "queue_halfwidth",
    "clamp_events",
    "max_period_cost",
    "seed",
)
AUDIT_COLUMNS = (
    "q",
    "a",
    "e_b",
    "e_a",
    "p",
    "u",
    "eta",
    "condition",
    "lower",
    "threshold",
    "upper",
    "satisfied",
    "note",
)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


class TableFormatError(ValueError):
    """Table file malformed or inconsistent with the config's dimensions."""


def _write_table(
    path: Path, grid: StateGrid, header_cols: list[str], values_fn
) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# evsched table\n")
        fh.write("# shape: " + ",".join(str(d) for d in grid.shape) + "\n")
        fh.write(
            f"# energy_step: {grid.params.energy_step!r}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(["q", "a", "e_b", "e_a", "p"] + header_cols)
        for x in grid.states():
            idx = grid.state_to_index(x)
            writer.writerow(
                [x.q, x.a, _fmt(x.e_b), x.e_a, x.p] + [_fmt(v) for v in values_fn(idx)]
            )


def _read_table(path: Path, grid: StateGrid, n_cols: int):
    shape = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# shape:"):
                    shape = tuple(int(s) for s in line.split(":", 1)[1].split(","))
                continue
            rows.append(line)
    if shape is None:
        raise TableFormatError(f"{path}: missing shape header")
    if shape != grid.shape:
        raise TableFormatError(
            f"{path}: table shape {shape} does not match config grid {grid.shape}"
        )
    header = rows[0].split(",")
    if len(header) != 5 + n_cols:
        raise TableFormatError(f"{path}: expected {5 + n_cols} columns")
    out = [np.zeros(grid.shape) for _ in range(n_cols)]
    seen = np.zeros(grid.shape, dtype=bool)
    for line in rows[1:]:
        parts = line.split(",")
        q, a, e_a, p = int(parts[0]), int(parts[1]), int(parts[3]), int(parts[4])
        idx = (q, a, grid.battery_index(float(parts[2])), e_a, p)
        for c in range(n_cols):
            out[c][idx] = float(parts[5 + c])
        seen[idx] = True
    if not seen.all():
        raise TableFormatError(f"{path}: {int((~seen).sum())} states missing")
    return out


def save_value_table(vt: ValueTable, path: str | Path) -> None:
    grid = vt.grid
    _write_table(Path(path), grid, ["value"], lambda idx: (float(vt.values[idx]),))


def load_value_table(
    path: str | Path, params: ModelParams, chains: ChainSet
) -> ValueTable:
    grid = StateGrid(params, chains)
    (values,) = _read_table(Path(path), grid, 1)
    return ValueTable(values=values, params=params, chains=chains)


def save_policy_table(pt: PolicyTable, path: str | Path) -> None:
    grid = pt.grid
    step = pt.params.energy_step

    def cols(idx):
        return (int(pt.u[idx]), float(pt.eta_steps[idx] * step))

    _write_table(Path(path), grid, ["u", "eta"], cols)


def load_policy_table(
    path: str | Path, params: ModelParams, chains: ChainSet
) -> PolicyTable:
    grid = StateGrid(params, chains)
    u_arr, eta_arr = _read_table(Path(path), grid, 2)
    eta_steps = np.rint(eta_arr / params.energy_step).astype(np.int32)
    return PolicyTable(
        u=u_arr.astype(np.int32), eta_steps=eta_steps, params=params, chains=chains
    )


def _write_csv(path: Path, columns: tuple[str, ...], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_summary_csv(path: str | Path, rows: Iterable[dict]) -> None:
    _write_csv(
        Path(path), SUMMARY_COLUMNS, ([r[c] for c in SUMMARY_COLUMNS] for r in rows)
    )


def write_trace_csv(path: str | Path, trace: Iterable[TraceRow]) -> None:
    def gen():
        for t in trace:
            yield (
                t.period,
                t.q,
                t.q_e,
                t.a,
                t.a_prime,
                t.e_b,
                t.e_a,
                t.p,
                t.k,
                t.w,
                t.cost,
                t.clamps,
            )

    _write_csv(Path(path), TRACE_COLUMNS, gen())


def write_sweep_csv(path: str | Path, rows: Iterable[dict]) -> None:
    _write_csv(Path(path), SWEEP_COLUMNS, ([r[c] for c in SWEEP_COLUMNS] for r in rows))


def _report_rows(report: ConditionReport):
    x, act = report.state, report.action
    for c in report.checks:
        yield (
            x.q,
            x.a,
            x.e_b,
            x.e_a,
            x.p,
            act.u,
            act.eta,
            c.name,
            "" if c.lower is None else repr(c.lower),
            repr(c.threshold),
            "" if c.upper is None else repr(c.upper),
            int(c.satisfied),
            c.note,
        )


def write_audit_csv(path: str | Path, audit: PolicyAuditResult) -> None:
    def gen():
        dominated = set(audit.dominated_states)
        for rep in audit.reports:
            yield from _report_rows(rep)
            x, act = rep.state, rep.action
            yield (
                x.q,
                x.a,
                x.e_b,
                x.e_a,
                x.p,
                act.u,
                act.eta,
                "dominated_action",
                "",
                "0",
                "",
                int(x not in dominated),
                "",
            )

    _write_csv(Path(path), AUDIT_COLUMNS, gen())


def write_beta_history_csv(path: str | Path, history: Iterable[BetaPoint]) -> None:
    _write_csv(
        Path(path),
        ("beta", "avg_cost", "avg_delay", "cost_halfwidth"),
        ((h.beta, h.avg_cost, h.avg_delay, h.cost_halfwidth) for h in history),
    )


def write_result_kv(path: str | Path, values: dict) -> None:
    with open(path, "w") as fh:
        for key in values:
            fh.write(f"{key}={_fmt(values[key])}\n")
