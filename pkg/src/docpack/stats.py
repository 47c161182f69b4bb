"""Padding, document-count, and attention-cost accounting for epoch plans.

Also reproduces the steps-to-convergence bookkeeping: given a table of
measured training steps per (strategy, batch size) cell, derives the total
documents processed and compares against a reference table within a relative
tolerance. Reference measurement tables ship in ``docpack/refdata``.

Attention cost is reported as the number of permitted query-key pairs, a
hardware-independent proxy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .maskgen import PAD_SEGMENT, allowed_pair_count
from .packer import EpochPlan, PackingStrategy

# Reference values are rounded to coarse granularity (hundreds of steps,
# hundreds of thousands of documents), so exact equality is never expected.
DEFAULT_REL_TOL = 0.05


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class PlanStats:
    num_sequences: int
    num_batches: int
    docs_per_batch_mean: float
    padding_ratio: float
    allowed_pairs_cross_on: int
    allowed_pairs_cross_off: int


@dataclass(frozen=True)
class ConvergenceRecord:
    """One measured cell: strategy, batch size, steps until loss convergence."""

    strategy: PackingStrategy
    batch_size: int
    steps_to_convergence: int


def docs_per_sequence(strategy: PackingStrategy) -> int:
    if strategy.kind == "no_packing":
        return 1
    if strategy.kind == "fixed":
        return strategy.x
    raise StatsError(
        "documents per sequence is not a constant under multi packing; "
        "compute it from a concrete plan with docs_per_batch"
    )


def total_documents(rec: ConvergenceRecord) -> int:
    """steps x batch size x documents per sequence."""
    return rec.steps_to_convergence * rec.batch_size * docs_per_sequence(rec.strategy)


def docs_per_batch(plan: EpochPlan) -> float:
    """Mean number of documents per batch over the plan's batches."""
    if not plan.batches:
        raise StatsError("plan has no batches")
    total = sum(len(plan.sequences[i].doc_ids) for batch in plan.batches for i in batch)
    return total / len(plan.batches)


def plan_stats(plan: EpochPlan) -> PlanStats:
    if not plan.sequences:
        raise StatsError("plan has no sequences")
    total_positions = 0
    pad_positions = 0
    pairs_on = 0
    pairs_off = 0
    for seq in plan.sequences:
        total_positions += len(seq.tokens)
        pad_positions += sum(1 for s in seq.segment_ids if s == PAD_SEGMENT)
        pairs_on += allowed_pair_count(seq.segment_ids, cross_doc=True)
        pairs_off += allowed_pair_count(seq.segment_ids, cross_doc=False)
    return PlanStats(
        num_sequences=len(plan.sequences),
        num_batches=len(plan.batches),
        docs_per_batch_mean=docs_per_batch(plan),
        padding_ratio=pad_positions / total_positions,
        allowed_pairs_cross_on=pairs_on,
        allowed_pairs_cross_off=pairs_off,
    )


@dataclass(frozen=True)
class StrategyTable:
    """A (strategy x batch size) grid of measurements; None marks a cell the
    reference never populated."""

    strategies: tuple[str, ...]
    batch_sizes: tuple[int, ...]
    cells: tuple[tuple[float | None, ...], ...]

    def __post_init__(self) -> None:
        if len(self.cells) != len(self.strategies):
            raise StatsError(
                f"table has {len(self.cells)} rows for {len(self.strategies)} strategies"
            )
        for row in self.cells:
            if len(row) != len(self.batch_sizes):
                raise StatsError(
                    f"table row has {len(row)} cells for {len(self.batch_sizes)} batch sizes"
                )

    @classmethod
    def from_dict(cls, data: dict) -> "StrategyTable":
        try:
            return cls(
                strategies=tuple(data["strategies"]),
                batch_sizes=tuple(data["batch_sizes"]),
                cells=tuple(tuple(row) for row in data["cells"]),
            )
        except KeyError as exc:
            raise StatsError(f"table is missing field {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "StrategyTable":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class CellCheck:
    strategy: str
    batch_size: int
    docs: float | None
    reference: float | None
    rel_err: float | None
    ok: bool


@dataclass(frozen=True)
class ConvergenceReport:
    derived: StrategyTable
    cells: tuple[CellCheck, ...]
    rel_tol: float

    @property
    def all_ok(self) -> bool:
        return all(c.ok for c in self.cells)

    def to_dict(self) -> dict:
        return {
            "rel_tol": self.rel_tol,
            "all_ok": self.all_ok,
            "cells": [
                {
                    "strategy": c.strategy,
                    "bs": c.batch_size,
                    "docs": c.docs,
                    "ref": c.reference,
                    "rel_err": c.rel_err,
                    "ok": c.ok,
                }
                for c in self.cells
            ],
        }


def derive_documents_table(steps: StrategyTable) -> StrategyTable:
    """Convert a steps-to-convergence table into total documents processed."""
    rows = []
    for label, row in zip(steps.strategies, steps.cells):
        strategy = PackingStrategy.parse(label)
        per_seq = docs_per_sequence(strategy)
        rows.append(
            tuple(
                None if cell is None else float(cell) * bs * per_seq
                for cell, bs in zip(row, steps.batch_sizes)
            )
        )
    return StrategyTable(strategies=steps.strategies, batch_sizes=steps.batch_sizes, cells=tuple(rows))


def convergence_table_check(
    steps: StrategyTable,
    reference: StrategyTable,
    rel_tol: float = DEFAULT_REL_TOL,
) -> ConvergenceReport:
    """Derive document counts from step counts and compare to a reference.

    Both tables must share shape and labels; a cell is checked only when both
    sides populate it, and flagged when the relative error exceeds the
    tolerance.
    """
    if steps.strategies != reference.strategies or steps.batch_sizes != reference.batch_sizes:
        raise StatsError("steps and reference tables have different shapes or labels")
    derived = derive_documents_table(steps)
    checks = []
    for label, derived_row, ref_row in zip(derived.strategies, derived.cells, reference.cells):
        for bs, docs, ref in zip(derived.batch_sizes, derived_row, ref_row):
            if docs is None and ref is None:
                continue
            if docs is None or ref is None:
                checks.append(CellCheck(label, bs, docs, ref, None, ok=False))
                continue
            rel_err = abs(docs - ref) / abs(ref) if ref else (0.0 if docs == 0 else float("inf"))
            checks.append(CellCheck(label, bs, docs, ref, rel_err, ok=rel_err <= rel_tol))
    return ConvergenceReport(derived=derived, cells=tuple(checks), rel_tol=rel_tol)


# Bundled reference measurements: steps to convergence and total documents,
# with cross-document attention on (full grid) and off (2x2 ablation grid).
BUILTIN_REFERENCES = ("cross-attention-on", "cross-attention-off")

_REFDATA_FILES = {
    "cross-attention-on": ("convergence_steps_xattn_on.json", "convergence_docs_xattn_on.json"),
    "cross-attention-off": ("convergence_steps_xattn_off.json", "convergence_docs_xattn_off.json"),
}


def load_builtin_reference(name: str) -> tuple[StrategyTable, StrategyTable]:
    """Return the bundled (steps, documents) table pair by name."""
    if name not in _REFDATA_FILES:
        raise StatsError(f"unknown builtin reference {name!r}; expected one of {BUILTIN_REFERENCES}")
    steps_file, docs_file = _REFDATA_FILES[name]
    pkg = resources.files("docpack.refdata")
    steps = StrategyTable.from_dict(json.loads((pkg / steps_file).read_text(encoding="utf-8")))
    docs = StrategyTable.from_dict(json.loads((pkg / docs_file).read_text(encoding="utf-8")))
    return steps, docs
