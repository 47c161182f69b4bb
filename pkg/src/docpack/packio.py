"""Reading and writing packed sequences and epoch manifests.

Canonical form: one JSON object per line per sequence
``{"tokens": [int], "segment_ids": [int], "doc_ids": [str], "truncated": bool,
"sep_positions": [int]}`` plus a JSON manifest object per epoch
``{"strategy": ..., "mode": ..., "seed": ..., "epoch": ..., "batch_size": ...,
"batches": [[int]]}``.

Compact form (optional): a binary file holding, per record, the token array
followed by the segment-ID array, both little-endian int32, plus a JSON
sidecar index carrying per-record lengths and the non-array fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .packer import EpochMode, EpochPlan, PackedSequence, PackingStrategy


class PackedFormatError(ValueError):
    """A packed file or manifest violates the documented layout."""


def strategy_to_dict(strategy: PackingStrategy) -> dict:
    out: dict = {"kind": strategy.kind}
    if strategy.kind == "fixed":
        out["x"] = strategy.x
    elif strategy.kind == "multi":
        out["choices"] = list(strategy.choices)
    return out


def strategy_from_dict(data: dict) -> PackingStrategy:
    kind = data.get("kind")
    if kind == "no_packing":
        return PackingStrategy.no_packing()
    if kind == "fixed":
        return PackingStrategy.fixed(data["x"])
    if kind == "multi":
        return PackingStrategy.multi(data["choices"])
    raise PackedFormatError(f"unknown strategy kind {kind!r}")


def sequence_to_record(seq: PackedSequence) -> dict:
    return {
        "tokens": list(seq.tokens),
        "segment_ids": list(seq.segment_ids),
        "doc_ids": list(seq.doc_ids),
        "truncated": seq.truncated,
        "sep_positions": list(seq.sep_positions),
    }


def record_to_sequence(record: dict, where: str = "record") -> PackedSequence:
    try:
        tokens = record["tokens"]
        segment_ids = record["segment_ids"]
        doc_ids = record["doc_ids"]
        truncated = record["truncated"]
        sep_positions = record["sep_positions"]
    except (KeyError, TypeError) as exc:
        raise PackedFormatError(f"{where}: missing field {exc}") from None
    if len(tokens) != len(segment_ids):
        raise PackedFormatError(
            f"{where}: tokens ({len(tokens)}) and segment_ids ({len(segment_ids)}) lengths differ"
        )
    return PackedSequence(
        tokens=tuple(tokens),
        segment_ids=tuple(segment_ids),
        doc_ids=tuple(doc_ids),
        truncated=bool(truncated),
        sep_positions=tuple(sep_positions),
    )


def write_packed_jsonl(path: str | Path, sequences) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(json.dumps(sequence_to_record(seq), separators=(",", ":")) + "\n")


def read_packed_jsonl(path: str | Path) -> list[PackedSequence]:
    path = Path(path)
    sequences = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PackedFormatError(f"{path}:{lineno}: malformed JSON: {exc}") from None
            sequences.append(record_to_sequence(record, where=f"{path}:{lineno}"))
    return sequences


def manifest_to_dict(plan: EpochPlan) -> dict:
    return {
        "strategy": strategy_to_dict(plan.strategy),
        "mode": plan.mode.value,
        "seed": plan.seed,
        "epoch": plan.epoch_index,
        "batch_size": plan.batch_size,
        "batches": [list(b) for b in plan.batches],
    }


def write_manifest(path: str | Path, plan: EpochPlan) -> None:
    Path(path).write_text(json.dumps(manifest_to_dict(plan), indent=2) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PackedFormatError(f"{path}: malformed manifest: {exc}") from None
    for key in ("strategy", "mode", "seed", "epoch", "batch_size", "batches"):
        if key not in data:
            raise PackedFormatError(f"{path}: manifest missing field {key!r}")
    # Round-trip the enums so bad values fail here, not deep in a consumer.
    strategy_from_dict(data["strategy"])
    try:
        EpochMode(data["mode"])
    except ValueError:
        raise PackedFormatError(f"{path}: unknown epoch mode {data['mode']!r}") from None
    return data


def load_plan(packed_path: str | Path, manifest_path: str | Path) -> EpochPlan:
    """Reassemble an EpochPlan from its canonical files."""
    sequences = read_packed_jsonl(packed_path)
    manifest = read_manifest(manifest_path)
    return EpochPlan(
        epoch_index=manifest["epoch"],
        strategy=strategy_from_dict(manifest["strategy"]),
        mode=EpochMode(manifest["mode"]),
        seed=manifest["seed"],
        sequences=tuple(sequences),
        batches=tuple(tuple(b) for b in manifest["batches"]),
        batch_size=manifest["batch_size"],
    )


@dataclass(frozen=True)
class EpochPaths:
    packed: Path
    manifest: Path


def epoch_paths(out_dir: str | Path, epoch_index: int) -> EpochPaths:
    out_dir = Path(out_dir)
    return EpochPaths(
        packed=out_dir / f"packed_epoch{epoch_index}.jsonl",
        manifest=out_dir / f"manifest_epoch{epoch_index}.json",
    )


def write_epoch(out_dir: str | Path, plan: EpochPlan) -> EpochPaths:
    paths = epoch_paths(out_dir, plan.epoch_index)
    paths.packed.parent.mkdir(parents=True, exist_ok=True)
    write_packed_jsonl(paths.packed, plan.sequences)
    write_manifest(paths.manifest, plan)
    return paths


def write_packed_compact(bin_path: str | Path, index_path: str | Path, sequences) -> None:
    """Binary export: per record, tokens then segment_ids as little-endian
    int32 arrays; the sidecar index holds lengths and remaining fields."""
    records = []
    with Path(bin_path).open("wb") as fh:
        for seq in sequences:
            fh.write(np.asarray(seq.tokens, dtype="<i4").tobytes())
            fh.write(np.asarray(seq.segment_ids, dtype="<i4").tobytes())
            records.append(
                {
                    "length": len(seq.tokens),
                    "doc_ids": list(seq.doc_ids),
                    "truncated": seq.truncated,
                    "sep_positions": list(seq.sep_positions),
                }
            )
    index = {"dtype": "<i4", "layout": "tokens,segment_ids", "records": records}
    Path(index_path).write_text(json.dumps(index, indent=2) + "\n", encoding="utf-8")


def read_packed_compact(bin_path: str | Path, index_path: str | Path) -> list[PackedSequence]:
    index = json.loads(Path(index_path).read_text(encoding="utf-8"))
    raw = Path(bin_path).read_bytes()
    sequences = []
    offset = 0
    for n, rec in enumerate(index["records"]):
        length = rec["length"]
        span = 4 * length
        if offset + 2 * span > len(raw):
            raise PackedFormatError(f"{bin_path}: record {n}: binary payload shorter than index claims")
        tokens = np.frombuffer(raw, dtype="<i4", count=length, offset=offset)
        segment_ids = np.frombuffer(raw, dtype="<i4", count=length, offset=offset + span)
        offset += 2 * span
        sequences.append(
            PackedSequence(
                tokens=tuple(int(t) for t in tokens),
                segment_ids=tuple(int(s) for s in segment_ids),
                doc_ids=tuple(rec["doc_ids"]),
                truncated=bool(rec["truncated"]),
                sep_positions=tuple(rec["sep_positions"]),
            )
        )
    if offset != len(raw):
        raise PackedFormatError(f"{bin_path}: {len(raw) - offset} trailing bytes not covered by the index")
    return sequences
