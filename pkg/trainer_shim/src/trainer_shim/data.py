"""Loading of packed-sequence files into training batches.

Reads the canonical line-delimited format produced by the packing toolkit:
``{"tokens": [int], "segment_ids": [int], "doc_ids": [str],
"truncated": bool, "sep_positions": [int]}`` per line, with an optional JSON
manifest carrying the batch assignments. Attention permissions are rebuilt
from the segment IDs: attention is causal, positions whose segment is -1
(padding) neither attend nor are attended to, and without cross-document
attention both positions must share a segment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

PAD_SEGMENT = -1


class PackedFileError(ValueError):
    """The packed file or manifest violates the documented layout."""


@dataclass(frozen=True)
class Batch:
    tokens: torch.Tensor  # (B, L) long
    segment_ids: torch.Tensor  # (B, L) long
    loss_mask: torch.Tensor  # (B, L) bool, True on non-PAD positions


def read_records(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PackedFileError(f"record {len(records)} (line {lineno}): bad JSON: {exc}") from None
            index = len(records)
            for field in ("tokens", "segment_ids", "doc_ids", "truncated", "sep_positions"):
                if field not in rec:
                    raise PackedFileError(f"record {index}: missing field {field!r}")
            if len(rec["tokens"]) != len(rec["segment_ids"]):
                raise PackedFileError(
                    f"record {index}: tokens length {len(rec['tokens'])} != "
                    f"segment_ids length {len(rec['segment_ids'])}"
                )
            records.append(rec)
    return records


def _to_batch(records: list[dict]) -> Batch:
    lengths = {len(r["tokens"]) for r in records}
    if len(lengths) > 1:
        raise PackedFileError(f"sequences in one batch differ in length: {sorted(lengths)}")
    tokens = torch.tensor([r["tokens"] for r in records], dtype=torch.long)
    segment_ids = torch.tensor([r["segment_ids"] for r in records], dtype=torch.long)
    return Batch(tokens=tokens, segment_ids=segment_ids, loss_mask=segment_ids != PAD_SEGMENT)


def load_packed(
    path: str | Path,
    manifest_path: str | Path | None = None,
    batch_size: int | None = None,
) -> list[Batch]:
    """Losslessly reconstruct batches of (tokens, segment_ids, loss_mask).

    With a manifest, batches follow its assignments; otherwise sequences are
    chunked by ``batch_size`` (everything in one batch when omitted). An
    empty file yields no batches.
    """
    records = read_records(path)
    if not records:
        return []
    if manifest_path is not None:
        manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
        try:
            batches = manifest["batches"]
        except (KeyError, TypeError):
            raise PackedFileError(f"{manifest_path}: manifest has no 'batches'") from None
        out = []
        for batch_indices in batches:
            bad = [i for i in batch_indices if not 0 <= i < len(records)]
            if bad:
                raise PackedFileError(f"manifest batch references missing records {bad}")
            out.append(_to_batch([records[i] for i in batch_indices]))
        return out
    if batch_size is not None:
        return [
            _to_batch(records[i : i + batch_size]) for i in range(0, len(records), batch_size)
        ]
    return [_to_batch(records)]


def attention_bias(segment_ids: torch.Tensor, cross_doc: bool) -> torch.Tensor:
    """Additive attention bias (B, 1, L, L): 0 where attention is permitted,
    -inf where it is not.

    A position with no permitted key (padding) is given its own diagonal
    entry so softmax stays finite; its output reaches nothing else, since no
    non-PAD query may attend to it.
    """
    if segment_ids.dim() != 2:
        raise PackedFileError(f"segment_ids must be (B, L), got shape {tuple(segment_ids.shape)}")
    b, length = segment_ids.shape
    causal = torch.tril(torch.ones(length, length, dtype=torch.bool, device=segment_ids.device))
    non_pad = segment_ids != PAD_SEGMENT
    allowed = causal.unsqueeze(0) & non_pad.unsqueeze(2) & non_pad.unsqueeze(1)
    if not cross_doc:
        allowed &= segment_ids.unsqueeze(2) == segment_ids.unsqueeze(1)
    orphan = ~allowed.any(dim=2)
    eye = torch.eye(length, dtype=torch.bool, device=segment_ids.device)
    allowed |= orphan.unsqueeze(2) & eye.unsqueeze(0)
    bias = torch.zeros(b, length, length, dtype=torch.float32, device=segment_ids.device)
    bias.masked_fill_(~allowed, float("-inf"))
    return bias.unsqueeze(1)
