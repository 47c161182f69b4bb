"""Attention-permission and loss-mask derivation for packed sequences.

The canonical interchange form is the per-token segment-ID array plus a
boolean cross-document flag; any trainer can reconstruct the full permission
matrix from those. Dense matrices exist for tests, inspection and small
exports only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .packer import PAD_SEGMENT, PackedSequence

# dense_mask is O(n^2); refuse silly sizes unless the caller raises the cap.
DENSE_EXPORT_CAP = 4096


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class MaskSpec:
    """Segment IDs plus the cross-document attention toggle."""

    segment_ids: tuple[int, ...]
    cross_doc: bool

    @property
    def length(self) -> int:
        return len(self.segment_ids)

    @classmethod
    def from_packed(cls, packed: PackedSequence, cross_doc: bool) -> "MaskSpec":
        return cls(segment_ids=packed.segment_ids, cross_doc=cross_doc)


def may_attend(spec: MaskSpec, i: int, j: int) -> bool:
    """True iff the query at position i may attend to the key at position j.

    Attention is causal (j <= i), PAD positions neither attend nor are
    attended to, and with cross-document attention disabled both positions
    must lie in the same segment.
    """
    n = spec.length
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"positions ({i}, {j}) out of range for length {n}")
    seg_i = spec.segment_ids[i]
    seg_j = spec.segment_ids[j]
    if j > i or seg_i == PAD_SEGMENT or seg_j == PAD_SEGMENT:
        return False
    return spec.cross_doc or seg_i == seg_j


def dense_mask(spec: MaskSpec, cap: int = DENSE_EXPORT_CAP) -> np.ndarray:
    """Boolean permission matrix, matrix[i, j] == may_attend(spec, i, j)."""
    n = spec.length
    if n > cap:
        raise MaskError(f"sequence length {n} exceeds dense export cap {cap}")
    seg = np.asarray(spec.segment_ids, dtype=np.int64).reshape(n, 1) if n else np.zeros((0, 1), dtype=np.int64)
    causal = np.tril(np.ones((n, n), dtype=bool))
    non_pad = seg != PAD_SEGMENT
    allowed = causal & non_pad & non_pad.T
    if not spec.cross_doc:
        allowed &= seg == seg.T
    return allowed


def loss_mask(packed: PackedSequence) -> list[bool]:
    """Pre-training loss mask: every non-PAD position (separators included)
    contributes to the loss, PAD positions never do."""
    return [s != PAD_SEGMENT for s in packed.segment_ids]


def allowed_pair_count(segment_ids, cross_doc: bool) -> int:
    """Number of permitted (query, key) pairs, diagonal included.

    O(n) equivalent of dense_mask(...).sum(): with cross-document attention
    each non-PAD position attends to every earlier non-PAD position, without
    it only to earlier positions of its own segment.
    """
    total = 0
    non_pad_seen = 0
    per_segment: dict[int, int] = {}
    for seg in segment_ids:
        if seg == PAD_SEGMENT:
            continue
        non_pad_seen += 1
        per_segment[seg] = per_segment.get(seg, 0) + 1
        total += non_pad_seen if cross_doc else per_segment[seg]
    return total


def mask_to_bitset(mask: np.ndarray) -> bytes:
    """Compact dense export: row-major, one bit per (i, j), bits packed
    little-endian within each byte (bit k of the stream is byte k//8,
    bit position k%8)."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    return np.packbits(flat, bitorder="little").tobytes()


def bitset_to_mask(data: bytes, length: int) -> np.ndarray:
    """Inverse of :func:`mask_to_bitset` for a length x length matrix."""
    expected = (length * length + 7) // 8
    if len(data) != expected:
        raise MaskError(f"bitset has {len(data)} bytes, expected {expected} for length {length}")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    return bits[: length * length].astype(bool).reshape(length, length)
