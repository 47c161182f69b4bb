"""Packed-sequence construction and per-epoch batch planning.

Packing is driven by the per-question document lists: each group's documents
are shuffled and partitioned into tuples according to a strategy, every tuple
is materialized into one context-window sequence with a separator token
between documents, and the pooled sequences are batched without replacement.
The epoch mode controls whether the partition is regenerated every epoch,
frozen after epoch 0, or frozen with only the within-tuple order reshuffled.

All randomness flows through streams derived from (seed, epoch, group id)
with a stable hash, so plans are reproducible and adding a group never
perturbs another group's packing.
"""

from __future__ import annotations

import hashlib
import logging
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .corpus import Corpus, DocumentGroup, VocabConfig, tokenize_fallback
from .templates import DEFAULT_TEMPLATE, render_prompt_text, render_target_text

logger = logging.getLogger(__name__)

PAD_SEGMENT = -1


class PackingError(ValueError):
    """Invalid packing input (empty group, unresolvable id, bad strategy)."""


@dataclass(frozen=True)
class PackingStrategy:
    """How many documents go into each sequence.

    kind is one of "no_packing", "fixed" (x documents per sequence), or
    "multi" (size drawn uniformly from ``choices`` per sequence).
    """

    kind: str
    x: int | None = None
    choices: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind == "no_packing":
            if self.x is not None or self.choices is not None:
                raise PackingError("no_packing takes no parameters")
        elif self.kind == "fixed":
            if self.x is None or self.x < 1:
                raise PackingError(f"fixed packing requires x >= 1, got {self.x}")
            if self.choices is not None:
                raise PackingError("fixed packing takes no choices")
        elif self.kind == "multi":
            if not self.choices:
                raise PackingError("multi packing requires a non-empty choice set")
            if any(c < 1 for c in self.choices):
                raise PackingError(f"multi packing choices must be >= 1, got {self.choices}")
            # Canonical order so equal sets compare and serialize identically.
            object.__setattr__(self, "choices", tuple(sorted(set(self.choices))))
            if self.x is not None:
                raise PackingError("multi packing takes no x")
        else:
            raise PackingError(f"unknown strategy kind {self.kind!r}")

    @classmethod
    def no_packing(cls) -> "PackingStrategy":
        return cls(kind="no_packing")

    @classmethod
    def fixed(cls, x: int) -> "PackingStrategy":
        return cls(kind="fixed", x=x)

    @classmethod
    def multi(cls, choices) -> "PackingStrategy":
        return cls(kind="multi", choices=tuple(choices))

    def label(self) -> str:
        """Compact spelling used by the CLI and table fixtures."""
        if self.kind == "no_packing":
            return "none"
        if self.kind == "fixed":
            return str(self.x)
        return "-".join(str(c) for c in self.choices)

    @classmethod
    def parse(cls, text: str) -> "PackingStrategy":
        """Inverse of :meth:`label`: "none", "4", or "2-4-8"."""
        text = text.strip().lower()
        if text in ("none", "no_packing", "no-packing"):
            return cls.no_packing()
        try:
            parts = [int(p) for p in text.split("-")]
        except ValueError:
            raise PackingError(f"cannot parse packing strategy {text!r}") from None
        if len(parts) == 1:
            return cls.fixed(parts[0])
        return cls.multi(parts)


class EpochMode(str, Enum):
    REPACK_EVERY_EPOCH = "repack_every_epoch"
    NO_REPACK = "no_repack"
    NO_REPACK_RESHUFFLE_ORDER = "no_repack_reshuffle_order"

    @classmethod
    def parse(cls, text: str) -> "EpochMode":
        try:
            return cls(text.strip().lower().replace("-", "_"))
        except ValueError:
            raise PackingError(f"cannot parse epoch mode {text!r}") from None


@dataclass(frozen=True)
class PackedSequence:
    """One training sequence: token IDs padded to the context window,
    per-token segment IDs (0-based document index, PAD positions carry
    ``PAD_SEGMENT``), the source document ids in order, whether the final
    document was cut to fit, and the separator positions."""

    tokens: tuple[int, ...]
    segment_ids: tuple[int, ...]
    doc_ids: tuple[str, ...]
    truncated: bool
    sep_positions: tuple[int, ...]


@dataclass(frozen=True)
class EpochPlan:
    epoch_index: int
    strategy: PackingStrategy
    mode: EpochMode
    seed: int
    sequences: tuple[PackedSequence, ...]
    batches: tuple[tuple[int, ...], ...]
    batch_size: int


@dataclass(frozen=True)
class SftExample:
    """Instruction-tuning pair: prompt tokens, target tokens, and a loss
    mask over prompt-then-target that is true only on target positions."""

    prompt_tokens: tuple[int, ...]
    target_tokens: tuple[int, ...]
    loss_mask: tuple[bool, ...]
    prompt_text: str = field(repr=False, default="")
    target_text: str = field(repr=False, default="")


def derive_rng(*parts) -> random.Random:
    """Random stream keyed by a stable hash of the given parts.

    Uses blake2b rather than hash() so streams survive interpreter restarts
    and are identical across machines.
    """
    material = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "little"))


def pack_group(
    doc_ids, strategy: PackingStrategy, rng: random.Random
) -> list[tuple[str, ...]]:
    """Partition one group's documents into ordered pack tuples.

    The assignment of documents to tuples and the order within each tuple are
    uniformly random under ``rng`` (a single shuffle followed by slicing).
    Tuple sizes follow the strategy; a remainder smaller than the requested
    size becomes a final short tuple so no document is ever dropped.
    """
    ids = list(doc_ids)
    if not ids:
        raise PackingError("cannot pack an empty document list")
    rng.shuffle(ids)

    tuples: list[tuple[str, ...]] = []
    pos = 0
    while pos < len(ids):
        remaining = len(ids) - pos
        if strategy.kind == "no_packing":
            size = 1
        elif strategy.kind == "fixed":
            size = min(strategy.x, remaining)
        else:
            size = min(rng.choice(strategy.choices), remaining)
        tuples.append(tuple(ids[pos : pos + size]))
        pos += size
    return tuples


def materialize(ids, corpus: Corpus, vocab: VocabConfig) -> PackedSequence:
    """Lay one pack tuple out as tokens: doc, SEP, doc, SEP, ..., PAD tail.

    A document that would start at or beyond the window is left out (the
    caller re-queues ``ids[len(result.doc_ids):]`` as a fresh tuple); a
    document that starts inside the window but overruns it is truncated and
    marks the sequence. A separator is emitted only between two documents
    that both contribute tokens, and it carries the preceding document's
    segment id.
    """
    window = vocab.context_window
    tokens: list[int] = []
    segment_ids: list[int] = []
    sep_positions: list[int] = []
    included: list[str] = []
    truncated = False

    for doc_id in ids:
        try:
            doc = corpus.documents[doc_id]
        except KeyError:
            raise PackingError(f"unknown document id {doc_id!r}") from None
        if included:
            # The next document would sit after a separator; if even its
            # first token lands at or beyond the window, stop here.
            if len(tokens) + 1 >= window:
                break
            sep_positions.append(len(tokens))
            tokens.append(vocab.sep_id)
            segment_ids.append(len(included) - 1)
        segment = len(included)
        room = window - len(tokens)
        doc_tokens = doc.tokens[:room]
        if len(doc_tokens) < len(doc.tokens):
            truncated = True
            if segment == 0:
                logger.warning(
                    "document %r (%d tokens) exceeds the context window (%d); hard-truncating",
                    doc_id,
                    len(doc.tokens),
                    window,
                )
        tokens.extend(doc_tokens)
        segment_ids.extend([segment] * len(doc_tokens))
        included.append(doc_id)

    pad = window - len(tokens)
    tokens.extend([vocab.pad_id] * pad)
    segment_ids.extend([PAD_SEGMENT] * pad)
    return PackedSequence(
        tokens=tuple(tokens),
        segment_ids=tuple(segment_ids),
        doc_ids=tuple(included),
        truncated=truncated,
        sep_positions=tuple(sep_positions),
    )


def _group_tuples(
    group: DocumentGroup,
    strategy: PackingStrategy,
    mode: EpochMode,
    epoch_index: int,
    seed: int,
) -> list[tuple[str, ...]]:
    if mode is EpochMode.REPACK_EVERY_EPOCH:
        rng = derive_rng(seed, epoch_index, group.question_id, "pack")
        return pack_group(group.doc_ids, strategy, rng)

    base = pack_group(group.doc_ids, strategy, derive_rng(seed, 0, group.question_id, "pack"))
    if mode is EpochMode.NO_REPACK:
        return base

    rng = derive_rng(seed, epoch_index, group.question_id, "order")
    reshuffled = []
    for t in base:
        t = list(t)
        rng.shuffle(t)
        reshuffled.append(tuple(t))
    return reshuffled


def plan_epoch(
    corpus: Corpus,
    strategy: PackingStrategy,
    mode: EpochMode,
    epoch_index: int,
    seed: int,
    batch_size: int,
    vocab: VocabConfig,
) -> EpochPlan:
    """Build all packed sequences and batch assignments for one epoch.

    Groups are processed in corpus order, each under its own derived random
    stream; a tuple whose tail does not fit the window continues as the next
    sequence of the same group. Batches sample sequence indices without
    replacement; the last batch may be short.
    """
    if batch_size < 1:
        raise PackingError(f"batch_size must be >= 1, got {batch_size}")
    if epoch_index < 0:
        raise PackingError(f"epoch_index must be >= 0, got {epoch_index}")

    sequences: list[PackedSequence] = []
    for group in corpus.groups:
        queue = deque(_group_tuples(group, strategy, mode, epoch_index, seed))
        while queue:
            ids = queue.popleft()
            seq = materialize(ids, corpus, vocab)
            if len(seq.doc_ids) < len(ids):
                queue.appendleft(ids[len(seq.doc_ids) :])
            sequences.append(seq)

    order = list(range(len(sequences)))
    derive_rng(seed, epoch_index, "batch").shuffle(order)
    batches = tuple(
        tuple(order[i : i + batch_size]) for i in range(0, len(order), batch_size)
    )
    return EpochPlan(
        epoch_index=epoch_index,
        strategy=strategy,
        mode=mode,
        seed=seed,
        sequences=tuple(sequences),
        batches=batches,
        batch_size=batch_size,
    )


def build_sft_example(
    group: DocumentGroup,
    corpus: Corpus,
    template: str = DEFAULT_TEMPLATE,
    tokenize=tokenize_fallback,
) -> SftExample:
    """Construct the instruction-tuning pair for one question.

    The prompt is the instruction preamble plus the question; the target
    lists each relevant article's title and content and ends with the answer.
    ``group.question_id`` carries the question string (the group schema has
    no separate question field). Loss is taken on target positions only.
    """
    if not group.relevant_ids:
        raise PackingError(f"group {group.question_id!r} has no relevant documents")
    articles: list[tuple[str, str]] = []
    for doc_id in group.relevant_ids:
        doc = corpus.documents.get(doc_id)
        if doc is None:
            raise PackingError(f"group {group.question_id!r} references missing document {doc_id!r}")
        if doc.raw_text is None:
            raise PackingError(f"document {doc_id!r} has no raw text; cannot build an SFT target")
        articles.append((doc.title, doc.raw_text))

    prompt_text = render_prompt_text(group.question_id)
    target_text = render_target_text(articles, group.answer, template)
    prompt_tokens = tuple(tokenize(prompt_text))
    target_tokens = tuple(tokenize(target_text))
    loss_mask = (False,) * len(prompt_tokens) + (True,) * len(target_tokens)
    return SftExample(
        prompt_tokens=prompt_tokens,
        target_tokens=target_tokens,
        loss_mask=loss_mask,
        prompt_text=prompt_text,
        target_text=target_text,
    )
