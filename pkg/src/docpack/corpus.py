"""Corpus loading, validation, and indexing.

A corpus is two line-delimited JSON files: one of pre-tokenized documents
and one of question groups, where each group lists the documents associated
with a question (supporting articles plus distractors). Everything downstream
(packing, statistics, evaluation) operates on the validated, immutable
structures built here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

# Reserved IDs used by the byte-level fallback tokenizer and the test suite.
# Real corpora bring their own vocabulary; these are just a safe default.
FALLBACK_SEP_ID = 0
FALLBACK_PAD_ID = 1
FALLBACK_OFFSET = 2


class CorpusError(ValueError):
    """A corpus or groups file failed parsing or validation."""


@dataclass(frozen=True)
class VocabConfig:
    """Reserved token IDs and the context window packing must respect."""

    sep_id: int
    pad_id: int
    context_window: int

    def __post_init__(self) -> None:
        if self.sep_id == self.pad_id:
            raise CorpusError("sep_id and pad_id must differ")
        if self.context_window < 2:
            raise CorpusError(f"context_window must be >= 2, got {self.context_window}")


def default_vocab(context_window: int) -> VocabConfig:
    """Vocab matching the byte-level fallback tokenizer."""
    return VocabConfig(sep_id=FALLBACK_SEP_ID, pad_id=FALLBACK_PAD_ID, context_window=context_window)


@dataclass(frozen=True)
class Document:
    """One corpus article: unique id, title, and its token IDs.

    ``raw_text`` is optional and only needed when the document participates
    in recall evaluation (content matching) or SFT target construction.
    """

    id: str
    title: str
    tokens: tuple[int, ...]
    raw_text: str | None = None


@dataclass(frozen=True)
class DocumentGroup:
    """The per-question list of associated documents that drives packing.

    ``doc_ids`` holds supporting articles and distractors alike;
    ``relevant_ids`` marks the ground-truth supporting subset.
    """

    question_id: str
    doc_ids: tuple[str, ...]
    relevant_ids: tuple[str, ...]
    answer: str


@dataclass(frozen=True)
class Corpus:
    documents: dict[str, Document]
    groups: tuple[DocumentGroup, ...] = field(default_factory=tuple)

    def validate(self, vocab: VocabConfig) -> None:
        """Re-check every invariant. Loading already does this; callers that
        build a Corpus by hand can use it as a guard."""
        for doc in self.documents.values():
            _check_document(doc, vocab)
            if self.documents[doc.id] is not doc:
                raise CorpusError(f"document index inconsistent for id {doc.id!r}")
        seen_questions: set[str] = set()
        for group in self.groups:
            _check_group(group, self.documents, seen_questions)


def _check_document(doc: Document, vocab: VocabConfig) -> None:
    if not doc.tokens:
        raise CorpusError(f"document {doc.id!r} has no tokens")
    for tok in doc.tokens:
        if tok < 0:
            raise CorpusError(f"document {doc.id!r} has negative token {tok}")
        if tok == vocab.sep_id or tok == vocab.pad_id:
            raise CorpusError(
                f"document {doc.id!r} contains reserved token {tok} "
                f"(sep_id={vocab.sep_id}, pad_id={vocab.pad_id})"
            )


def _check_group(group: DocumentGroup, documents: dict[str, Document], seen_questions: set[str]) -> None:
    if group.question_id in seen_questions:
        raise CorpusError(f"duplicate question_id {group.question_id!r}")
    seen_questions.add(group.question_id)
    if not group.doc_ids:
        raise CorpusError(f"group {group.question_id!r} has empty doc_ids")
    for doc_id in group.doc_ids:
        if doc_id not in documents:
            raise CorpusError(f"group {group.question_id!r} references missing document {doc_id!r}")
    extra = set(group.relevant_ids) - set(group.doc_ids)
    if extra:
        raise CorpusError(
            f"group {group.question_id!r} marks relevant ids not in doc_ids: {sorted(extra)}"
        )


def _iter_records(path: Path):
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON record: {exc}") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: expected an object, got {type(record).__name__}")
            yield lineno, record


def _require(record: dict, key: str, kind, path: Path, lineno: int):
    if key not in record:
        raise CorpusError(f"{path}:{lineno}: missing field {key!r}")
    value = record[key]
    if not isinstance(value, kind):
        raise CorpusError(f"{path}:{lineno}: field {key!r} has wrong type {type(value).__name__}")
    return value


def load_documents(path: str | Path, vocab: VocabConfig) -> dict[str, Document]:
    """Parse a line-delimited document file. Every record must parse."""
    path = Path(path)
    documents: dict[str, Document] = {}
    for lineno, record in _iter_records(path):
        doc_id = _require(record, "id", str, path, lineno)
        title = _require(record, "title", str, path, lineno)
        tokens = _require(record, "tokens", list, path, lineno)
        if not all(isinstance(t, int) and not isinstance(t, bool) for t in tokens):
            raise CorpusError(f"{path}:{lineno}: tokens must be integers")
        raw_text = record.get("text")
        if raw_text is not None and not isinstance(raw_text, str):
            raise CorpusError(f"{path}:{lineno}: field 'text' has wrong type {type(raw_text).__name__}")
        if doc_id in documents:
            raise CorpusError(f"{path}:{lineno}: duplicate document id {doc_id!r}")
        doc = Document(id=doc_id, title=title, tokens=tuple(tokens), raw_text=raw_text)
        try:
            _check_document(doc, vocab)
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from None
        documents[doc_id] = doc
    return documents


def load_groups(path: str | Path, documents: dict[str, Document]) -> tuple[DocumentGroup, ...]:
    """Parse a line-delimited groups file against an already-loaded index."""
    path = Path(path)
    groups: list[DocumentGroup] = []
    seen_questions: set[str] = set()
    for lineno, record in _iter_records(path):
        question_id = _require(record, "question_id", str, path, lineno)
        doc_ids = _require(record, "doc_ids", list, path, lineno)
        relevant_ids = _require(record, "relevant_ids", list, path, lineno)
        answer = _require(record, "answer", str, path, lineno)
        if not all(isinstance(d, str) for d in doc_ids) or not all(isinstance(d, str) for d in relevant_ids):
            raise CorpusError(f"{path}:{lineno}: doc ids must be strings")
        group = DocumentGroup(
            question_id=question_id,
            doc_ids=tuple(doc_ids),
            relevant_ids=tuple(relevant_ids),
            answer=answer,
        )
        try:
            _check_group(group, documents, seen_questions)
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from None
        groups.append(group)
    return tuple(groups)


def load_corpus(docs_path: str | Path, groups_path: str | Path | None, vocab: VocabConfig) -> Corpus:
    """Load and validate a corpus from its document and group files.

    Deterministic: the same bytes in always produce a structurally identical
    Corpus. ``groups_path`` may be None for a documents-only corpus.
    """
    documents = load_documents(docs_path, vocab)
    groups: tuple[DocumentGroup, ...] = ()
    if groups_path is not None:
        groups = load_groups(groups_path, documents)
    return Corpus(documents=documents, groups=groups)


def tokenize_fallback(text: str) -> list[int]:
    """Deterministic byte-level encoding: token = UTF-8 byte + reserved-ID offset.

    Exists so tests and SFT construction can run without a real tokenizer;
    round-trips any string via :func:`detokenize_fallback`.
    """
    return [b + FALLBACK_OFFSET for b in text.encode("utf-8")]


def detokenize_fallback(tokens: list[int] | tuple[int, ...]) -> str:
    return bytes(t - FALLBACK_OFFSET for t in tokens).decode("utf-8")
