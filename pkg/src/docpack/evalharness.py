"""Parsing and scoring of structured recall generations.

A generation is expected to recall, per question, the title and content of
each supporting article and finish with an answer. Scoring reports:

- precision: percentage of recalled titles (deduplicated, order-insensitive)
  that appear among the ground-truth supporting articles;
- hallucination rate: among title-matched articles, the percentage whose
  content does not match the ground truth (exact match of normalized text);
- accuracy: percentage of judged questions with a "yes" verdict.

Dataset-level precision and hallucination rate pool raw counts across
questions (micro-average).
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field

from .corpus import Corpus, DocumentGroup
from .templates import check_template

_MAX_NORMALIZE_ROUNDS = 8


class GenerationParseError(ValueError):
    """The generation lacks a usable answer block."""


@dataclass(frozen=True)
class RecallGeneration:
    """Parsed model output: recalled (title, content) pairs plus the answer."""

    articles: tuple[tuple[str, str], ...]
    answer: str
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class ScoreCounts:
    titles_recalled: int = 0
    titles_matched: int = 0
    contents_mismatched: int = 0
    questions: int = 0
    judged: int = 0
    judged_yes: int = 0

    def __add__(self, other: "ScoreCounts") -> "ScoreCounts":
        return ScoreCounts(
            titles_recalled=self.titles_recalled + other.titles_recalled,
            titles_matched=self.titles_matched + other.titles_matched,
            contents_mismatched=self.contents_mismatched + other.contents_mismatched,
            questions=self.questions + other.questions,
            judged=self.judged + other.judged,
            judged_yes=self.judged_yes + other.judged_yes,
        )


@dataclass(frozen=True)
class EvalScores:
    """Percentages are None where undefined (nothing recalled, no title
    matches, or no judged questions)."""

    precision: float | None
    hallucination_rate: float | None
    accuracy: float | None
    counts: ScoreCounts = field(default_factory=ScoreCounts)


_MD_TITLE_RE = re.compile(r"^##\s*(?!#)(.*)$", re.MULTILINE)
_MD_ANSWER_RE = re.compile(r"^#\s*Answer\s*:?\s*$|^#\s*Answer\s*:\s*(?=\S)", re.MULTILINE | re.IGNORECASE)
_INLINE_TITLE_RE = re.compile(r"^Recalled Article\s*\d+\s*:\s*", re.MULTILINE | re.IGNORECASE)
_INLINE_ANSWER_RE = re.compile(r"^Answer\s*:\s*", re.MULTILINE | re.IGNORECASE)


def parse_generation(text: str, template: str = "markdown") -> RecallGeneration:
    """Split a generation into recalled articles and the final answer.

    Articles are extracted in order, title and content split at the title
    line. A missing answer block is a hard error; a missing article section
    only records a warning so degenerate generations still get scored.
    """
    check_template(template)
    if template == "markdown":
        answer_re, title_re = _MD_ANSWER_RE, _MD_TITLE_RE
    else:
        answer_re, title_re = _INLINE_ANSWER_RE, _INLINE_TITLE_RE

    answer_matches = list(answer_re.finditer(text))
    if not answer_matches:
        raise GenerationParseError("no answer block found")
    answer_start = answer_matches[-1]
    answer = text[answer_start.end() :].strip()
    if not answer:
        raise GenerationParseError("answer block is empty")
    body = text[: answer_start.start()]

    articles: list[tuple[str, str]] = []
    title_matches = list(title_re.finditer(body))
    for n, m in enumerate(title_matches):
        chunk_end = title_matches[n + 1].start() if n + 1 < len(title_matches) else len(body)
        chunk = body[m.end() : chunk_end]
        if template == "markdown":
            # Markdown carries the title inside the "## " line itself.
            title = m.group(1).strip()
            content = chunk.strip()
        else:
            # Inline carries it on the marker line, content on the following lines.
            first_line, _, rest = chunk.partition("\n")
            title = first_line.strip()
            content = rest.strip()
        articles.append((title, content))

    warnings = () if articles else ("no article blocks found",)
    return RecallGeneration(articles=tuple(articles), answer=answer, warnings=warnings)


def normalize(text: str) -> str:
    """Canonical form for title/content comparison: Unicode compatibility
    normalization, case folding, whitespace collapsed to single spaces,
    trimmed. Punctuation is preserved. Idempotent by construction (iterates
    to a fixed point)."""
    prev = text
    for _ in range(_MAX_NORMALIZE_ROUNDS):
        folded = unicodedata.normalize("NFKC", prev.casefold())
        collapsed = " ".join(folded.split())
        if collapsed == prev:
            return collapsed
        prev = collapsed
    return prev


def _verdict_or_none(judge_verdict: str | None) -> str | None:
    if judge_verdict in ("yes", "no"):
        return judge_verdict
    return None


def score_one(
    gen: RecallGeneration,
    group: DocumentGroup,
    corpus: Corpus,
    judge_verdict: str | None = None,
) -> EvalScores:
    """Score a single question's generation against its ground-truth group.

    Recalled titles are deduplicated after normalization (first occurrence
    wins) and matched order-insensitively against the group's relevant
    articles. Content matching is exact equality of normalized strings.
    ``judge_verdict`` is "yes", "no", or anything else to mean unjudged.
    """
    truth: dict[str, set[str]] = {}
    for doc_id in group.relevant_ids:
        doc = corpus.documents.get(doc_id)
        if doc is None:
            raise KeyError(f"group {group.question_id!r} references missing document {doc_id!r}")
        if doc.raw_text is None:
            raise ValueError(f"document {doc_id!r} has no raw text; cannot score content recall")
        truth.setdefault(normalize(doc.title), set()).add(normalize(doc.raw_text))

    recalled: dict[str, str] = {}
    for title, content in gen.articles:
        key = normalize(title)
        if key not in recalled:
            recalled[key] = content

    matched = 0
    mismatched = 0
    for title_key, content in recalled.items():
        if title_key in truth:
            matched += 1
            if normalize(content) not in truth[title_key]:
                mismatched += 1

    verdict = _verdict_or_none(judge_verdict)
    counts = ScoreCounts(
        titles_recalled=len(recalled),
        titles_matched=matched,
        contents_mismatched=mismatched,
        questions=1,
        judged=1 if verdict is not None else 0,
        judged_yes=1 if verdict == "yes" else 0,
    )
    return EvalScores(
        precision=100.0 * matched / len(recalled) if recalled else None,
        hallucination_rate=100.0 * mismatched / matched if matched else None,
        accuracy={None: None, "yes": 100.0, "no": 0.0}[verdict],
        counts=counts,
    )


def aggregate(scores: list[EvalScores]) -> EvalScores:
    """Pool per-question counts into dataset-level percentages."""
    if not scores:
        raise ValueError("cannot aggregate an empty score list")
    counts = ScoreCounts()
    for s in scores:
        counts = counts + s.counts
    return EvalScores(
        precision=(
            100.0 * counts.titles_matched / counts.titles_recalled if counts.titles_recalled else None
        ),
        hallucination_rate=(
            100.0 * counts.contents_mismatched / counts.titles_matched if counts.titles_matched else None
        ),
        accuracy=100.0 * counts.judged_yes / counts.judged if counts.judged else None,
        counts=counts,
    )


def hallucinated_title_breakdown(
    gen: RecallGeneration, group: DocumentGroup, corpus: Corpus
) -> dict[str, int]:
    """Optional diagnostic for non-matching recalled titles: how many name a
    different document that exists somewhere in the corpus versus titles that
    exist nowhere in it."""
    truth_titles = {normalize(corpus.documents[d].title) for d in group.relevant_ids}
    corpus_titles = {normalize(doc.title) for doc in corpus.documents.values()}
    wrong_document = 0
    invented = 0
    for title in {normalize(t) for t, _ in gen.articles}:
        if title in truth_titles:
            continue
        if title in corpus_titles:
            wrong_document += 1
        else:
            invented += 1
    return {"wrong_document": wrong_document, "invented": invented}
