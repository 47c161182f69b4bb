import json
import random
from pathlib import Path

import pytest

from docpack.corpus import Corpus, Document, DocumentGroup, default_vocab, tokenize_fallback

FIXTURES = Path(__file__).parent / "fixtures"


def make_corpus(group_sizes, doc_len=4, start_token=10, with_text=False):
    """Synthetic corpus: one group per entry in group_sizes, documents named
    g{i}d{j}. doc_len may be an int or a callable(doc_index) -> int."""
    documents = {}
    groups = []
    for gi, size in enumerate(group_sizes):
        doc_ids = []
        for dj in range(size):
            doc_id = f"g{gi}d{dj}"
            n = doc_len(dj) if callable(doc_len) else doc_len
            tokens = tuple(start_token + (dj + k) % 50 for k in range(n))
            documents[doc_id] = Document(
                id=doc_id,
                title=f"Article {gi}-{dj}",
                tokens=tokens,
                raw_text=f"Body of article {gi}-{dj}." if with_text else None,
            )
            doc_ids.append(doc_id)
        groups.append(
            DocumentGroup(
                question_id=f"q{gi}",
                doc_ids=tuple(doc_ids),
                relevant_ids=tuple(doc_ids[:2]) if with_text else (),
                answer=f"answer {gi}",
            )
        )
    return Corpus(documents=documents, groups=tuple(groups))


def random_corpus(rng: random.Random, max_groups=5, max_docs=12, max_len=10):
    group_sizes = [rng.randint(1, max_docs) for _ in range(rng.randint(1, max_groups))]
    documents = {}
    groups = []
    for gi, size in enumerate(group_sizes):
        doc_ids = []
        for dj in range(size):
            doc_id = f"g{gi}d{dj}"
            n = rng.randint(1, max_len)
            documents[doc_id] = Document(
                id=doc_id,
                title=f"T{gi}-{dj}",
                tokens=tuple(rng.randint(2, 200) for _ in range(n)),
            )
            doc_ids.append(doc_id)
        groups.append(
            DocumentGroup(question_id=f"q{gi}", doc_ids=tuple(doc_ids), relevant_ids=(), answer="a")
        )
    return Corpus(documents=documents, groups=tuple(groups))


def write_corpus_files(tmp_path, corpus: Corpus, docs_name="docs.jsonl", groups_name="groups.jsonl"):
    docs_path = tmp_path / docs_name
    groups_path = tmp_path / groups_name
    with docs_path.open("w", encoding="utf-8") as fh:
        for doc in corpus.documents.values():
            rec = {"id": doc.id, "title": doc.title, "tokens": list(doc.tokens)}
            if doc.raw_text is not None:
                rec["text"] = doc.raw_text
            fh.write(json.dumps(rec) + "\n")
    with groups_path.open("w", encoding="utf-8") as fh:
        for group in corpus.groups:
            fh.write(
                json.dumps(
                    {
                        "question_id": group.question_id,
                        "doc_ids": list(group.doc_ids),
                        "relevant_ids": list(group.relevant_ids),
                        "answer": group.answer,
                    }
                )
                + "\n"
            )
    return docs_path, groups_path


def load_recall_fixture(name):
    """Build (corpus, group, generation text, expected scores) from a stored
    worked example."""
    data = json.loads((FIXTURES / name).read_text(encoding="utf-8"))
    documents = {}
    doc_ids = []
    for art in data["truth_articles"]:
        doc = Document(
            id=art["id"],
            title=art["title"],
            tokens=tuple(tokenize_fallback(art["content"])),
            raw_text=art["content"],
        )
        documents[doc.id] = doc
        doc_ids.append(doc.id)
    group = DocumentGroup(
        question_id=data["question"],
        doc_ids=tuple(doc_ids),
        relevant_ids=tuple(doc_ids),
        answer=data["answer"],
    )
    corpus = Corpus(documents=documents, groups=(group,))
    return corpus, group, data["generation"], data["expected_scores"]


@pytest.fixture
def vocab8():
    return default_vocab(8)
