"""Text layouts for structured-recall prompts, targets, and generations.

Two interchangeable layouts exist for the recall portion of an SFT target
(and therefore for anything the evaluator has to parse back):

``markdown`` (default)::

    # Evidence:
    ## <title>
    <content>

    ## <title>
    <content>

    # Answer:
    <answer>

``inline``::

    Recalled Article 1: <title>
    <content>

    Recalled Article 2: <title>
    <content>

    Answer: <answer>
"""

from __future__ import annotations

TEMPLATES = ("markdown", "inline")
DEFAULT_TEMPLATE = "markdown"

PROMPT_PREAMBLE = (
    "Below is a question. Your task is to read the question, recall the "
    "necessary information, and provide a concise answer. Please ensure your "
    "answer is based only on the recalled information."
)


def check_template(template: str) -> str:
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; expected one of {TEMPLATES}")
    return template


def render_prompt_text(question: str) -> str:
    return f"{PROMPT_PREAMBLE}\n\n# Question:\n{question}"


def render_target_text(articles: list[tuple[str, str]], answer: str, template: str = DEFAULT_TEMPLATE) -> str:
    """Render (title, content) pairs plus the final answer in one layout."""
    check_template(template)
    if template == "markdown":
        blocks = [f"## {title}\n{content}" for title, content in articles]
        return "# Evidence:\n" + "\n\n".join(blocks) + f"\n\n# Answer:\n{answer}"
    blocks = [
        f"Recalled Article {n}: {title}\n{content}"
        for n, (title, content) in enumerate(articles, start=1)
    ]
    return "\n\n".join(blocks) + f"\n\nAnswer: {answer}"
