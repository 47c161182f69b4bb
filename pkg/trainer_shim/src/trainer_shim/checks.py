"""Cross-document isolation and loss-masking checks.

The mechanism under test: with cross-document attention disabled, perturbing
one document of a packed sequence must leave the model's activations at every
other document's positions bit-for-bit unaffected; enabling it must make them
differ for a randomly initialized model.
"""

from __future__ import annotations

import torch

from .data import PAD_SEGMENT, Batch
from .model import TinyCausalTransformer, masked_next_token_loss


class LayoutMismatch(ValueError):
    """The two sequences do not share a layout, so positions cannot be compared."""


def doc_logit_difference(
    model: TinyCausalTransformer,
    tokens_a: torch.Tensor,
    tokens_b: torch.Tensor,
    segment_ids: torch.Tensor,
    observe_segment: int,
    cross_doc: bool,
) -> float:
    """Max absolute logit difference over the observed segment's positions
    between two single sequences sharing one layout."""
    if tokens_a.shape != tokens_b.shape or tokens_a.shape != segment_ids.shape:
        raise LayoutMismatch("token arrays and segment ids must share one shape")
    positions = segment_ids == observe_segment
    if not positions.any():
        raise LayoutMismatch(f"no positions carry segment {observe_segment}")
    if not torch.equal(tokens_a[positions], tokens_b[positions]):
        raise LayoutMismatch(f"segment {observe_segment} must be identical in both sequences")
    model.eval()
    with torch.no_grad():
        logits_a = model(tokens_a.unsqueeze(0), segment_ids.unsqueeze(0), cross_doc)
        logits_b = model(tokens_b.unsqueeze(0), segment_ids.unsqueeze(0), cross_doc)
    diff = (logits_a[0, positions] - logits_b[0, positions]).abs()
    return float(diff.max())


def isolation_check(
    model: TinyCausalTransformer,
    tokens_a: torch.Tensor,
    tokens_b: torch.Tensor,
    segment_ids: torch.Tensor,
    cross_doc: bool,
    observe_segment: int = 1,
    tol: float = 1e-6,
) -> bool:
    """True iff the observed document's logits are unaffected (within tol) by
    whatever differs between the two sequences."""
    return (
        doc_logit_difference(model, tokens_a, tokens_b, segment_ids, observe_segment, cross_doc)
        <= tol
    )


def pad_embedding_gradient(model: TinyCausalTransformer, batch: Batch, cross_doc: bool) -> float:
    """Max absolute gradient of the masked loss w.r.t. the input embeddings
    at PAD positions. Must be exactly zero: padding is unattendable and
    carries no loss."""
    embeds = model.embed(batch.tokens).detach().requires_grad_(True)
    logits = model.forward_embedded(embeds, batch.segment_ids, cross_doc)
    loss = masked_next_token_loss(logits, batch.tokens, batch.loss_mask)
    loss.backward()
    pad_positions = batch.segment_ids == PAD_SEGMENT
    if not pad_positions.any():
        return 0.0
    return float(embeds.grad[pad_positions].abs().max())
