"""Smoke training: prove that packed batches drive the loss down."""

from __future__ import annotations

import torch

from .data import Batch
from .model import TinyCausalTransformer, masked_next_token_loss


class Diverged(RuntimeError):
    pass


def smoke_train(
    model: TinyCausalTransformer,
    batches: list[Batch],
    steps: int,
    cross_doc: bool = True,
    lr: float = 3e-3,
) -> list[float]:
    """Run ``steps`` optimizer steps cycling through the batches and return
    the loss curve (initial loss first, so zero steps yields one entry).

    Loss is next-token cross entropy on loss-masked positions only.
    """
    if not batches:
        raise ValueError("need at least one batch of packed data")
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)

    def batch_loss(batch: Batch) -> torch.Tensor:
        logits = model(batch.tokens, batch.segment_ids, cross_doc)
        return masked_next_token_loss(logits, batch.tokens, batch.loss_mask)

    model.eval()
    with torch.no_grad():
        curve = [float(batch_loss(batches[0]))]
    model.train()
    for step in range(steps):
        batch = batches[step % len(batches)]
        optimizer.zero_grad()
        loss = batch_loss(batch)
        if torch.isnan(loss):
            raise Diverged(f"loss became NaN at step {step}")
        loss.backward()
        optimizer.step()
        curve.append(float(loss.detach()))
    return curve
