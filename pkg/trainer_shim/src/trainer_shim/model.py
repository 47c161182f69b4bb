"""A desk-scale causal transformer for validating packed files and masks.

Deliberately minimal: learned token and position embeddings, a few pre-norm
blocks of masked multi-head attention plus an MLP, and a tied-free linear
head. Attention permissions come exclusively from the segment-ID bias, so
document isolation is testable end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .data import attention_bias


@dataclass(frozen=True)
class ToyModelConfig:
    vocab_size: int
    model_width: int = 64
    num_layers: int = 2
    num_heads: int = 2
    context_window: int = 32

    def __post_init__(self) -> None:
        for name in ("vocab_size", "model_width", "num_layers", "num_heads", "context_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.model_width % self.num_heads:
            raise ValueError("model_width must be divisible by num_heads")


class Block(nn.Module):
    def __init__(self, config: ToyModelConfig):
        super().__init__()
        width = config.model_width
        self.ln_attn = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.ln_mlp = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width))
        self.num_heads = config.num_heads

    def forward(self, x: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        b, length, width = x.shape
        head_dim = width // self.num_heads
        q, k, v = self.qkv(self.ln_attn(x)).split(width, dim=2)
        q = q.view(b, length, self.num_heads, head_dim).transpose(1, 2)
        k = k.view(b, length, self.num_heads, head_dim).transpose(1, 2)
        v = v.view(b, length, self.num_heads, head_dim).transpose(1, 2)
        scores = q @ k.transpose(2, 3) / math.sqrt(head_dim) + bias
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, length, width)
        x = x + self.proj(out)
        x = x + self.mlp(self.ln_mlp(x))
        return x


class TinyCausalTransformer(nn.Module):
    def __init__(self, config: ToyModelConfig):
        super().__init__()
        self.config = config
        self.tok_emb = nn.Embedding(config.vocab_size, config.model_width)
        self.pos_emb = nn.Embedding(config.context_window, config.model_width)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.num_layers))
        self.ln_out = nn.LayerNorm(config.model_width)
        self.head = nn.Linear(config.model_width, config.vocab_size, bias=False)

    def embed(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.size(1) > self.config.context_window:
            raise ValueError(
                f"sequence length {tokens.size(1)} exceeds model context window "
                f"{self.config.context_window}"
            )
        positions = torch.arange(tokens.size(1), device=tokens.device)
        return self.tok_emb(tokens) + self.pos_emb(positions)

    def forward_embedded(
        self, x: torch.Tensor, segment_ids: torch.Tensor, cross_doc: bool
    ) -> torch.Tensor:
        bias = attention_bias(segment_ids, cross_doc)
        for block in self.blocks:
            x = block(x, bias)
        return self.head(self.ln_out(x))

    def forward(self, tokens: torch.Tensor, segment_ids: torch.Tensor, cross_doc: bool) -> torch.Tensor:
        return self.forward_embedded(self.embed(tokens), segment_ids, cross_doc)


def masked_next_token_loss(
    logits: torch.Tensor, tokens: torch.Tensor, loss_mask: torch.Tensor
) -> torch.Tensor:
    """Cross entropy of predicting tokens[t+1] from position t, restricted to
    positions whose target carries loss (separators included, padding not)."""
    targets = tokens[:, 1:]
    target_mask = loss_mask[:, 1:]
    if not target_mask.any():
        raise ValueError("no positions carry loss")
    per_token = nn.functional.cross_entropy(
        logits[:, :-1].reshape(-1, logits.size(-1)), targets.reshape(-1), reduction="none"
    ).view(targets.shape)
    return (per_token * target_mask).sum() / target_mask.sum()
