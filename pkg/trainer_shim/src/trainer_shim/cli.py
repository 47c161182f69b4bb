"""Shim CLI: load packed files and run the isolation or training check."""

from __future__ import annotations

import argparse
import sys

import torch

from .checks import doc_logit_difference, pad_embedding_gradient
from .data import load_packed
from .model import TinyCausalTransformer, ToyModelConfig
from .train import smoke_train


def build_model(batches, width: int, layers: int, heads: int, seed: int) -> TinyCausalTransformer:
    vocab_size = max(int(b.tokens.max()) for b in batches) + 1
    window = batches[0].tokens.size(1)
    torch.manual_seed(seed)
    config = ToyModelConfig(
        vocab_size=max(vocab_size, 8),
        model_width=width,
        num_layers=layers,
        num_heads=heads,
        context_window=window,
    )
    return TinyCausalTransformer(config)


def perturb_first_document(tokens: torch.Tensor, segment_ids: torch.Tensor, vocab_size: int) -> torch.Tensor:
    """Copy of one sequence with every token of the first document replaced."""
    out = tokens.clone()
    first_doc = segment_ids == 0
    out[first_doc] = (out[first_doc] + 1) % vocab_size
    return out


def run_isolation(batches, args) -> int:
    cross_doc = args.cross_doc == "on"
    model = build_model(batches, args.width, args.layers, args.heads, args.seed)
    for batch in batches:
        for row in range(batch.tokens.size(0)):
            segment_ids = batch.segment_ids[row]
            if int(segment_ids.max()) < 1:
                continue  # need at least two documents
            tokens = batch.tokens[row]
            perturbed = perturb_first_document(tokens, segment_ids, model.config.vocab_size)
            diff = doc_logit_difference(model, tokens, perturbed, segment_ids, 1, cross_doc)
            print(f"cross-document attention {args.cross_doc}: max doc-2 logit diff {diff:.3e}")
            isolated = diff <= 1e-6
            if cross_doc:
                print("documents interact" if not isolated else "documents unexpectedly isolated")
                return 0 if not isolated else 1
            print("documents isolated" if isolated else "isolation violated")
            return 0 if isolated else 1
    print("no packed sequence holds two documents; nothing to check", file=sys.stderr)
    return 1


def run_train(batches, args) -> int:
    model = build_model(batches, args.width, args.layers, args.heads, args.seed)
    curve = smoke_train(model, batches, steps=args.steps, cross_doc=args.cross_doc == "on")
    print(f"loss: initial {curve[0]:.4f} final {curve[-1]:.4f} over {args.steps} steps")
    pad_grad = pad_embedding_gradient(model, batches[0], cross_doc=args.cross_doc == "on")
    print(f"max PAD-position embedding gradient: {pad_grad:.3e}")
    return 0 if curve[-1] < curve[0] else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="trainer-shim",
        description="Toy-transformer consumer that validates packed files and mask semantics.",
    )
    parser.add_argument("--packed", required=True, help="packed sequences file (line-delimited)")
    parser.add_argument("--manifest", help="epoch manifest with batch assignments")
    parser.add_argument("--batch-size", dest="batch_size", type=int, help="chunk size when no manifest")
    parser.add_argument("--steps", type=int, default=100)
    parser.add_argument("--cross-doc", dest="cross_doc", choices=["on", "off"], default="off")
    parser.add_argument("--check", choices=["isolation", "train"], default="isolation")
    parser.add_argument("--width", type=int, default=64)
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--heads", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    batches = load_packed(args.packed, args.manifest, args.batch_size)
    if not batches:
        print("packed file holds no sequences", file=sys.stderr)
        return 1
    if args.check == "isolation":
        return run_isolation(batches, args)
    return run_train(batches, args)


if __name__ == "__main__":
    sys.exit(main())
