import json
from pathlib import Path

import pytest
import torch

from trainer_shim.model import TinyCausalTransformer, ToyModelConfig

FIXTURES = Path(__file__).parent / "fixtures"
PACKED = FIXTURES / "packed_epoch0.jsonl"
MANIFEST = FIXTURES / "manifest_epoch0.json"


@pytest.fixture
def toy_model():
    torch.manual_seed(1234)
    config = ToyModelConfig(vocab_size=64, model_width=64, num_layers=2, num_heads=2, context_window=32)
    return TinyCausalTransformer(config)


def write_packed(path, records):
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def record(tokens, segment_ids, doc_ids=("a",), truncated=False, sep_positions=()):
    return {
        "tokens": list(tokens),
        "segment_ids": list(segment_ids),
        "doc_ids": list(doc_ids),
        "truncated": truncated,
        "sep_positions": list(sep_positions),
    }
