import pytest

from docpack.corpus import Corpus, Document, default_vocab
from docpack.maskgen import MaskSpec, dense_mask
from docpack.packer import EpochMode, PackingStrategy, plan_epoch
from docpack.stats import (
    ConvergenceRecord,
    StatsError,
    StrategyTable,
    convergence_table_check,
    derive_documents_table,
    docs_per_batch,
    load_builtin_reference,
    plan_stats,
    total_documents,
)

from conftest import make_corpus


# --- total_documents ---------------------------------------------------------


def test_total_documents_no_packing():
    rec = ConvergenceRecord(PackingStrategy.no_packing(), batch_size=32, steps_to_convergence=48800)
    assert total_documents(rec) == 1_561_600
    assert abs(total_documents(rec) - 1_600_000) / 1_600_000 < 0.05


def test_total_documents_fixed_eight():
    rec = ConvergenceRecord(PackingStrategy.fixed(8), batch_size=32, steps_to_convergence=21400)
    assert total_documents(rec) == 5_478_400
    assert abs(total_documents(rec) - 5_500_000) / 5_500_000 < 0.05


def test_total_documents_fixed_one_equals_no_packing():
    for bs, steps in [(8, 100), (64, 977)]:
        fixed = ConvergenceRecord(PackingStrategy.fixed(1), bs, steps)
        plain = ConvergenceRecord(PackingStrategy.no_packing(), bs, steps)
        assert total_documents(fixed) == total_documents(plain) == steps * bs


def test_total_documents_rejects_multi():
    rec = ConvergenceRecord(PackingStrategy.multi([2, 4]), 32, 100)
    with pytest.raises(StatsError):
        total_documents(rec)


def test_total_documents_is_linear():
    base = ConvergenceRecord(PackingStrategy.fixed(3), 16, 250)
    doubled_steps = ConvergenceRecord(PackingStrategy.fixed(3), 16, 500)
    doubled_bs = ConvergenceRecord(PackingStrategy.fixed(3), 32, 250)
    assert total_documents(doubled_steps) == 2 * total_documents(base)
    assert total_documents(doubled_bs) == 2 * total_documents(base)


# --- docs_per_batch ----------------------------------------------------------


def test_docs_per_batch_no_packing():
    corpus = make_corpus([64, 64])
    plan = plan_epoch(
        corpus, PackingStrategy.no_packing(), EpochMode.REPACK_EVERY_EPOCH, 0, 0, 64, default_vocab(8)
    )
    assert docs_per_batch(plan) == 64.0


def test_docs_per_batch_diagonal_equivalence():
    # Pack 2 at batch size 32 carries the same documents per batch as no
    # packing at batch size 64.
    corpus = make_corpus([64, 64])
    vocab = default_vocab(16)
    packed = plan_epoch(corpus, PackingStrategy.fixed(2), EpochMode.REPACK_EVERY_EPOCH, 0, 0, 32, vocab)
    assert docs_per_batch(packed) == 64.0


def test_docs_per_batch_multi_counting_oracle():
    corpus = make_corpus([10, 9, 4])
    vocab = default_vocab(64)
    plan = plan_epoch(corpus, PackingStrategy.multi([2, 4]), EpochMode.REPACK_EVERY_EPOCH, 0, 5, 3, vocab)
    expected = sum(len(seq.doc_ids) for seq in plan.sequences) / len(plan.batches)
    assert docs_per_batch(plan) == expected


def test_docs_per_batch_rejects_empty():
    empty = plan_epoch(
        Corpus(documents={}, groups=()), PackingStrategy.no_packing(), EpochMode.NO_REPACK, 0, 0, 4, default_vocab(8)
    )
    with pytest.raises(StatsError):
        docs_per_batch(empty)


# --- plan_stats ----------------------------------------------------------------


def one_seq_plan(tokens_per_doc, window):
    documents = {
        f"d{i}": Document(id=f"d{i}", title=f"d{i}", tokens=tuple(range(10, 10 + n)))
        for i, n in enumerate(tokens_per_doc)
    }
    from docpack.corpus import DocumentGroup

    group = DocumentGroup(
        question_id="q", doc_ids=tuple(documents), relevant_ids=(), answer="a"
    )
    corpus = Corpus(documents=documents, groups=(group,))
    return plan_epoch(
        corpus,
        PackingStrategy.fixed(len(tokens_per_doc)),
        EpochMode.NO_REPACK,
        0,
        0,
        1,
        default_vocab(window),
    )


def test_plan_stats_padding_single_doc():
    plan = one_seq_plan([5], window=8)
    stats = plan_stats(plan)
    assert stats.padding_ratio == 3 / 8
    assert stats.num_sequences == 1
    assert stats.num_batches == 1


def test_plan_stats_pair_counts_against_dense_mask():
    plan = one_seq_plan([3, 2], window=8)
    stats = plan_stats(plan)
    assert stats.allowed_pairs_cross_on == 21  # 6 non-PAD positions
    seq = plan.sequences[0]
    on = dense_mask(MaskSpec(segment_ids=seq.segment_ids, cross_doc=True))
    off = dense_mask(MaskSpec(segment_ids=seq.segment_ids, cross_doc=False))
    assert stats.allowed_pairs_cross_on == int(on.sum())
    assert stats.allowed_pairs_cross_off == int(off.sum())
    assert stats.allowed_pairs_cross_off <= stats.allowed_pairs_cross_on


def test_no_packing_pair_counts_equal():
    corpus = make_corpus([6])
    plan = plan_epoch(
        corpus, PackingStrategy.no_packing(), EpochMode.NO_REPACK, 0, 0, 2, default_vocab(8)
    )
    stats = plan_stats(plan)
    assert stats.allowed_pairs_cross_on == stats.allowed_pairs_cross_off


def test_pair_count_gap_positive_iff_multiple_documents():
    multi_doc = plan_stats(one_seq_plan([3, 2], window=8))
    assert multi_doc.allowed_pairs_cross_on > multi_doc.allowed_pairs_cross_off
    single_doc = plan_stats(one_seq_plan([5], window=8))
    assert single_doc.allowed_pairs_cross_on == single_doc.allowed_pairs_cross_off


def test_plan_stats_rejects_empty():
    empty = plan_epoch(
        Corpus(documents={}, groups=()), PackingStrategy.no_packing(), EpochMode.NO_REPACK, 0, 0, 4, default_vocab(8)
    )
    with pytest.raises(StatsError):
        plan_stats(empty)


# --- convergence tables --------------------------------------------------------


def test_builtin_full_reference_reproduces_document_counts():
    steps, docs = load_builtin_reference("cross-attention-on")
    report = convergence_table_check(steps, docs)
    populated = [c for c in report.cells if c.reference is not None]
    assert len(populated) == 15
    assert report.all_ok
    assert all(c.rel_err is not None and c.rel_err <= 0.05 for c in populated)


def test_builtin_isolated_reference_reproduces_document_counts():
    steps, docs = load_builtin_reference("cross-attention-off")
    report = convergence_table_check(steps, docs)
    assert report.all_ok
    assert len(report.cells) == 4


def test_specific_derived_cells():
    steps, _ = load_builtin_reference("cross-attention-on")
    derived = derive_documents_table(steps)
    grid = {(s, b): v for s, row in zip(derived.strategies, derived.cells) for b, v in zip(derived.batch_sizes, row)}
    assert grid[("none", 32)] == 48800 * 32
    assert grid[("2", 256)] == 4100 * 256 * 2
    assert grid[("8", 256)] is None


def test_all_zero_steps_gives_all_zero_docs():
    table = StrategyTable(strategies=("none", "2"), batch_sizes=(32,), cells=((0,), (0,)))
    derived = derive_documents_table(table)
    assert derived.cells == ((0.0,), (0.0,))
    report = convergence_table_check(table, derived)
    assert report.all_ok


def test_shape_mismatch_rejected():
    a = StrategyTable(strategies=("none",), batch_sizes=(32,), cells=((1,),))
    b = StrategyTable(strategies=("none", "2"), batch_sizes=(32,), cells=((1,), (2,)))
    with pytest.raises(StatsError):
        convergence_table_check(a, b)


def test_malformed_table_rejected():
    with pytest.raises(StatsError):
        StrategyTable(strategies=("none",), batch_sizes=(32, 64), cells=((1,),))
    with pytest.raises(StatsError):
        load_builtin_reference("nope")


def test_tolerance_flags_out_of_range_cells():
    steps = StrategyTable(strategies=("none",), batch_sizes=(32,), cells=((1000,),))
    ref = StrategyTable(strategies=("none",), batch_sizes=(32,), cells=((64000,),))
    report = convergence_table_check(steps, ref)
    assert not report.all_ok
    half_populated = StrategyTable(strategies=("none",), batch_sizes=(32,), cells=((None,),))
    report2 = convergence_table_check(half_populated, ref)
    assert not report2.all_ok  # reference populated but derivation missing


def test_padding_monotonicity_under_capacity_packing():
    import random

    from conftest import random_corpus

    rng = random.Random(1234)
    for _ in range(25):
        corpus = random_corpus(rng, max_groups=3, max_docs=8, max_len=10)
        vocab = default_vocab(16)
        baseline = plan_epoch(
            corpus, PackingStrategy.no_packing(), EpochMode.REPACK_EVERY_EPOCH, 0, 1, 4, vocab
        )
        capacity = plan_epoch(
            corpus,
            PackingStrategy.fixed(max(len(g.doc_ids) for g in corpus.groups)),
            EpochMode.REPACK_EVERY_EPOCH,
            0,
            1,
            4,
            vocab,
        )
        assert plan_stats(capacity).padding_ratio <= plan_stats(baseline).padding_ratio
