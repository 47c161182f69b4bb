"""Command-line entry point.

Subcommands: pack (write per-epoch packed files and manifests), stats (plan
statistics and convergence accounting), eval (score generations, optionally
judging answers), judge (grade answer triples directly), inspect (pretty-print
one packed sequence with its attention blocks).

Runs are driven by a JSON config file; any flag given on the command line
overrides the config value. Exit codes: 0 success, 2 configuration error,
3 data error, 4 transport error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import packio, stats as stats_mod
from .corpus import Corpus, CorpusError, VocabConfig, load_corpus
from .evalharness import (
    GenerationParseError,
    aggregate,
    parse_generation,
    score_one,
)
from .judgeclient import (
    JudgeClient,
    JudgeConfig,
    JudgeError,
    JudgeRequest,
    JudgeTransportError,
    VerdictCache,
    request_key,
)
from .maskgen import MaskSpec, dense_mask
from .packer import EpochMode, PackingError, PackingStrategy, plan_epoch
from .templates import DEFAULT_TEMPLATE, TEMPLATES

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRANSPORT = 4

INSPECT_MASK_LIMIT = 128


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    docs: str | None = None
    groups: str | None = None
    out: str = "out"
    sep_id: int = 0
    pad_id: int = 1
    context_window: int = 1024
    strategy: str = "none"
    epoch_mode: str = "repack_every_epoch"
    epochs: int = 1
    seed: int = 0
    batch_size: int = 32
    sft_template: str = DEFAULT_TEMPLATE
    judge: JudgeConfig | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed config: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")

        vocab = raw.pop("vocab", {})
        judge_raw = raw.pop("judge", None)
        known = {f for f in cls.__dataclass_fields__ if f != "judge"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        fields = dict(raw)
        for key in ("sep_id", "pad_id", "context_window"):
            if key in vocab:
                fields[key] = vocab[key]
        judge = None
        if judge_raw is not None:
            cache = judge_raw.pop("cache", None)
            try:
                judge = JudgeConfig(cache_path=cache, **judge_raw)
            except TypeError as exc:
                raise ConfigError(f"{path}: bad judge config: {exc}") from None
        try:
            return cls(judge=judge, **fields)
        except TypeError as exc:
            raise ConfigError(f"{path}: bad config: {exc}") from None

    def vocab(self) -> VocabConfig:
        return VocabConfig(sep_id=self.sep_id, pad_id=self.pad_id, context_window=self.context_window)

    def load_corpus(self) -> Corpus:
        if self.docs is None:
            raise ConfigError("no documents file configured (set 'docs' or pass --docs)")
        return load_corpus(self.docs, self.groups, self.vocab())


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for name in (
        "docs",
        "groups",
        "out",
        "seed",
        "strategy",
        "epoch_mode",
        "epochs",
        "batch_size",
        "context_window",
        "sep_id",
        "pad_id",
        "sft_template",
    ):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if overrides:
        config = replace(config, **overrides)
    return config


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--docs", help="line-delimited documents file")
    parser.add_argument("--groups", help="line-delimited question-groups file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="base random seed")


def cmd_pack(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if config.epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {config.epochs}")
    corpus = config.load_corpus()
    strategy = PackingStrategy.parse(config.strategy)
    mode = EpochMode.parse(config.epoch_mode)
    vocab = config.vocab()
    out_dir = Path(config.out)
    for epoch in range(config.epochs):
        plan = plan_epoch(
            corpus,
            strategy,
            mode,
            epoch_index=epoch,
            seed=config.seed,
            batch_size=config.batch_size,
            vocab=vocab,
        )
        paths = packio.write_epoch(out_dir, plan)
        if args.compact:
            packio.write_packed_compact(
                paths.packed.with_suffix(".bin"),
                paths.packed.with_suffix(".index.json"),
                plan.sequences,
            )
        print(f"epoch {epoch}: {len(plan.sequences)} sequences -> {paths.packed}")
    return EXIT_OK


def _print_plan_stats(ps: stats_mod.PlanStats) -> None:
    print(f"sequences            {ps.num_sequences}")
    print(f"batches              {ps.num_batches}")
    print(f"docs/batch (mean)    {ps.docs_per_batch_mean:.4f}")
    print(f"padding ratio        {ps.padding_ratio:.6f}")
    print(f"attn pairs, cross on {ps.allowed_pairs_cross_on}")
    print(f"attn pairs, cross off {ps.allowed_pairs_cross_off}")


def _print_convergence_report(report: stats_mod.ConvergenceReport) -> None:
    print(f"{'strategy':>10} {'bs':>5} {'docs':>14} {'reference':>14} {'rel_err':>9} ok")
    for cell in report.cells:
        docs = f"{cell.docs:.0f}" if cell.docs is not None else "-"
        ref = f"{cell.reference:.0f}" if cell.reference is not None else "-"
        err = f"{cell.rel_err:.4f}" if cell.rel_err is not None else "-"
        print(f"{cell.strategy:>10} {cell.batch_size:>5} {docs:>14} {ref:>14} {err:>9} {cell.ok}")
    print(f"all cells within tolerance {report.rel_tol}: {report.all_ok}")


def cmd_stats(args: argparse.Namespace) -> int:
    did_something = False
    if args.packed:
        manifest = args.manifest
        if manifest is None:
            guess = Path(args.packed).name.replace("packed_", "manifest_")
            manifest = Path(args.packed).with_name(guess).with_suffix(".json")
        plan = packio.load_plan(args.packed, manifest)
        _print_plan_stats(stats_mod.plan_stats(plan))
        did_something = True

    reference_pair: tuple[stats_mod.StrategyTable, stats_mod.StrategyTable] | None = None
    if args.builtin_reference:
        reference_pair = stats_mod.load_builtin_reference(args.builtin_reference)
    elif args.steps_table or args.reference:
        if not (args.steps_table and args.reference):
            raise ConfigError("--steps-table and --reference must be given together")
        reference_pair = (
            stats_mod.StrategyTable.load(args.steps_table),
            stats_mod.StrategyTable.load(args.reference),
        )
    if reference_pair is not None:
        steps, reference = reference_pair
        report = stats_mod.convergence_table_check(steps, reference, rel_tol=args.rel_tol)
        _print_convergence_report(report)
        if args.report_out:
            Path(args.report_out).write_text(
                json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
            )
        did_something = True
        if not report.all_ok:
            return EXIT_DATA

    if not did_something:
        raise ConfigError("nothing to do: pass --packed and/or a convergence table")
    return EXIT_OK


def _read_generations(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed generation record: {exc}") from None
            if "question_id" not in rec or "text" not in rec:
                raise CorpusError(f"{path}:{lineno}: generation record needs 'question_id' and 'text'")
            records.append(rec)
    return records


def _scores_to_dict(scores) -> dict:
    return {
        "precision": scores.precision,
        "hallucination_rate": scores.hallucination_rate,
        "accuracy": scores.accuracy,
        "counts": {
            "titles_recalled": scores.counts.titles_recalled,
            "titles_matched": scores.counts.titles_matched,
            "contents_mismatched": scores.counts.contents_mismatched,
            "questions": scores.counts.questions,
            "judged": scores.counts.judged,
            "judged_yes": scores.counts.judged_yes,
        },
    }


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    corpus = config.load_corpus()
    groups = {g.question_id: g for g in corpus.groups}
    generations = _read_generations(args.generations)

    cache_path = args.cache
    if cache_path is None and config.judge is not None:
        cache_path = config.judge.cache_path
    cache = VerdictCache(cache_path)

    client: JudgeClient | None = None
    if not args.no_judge:
        if config.judge is None:
            raise ConfigError("no judge endpoint configured; pass --no-judge to skip answer grading")
        client = JudgeClient(config.judge, cache=cache)

    per_question: list[dict] = []
    scores = []
    parse_failures = 0
    try:
        pending: list[tuple[int, JudgeRequest]] = []
        rows: list[dict] = []
        for rec in generations:
            qid = rec["question_id"]
            group = groups.get(qid)
            if group is None:
                raise CorpusError(f"generation references unknown question_id {qid!r}")
            try:
                gen = parse_generation(rec["text"], template=config.sft_template)
            except GenerationParseError as exc:
                parse_failures += 1
                rows.append({"question_id": qid, "error": str(exc)})
                continue
            row = {"question_id": qid, "gen": gen, "group": group, "verdict": None}
            req = JudgeRequest(question=qid, expected_answer=group.answer, model_answer=gen.answer)
            hit = cache.get(request_key(req))
            if hit is not None:
                row["verdict"] = hit[0]
            elif client is not None:
                pending.append((len(rows), req))
            rows.append(row)

        if client is not None and pending:
            verdicts = client.judge_many([req for _, req in pending])
            for (row_index, _), verdict in zip(pending, verdicts):
                rows[row_index]["verdict"] = verdict.verdict

        for row in rows:
            if "error" in row:
                per_question.append(row)
                continue
            s = score_one(row["gen"], row["group"], corpus, judge_verdict=row["verdict"])
            scores.append(s)
            out_row = {"question_id": row["question_id"], "verdict": row["verdict"]}
            out_row.update(_scores_to_dict(s))
            if row["gen"].warnings:
                out_row["warnings"] = list(row["gen"].warnings)
            per_question.append(out_row)
    finally:
        if client is not None:
            client.close()

    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "eval_per_question.jsonl").open("w", encoding="utf-8") as fh:
        for row in per_question:
            fh.write(json.dumps(row) + "\n")

    if not scores:
        raise CorpusError("no generation could be scored")
    total = aggregate(scores)
    summary = _scores_to_dict(total)
    summary["parse_failures"] = parse_failures
    (out_dir / "eval_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")

    def fmt(v):
        return f"{v:.2f}" if v is not None else "undefined"

    print(f"questions scored     {total.counts.questions} (+{parse_failures} parse failures)")
    print(f"precision            {fmt(total.precision)}")
    print(f"hallucination rate   {fmt(total.hallucination_rate)}")
    print(f"accuracy             {fmt(total.accuracy)}")
    return EXIT_OK


def cmd_judge(args: argparse.Namespace) -> int:
    judge_config = JudgeConfig(
        url=args.url,
        model=args.model,
        api_key_env=args.api_key_env,
        role=args.role,
        timeout=args.timeout,
        max_retries=args.max_retries,
        max_concurrency=args.concurrency,
        cache_path=args.cache,
    )
    requests: list[JudgeRequest] = []
    ids: list[str | None] = []
    with Path(args.requests).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            try:
                requests.append(
                    JudgeRequest(
                        question=rec["question"],
                        expected_answer=rec["expected_answer"],
                        model_answer=rec["model_answer"],
                    )
                )
            except (KeyError, JudgeError) as exc:
                raise CorpusError(f"{args.requests}:{lineno}: bad judge request: {exc}") from None
            ids.append(rec.get("id"))

    with JudgeClient(judge_config, cache=VerdictCache(args.cache)) as client:
        verdicts = client.judge_many(requests)
    for req_id, req, verdict in zip(ids, requests, verdicts):
        row = {
            "key": request_key(req),
            "verdict": verdict.verdict,
            "raw": verdict.raw_response,
            "cached": verdict.cached,
        }
        if req_id is not None:
            row["id"] = req_id
        print(json.dumps(row))
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    sequences = packio.read_packed_jsonl(args.packed)
    if not 0 <= args.index < len(sequences):
        raise CorpusError(f"sequence index {args.index} out of range (file has {len(sequences)})")
    seq = sequences[args.index]
    print(f"sequence {args.index} of {len(sequences)}")
    print(f"  docs       {list(seq.doc_ids)}")
    print(f"  truncated  {seq.truncated}")
    print(f"  sep at     {list(seq.sep_positions)}")
    print(f"  tokens     {list(seq.tokens)}")
    print(f"  segments   {list(seq.segment_ids)}")
    if len(seq.tokens) <= INSPECT_MASK_LIMIT:
        spec = MaskSpec(segment_ids=seq.segment_ids, cross_doc=args.cross_doc == "on")
        matrix = dense_mask(spec)
        print(f"  attention permissions (cross-document {args.cross_doc}):")
        for row in matrix:
            print("    " + "".join("#" if cell else "." for cell in row))
    else:
        print(f"  (sequence longer than {INSPECT_MASK_LIMIT}; skipping mask rendering)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docpack",
        description="Document-packing toolkit: packed sequences, masks, accounting, and recall scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_pack = sub.add_parser("pack", help="write packed sequences and manifests per epoch")
    _add_common_flags(p_pack)
    p_pack.add_argument("--strategy", help="'none', a document count like '4', or a set like '2-4-8'")
    p_pack.add_argument(
        "--epoch-mode",
        dest="epoch_mode",
        choices=[m.value for m in EpochMode],
        help="repacking regime across epochs",
    )
    p_pack.add_argument("--epochs", type=int, help="number of epochs to emit")
    p_pack.add_argument("--batch-size", dest="batch_size", type=int)
    p_pack.add_argument("--context-window", dest="context_window", type=int)
    p_pack.add_argument("--sep-id", dest="sep_id", type=int)
    p_pack.add_argument("--pad-id", dest="pad_id", type=int)
    p_pack.add_argument("--compact", action="store_true", help="also write the binary compact form")
    p_pack.set_defaults(func=cmd_pack)

    p_stats = sub.add_parser("stats", help="plan statistics and convergence accounting")
    p_stats.add_argument("--packed", help="packed sequences file to analyze")
    p_stats.add_argument("--manifest", help="manifest path (default: inferred from --packed)")
    p_stats.add_argument("--steps-table", dest="steps_table", help="steps-to-convergence table (JSON)")
    p_stats.add_argument("--reference", help="reference document-count table (JSON)")
    p_stats.add_argument(
        "--builtin-reference",
        dest="builtin_reference",
        choices=list(stats_mod.BUILTIN_REFERENCES),
        help="use a bundled steps/documents reference pair",
    )
    p_stats.add_argument("--rel-tol", dest="rel_tol", type=float, default=stats_mod.DEFAULT_REL_TOL)
    p_stats.add_argument("--report-out", dest="report_out", help="write the machine-readable report here")
    p_stats.set_defaults(func=cmd_stats)

    p_eval = sub.add_parser("eval", help="score structured recall generations")
    _add_common_flags(p_eval)
    p_eval.add_argument("--generations", required=True, help="JSONL of {question_id, text}")
    p_eval.add_argument("--cache", help="verdict cache file (JSONL)")
    p_eval.add_argument("--no-judge", dest="no_judge", action="store_true", help="skip answer grading")
    p_eval.add_argument("--sft-template", dest="sft_template", choices=list(TEMPLATES))
    p_eval.set_defaults(func=cmd_eval)

    p_judge = sub.add_parser("judge", help="grade answer triples against an endpoint")
    p_judge.add_argument("--requests", required=True, help="JSONL of {question, expected_answer, model_answer}")
    p_judge.add_argument("--url", required=True, help="chat-completions endpoint URL")
    p_judge.add_argument("--model", required=True)
    p_judge.add_argument("--api-key-env", dest="api_key_env", default="DOCPACK_JUDGE_API_KEY")
    p_judge.add_argument("--role", choices=["user", "system"], default="user")
    p_judge.add_argument("--timeout", type=float, default=30.0)
    p_judge.add_argument("--max-retries", dest="max_retries", type=int, default=3)
    p_judge.add_argument("--concurrency", type=int, default=4)
    p_judge.add_argument("--cache", help="verdict cache file (JSONL)")
    p_judge.set_defaults(func=cmd_judge)

    p_inspect = sub.add_parser("inspect", help="pretty-print one packed sequence")
    p_inspect.add_argument("--packed", required=True)
    p_inspect.add_argument("--index", type=int, default=0)
    p_inspect.add_argument("--cross-doc", dest="cross_doc", choices=["on", "off"], default="off")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, JudgeError) as exc:
        print(f"docpack: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, PackingError, packio.PackedFormatError, stats_mod.StatsError, GenerationParseError) as exc:
        print(f"docpack: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"docpack: data error: missing file: {exc}", file=sys.stderr)
        return EXIT_DATA
    except JudgeTransportError as exc:
        print(f"docpack: transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
