"""Command-line interface.

Subcommands cover the whole workflow: index a repository, extract benchmark
samples, run completion modes against an index, score the traces, and run
the post-hoc analyses. Exit codes: 0 success, 1 usage error, 2 data error,
3 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

from . import analysis, dataset, evaluation, generation, pipeline, retrieval
from .errors import BackendError, ConfigError, DataError
from .manifest import RunManifest, file_sha256, sidecar_path
from .repo_index import IndexConfig, build_index, load_index, save_index

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3

CLI_MODES = {"infile": "infile", "rag-oracle": "rag_oracle", "repocoder": "repocoder"}


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; this project reserves 2
    for data errors, so remap to 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _add_globs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--include", action="append", default=None, metavar="GLOB",
        help="file glob to index (repeatable, default **/*.py)",
    )
    parser.add_argument(
        "--exclude", action="append", default=None, metavar="GLOB",
        help="file glob to skip (repeatable)",
    )


def _globs(args) -> tuple[tuple[str, ...], tuple[str, ...]]:
    include = tuple(args.include) if args.include else ("**/*.py",)
    exclude = tuple(args.exclude) if args.exclude else ()
    return include, exclude


def build_parser() -> _Parser:
    parser = _Parser(prog="repocomplete", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build a sliding-window snippet index")
    p.add_argument("repo", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--window", type=int, default=20, help="window height in lines")
    p.add_argument("--slide", type=int, default=10, help="window advance in lines")
    _add_globs(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("extract-lines", help="sample single-line completion holes")
    p.add_argument("repo", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("-n", "--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    _add_globs(p)
    p.set_defaults(func=cmd_extract_lines)

    p = sub.add_parser("extract-apis", help="sample in-repo API invocation holes")
    p.add_argument("repo", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("-n", "--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    _add_globs(p)
    p.set_defaults(func=cmd_extract_apis)

    p = sub.add_parser(
        "extract-functions", help="build function-body holes from a test map"
    )
    p.add_argument("repo", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument(
        "--test-map", type=Path, required=True,
        help="JSON file: qualified function name -> shell test command",
    )
    p.add_argument("--seed", type=int, default=0)
    _add_globs(p)
    p.set_defaults(func=cmd_extract_functions)

    p = sub.add_parser("run", help="run a completion mode over a dataset")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mode", choices=sorted(CLI_MODES), required=True)
    p.add_argument("--backend", choices=("mock", "http"), default="mock")
    p.add_argument(
        "--mock-behavior",
        choices=("echo", "table", "snippet-prefix"),
        default="echo",
        help="echo answers with ground truth; table reads --mock-table",
    )
    p.add_argument("--mock-table", type=Path, help="JSON file: sample_id -> completion")
    p.add_argument("--endpoint", help="completions endpoint URL (http backend)")
    p.add_argument("--model", help="model name (http backend)")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--retries", type=int, default=generation.MAX_ATTEMPTS)
    p.add_argument("--budget", type=int, default=4096, help="total token budget")
    p.add_argument("--iterations", type=int, default=None, help="retrieval-generation rounds")
    p.add_argument("--max-gen", type=int, default=None, help="max generation tokens")
    p.add_argument("--window", type=int, default=None, help="query window height")
    p.add_argument("--slide", type=int, default=None, help="query splice depth")
    p.add_argument("-k", "--top-k", type=int, default=None, help="snippets per prompt")
    p.add_argument("--fraction", type=float, default=None, help="retrieval share of budget")
    p.add_argument("--retriever", choices=("sparse", "dense"), default="sparse")
    p.add_argument("--embed-backend", choices=("mock", "http"), default="mock")
    p.add_argument("--embed-endpoint", help="embeddings endpoint URL")
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--embed-truncate", type=int, default=None, help="clip texts to N chars")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest")
    p.add_argument("--jobs", type=int, default=1, help="parallel samples")
    p.add_argument("--resume", action="store_true", help="reuse finished samples in --out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score traces against their dataset")
    p.add_argument("--traces", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, help="report JSON path")
    p.add_argument("--csv", type=Path, help="also write the table as CSV")
    p.add_argument("--records", type=Path, help="per-sample scores JSONL (timing included)")
    p.add_argument("--exec", action="store_true", dest="exec_tests",
                   help="run function test commands for pass rate")
    p.add_argument("--repo", type=Path, help="repository root (required with --exec)")
    p.add_argument("--timeout", type=float, default=evaluation.DEFAULT_EXEC_TIMEOUT)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "analyze-locations", help="label where retrieved snippets came from"
    )
    p.add_argument("--traces", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--repo", type=Path, required=True)
    p.add_argument("--out", type=Path, help="summary JSON path")
    p.add_argument(
        "--sample-ids", type=Path,
        help="restrict to sample ids listed in this file (JSON array or one per line)",
    )
    _add_globs(p)
    p.set_defaults(func=cmd_analyze_locations)

    p = sub.add_parser(
        "analyze-duplication", help="share of repeated non-blank lines in a repo"
    )
    p.add_argument("repo", type=Path)
    p.add_argument("--out", type=Path, help="summary JSON path")
    _add_globs(p)
    p.set_defaults(func=cmd_analyze_duplication)

    p = sub.add_parser(
        "analyze-recall",
        help="per-iteration recall of ground-truth API context in traces",
    )
    p.add_argument("--traces", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--repo", type=Path, required=True)
    p.add_argument("--out", type=Path, help="summary JSON path")
    _add_globs(p)
    p.set_defaults(func=cmd_analyze_recall)

    return parser


def cmd_index(args) -> int:
    include, exclude = _globs(args)
    cfg = IndexConfig(
        window_lines=args.window,
        slide_lines=args.slide,
        include_globs=include,
        exclude_globs=exclude,
    )
    index = build_index(args.repo, cfg)
    save_index(index, args.out)
    manifest = RunManifest(
        command="index",
        config={
            "window_lines": args.window,
            "slide_lines": args.slide,
            "include": list(include),
            "exclude": list(exclude),
        },
        inputs={"repo": str(args.repo)},
    )
    manifest.inputs["index_sha256"] = file_sha256(args.out)
    manifest.write(sidecar_path(args.out))
    for warning in index.warnings:
        sys.stderr.write(f"warning: {warning}\n")
    print(f"indexed {len(index.paths())} files into {len(index)} snippets -> {args.out}")
    return EXIT_OK


def _write_dataset(samples, args, command: str, extra_config: dict) -> int:
    include, exclude = _globs(args)
    manifest = RunManifest(
        command=command,
        config={"include": list(include), "exclude": list(exclude), **extra_config},
        seed=args.seed,
        inputs={"repo": str(args.repo)},
    )
    dataset.save_samples(samples, args.out, manifest.fingerprint())
    manifest.write(sidecar_path(args.out))
    print(f"wrote {len(samples)} samples -> {args.out}")
    return EXIT_OK


def cmd_extract_lines(args) -> int:
    include, exclude = _globs(args)
    samples = dataset.extract_line_samples(
        args.repo, args.count, args.seed, include, exclude
    )
    return _write_dataset(samples, args, "extract-lines", {"n": args.count})


def cmd_extract_apis(args) -> int:
    include, exclude = _globs(args)
    samples = dataset.extract_api_samples(
        args.repo, args.count, args.seed, include, exclude
    )
    return _write_dataset(samples, args, "extract-apis", {"n": args.count})


def cmd_extract_functions(args) -> int:
    include, exclude = _globs(args)
    try:
        test_map = json.loads(args.test_map.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read test map {args.test_map}: {exc}") from exc
    if not isinstance(test_map, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in test_map.items()
    ):
        raise DataError(f"{args.test_map}: expected an object of name -> command")
    samples = dataset.extract_function_samples(
        args.repo, test_map, args.seed, include, exclude
    )
    return _write_dataset(
        samples, args, "extract-functions", {"functions": sorted(test_map)}
    )


def _pipeline_config(task_kind: str, args) -> pipeline.PipelineConfig:
    overrides = {}
    if args.window is not None:
        overrides["window_lines"] = args.window
    if args.slide is not None:
        overrides["slide_lines"] = args.slide
    if args.top_k is not None:
        overrides["k_snippets"] = args.top_k
    if args.iterations is not None:
        overrides["max_iterations"] = args.iterations
    if args.max_gen is not None:
        overrides["max_generation_tokens"] = args.max_gen
    if args.fraction is not None:
        overrides["retrieval_context_fraction"] = args.fraction
    return pipeline.PipelineConfig.for_task(
        task_kind, total_token_budget=args.budget, **overrides
    )


def _build_generator(args, samples) -> generation.Generator:
    if args.backend == "mock":
        if args.mock_behavior == "echo":
            return generation.MockGenerator.echoing(
                {s.sample_id: s.ground_truth for s in samples}
            )
        if args.mock_behavior == "table":
            if not args.mock_table:
                raise ConfigError("--mock-behavior table requires --mock-table")
            try:
                table = json.loads(args.mock_table.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise DataError(f"cannot read mock table: {exc}") from exc
            return generation.MockGenerator(behavior="fixed_table", lookup=table)
        return generation.MockGenerator(behavior="prefix_of_snippet")
    if not args.endpoint or not args.model:
        raise ConfigError("http backend requires --endpoint and --model")
    return generation.HttpGenerator(
        endpoint=args.endpoint,
        model=args.model,
        total_token_budget=args.budget,
        timeout=args.timeout,
        max_attempts=args.retries,
        max_inflight=max(args.jobs, 1),
    )


def _build_retriever(args, index) -> tuple[pipeline.Retriever, dict]:
    if args.retriever == "sparse":
        return retrieval.retrieve, {"retriever": "sparse"}
    if args.embed_backend == "http":
        if not args.embed_endpoint:
            raise ConfigError("dense retrieval over http requires --embed-endpoint")
        provider: retrieval.EmbeddingProvider = retrieval.HttpEmbeddingProvider(
            endpoint=args.embed_endpoint,
            dimension=args.embed_dim,
            truncate_chars=args.embed_truncate,
        )
    else:
        provider = retrieval.MockEmbeddingProvider(
            dimension=args.embed_dim, truncate_chars=args.embed_truncate
        )
    dense = retrieval.build_dense_index(index, provider)

    def dense_retriever(view, query, k):
        return retrieval.retrieve_dense(view, query, k, provider, dense)

    meta = {
        "retriever": "dense",
        "embedding_backend": provider.describe(),
        "truncate_chars": args.embed_truncate,
    }
    return dense_retriever, meta


def _read_resume_records(path: Path, fingerprint: str) -> dict[str, str]:
    """Map sample_id -> raw line for complete records in an interrupted
    traces file. A trailing partial line is dropped; everything after the
    first malformed line is recomputed rather than trusted."""
    done: dict[str, str] = {}
    try:
        raw_lines = path.read_text(encoding="utf-8").split("\n")
    except OSError:
        return done
    if not raw_lines:
        return done
    try:
        header = json.loads(raw_lines[0])
    except json.JSONDecodeError:
        return done
    if not isinstance(header, dict) or header.get("schema") != pipeline.TRACES_SCHEMA:
        return done
    if header.get("manifest") != fingerprint:
        raise DataError(
            f"{path}: existing traces were produced by a different configuration; "
            "remove the file or rerun without --resume"
        )
    for raw in raw_lines[1:]:
        if not raw.strip():
            continue
        try:
            record = pipeline.validate_trace_record(json.loads(raw))
        except (ValueError, json.JSONDecodeError):
            break
        done[record["sample_id"]] = raw
    return done


def cmd_run(args) -> int:
    samples = dataset.load_samples(args.dataset)
    index = load_index(args.index)
    mode = CLI_MODES[args.mode]
    generator = _build_generator(args, samples)
    retriever, retriever_meta = _build_retriever(args, index)

    configs = {
        kind: _pipeline_config(kind, args)
        for kind in sorted({s.task_kind for s in samples})
    }
    stop_map = {
        kind: pipeline.stop_sequences_for(kind) for kind in configs
    }
    manifest = RunManifest(
        command="run",
        config={
            "mode": mode,
            "pipeline": {kind: asdict(cfg) for kind, cfg in configs.items()},
            "stop_sequences": stop_map,
            **retriever_meta,
        },
        seed=args.seed,
        backend=generator.describe(),
        inputs={
            "dataset_sha256": file_sha256(args.dataset),
            "index_sha256": file_sha256(args.index),
        },
    )
    fingerprint = manifest.fingerprint()

    done: dict[str, str] = {}
    if args.resume and args.out.exists():
        done = _read_resume_records(args.out, fingerprint)

    def run_one(sample) -> str:
        if sample.sample_id in done:
            return done[sample.sample_id]
        result = pipeline.run_sample(
            sample, index, retriever, generator, configs[sample.task_kind], mode
        )
        return result.to_json_line()

    started = time.monotonic()
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            lines = list(pool.map(run_one, samples))
    else:
        lines = [run_one(sample) for sample in samples]
    elapsed = time.monotonic() - started

    with args.out.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(pipeline.trace_header(fingerprint), ensure_ascii=False) + "\n")
        for line in lines:
            fh.write(line + "\n")
    manifest.write(sidecar_path(args.out))

    failures = sum(1 for line in lines if '"error"' in line and json.loads(line).get("error"))
    print(
        f"ran {len(samples)} samples in mode {mode} "
        f"({elapsed:.1f}s, {len(done)} reused, {failures} failed) -> {args.out}"
    )
    if failures:
        sys.stderr.write(f"warning: {failures} samples recorded a backend error\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.exec_tests and not args.repo:
        raise ConfigError("--exec requires --repo pointing at the repository snapshot")
    samples = dataset.load_samples(args.dataset)
    by_id = {s.sample_id: s for s in samples}
    header, records = pipeline.load_trace_records(args.traces)

    orphans = sorted({r["sample_id"] for r in records} - set(by_id))
    if orphans:
        raise DataError(
            "traces reference samples missing from the dataset: " + ", ".join(orphans)
        )
    unscored = sorted(set(by_id) - {r["sample_id"] for r in records})
    if unscored:
        sys.stderr.write(
            f"warning: {len(unscored)} dataset samples have no trace "
            f"(first: {unscored[0]})\n"
        )

    eval_records: list[evaluation.EvalRecord] = []
    for record in records:
        sample = by_id[record["sample_id"]]
        for idx, entry in enumerate(record["iterations"], start=1):
            started = time.monotonic()
            prediction = generation.truncate_for_task(
                str(entry["prediction"]), sample.task_kind
            )
            em = evaluation.exact_match(prediction, sample.ground_truth)
            es = evaluation.edit_similarity(prediction, sample.ground_truth)
            pr = None
            timed_out = False
            if args.exec_tests and sample.task_kind == "function" and sample.test_command:
                with evaluation.workspace_copy(args.repo) as ws:
                    lines = (ws / sample.file).read_text(encoding="utf-8").split("\n")
                    if lines and lines[-1] == "":
                        lines.pop()
                    completed = evaluation.splice_function_body(
                        lines, sample.function_span, prediction
                    )
                    outcome = evaluation.pass_rate(sample, completed, ws, args.timeout)
                pr = int(outcome.passed)
                timed_out = outcome.timed_out
            eval_records.append(
                evaluation.EvalRecord(
                    sample_id=sample.sample_id,
                    mode=record["mode"],
                    iteration=idx,
                    em=em,
                    es=es,
                    pr=pr,
                    wall_time_ms=int((time.monotonic() - started) * 1000),
                    repo=sample.repo,
                    timed_out=timed_out,
                )
            )

    report = evaluation.aggregate(eval_records)
    print(evaluation.render_text_table(report))
    if args.out:
        payload = evaluation.report_to_json(report, header.get("manifest"))
        args.out.write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    if args.csv:
        args.csv.write_text(evaluation.render_csv(report), encoding="utf-8")
    if args.records:
        with args.records.open("w", encoding="utf-8") as fh:
            for rec in eval_records:
                fh.write(json.dumps(asdict(rec), ensure_ascii=False) + "\n")
    return EXIT_OK


def _load_sample_id_filter(path: Path) -> set[str]:
    text = path.read_text(encoding="utf-8")
    try:
        parsed = json.loads(text)
        if isinstance(parsed, list):
            return {str(x) for x in parsed}
    except json.JSONDecodeError:
        pass
    return {line.strip() for line in text.split("\n") if line.strip()}


def cmd_analyze_locations(args) -> int:
    include, exclude = _globs(args)
    samples = {s.sample_id: s for s in dataset.load_samples(args.dataset)}
    _, records = pipeline.load_trace_records(args.traces)
    graph = analysis.build_import_graph(args.repo, include, exclude)
    keep: set[str] | None = None
    if args.sample_ids:
        keep = _load_sample_id_filter(args.sample_ids)
    labeled: list[set[str]] = []
    seen_samples: set[str] = set()
    for record in records:
        sample = samples.get(record["sample_id"])
        if sample is None:
            raise DataError(f"trace references unknown sample {record['sample_id']}")
        if keep is not None and sample.sample_id not in keep:
            continue
        seen_samples.add(sample.sample_id)
        for entry in record["iterations"]:
            for hit in entry["retrieved"]:
                labeled.append(
                    analysis.classify_location(hit["path"], sample.file, graph)
                )
    summary = analysis.summarize_locations(labeled, len(seen_samples))
    payload = {
        "schema": 1,
        "kind": "locations",
        "snippets": summary.snippet_count,
        "samples": summary.sample_count,
        "label_pct": {k: round(v, 4) for k, v in summary.label_pct.items()},
    }
    for label in analysis.LOCATION_LABELS:
        print(f"{label:<20} {summary.label_pct[label]:6.2f}%")
    if args.out:
        args.out.write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    return EXIT_OK


def cmd_analyze_duplication(args) -> int:
    include, exclude = _globs(args)
    ratio = analysis.duplication_ratio(args.repo, include, exclude)
    print(f"duplication ratio: {ratio:.4f}")
    if args.out:
        payload = {"schema": 1, "kind": "duplication", "ratio": round(ratio, 6)}
        args.out.write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    return EXIT_OK


def cmd_analyze_recall(args) -> int:
    include, exclude = _globs(args)
    samples = {s.sample_id: s for s in dataset.load_samples(args.dataset)}
    _, records = pipeline.load_trace_records(args.traces)
    api_index = dataset.collect_api_index(args.repo, include, exclude)
    hits: dict[int, int] = {}
    counted = 0
    unresolved: list[str] = []
    for record in records:
        sample = samples.get(record["sample_id"])
        if sample is None:
            raise DataError(f"trace references unknown sample {record['sample_id']}")
        if sample.task_kind != "api":
            continue
        callee = analysis.resolve_sample_api(sample, api_index)
        if callee is None:
            unresolved.append(sample.sample_id)
            continue
        sites = api_index.sites_for(callee)
        spans = {
            idx: [(h["path"], h["start"], h["end"]) for h in entry["retrieved"]]
            for idx, entry in enumerate(record["iterations"], start=1)
        }
        recall = analysis.recall_from_spans(spans, sample, sites)
        counted += 1
        for iteration, value in recall.items():
            hits[iteration] = hits.get(iteration, 0) + value
    recall_pct = {
        str(iteration): round(hits[iteration] / counted * 100.0, 4)
        for iteration in sorted(hits)
    } if counted else {}
    for iteration, pct in recall_pct.items():
        print(f"iteration {iteration}: gt-api recall {pct:6.2f}%")
    if unresolved:
        sys.stderr.write(
            f"warning: {len(unresolved)} api samples could not be resolved "
            f"(first: {unresolved[0]})\n"
        )
    if args.out:
        payload = {
            "schema": 1,
            "kind": "recall",
            "samples": counted,
            "unresolved": len(unresolved),
            "recall_pct": recall_pct,
        }
        args.out.write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DataError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except (BackendError, ConfigError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
