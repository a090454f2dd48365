"""Iterative retrieval-augmented completion over a snippet index.

One sample flows as: mask the index so nothing at or below the cut can
leak, build a retrieval query from the tail of the unfinished code (on
later iterations spliced with the previous prediction), rank snippets,
render them as comment blocks ahead of the unfinished code under a token
budget, and ask the generator for a continuation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .errors import BackendError, DataError
from .generation import Generator, estimate_tokens
from .prompts import assemble_prompt, render_snippet_block
from .repo_index import SnippetIndex, exclusion_mask
from .retrieval import RetrievalQuery, ScoredSnippet, retrieve

logger = logging.getLogger(__name__)

MODES = ("infile", "rag_oracle", "repocoder")

TokenCounter = Callable[[str], int]
Retriever = Callable[[SnippetIndex, RetrievalQuery, int], list[ScoredSnippet]]


class SampleLike(Protocol):
    sample_id: str
    file: str
    cut_line: int
    ground_truth: str
    task_kind: str


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for one run. Defaults fit single-line and API completion;
    for_task() switches to the longer-form function settings."""

    window_lines: int = 20          # query/window height S_w
    slide_lines: int = 10           # window advance and splice depth S_s
    k_snippets: int = 10
    max_iterations: int = 2
    total_token_budget: int = 4096
    max_generation_tokens: int = 100
    retrieval_context_fraction: float = 0.5

    def __post_init__(self) -> None:
        if not (1 <= self.slide_lines <= self.window_lines):
            raise ValueError("need 1 <= slide_lines <= window_lines")
        if self.k_snippets < 1:
            raise ValueError("k_snippets must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0.0 <= self.retrieval_context_fraction <= 1.0):
            raise ValueError("retrieval_context_fraction must be in [0, 1]")
        if self.max_generation_tokens < 1:
            raise ValueError("max_generation_tokens must be >= 1")
        if self.total_token_budget <= self.max_generation_tokens:
            raise ValueError("total_token_budget must exceed max_generation_tokens")

    @classmethod
    def for_task(cls, task_kind: str, total_token_budget: int = 4096, **overrides):
        if task_kind in ("line", "api"):
            base = dict(max_generation_tokens=100, window_lines=20, slide_lines=10)
        elif task_kind == "function":
            base = dict(max_generation_tokens=500, window_lines=50, slide_lines=10)
        else:
            raise ValueError(f"unknown task kind: {task_kind!r}")
        base["total_token_budget"] = total_token_budget
        base.update(overrides)
        return cls(**base)


def stop_sequences_for(task_kind: str) -> list[str] | None:
    """Blank line ends line/api completions; function bodies run to budget."""
    if task_kind in ("line", "api"):
        return ["\n\n"]
    return None


def build_query(
    unfinished: str,
    prev_prediction: str | None,
    cfg: PipelineConfig,
    *,
    iteration: int | None = None,
    origin: str | None = None,
) -> RetrievalQuery:
    """First iteration: the last window_lines lines of the unfinished code.
    Later iterations: the last (window_lines - slide_lines) lines of the
    unfinished code followed by the first slide_lines lines of the previous
    prediction. Passing ground truth with origin="oracle" yields the
    oracle's single-shot query."""
    if not unfinished:
        raise ValueError("unfinished code must be non-empty")
    x_lines = unfinished.splitlines()
    if prev_prediction is None:
        text = "\n".join(x_lines[-cfg.window_lines :])
        return RetrievalQuery.from_text(
            text, iteration=iteration or 1, origin=origin or "infile_only"
        )
    keep = cfg.window_lines - cfg.slide_lines
    head = x_lines[len(x_lines) - keep :] if keep > 0 else []
    tail = prev_prediction.splitlines()[: cfg.slide_lines]
    text = "\n".join(head + tail)
    return RetrievalQuery.from_text(
        text, iteration=iteration or 2, origin=origin or "model_augmented"
    )


@dataclass
class PromptBundle:
    """A rendered prompt plus everything needed to audit it."""

    retrieved: list[ScoredSnippet]      # ascending score, most similar last
    infile_context: str
    rendered: str
    token_estimate: int
    retrieved_token_estimate: int


def _longest_fitting_suffix(x_lines: list[str], budget: int, counter: TokenCounter) -> list[str]:
    if budget <= 0 or not x_lines:
        return []
    if counter("\n".join(x_lines)) <= budget:
        return list(x_lines)
    # binary search the longest suffix whose estimate fits the budget
    best = 0
    low, high = 1, len(x_lines)
    while low <= high:
        mid = (low + high) // 2
        if counter("\n".join(x_lines[len(x_lines) - mid :])) <= budget:
            best = mid
            low = mid + 1
        else:
            high = mid - 1
    return x_lines[len(x_lines) - best :] if best else []


def build_prompt(
    retrieved: list[ScoredSnippet],
    unfinished: str,
    cfg: PipelineConfig,
    counter: TokenCounter = estimate_tokens,
) -> PromptBundle:
    """Greedy snippet packing plus the longest unfinished-code suffix.

    Snippets are taken most similar first until k_snippets or the retrieval
    share of the budget is exhausted, then laid out in ascending similarity
    so the best match sits adjacent to the unfinished code. The final
    rendered estimate plus max_generation_tokens never exceeds the budget.
    """
    retrieval_budget = int(cfg.total_token_budget * cfg.retrieval_context_fraction)
    chosen: list[ScoredSnippet] = []
    blocks: list[str] = []
    used = 0
    for scored in retrieved:
        if len(chosen) == cfg.k_snippets:
            break
        block = render_snippet_block(scored.snippet.source, scored.snippet.text)
        cost = counter(block) + 1  # +1 covers the blank-line join
        if used + cost > retrieval_budget:
            break
        chosen.append(scored)
        blocks.append(block)
        used += cost
    # ascending order: least similar first, best match adjacent to the code
    chosen.reverse()
    blocks.reverse()

    x_lines = unfinished.split("\n")
    suffix_budget = cfg.total_token_budget - cfg.max_generation_tokens - used
    suffix_lines = _longest_fitting_suffix(x_lines, suffix_budget, counter)

    def render() -> str:
        return assemble_prompt(blocks, "\n".join(suffix_lines))

    rendered = render()
    # The estimator only guarantees estimate(a+b) <= estimate(a)+estimate(b)+1,
    # so verify the final rendering and shed content until the hard cap holds.
    while suffix_lines or blocks:
        if counter(rendered) + cfg.max_generation_tokens <= cfg.total_token_budget:
            break
        if suffix_lines:
            suffix_lines.pop(0)
        else:
            blocks.pop(0)
            chosen.pop(0)
        rendered = render()

    retrieved_text = "\n\n".join(blocks)
    return PromptBundle(
        retrieved=chosen,
        infile_context="\n".join(suffix_lines),
        rendered=rendered,
        token_estimate=counter(rendered),
        retrieved_token_estimate=counter(retrieved_text) if blocks else 0,
    )


@dataclass
class IterationTrace:
    iteration: int
    query: RetrievalQuery
    retrieved: list[ScoredSnippet]      # ranking order, most similar first
    prompt: PromptBundle
    prediction: str

    def to_record(self) -> dict:
        return {
            "query": self.query.text,
            "retrieved": [
                {
                    "path": s.snippet.source,
                    "start": s.snippet.start_line,
                    "end": s.snippet.end_line,
                    "score": round(s.score, 6),
                }
                for s in self.retrieved
            ],
            "prompt_tokens": self.prompt.token_estimate,
            "prediction": self.prediction,
        }


@dataclass
class SampleResult:
    sample_id: str
    mode: str
    traces: list[IterationTrace] = field(default_factory=list)
    error: str | None = None

    def to_record(self) -> dict:
        record = {
            "sample_id": self.sample_id,
            "mode": self.mode,
            "iterations": [t.to_record() for t in self.traces],
        }
        if self.error is not None:
            record["error"] = self.error
        return record

    def to_json_line(self) -> str:
        return json.dumps(self.to_record(), ensure_ascii=False)


TRACES_SCHEMA = 1


def trace_header(manifest_fingerprint: str | None = None) -> dict:
    header: dict[str, object] = {"schema": TRACES_SCHEMA, "kind": "traces"}
    if manifest_fingerprint:
        header["manifest"] = manifest_fingerprint
    return header


def validate_trace_record(obj: object) -> dict:
    """Shape-check one parsed traces line; raises ValueError on violations."""
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    for key in ("sample_id", "mode", "iterations"):
        if key not in obj:
            raise ValueError(f"missing key {key!r}")
    if obj["mode"] not in MODES:
        raise ValueError(f"unknown mode {obj['mode']!r}")
    if not isinstance(obj["iterations"], list):
        raise ValueError("iterations is not a list")
    for entry in obj["iterations"]:
        if not isinstance(entry, dict):
            raise ValueError("iteration entry is not an object")
        for key in ("query", "retrieved", "prompt_tokens", "prediction"):
            if key not in entry:
                raise ValueError(f"iteration entry missing {key!r}")
        for hit in entry["retrieved"]:
            for key in ("path", "start", "end", "score"):
                if key not in hit:
                    raise ValueError(f"retrieved entry missing {key!r}")
    return obj


def load_trace_records(path) -> tuple[dict, list[dict]]:
    """Read a traces JSONL file: (header, records). Malformed lines raise
    DataError naming the line number."""
    src = Path(path)
    if not src.is_file():
        raise DataError(f"traces file not found: {src}")
    with src.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise DataError(f"{src}: line 1 is not valid JSON: {exc}") from exc
        if not isinstance(header, dict) or header.get("schema") != TRACES_SCHEMA:
            raise DataError(f"{src}: missing or unsupported traces header")
        records = []
        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            try:
                records.append(validate_trace_record(json.loads(raw)))
            except (ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"{src}: bad trace record on line {lineno}: {exc}") from exc
    return header, records


def _empty_query(iteration: int = 1) -> RetrievalQuery:
    return RetrievalQuery(text="", token_set=frozenset(), iteration=iteration)


def run_sample(
    sample: SampleLike,
    index: SnippetIndex,
    retriever: Retriever | None,
    generator: Generator,
    cfg: PipelineConfig,
    mode: str,
) -> SampleResult:
    """Run one sample in one mode and return its per-iteration traces.

    infile: no retrieval, single shot. rag_oracle: one retrieval whose query
    splices in the ground truth head. repocoder: max_iterations rounds where
    iteration i > 1 queries with the previous prediction. A generator
    failure mid-loop keeps the completed traces and records the error.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode: {mode!r} (expected one of {MODES})")
    if sample.file not in index.paths():
        raise DataError(f"sample {sample.sample_id}: file not in index: {sample.file}")
    retriever = retriever or retrieve
    unfinished = index.unfinished_code(sample.file, sample.cut_line)
    if not unfinished:
        raise DataError(f"sample {sample.sample_id}: empty context above cut line")
    view = exclusion_mask(index, sample.file, sample.cut_line)
    stop = stop_sequences_for(sample.task_kind)
    result = SampleResult(sample_id=sample.sample_id, mode=mode)

    def generate(prompt: PromptBundle) -> str:
        return generator.complete(
            prompt.rendered,
            cfg.max_generation_tokens,
            stop,
            sample_id=sample.sample_id,
        )

    try:
        if mode == "infile":
            prompt = build_prompt([], unfinished, cfg, generator.count_tokens)
            prediction = generate(prompt)
            result.traces.append(
                IterationTrace(1, _empty_query(), [], prompt, prediction)
            )
        elif mode == "rag_oracle":
            query = build_query(
                unfinished, sample.ground_truth, cfg, iteration=1, origin="oracle"
            )
            ranked = retriever(view, query, cfg.k_snippets)
            prompt = build_prompt(ranked, unfinished, cfg, generator.count_tokens)
            prediction = generate(prompt)
            result.traces.append(IterationTrace(1, query, ranked, prompt, prediction))
        else:
            prediction: str | None = None
            for iteration in range(1, cfg.max_iterations + 1):
                query = build_query(
                    unfinished,
                    prediction if iteration > 1 else None,
                    cfg,
                    iteration=iteration,
                )
                ranked = retriever(view, query, cfg.k_snippets)
                prompt = build_prompt(ranked, unfinished, cfg, generator.count_tokens)
                prediction = generate(prompt)
                result.traces.append(
                    IterationTrace(iteration, query, ranked, prompt, prediction)
                )
    except BackendError as exc:
        result.error = str(exc)
        logger.warning("sample %s failed mid-run: %s", sample.sample_id, exc)
    return result
