"""Benchmark sample extraction and the dataset JSONL format.

Three task kinds are carved out of a repository snapshot:
  line      complete one non-trivial source line
  api       complete an invocation of a function defined in the same repo
  function  complete a whole function body (paired with a test command)

Extraction is seeded and deterministic; identical seeds produce identical
files byte for byte.
"""

from __future__ import annotations

import ast
import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError
from .repo_index import DEFAULT_INCLUDE, SourceFile, discover_files, tokenize

logger = logging.getLogger(__name__)

TASK_KINDS = ("line", "api", "function")

DATASET_SCHEMA = 1
MIN_LINE_TOKENS = 5
MIN_FUNCTION_BODY_LINES = 3
MAX_FUNCTION_BODY_LINES = 30


@dataclass(frozen=True)
class CompletionSample:
    """One benchmark hole: everything above cut_line is context, the ground
    truth is what was removed."""

    sample_id: str
    repo: str
    file: str
    cut_line: int
    ground_truth: str
    task_kind: str
    function_span: tuple[int, int] | None = None
    test_command: str | None = None

    def __post_init__(self) -> None:
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind: {self.task_kind!r}")
        if not self.ground_truth.strip():
            raise ValueError(f"sample {self.sample_id}: empty ground truth")
        if self.cut_line < 2:
            raise ValueError(
                f"sample {self.sample_id}: cut_line must leave context above it"
            )
        if self.task_kind == "function" and self.function_span is None:
            raise ValueError(f"sample {self.sample_id}: function sample needs a span")

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "repo": self.repo,
            "file": self.file,
            "cut_line": self.cut_line,
            "ground_truth": self.ground_truth,
            "task_kind": self.task_kind,
            "function_span": list(self.function_span) if self.function_span else None,
            "test_command": self.test_command,
        }

    @classmethod
    def from_record(cls, obj: dict) -> "CompletionSample":
        span = obj.get("function_span")
        return cls(
            sample_id=obj["sample_id"],
            repo=obj["repo"],
            file=obj["file"],
            cut_line=int(obj["cut_line"]),
            ground_truth=obj["ground_truth"],
            task_kind=obj["task_kind"],
            function_span=(int(span[0]), int(span[1])) if span else None,
            test_command=obj.get("test_command"),
        )


@dataclass(frozen=True)
class ApiDefinition:
    """A function or method defined inside the repository."""

    name: str
    qualified_name: str
    def_file: str
    def_line: int
    body_start: int
    body_end: int


@dataclass(frozen=True)
class CallSite:
    """One resolved invocation of an in-repo API."""

    file: str
    start_line: int
    end_line: int
    callee: str          # qualified name of the ApiDefinition
    text: str            # full invocation expression, possibly multi-line
    col_offset: int


def is_comment_line(line: str) -> bool:
    return line.lstrip().startswith("#")


def is_eligible_line(line: str) -> bool:
    """Line-task candidate: non-blank, not a comment, and carrying at least
    MIN_LINE_TOKENS distinct tokens so trivial lines never become samples."""
    if not line.strip() or is_comment_line(line):
        return False
    return len(tokenize(line)) >= MIN_LINE_TOKENS


def _has_context_above(src: SourceFile, cut_line: int) -> bool:
    return any(l.strip() for l in src.lines[: cut_line - 1])


def _repo_name(repo_root: Path) -> str:
    name = Path(repo_root).resolve().name
    return name or "repo"


def extract_line_samples(
    repo_root: Path,
    n: int,
    seed: int,
    include_globs: tuple[str, ...] = DEFAULT_INCLUDE,
    exclude_globs: tuple[str, ...] = (),
) -> list[CompletionSample]:
    """Uniformly sample up to n eligible lines (seeded, duplicate texts
    collapsed). Fewer than n eligible lines yields all of them plus a
    warning, not an error."""
    if n < 1:
        raise ValueError("n must be >= 1")
    files, _ = discover_files(repo_root, include_globs, exclude_globs)
    repo = _repo_name(repo_root)
    candidates: list[tuple[SourceFile, int, str]] = []
    for src in files:
        for lineno, text in enumerate(src.lines, start=1):
            if lineno < 2 or not is_eligible_line(text):
                continue
            if not _has_context_above(src, lineno):
                continue
            candidates.append((src, lineno, text))
    order = list(range(len(candidates)))
    random.Random(seed).shuffle(order)
    samples: list[CompletionSample] = []
    seen_texts: set[str] = set()
    for idx in order:
        src, lineno, text = candidates[idx]
        key = text.strip()
        if key in seen_texts:
            continue
        seen_texts.add(key)
        samples.append(
            CompletionSample(
                sample_id=f"line:{src.path}:{lineno}",
                repo=repo,
                file=src.path,
                cut_line=lineno,
                ground_truth=text,
                task_kind="line",
            )
        )
        if len(samples) == n:
            break
    if len(samples) < n:
        logger.warning(
            "requested %d line samples but only %d eligible lines exist", n, len(samples)
        )
    return samples


def _module_name(rel_path: str) -> tuple[str, bool]:
    """Dotted module for a repo-relative path; flag marks __init__ modules."""
    parts = rel_path[: -len(".py")].split("/")
    if parts[-1] == "__init__":
        return ".".join(parts[:-1]), True
    return ".".join(parts), False


@dataclass
class _FileFacts:
    src: SourceFile
    tree: ast.AST
    module: str
    is_package: bool
    text: str
    alias_modules: dict[str, str]            # local name -> imported module
    alias_symbols: dict[str, tuple[str, str]]  # local name -> (module, symbol)


def _resolve_relative(module: str, is_package: bool, level: int, target: str | None) -> str:
    parts = module.split(".") if module else []
    if not is_package and parts:
        parts = parts[:-1]
    drop = level - 1
    if drop:
        parts = parts[: max(len(parts) - drop, 0)]
    if target:
        parts = parts + target.split(".")
    return ".".join(parts)


def _collect_imports(facts: _FileFacts) -> None:
    for node in ast.walk(facts.tree):
        if isinstance(node, ast.Import):
            for alias in node.names:
                if alias.asname:
                    facts.alias_modules[alias.asname] = alias.name
                else:
                    # "import a.b" binds only "a"; dotted attribute chains
                    # deeper than one level are not resolved
                    top = alias.name.split(".")[0]
                    facts.alias_modules[top] = top
        elif isinstance(node, ast.ImportFrom):
            if node.level:
                base = _resolve_relative(
                    facts.module, facts.is_package, node.level, node.module
                )
            else:
                base = node.module or ""
            if not base:
                continue
            for alias in node.names:
                if alias.name == "*":
                    continue
                local = alias.asname or alias.name
                facts.alias_symbols[local] = (base, alias.name)


@dataclass
class ApiIndex:
    """Repository-wide view of in-repo function definitions and the call
    sites that resolve to them through imports."""

    defs: dict[str, ApiDefinition]
    call_sites: list[CallSite]
    module_files: dict[str, str]
    imports_by_file: dict[str, set[str]]
    warnings: list[str]

    def sites_for(self, qualified_name: str) -> list[CallSite]:
        return [c for c in self.call_sites if c.callee == qualified_name]


def _collect_defs(facts: _FileFacts, defs: dict[str, ApiDefinition]) -> None:
    for node in facts.tree.body:  # type: ignore[attr-defined]
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            _add_def(facts, defs, node, facts.module)
        elif isinstance(node, ast.ClassDef):
            for item in node.body:
                if isinstance(item, (ast.FunctionDef, ast.AsyncFunctionDef)):
                    _add_def(facts, defs, item, f"{facts.module}.{node.name}")


def _add_def(
    facts: _FileFacts,
    defs: dict[str, ApiDefinition],
    node: ast.FunctionDef | ast.AsyncFunctionDef,
    scope: str,
) -> None:
    body_start = node.body[0].lineno
    body_end = node.body[-1].end_lineno or body_start
    qualified = f"{scope}.{node.name}"
    defs[qualified] = ApiDefinition(
        name=node.name,
        qualified_name=qualified,
        def_file=facts.src.path,
        def_line=node.lineno,
        body_start=body_start,
        body_end=body_end,
    )


def _resolve_call(facts: _FileFacts, node: ast.Call, defs: dict[str, ApiDefinition]) -> str | None:
    func = node.func
    if isinstance(func, ast.Name):
        mapped = facts.alias_symbols.get(func.id)
        if mapped:
            qualified = f"{mapped[0]}.{mapped[1]}"
            return qualified if qualified in defs else None
        local = f"{facts.module}.{func.id}"
        return local if local in defs else None
    if isinstance(func, ast.Attribute) and isinstance(func.value, ast.Name):
        base = facts.alias_modules.get(func.value.id)
        if base:
            qualified = f"{base}.{func.attr}"
            return qualified if qualified in defs else None
        # "from pkg import mod" then mod.f(...): the symbol is a module
        mapped = facts.alias_symbols.get(func.value.id)
        if mapped:
            qualified = f"{mapped[0]}.{mapped[1]}.{func.attr}"
            return qualified if qualified in defs else None
    return None  # receiver types are never inferred; stay conservative


def collect_api_index(
    repo_root: Path,
    include_globs: tuple[str, ...] = DEFAULT_INCLUDE,
    exclude_globs: tuple[str, ...] = (),
) -> ApiIndex:
    files, warnings = discover_files(repo_root, include_globs, exclude_globs)
    all_facts: list[_FileFacts] = []
    for src in files:
        if src.language_tag != "python":
            continue
        text = "\n".join(src.lines)
        try:
            tree = ast.parse(text)
        except SyntaxError as exc:
            warnings.append(f"skipped unparsable file {src.path}: {exc}")
            logger.warning("skipped unparsable file %s: %s", src.path, exc)
            continue
        module, is_package = _module_name(src.path)
        facts = _FileFacts(
            src=src,
            tree=tree,
            module=module,
            is_package=is_package,
            text=text,
            alias_modules={},
            alias_symbols={},
        )
        _collect_imports(facts)
        all_facts.append(facts)

    defs: dict[str, ApiDefinition] = {}
    module_files: dict[str, str] = {}
    for facts in all_facts:
        module_files[facts.module] = facts.src.path
        _collect_defs(facts, defs)

    call_sites: list[CallSite] = []
    imports_by_file: dict[str, set[str]] = {}
    for facts in all_facts:
        imported = {m for m in facts.alias_modules.values()}
        imported.update(f"{m}.{s}" for m, s in facts.alias_symbols.values())
        imports_by_file[facts.src.path] = imported
        for node in ast.walk(facts.tree):
            if not isinstance(node, ast.Call):
                continue
            callee = _resolve_call(facts, node, defs)
            if callee is None:
                continue
            segment = ast.get_source_segment(facts.text, node)
            if segment is None:
                continue
            call_sites.append(
                CallSite(
                    file=facts.src.path,
                    start_line=node.lineno,
                    end_line=node.end_lineno or node.lineno,
                    callee=callee,
                    text=segment,
                    col_offset=node.col_offset,
                )
            )
    call_sites.sort(key=lambda c: (c.file, c.start_line, c.col_offset))
    return ApiIndex(
        defs=defs,
        call_sites=call_sites,
        module_files=module_files,
        imports_by_file=imports_by_file,
        warnings=warnings,
    )


def _sampleable_call(site: CallSite, src: SourceFile) -> bool:
    """Only calls that own their whole line span become samples: nothing but
    whitespace before the call on its first line and nothing after it on its
    last, so context + indentation + ground truth reconstructs the region."""
    first = src.lines[site.start_line - 1]
    if first[: site.col_offset].strip():
        return False
    last = src.lines[site.end_line - 1]
    segment_last = site.text.split("\n")[-1]
    if site.start_line == site.end_line:
        expected = first[: site.col_offset] + segment_last
    else:
        expected = segment_last
    return last.rstrip() == expected.rstrip()


def extract_api_samples(
    repo_root: Path,
    n: int,
    seed: int,
    include_globs: tuple[str, ...] = DEFAULT_INCLUDE,
    exclude_globs: tuple[str, ...] = (),
) -> list[CompletionSample]:
    """Sample invocations of in-repo functions (seeded, duplicate invocation
    texts collapsed). Ground truth is the full invocation expression."""
    if n < 1:
        raise ValueError("n must be >= 1")
    files, _ = discover_files(repo_root, include_globs, exclude_globs)
    by_path = {f.path: f for f in files}
    api_index = collect_api_index(repo_root, include_globs, exclude_globs)
    repo = _repo_name(repo_root)
    candidates = []
    for site in api_index.call_sites:
        src = by_path.get(site.file)
        if src is None or site.start_line < 2:
            continue
        if not _sampleable_call(site, src):
            continue
        if not _has_context_above(src, site.start_line):
            continue
        candidates.append(site)
    order = list(range(len(candidates)))
    random.Random(seed).shuffle(order)
    samples: list[CompletionSample] = []
    seen_texts: set[str] = set()
    for idx in order:
        site = candidates[idx]
        if site.text in seen_texts:
            continue
        seen_texts.add(site.text)
        samples.append(
            CompletionSample(
                sample_id=f"api:{site.file}:{site.start_line}",
                repo=repo,
                file=site.file,
                cut_line=site.start_line,
                ground_truth=site.text,
                task_kind="api",
            )
        )
        if len(samples) == n:
            break
    if len(samples) < n:
        logger.warning(
            "requested %d api samples but only %d usable call sites exist",
            n,
            len(samples),
        )
    return samples


def extract_function_samples(
    repo_root: Path,
    test_map: dict[str, str],
    seed: int = 0,
    include_globs: tuple[str, ...] = DEFAULT_INCLUDE,
    exclude_globs: tuple[str, ...] = (),
) -> list[CompletionSample]:
    """One sample per mapped function whose body is 3..30 physical lines.

    test_map maps qualified function names to shell commands that exit 0
    when the completed repository behaves. Unknown names are an error; seed
    is accepted for interface symmetry (selection is exhaustive, not
    sampled)."""
    del seed
    files, _ = discover_files(repo_root, include_globs, exclude_globs)
    by_path = {f.path: f for f in files}
    api_index = collect_api_index(repo_root, include_globs, exclude_globs)
    missing = sorted(set(test_map) - set(api_index.defs))
    if missing:
        raise DataError(
            "test map references functions not found in the repository: "
            + ", ".join(missing)
        )
    repo = _repo_name(repo_root)
    samples: list[CompletionSample] = []
    for qualified in sorted(test_map):
        definition = api_index.defs[qualified]
        body_lines = definition.body_end - definition.body_start + 1
        if not (MIN_FUNCTION_BODY_LINES <= body_lines <= MAX_FUNCTION_BODY_LINES):
            logger.info(
                "skipping %s: body is %d lines, outside %d..%d",
                qualified,
                body_lines,
                MIN_FUNCTION_BODY_LINES,
                MAX_FUNCTION_BODY_LINES,
            )
            continue
        src = by_path[definition.def_file]
        ground_truth = "\n".join(
            src.lines[definition.body_start - 1 : definition.body_end]
        )
        samples.append(
            CompletionSample(
                sample_id=f"function:{definition.def_file}:{definition.body_start}",
                repo=repo,
                file=definition.def_file,
                cut_line=definition.body_start,
                ground_truth=ground_truth,
                task_kind="function",
                function_span=(definition.body_start, definition.body_end),
                test_command=test_map[qualified],
            )
        )
    return samples


def save_samples(
    samples: list[CompletionSample], path: Path, manifest_fingerprint: str | None = None
) -> None:
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate sample_id in dataset")
    header: dict[str, object] = {"schema": DATASET_SCHEMA, "kind": "dataset"}
    if manifest_fingerprint:
        header["manifest"] = manifest_fingerprint
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for sample in samples:
            fh.write(json.dumps(sample.to_record(), ensure_ascii=False) + "\n")


def load_samples(path: Path) -> list[CompletionSample]:
    src = Path(path)
    if not src.is_file():
        raise DataError(f"dataset file not found: {src}")
    samples: list[CompletionSample] = []
    with src.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise DataError(f"{src}: line 1 is not valid JSON: {exc}") from exc
        if not isinstance(header, dict) or header.get("schema") != DATASET_SCHEMA:
            raise DataError(f"{src}: missing or unsupported schema header")
        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            try:
                samples.append(CompletionSample.from_record(json.loads(raw)))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"{src}: bad sample record on line {lineno}: {exc}") from exc
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise DataError(f"{src}: duplicate sample_id")
    return samples
