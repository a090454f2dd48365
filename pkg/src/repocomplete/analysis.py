"""Post-hoc analyses: where retrieved context comes from, whether the
ground-truth API's definition or usages were ever surfaced, and how
repetitive a repository is.
"""

from __future__ import annotations

import ast
import logging
import re
from dataclasses import dataclass
from pathlib import Path, PurePosixPath

from .dataset import ApiIndex, CallSite, CompletionSample, collect_api_index
from .pipeline import IterationTrace
from .repo_index import DEFAULT_INCLUDE, discover_files

logger = logging.getLogger(__name__)

LOCATION_LABELS = (
    "imported",
    "current_file",
    "current_directory",
    "similar_import",
    "similar_name",
    "others",
)


@dataclass
class ImportGraph:
    """Per-file import facts plus the map from dotted modules to repo files."""

    imported_names: dict[str, set[str]]   # file -> {"mod", "mod.symbol", ...}
    module_files: dict[str, str]          # dotted module -> file

    def files_imported_by(self, path: str) -> set[str]:
        """Repo files whose module is imported (directly or via a symbol)
        from the given file."""
        resolved: set[str] = set()
        for name in self.imported_names.get(path, ()):  # "a.b" or "a.b.sym"
            parts = name.split(".")
            # try the full dotted name as a module, then its parent (the
            # symbol case): both spellings appear in imported_names
            for depth in (len(parts), len(parts) - 1):
                if depth < 1:
                    continue
                module = ".".join(parts[:depth])
                target = self.module_files.get(module)
                if target:
                    resolved.add(target)
        return resolved


def build_import_graph(
    repo_root: Path,
    include_globs: tuple[str, ...] = DEFAULT_INCLUDE,
    exclude_globs: tuple[str, ...] = (),
) -> ImportGraph:
    """Import facts via the same conservative resolution the API extractor
    uses; files that fail to parse contribute empty sets."""
    api_index = collect_api_index(repo_root, include_globs, exclude_globs)
    return import_graph_from_api_index(api_index)


def import_graph_from_api_index(api_index: ApiIndex) -> ImportGraph:
    return ImportGraph(
        imported_names=dict(api_index.imports_by_file),
        module_files=dict(api_index.module_files),
    )


_NAME_SPLIT = re.compile(r"[^A-Za-z0-9]+")


def _stem_tokens(path: str) -> set[str]:
    stem = PurePosixPath(path).stem
    return {t.lower() for t in _NAME_SPLIT.split(stem) if t}


def classify_location(snippet_path: str, target_path: str, graph: ImportGraph) -> set[str]:
    """Non-exclusive origin labels for one retrieved snippet.

    imported: the snippet's file is imported by the target file.
    current_file / current_directory: path identity and shared parent.
    similar_import: the two files import at least one common name.
    similar_name: the file stems share a word (split on non-alphanumerics).
    others: none of the above applied.
    """
    labels: set[str] = set()
    if snippet_path == target_path:
        labels.add("current_file")
    if PurePosixPath(snippet_path).parent == PurePosixPath(target_path).parent:
        labels.add("current_directory")
    if snippet_path in graph.files_imported_by(target_path):
        labels.add("imported")
    shared = graph.imported_names.get(target_path, set()) & graph.imported_names.get(
        snippet_path, set()
    )
    if shared:
        labels.add("similar_import")
    if _stem_tokens(snippet_path) & _stem_tokens(target_path):
        labels.add("similar_name")
    if not labels:
        labels.add("others")
    return labels


@dataclass
class LocationSummary:
    snippet_count: int
    sample_count: int
    label_pct: dict[str, float]


def summarize_locations(
    labeled: list[set[str]], sample_count: int
) -> LocationSummary:
    """Percentage of snippets carrying each label. Labels are non-exclusive,
    so the column can sum past 100."""
    total = len(labeled)
    pct = {}
    for label in LOCATION_LABELS:
        hits = sum(1 for labels in labeled if label in labels)
        pct[label] = (hits / total * 100.0) if total else 0.0
    return LocationSummary(snippet_count=total, sample_count=sample_count, label_pct=pct)


def _span_overlaps(start: int, end: int, site: CallSite) -> bool:
    return start <= site.end_line and site.start_line <= end


def eligible_recall_sites(
    sample: CompletionSample, call_sites: list[CallSite]
) -> list[CallSite]:
    """Call sites that could legitimately be retrieved: everything except
    sites inside the hole itself (target file at or past the cut)."""
    return [
        site
        for site in call_sites
        if not (site.file == sample.file and site.end_line >= sample.cut_line)
    ]


def recall_from_spans(
    spans_by_iteration: dict[int, list[tuple[str, int, int]]],
    sample: CompletionSample,
    call_sites: list[CallSite],
) -> dict[int, int]:
    """1 when any retrieved span of that iteration overlaps any eligible
    call site of the ground-truth API, else 0."""
    eligible = eligible_recall_sites(sample, call_sites)
    out: dict[int, int] = {}
    for iteration, spans in sorted(spans_by_iteration.items()):
        hit = any(
            path == site.file and _span_overlaps(start, end, site)
            for (path, start, end) in spans
            for site in eligible
        )
        out[iteration] = int(hit)
    return out


def gt_api_recall(
    traces: list[IterationTrace],
    sample: CompletionSample,
    call_sites: list[CallSite],
) -> dict[int, int]:
    spans = {
        t.iteration: [
            (s.snippet.source, s.snippet.start_line, s.snippet.end_line)
            for s in t.retrieved
        ]
        for t in traces
    }
    return recall_from_spans(spans, sample, call_sites)


def resolve_sample_api(sample: CompletionSample, api_index: ApiIndex) -> str | None:
    """Qualified name of the API an api-task sample invokes, recovered from
    its own call-site record; None when it cannot be pinned down."""
    if sample.task_kind != "api":
        return None
    for site in api_index.call_sites:
        if (
            site.file == sample.file
            and site.start_line == sample.cut_line
            and site.text == sample.ground_truth
        ):
            return site.callee
    # fall back to matching the callee name textually
    try:
        call = ast.parse(sample.ground_truth.strip(), mode="eval").body
    except SyntaxError:
        return None
    if not isinstance(call, ast.Call):
        return None
    func = call.func
    name = func.attr if isinstance(func, ast.Attribute) else getattr(func, "id", None)
    if name is None:
        return None
    matches = sorted(q for q in api_index.defs if q.rsplit(".", 1)[-1] == name)
    return matches[0] if len(matches) == 1 else None


def duplication_ratio(
    repo_root: Path,
    include_globs: tuple[str, ...] = DEFAULT_INCLUDE,
    exclude_globs: tuple[str, ...] = (),
) -> float:
    """Share of non-blank lines whose stripped text occurs more than once
    across the whole repository. 0.0 for an empty repository; insensitive to
    file order and whitespace-only edits."""
    files, _ = discover_files(repo_root, include_globs, exclude_globs)
    counts: dict[str, int] = {}
    total = 0
    for src in files:
        for line in src.lines:
            stripped = line.strip()
            if not stripped:
                continue
            total += 1
            counts[stripped] = counts.get(stripped, 0) + 1
    if total == 0:
        return 0.0
    duplicated = sum(c for c in counts.values() if c >= 2)
    return duplicated / total
