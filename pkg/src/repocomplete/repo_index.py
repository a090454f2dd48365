"""Sliding-window snippet index over a repository snapshot.

Every source file is cut into fixed-size line windows (window_lines tall,
advancing slide_lines at a time) so that later stages can rank and stitch
repository context without re-reading the tree. Windows overlap whenever
slide_lines < window_lines; the final window of a file is clamped to the
file end and may be shorter.
"""

from __future__ import annotations

import fnmatch
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

logger = logging.getLogger(__name__)

_TOKEN_RUN = re.compile(r"[A-Za-z0-9_]+")

DEFAULT_INCLUDE = ("**/*.py",)


def tokenize(text: str) -> frozenset[str]:
    """Deduplicated maximal runs of [A-Za-z0-9_], case preserved."""
    return frozenset(_TOKEN_RUN.findall(text))


@dataclass(frozen=True)
class SourceFile:
    """One repository file, line-addressable. Lines are 1-based everywhere."""

    path: str
    lines: tuple[str, ...]
    language_tag: str = "other"

    @classmethod
    def from_text(cls, path: str, text: str) -> "SourceFile":
        # Round-trip rule: "\n".join(lines) reproduces the content modulo a
        # single trailing newline.
        if text.endswith("\n"):
            text = text[:-1]
        lines = tuple(text.split("\n")) if text else ("",)
        tag = "python" if path.endswith(".py") else "other"
        return cls(path=path, lines=lines, language_tag=tag)


@dataclass(frozen=True)
class CodeSnippet:
    """A contiguous line window of one file plus its token set."""

    source: str
    start_line: int
    end_line: int
    text: str
    token_set: frozenset[str]

    def __post_init__(self) -> None:
        if not (1 <= self.start_line <= self.end_line):
            raise ValueError(
                f"bad snippet span {self.start_line}..{self.end_line} in {self.source}"
            )

    @classmethod
    def from_lines(cls, source: str, start_line: int, lines: list[str]) -> "CodeSnippet":
        text = "\n".join(lines)
        return cls(
            source=source,
            start_line=start_line,
            end_line=start_line + len(lines) - 1,
            text=text,
            token_set=tokenize(text),
        )

    def key(self) -> tuple[str, int, int]:
        return (self.source, self.start_line, self.end_line)


@dataclass(frozen=True)
class IndexConfig:
    window_lines: int = 20
    slide_lines: int = 10
    include_globs: tuple[str, ...] = DEFAULT_INCLUDE
    exclude_globs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not (1 <= self.slide_lines <= self.window_lines):
            raise ValueError(
                f"need 1 <= slide_lines <= window_lines, got "
                f"slide={self.slide_lines} window={self.window_lines}"
            )


def _matches_any(rel_path: str, globs: tuple[str, ...]) -> bool:
    # fnmatch's "**" does not match zero path components, so "**/*.py" would
    # miss top-level files; try the pattern with the prefix stripped too.
    for pattern in globs:
        if fnmatch.fnmatch(rel_path, pattern):
            return True
        if pattern.startswith("**/") and fnmatch.fnmatch(rel_path, pattern[3:]):
            return True
    return False


def discover_files(
    repo_root: Path,
    include_globs: tuple[str, ...] = DEFAULT_INCLUDE,
    exclude_globs: tuple[str, ...] = (),
) -> tuple[list[SourceFile], list[str]]:
    """Read matching files under repo_root, sorted by relative path.

    Returns (files, warnings). Unreadable or non-UTF-8 files are skipped and
    reported in warnings instead of aborting the walk.
    """
    root = Path(repo_root)
    if not root.is_dir():
        raise DataError(f"repository root not found: {root}")
    files: list[SourceFile] = []
    warnings: list[str] = []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        if not _matches_any(rel, include_globs):
            continue
        if exclude_globs and _matches_any(rel, exclude_globs):
            continue
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            warnings.append(f"skipped unreadable file {rel}: {exc}")
            continue
        files.append(SourceFile.from_text(rel, text))
    for message in warnings:
        logger.warning("%s", message)
    return files, warnings


def window_spans(total_lines: int, window_lines: int, slide_lines: int) -> list[tuple[int, int]]:
    """1-based (start, end) spans: starts at 1, 1+slide, ... while start <= total."""
    spans = []
    start = 1
    while start <= total_lines:
        spans.append((start, min(start + window_lines - 1, total_lines)))
        start += slide_lines
    return spans


def _file_snippets(src: SourceFile, cfg: IndexConfig) -> list[CodeSnippet]:
    out = []
    for start, end in window_spans(len(src.lines), cfg.window_lines, cfg.slide_lines):
        lines = list(src.lines[start - 1 : end])
        if all(not line.strip() for line in lines):
            continue  # all-blank windows carry no retrievable content
        out.append(CodeSnippet.from_lines(src.path, start, lines))
    return out


@dataclass
class SnippetIndex:
    """Ordered snippet collection, optionally backed by the source files.

    Snippets are sorted by (path, start_line). Instances are treated as
    immutable after construction; masking produces new views that share the
    snippet objects.
    """

    snippets: list[CodeSnippet]
    window_lines: int = 20
    slide_lines: int = 10
    files: dict[str, SourceFile] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    _lines_cache: dict[str, list[str]] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.snippets)

    def __iter__(self):
        return iter(self.snippets)

    def paths(self) -> set[str]:
        seen = {s.source for s in self.snippets}
        seen.update(self.files)
        return seen

    def file_lines(self, path: str) -> list[str]:
        """Lines of one indexed file (1-based externally; list is 0-based).

        When the index was built in-process the original file is returned.
        When loaded from disk the content is reconstructed from window
        coverage; any line covered only by dropped all-blank windows is
        blank by construction and comes back as "".
        """
        if path in self.files:
            return list(self.files[path].lines)
        if path not in self._lines_cache:
            spans = [s for s in self.snippets if s.source == path]
            if not spans:
                raise DataError(f"file not present in index: {path}")
            rebuilt: dict[int, str] = {}
            for snip in spans:
                for offset, line in enumerate(snip.text.split("\n")):
                    rebuilt.setdefault(snip.start_line + offset, line)
            top = max(rebuilt)
            self._lines_cache[path] = [rebuilt.get(i, "") for i in range(1, top + 1)]
        return self._lines_cache[path]

    def unfinished_code(self, path: str, cut_line: int) -> str:
        """Everything strictly above cut_line, the completion context X."""
        lines = self.file_lines(path)
        if not (1 <= cut_line <= len(lines) + 1):
            raise DataError(f"cut line {cut_line} outside {path} ({len(lines)} lines)")
        return "\n".join(lines[: cut_line - 1])


def build_index(repo_root: Path, cfg: IndexConfig | None = None) -> SnippetIndex:
    cfg = cfg or IndexConfig()
    files, warnings = discover_files(repo_root, cfg.include_globs, cfg.exclude_globs)
    snippets: list[CodeSnippet] = []
    for src in files:  # files arrive sorted, so snippet order is (path, start)
        snippets.extend(_file_snippets(src, cfg))
    return SnippetIndex(
        snippets=snippets,
        window_lines=cfg.window_lines,
        slide_lines=cfg.slide_lines,
        files={f.path: f for f in files},
        warnings=warnings,
    )


def exclusion_mask(index: SnippetIndex, target_file: str, cut_line: int) -> SnippetIndex:
    """View of the index with every snippet overlapping [cut_line, EOF] of
    target_file removed. Snippets of the target file strictly above the cut
    survive; this is what keeps ground truth out of the retrieval pool."""
    if target_file not in index.paths():
        raise DataError(f"target file not in index: {target_file}")
    kept = [
        s
        for s in index.snippets
        if s.source != target_file or s.end_line < cut_line
    ]
    return SnippetIndex(
        snippets=kept,
        window_lines=index.window_lines,
        slide_lines=index.slide_lines,
        files=index.files,
        warnings=[],
    )


def save_index(index: SnippetIndex, path: Path) -> None:
    """One JSON object per snippet: {"path", "start", "end", "text"}."""
    out = Path(path)
    with out.open("w", encoding="utf-8") as fh:
        for s in index.snippets:
            fh.write(
                json.dumps(
                    {"path": s.source, "start": s.start_line, "end": s.end_line, "text": s.text},
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def load_index(path: Path) -> SnippetIndex:
    """Load a snippet JSONL file; token sets are recomputed, never trusted."""
    src = Path(path)
    if not src.is_file():
        raise DataError(f"index file not found: {src}")
    snippets: list[CodeSnippet] = []
    window = 1
    slide = 1
    with src.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                snippet = CodeSnippet(
                    source=obj["path"],
                    start_line=int(obj["start"]),
                    end_line=int(obj["end"]),
                    text=obj["text"],
                    token_set=tokenize(obj["text"]),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"{src}: bad snippet record on line {lineno}: {exc}") from exc
            span = snippet.end_line - snippet.start_line + 1
            window = max(window, span)
            snippets.append(snippet)
    snippets.sort(key=lambda s: (s.source, s.start_line))
    starts = {}
    for s in snippets:
        starts.setdefault(s.source, []).append(s.start_line)
    deltas = {
        b - a
        for per_file in starts.values()
        for a, b in zip(per_file, per_file[1:])
    }
    if deltas:
        slide = min(deltas)
    return SnippetIndex(snippets=snippets, window_lines=window, slide_lines=slide)
