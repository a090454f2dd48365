"""Scoring: exact match, edit similarity, and execution pass rate.

Exact match and edit similarity are computed on normalized text (trailing
whitespace stripped per line, trailing blank lines dropped) so formatting
noise does not mask real differences. Edit similarity is character-level:
1 - levenshtein(a, b) / max(len(a), len(b)).
"""

from __future__ import annotations

import logging
import shutil
import subprocess
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import CompletionSample
from .errors import DataError, ExecutionError

logger = logging.getLogger(__name__)

DEFAULT_EXEC_TIMEOUT = 10.0
_SHELL_COMMAND_NOT_FOUND = 127


def normalize_completion(text: str) -> str:
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and not lines[-1]:
        lines.pop()
    return "\n".join(lines)


def exact_match(prediction: str, truth: str) -> int:
    return int(normalize_completion(prediction) == normalize_completion(truth))


def levenshtein(a: str, b: str) -> int:
    """Two-row dynamic program; O(len(a) * len(b)) time, O(len(b)) space."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    current = [0] * (len(b) + 1)
    for i, ca in enumerate(a, start=1):
        current[0] = i
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current[j] = min(
                previous[j] + 1,        # delete from a
                current[j - 1] + 1,     # insert into a
                previous[j - 1] + cost, # substitute
            )
        previous, current = current, previous
    return previous[len(b)]


def edit_similarity(prediction: str, truth: str) -> float:
    """1 - normalized Levenshtein distance, in [0, 1]; two empty strings are
    identical, so they score 1.0."""
    a = normalize_completion(prediction)
    b = normalize_completion(truth)
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


@dataclass
class PassRateResult:
    passed: bool
    timed_out: bool
    returncode: int | None
    duration_ms: int


@dataclass
class EvalRecord:
    """One scored (sample, mode, iteration) cell."""

    sample_id: str
    mode: str
    iteration: int
    em: int
    es: float
    pr: int | None = None
    wall_time_ms: int = 0
    repo: str = ""
    timed_out: bool = False


def splice_function_body(lines: list[str], span: tuple[int, int], prediction: str) -> str:
    """Replace the 1-based inclusive line span with the prediction text and
    return the whole file."""
    start, end = span
    if not (1 <= start <= end <= len(lines)):
        raise DataError(f"span {span} outside file of {len(lines)} lines")
    rebuilt = lines[: start - 1] + prediction.split("\n") + lines[end:]
    return "\n".join(rebuilt) + "\n"


@contextmanager
def workspace_copy(repo_root: Path):
    """Disposable copy of the repository; mutations never touch the source."""
    root = Path(repo_root)
    if not root.is_dir():
        raise DataError(f"repository root not found: {root}")
    tmp = tempfile.mkdtemp(prefix="repocomplete-ws-")
    target = Path(tmp) / root.name
    try:
        shutil.copytree(root, target)
        yield target
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def pass_rate(
    sample: CompletionSample,
    completed_file: str,
    workspace: Path,
    timeout_s: float = DEFAULT_EXEC_TIMEOUT,
) -> PassRateResult:
    """Write the completed file into the workspace and run the sample's test
    command there. Pass means exit status 0 within the timeout. A command
    that cannot be executed at all raises ExecutionError instead of scoring
    0, so broken harnesses are not mistaken for failing completions."""
    if not sample.test_command:
        raise DataError(f"sample {sample.sample_id} has no test command")
    target = Path(workspace) / sample.file
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(completed_file, encoding="utf-8")
    started = time.monotonic()
    try:
        proc = subprocess.run(
            sample.test_command,
            shell=True,
            cwd=workspace,
            capture_output=True,
            timeout=timeout_s,
        )
    except subprocess.TimeoutExpired:
        duration = int((time.monotonic() - started) * 1000)
        return PassRateResult(
            passed=False, timed_out=True, returncode=None, duration_ms=duration
        )
    duration = int((time.monotonic() - started) * 1000)
    if proc.returncode == _SHELL_COMMAND_NOT_FOUND:
        raise ExecutionError(
            f"test command not found for {sample.sample_id}: {sample.test_command!r}"
        )
    return PassRateResult(
        passed=proc.returncode == 0,
        timed_out=False,
        returncode=proc.returncode,
        duration_ms=duration,
    )


@dataclass
class GroupStats:
    n: int
    em_pct: float
    es_pct: float
    pr_pct: float | None


@dataclass
class AggregateReport:
    """Mean metrics in percent, per (mode, iteration), per repo and overall."""

    rows: dict[tuple[str, int], dict[str, GroupStats]] = field(default_factory=dict)

    OVERALL = "__all__"

    def group(self, mode: str, iteration: int, repo: str = OVERALL) -> GroupStats | None:
        return self.rows.get((mode, iteration), {}).get(repo)


def _stats(records: list[EvalRecord]) -> GroupStats:
    n = len(records)
    em = sum(r.em for r in records) / n * 100.0
    es = sum(r.es for r in records) / n * 100.0
    with_pr = [r for r in records if r.pr is not None]
    pr = sum(r.pr for r in with_pr) / len(with_pr) * 100.0 if with_pr else None
    return GroupStats(n=n, em_pct=em, es_pct=es, pr_pct=pr)


def aggregate(records: list[EvalRecord]) -> AggregateReport:
    """Group means; insensitive to record order. Empty input, empty report."""
    buckets: dict[tuple[str, int], dict[str, list[EvalRecord]]] = {}
    for record in records:
        cell = buckets.setdefault((record.mode, record.iteration), {})
        cell.setdefault(AggregateReport.OVERALL, []).append(record)
        if record.repo:
            cell.setdefault(record.repo, []).append(record)
    report = AggregateReport()
    for key in sorted(buckets):
        report.rows[key] = {
            repo: _stats(recs) for repo, recs in sorted(buckets[key].items())
        }
    return report


REPORT_FOOTER = (
    "edit similarity is character-level (1 - levenshtein/max-length) on "
    "trailing-whitespace-normalized text; compare against token-level "
    "variants with care"
)


def _fmt(value: float | None) -> str:
    return f"{value:7.2f}" if value is not None else "      -"

def render_text_table(report: AggregateReport) -> str:
    lines = [f"{'mode':<12} {'iter':>4} {'repo':<20} {'n':>5} {'EM%':>7} {'ES%':>7} {'PR%':>7}"]
    for (mode, iteration), groups in report.rows.items():
        ordered = [AggregateReport.OVERALL] + sorted(
            g for g in groups if g != AggregateReport.OVERALL
        )
        for repo in ordered:
            stats = groups[repo]
            label = "(overall)" if repo == AggregateReport.OVERALL else repo
            lines.append(
                f"{mode:<12} {iteration:>4} {label:<20} {stats.n:>5} "
                f"{_fmt(stats.em_pct)} {_fmt(stats.es_pct)} {_fmt(stats.pr_pct)}"
            )
    lines.append("")
    lines.append(REPORT_FOOTER)
    return "\n".join(lines)


def report_to_json(report: AggregateReport, manifest_fingerprint: str | None = None) -> dict:
    groups = []
    for (mode, iteration), cells in report.rows.items():
        for repo, stats in cells.items():
            groups.append(
                {
                    "mode": mode,
                    "iteration": iteration,
                    "repo": None if repo == AggregateReport.OVERALL else repo,
                    "n": stats.n,
                    "em_pct": round(stats.em_pct, 4),
                    "es_pct": round(stats.es_pct, 4),
                    "pr_pct": round(stats.pr_pct, 4) if stats.pr_pct is not None else None,
                }
            )
    out: dict[str, object] = {"schema": 1, "kind": "report", "groups": groups}
    if manifest_fingerprint:
        out["manifest"] = manifest_fingerprint
    out["footer"] = REPORT_FOOTER
    return out


def render_csv(report: AggregateReport) -> str:
    rows = ["mode,iteration,repo,n,em_pct,es_pct,pr_pct"]
    for (mode, iteration), cells in report.rows.items():
        for repo, stats in cells.items():
            repo_label = "" if repo == AggregateReport.OVERALL else repo
            pr = f"{stats.pr_pct:.4f}" if stats.pr_pct is not None else ""
            rows.append(
                f"{mode},{iteration},{repo_label},{stats.n},"
                f"{stats.em_pct:.4f},{stats.es_pct:.4f},{pr}"
            )
    return "\n".join(rows) + "\n"
