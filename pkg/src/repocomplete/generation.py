"""Completion backends and output trimming.

Two families: an OpenAI-style HTTP completions client with bounded retries,
and deterministic mocks for tests and offline pipelines. Both speak the
same Generator interface so the pipeline is backend-agnostic.
"""

from __future__ import annotations

import logging
import math
import os
import threading
import time
from abc import ABC, abstractmethod

import requests

from .errors import BackendError, ConfigError
from .prompts import extract_last_snippet

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 4
BACKOFF_BASE_SECONDS = 0.5

MOCK_BEHAVIORS = ("echo_ground_truth", "fixed_table", "prefix_of_snippet")


def estimate_tokens(text: str) -> int:
    """ceil(len/4): a cheap, monotone stand-in for a real tokenizer.

    Concatenation property: estimate(a + b) <= estimate(a) + estimate(b) + 1.
    """
    if not text:
        return 0
    return math.ceil(len(text) / 4)


def apply_stop(text: str, stop: list[str] | None) -> str:
    """Truncate at the earliest occurrence of any stop sequence."""
    if not stop:
        return text
    cut = len(text)
    for seq in stop:
        if not seq:
            continue
        pos = text.find(seq)
        if pos != -1:
            cut = min(cut, pos)
    return text[:cut]


class Generator(ABC):
    """Completion backend: prompt in, raw continuation out."""

    @abstractmethod
    def complete(
        self,
        prompt: str,
        max_tokens: int,
        stop: list[str] | None = None,
        *,
        sample_id: str | None = None,
    ) -> str:
        """sample_id is advisory; only table-driven mocks consult it."""

    def count_tokens(self, text: str) -> int:
        return estimate_tokens(text)

    def describe(self) -> str:
        return type(self).__name__


class MockGenerator(Generator):
    """Deterministic canned backend.

    Behaviors:
      echo_ground_truth / fixed_table: answer from a sample_id-keyed table
      prefix_of_snippet: answer with the first lines of the most similar
      snippet block found in the prompt
    """

    def __init__(
        self,
        behavior: str = "fixed_table",
        lookup: dict[str, str] | None = None,
        prefix_lines: int = 3,
    ) -> None:
        if behavior not in MOCK_BEHAVIORS:
            raise ValueError(f"unknown mock behavior: {behavior!r}")
        self.behavior = behavior
        self.lookup = dict(lookup or {})
        self.prefix_lines = prefix_lines
        self.calls = 0

    @classmethod
    def echoing(cls, truths: dict[str, str]) -> "MockGenerator":
        return cls(behavior="echo_ground_truth", lookup=truths)

    def describe(self) -> str:
        return f"mock:{self.behavior}"

    def complete(
        self,
        prompt: str,
        max_tokens: int,
        stop: list[str] | None = None,
        *,
        sample_id: str | None = None,
    ) -> str:
        self.calls += 1
        if self.behavior in ("echo_ground_truth", "fixed_table"):
            if sample_id is None:
                return ""
            return self.lookup.get(sample_id, "")
        parsed = extract_last_snippet(prompt)
        if parsed is None:
            return ""
        _, lines = parsed
        return "\n".join(lines[: self.prefix_lines])


class HttpGenerator(Generator):
    """OpenAI-style completions client.

    POSTs {"model", "prompt", "max_tokens", "temperature", "stop"} and reads
    choices[0].text. 429/5xx/timeouts are retried with exponential backoff up
    to MAX_ATTEMPTS; auth failures abort immediately. The credential comes
    from the COMPLETIONS_API_KEY environment variable, never a flag.
    """

    API_KEY_ENV = "COMPLETIONS_API_KEY"

    def __init__(
        self,
        endpoint: str,
        model: str,
        total_token_budget: int = 4096,
        timeout: float = 60.0,
        max_attempts: int = MAX_ATTEMPTS,
        backoff_base: float = BACKOFF_BASE_SECONDS,
        temperature: float = 0.0,
        max_inflight: int = 4,
        session: requests.Session | None = None,
    ) -> None:
        if not endpoint:
            raise ConfigError("generator endpoint is required")
        self.endpoint = endpoint
        self.model = model
        self.total_token_budget = total_token_budget
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.temperature = temperature
        self._session = session or requests.Session()
        self._gate = threading.Semaphore(max_inflight)
        self.retries_used = 0

    def describe(self) -> str:
        return f"http:{self.endpoint}#{self.model}"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(
        self,
        prompt: str,
        max_tokens: int,
        stop: list[str] | None = None,
        *,
        sample_id: str | None = None,
    ) -> str:
        # Budget safety: never dispatch a request that could overflow the
        # model context.
        used = self.count_tokens(prompt) + max_tokens
        if used > self.total_token_budget:
            raise ConfigError(
                f"prompt + max_tokens = {used} exceeds budget {self.total_token_budget}"
            )
        payload: dict[str, object] = {
            "model": self.model,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": self.temperature,
        }
        if stop:
            payload["stop"] = stop
        last_error = "no attempts made"
        for attempt in range(self.max_attempts):
            if attempt:
                delay = self.backoff_base * (2 ** (attempt - 1))
                time.sleep(delay)
                self.retries_used += 1
            try:
                with self._gate:
                    resp = self._session.post(
                        self.endpoint,
                        json=payload,
                        headers=self._headers(),
                        timeout=self.timeout,
                    )
            except requests.RequestException as exc:
                last_error = f"request failed: {exc}"
                logger.warning("completion attempt %d failed: %s", attempt + 1, exc)
                continue
            if resp.status_code in (401, 403):
                raise ConfigError(
                    f"completion endpoint rejected credentials ({resp.status_code})"
                )
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"status {resp.status_code}"
                logger.warning(
                    "completion attempt %d got %d, retrying", attempt + 1, resp.status_code
                )
                continue
            if resp.status_code != 200:
                raise BackendError(
                    f"completion endpoint returned {resp.status_code}: {resp.text[:200]}"
                )
            try:
                text = resp.json()["choices"][0]["text"]
            except (ValueError, KeyError, IndexError) as exc:
                raise BackendError(f"completion response malformed: {exc}") from exc
            # Defensive: honor stop sequences even if the server ignored them.
            return apply_stop(str(text), stop)
        raise BackendError(
            f"completion failed after {self.max_attempts} attempts: {last_error}"
        )


def _balanced_call_prefix(text: str) -> str | None:
    """Shortest prefix that closes the first open parenthesis group, or None.

    String literals are skipped so parentheses inside them do not count.
    """
    depth = 0
    opened = False
    quote: str | None = None
    escaped = False
    for i, ch in enumerate(text):
        if quote is not None:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                quote = None
            continue
        if ch in ("'", '"'):
            quote = ch
            continue
        if ch == "(":
            depth += 1
            opened = True
        elif ch == ")":
            depth -= 1
            if opened and depth == 0:
                return text[: i + 1]
            if depth < 0:
                return None
    return None


def _function_body_prefix(text: str) -> str:
    """Lines belonging to one function body, judged by indentation.

    The first non-blank line sets the baseline; the body ends before the
    first non-blank line indented less than the baseline. Blank lines are
    kept only when more body follows.
    """
    lines = text.split("\n")
    baseline: int | None = None
    kept: list[str] = []
    pending_blanks: list[str] = []
    for line in lines:
        if not line.strip():
            pending_blanks.append(line)
            continue
        indent = len(line) - len(line.lstrip())
        if baseline is None:
            baseline = indent
        elif indent < baseline:
            break
        kept.extend(pending_blanks)
        pending_blanks = []
        kept.append(line)
    return "\n".join(kept)


def truncate_for_task(
    raw: str,
    task_kind: str,
    *,
    max_tokens: int | None = None,
    counter=estimate_tokens,
) -> str:
    """Trim a raw generation to the shape a task is scored on.

    line: first non-empty line. api: up to the first balanced invocation
    (falling back to the first line). function: indentation-delimited body,
    optionally capped at max_tokens by dropping trailing lines. Idempotent
    for every task kind.
    """
    if task_kind == "line":
        for line in raw.split("\n"):
            if line.strip():
                return line
        return ""
    if task_kind == "api":
        prefix = _balanced_call_prefix(raw)
        if prefix is not None:
            return prefix
        for line in raw.split("\n"):
            if line.strip():
                return line
        return ""
    if task_kind == "function":
        body = _function_body_prefix(raw)
        if max_tokens is not None:
            lines = body.split("\n")
            while lines and counter("\n".join(lines)) > max_tokens:
                lines.pop()
            body = "\n".join(lines)
        return body
    raise ValueError(f"unknown task kind: {task_kind!r}")
