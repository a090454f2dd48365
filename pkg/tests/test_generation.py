"""Token estimation, mocks, output trimming, and the HTTP client."""

from __future__ import annotations

import json
import random
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from repocomplete.errors import BackendError, ConfigError
from repocomplete.generation import (
    HttpGenerator,
    MockGenerator,
    apply_stop,
    estimate_tokens,
    truncate_for_task,
)
from repocomplete.prompts import assemble_prompt, render_snippet_block


def test_estimate_tokens_examples():
    assert estimate_tokens("") == 0
    assert estimate_tokens("a") == 1
    assert estimate_tokens("abcd") == 1
    assert estimate_tokens("abcde") == 2
    assert estimate_tokens("x" * 4096) == 1024


def test_estimate_tokens_concat_property_seeded():
    rng = random.Random(11)
    for _ in range(500):
        a = "x" * rng.randrange(0, 50)
        b = "y" * rng.randrange(0, 50)
        whole = estimate_tokens(a + b)
        assert whole <= estimate_tokens(a) + estimate_tokens(b) + 1
        assert whole >= max(estimate_tokens(a), estimate_tokens(b))


def test_apply_stop():
    assert apply_stop("abc\n\ndef", ["\n\n"]) == "abc"
    assert apply_stop("abc", ["\n\n"]) == "abc"
    assert apply_stop("abc", None) == "abc"
    assert apply_stop("abc", []) == "abc"
    # earliest match among several sequences wins
    assert apply_stop("one STOP two HALT three", ["HALT", "STOP"]) == "one "
    assert apply_stop("abc", [""]) == "abc"


def test_mock_table_behaviors():
    gen = MockGenerator.echoing({"s1": "truth one"})
    assert gen.complete("any prompt", 100, sample_id="s1") == "truth one"
    assert gen.complete("any prompt", 100, sample_id="missing") == ""
    assert gen.complete("any prompt", 100) == ""
    assert gen.calls == 3


def test_mock_rejects_unknown_behavior():
    with pytest.raises(ValueError):
        MockGenerator(behavior="surprise")


def test_mock_prefix_of_snippet_reads_last_block():
    first = render_snippet_block("a/early.py", "early_1\nearly_2")
    last = render_snippet_block("b/late.py", "late_1\nlate_2\nlate_3\nlate_4")
    prompt = assemble_prompt([first, last], "unfinished = 1")
    gen = MockGenerator(behavior="prefix_of_snippet", prefix_lines=3)
    assert gen.complete(prompt, 100) == "late_1\nlate_2\nlate_3"
    # no snippet blocks at all
    assert gen.complete("bare code", 100) == ""


def test_truncate_line_kind():
    assert truncate_for_task("result = compute()\nnext_line", "line") == "result = compute()"
    assert truncate_for_task("\n\n  indented()\ntail", "line") == "  indented()"
    assert truncate_for_task("\n   \n", "line") == ""


def test_truncate_api_balanced_calls():
    cases = [
        ("foo(a, b)", "foo(a, b)"),
        ("foo(a, b) + trailing", "foo(a, b)"),
        ("foo(bar(x), baz(y))\nmore()", "foo(bar(x), baz(y))"),
        ("foo(a,\n    b)\nrest", "foo(a,\n    b)"),
        ('foo("with ) paren", b)', 'foo("with ) paren", b)'),
        ("foo('it\\'s (fine)', b) tail", "foo('it\\'s (fine)', b)"),
    ]
    for raw, expected in cases:
        assert truncate_for_task(raw, "api") == expected


def test_truncate_api_falls_back_to_first_line():
    assert truncate_for_task("no_call_here\nsecond", "api") == "no_call_here"
    assert truncate_for_task("open_only(a, b\nnever closed", "api") == "open_only(a, b"


def test_truncate_api_oracle_by_construction():
    """Build calls with a known answer, then append junk."""
    rng = random.Random(91)
    atoms = ["x", "y[0]", "'lit(eral'", '"two))"', "3.5", "name_z"]
    for _ in range(200):
        args = ", ".join(rng.choice(atoms) for _ in range(rng.randrange(0, 4)))
        inner = f"inner({args})" if rng.random() < 0.5 else args
        call = f"outer({inner})"
        junk = rng.choice(["", " + rest", "\nnext_line()", ".chained(q)"])
        assert truncate_for_task(call + junk, "api") == call


def test_truncate_function_body():
    raw = "    first = 1\n    second = 2\nfollowing_top_level()"
    assert truncate_for_task(raw, "function") == "    first = 1\n    second = 2"


def test_truncate_function_keeps_interior_blank_drops_trailing():
    raw = "    a = 1\n\n    b = 2\n\n\ndef next_function():"
    assert truncate_for_task(raw, "function") == "    a = 1\n\n    b = 2"


def test_truncate_function_nested_indent_stays():
    raw = "    if flag:\n        deep = 1\n    tail = 2\nout = 3"
    assert truncate_for_task(raw, "function") == "    if flag:\n        deep = 1\n    tail = 2"


def test_truncate_function_token_cap():
    body = "\n".join(f"    line_{i} = {i}" for i in range(20))
    capped = truncate_for_task(body, "function", max_tokens=10)
    assert estimate_tokens(capped) <= 10
    assert body.startswith(capped)


def test_truncate_idempotent_all_kinds():
    samples = {
        "line": ["a = 1\nb = 2", "\n\nc()", ""],
        "api": ["foo(a) junk", "foo(a,\n b)\nmore", "plain"],
        "function": ["    a = 1\n\n    b = 2\nout()", "    x = 1", ""],
    }
    for kind, raws in samples.items():
        for raw in raws:
            once = truncate_for_task(raw, kind)
            assert truncate_for_task(once, kind) == once


def test_truncate_unknown_kind():
    with pytest.raises(ValueError):
        truncate_for_task("x", "paragraph")


class _ScriptedHandler(BaseHTTPRequestHandler):
    """Replays a shared list of (status, body_dict_or_text) responses."""

    script: list[tuple[int, object]] = []
    requests_seen: list[dict] = []

    def do_POST(self):  # noqa: N802 (http.server API name)
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length) or b"{}")
        type(self).requests_seen.append(
            {"payload": payload, "auth": self.headers.get("Authorization")}
        )
        status, body = self.script.pop(0) if self.script else (500, {"error": "empty"})
        data = body if isinstance(body, str) else json.dumps(body)
        raw = data.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


@contextmanager
def scripted_server(script: list[tuple[int, object]]):
    handler = type(
        "Handler", (_ScriptedHandler,), {"script": list(script), "requests_seen": []}
    )
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}/v1/completions", handler
    finally:
        server.shutdown()
        thread.join(timeout=5)


def ok_body(text: str) -> dict:
    return {"choices": [{"text": text}]}


def test_http_generator_success(monkeypatch):
    monkeypatch.setenv(HttpGenerator.API_KEY_ENV, "sk-test")
    with scripted_server([(200, ok_body("completed text"))]) as (url, handler):
        gen = HttpGenerator(url, model="m1", total_token_budget=4096)
        out = gen.complete("def f():", 100, stop=["\n\n"])
        assert out == "completed text"
        sent = handler.requests_seen[0]
        assert sent["payload"]["model"] == "m1"
        assert sent["payload"]["prompt"] == "def f():"
        assert sent["payload"]["max_tokens"] == 100
        assert sent["payload"]["stop"] == ["\n\n"]
        assert sent["auth"] == "Bearer sk-test"


def test_http_generator_key_read_from_env_only(monkeypatch):
    monkeypatch.delenv(HttpGenerator.API_KEY_ENV, raising=False)
    with scripted_server([(200, ok_body("x"))]) as (url, handler):
        gen = HttpGenerator(url, model="m1")
        gen.complete("p", 10)
        assert handler.requests_seen[0]["auth"] is None


def test_http_generator_retries_429_then_succeeds(monkeypatch):
    monkeypatch.setenv(HttpGenerator.API_KEY_ENV, "sk-test")
    script = [(429, {"error": "slow down"}), (200, ok_body("second try"))]
    with scripted_server(script) as (url, handler):
        gen = HttpGenerator(url, model="m1", backoff_base=0.01)
        assert gen.complete("p", 10) == "second try"
        assert len(handler.requests_seen) == 2
        assert gen.retries_used == 1


def test_http_generator_retries_500(monkeypatch):
    monkeypatch.setenv(HttpGenerator.API_KEY_ENV, "sk-test")
    script = [(503, {"error": "down"}), (200, ok_body("up again"))]
    with scripted_server(script) as (url, _):
        gen = HttpGenerator(url, model="m1", backoff_base=0.01)
        assert gen.complete("p", 10) == "up again"


def test_http_generator_gives_up_after_max_attempts(monkeypatch):
    monkeypatch.setenv(HttpGenerator.API_KEY_ENV, "sk-test")
    script = [(429, {})] * 4
    with scripted_server(script) as (url, handler):
        gen = HttpGenerator(url, model="m1", backoff_base=0.01, max_attempts=3)
        with pytest.raises(BackendError, match="after 3 attempts"):
            gen.complete("p", 10)
        assert len(handler.requests_seen) == 3


def test_http_generator_auth_failure_aborts(monkeypatch):
    monkeypatch.setenv(HttpGenerator.API_KEY_ENV, "sk-bad")
    with scripted_server([(401, {"error": "no"})]) as (url, handler):
        gen = HttpGenerator(url, model="m1", backoff_base=0.01)
        with pytest.raises(ConfigError, match="401"):
            gen.complete("p", 10)
        assert len(handler.requests_seen) == 1  # no retry on auth failure


def test_http_generator_malformed_response(monkeypatch):
    monkeypatch.setenv(HttpGenerator.API_KEY_ENV, "sk-test")
    with scripted_server([(200, {"unexpected": True})]) as (url, _):
        gen = HttpGenerator(url, model="m1")
        with pytest.raises(BackendError, match="malformed"):
            gen.complete("p", 10)


def test_http_generator_budget_guard(monkeypatch):
    monkeypatch.setenv(HttpGenerator.API_KEY_ENV, "sk-test")
    with scripted_server([]) as (url, handler):
        gen = HttpGenerator(url, model="m1", total_token_budget=50)
        with pytest.raises(ConfigError, match="exceeds budget"):
            gen.complete("x" * 400, 100)  # 100 prompt tokens + 100 > 50
        assert handler.requests_seen == []  # rejected before any request


def test_http_generator_applies_stop_client_side(monkeypatch):
    monkeypatch.setenv(HttpGenerator.API_KEY_ENV, "sk-test")
    with scripted_server([(200, ok_body("keep\n\ndiscard"))]) as (url, _):
        gen = HttpGenerator(url, model="m1")
        assert gen.complete("p", 10, stop=["\n\n"]) == "keep"


def test_http_generator_requires_endpoint():
    with pytest.raises(ConfigError):
        HttpGenerator("", model="m1")
