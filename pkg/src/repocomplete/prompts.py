"""Text layout for completion prompts.

Retrieved snippets are injected as comment blocks so the prompt stays valid
Python-ish text; each block opens with a fixed header naming the origin
file, and blocks are separated from each other and from the unfinished code
by one blank line.
"""

from __future__ import annotations

COMMENT_PREFIX = "# "
SNIPPET_HEADER_PREFIX = "the below code fragment can be found in: "
BLOCK_SEPARATOR = "\n\n"


def render_snippet_block(path: str, text: str) -> str:
    """Comment block: header line, then every snippet line '# '-prefixed."""
    lines = [f"{COMMENT_PREFIX}{SNIPPET_HEADER_PREFIX}{path}"]
    for line in text.split("\n"):
        lines.append((COMMENT_PREFIX + line).rstrip())
    return "\n".join(lines)


def assemble_prompt(blocks: list[str], infile_context: str) -> str:
    """Blocks in the given order, then the unfinished code, blank-line
    separated. With no blocks the prompt is exactly the unfinished code."""
    parts = [b for b in blocks if b]
    if infile_context:
        parts.append(infile_context)
    return BLOCK_SEPARATOR.join(parts)


def extract_last_snippet(prompt: str) -> tuple[str, list[str]] | None:
    """Parse back the final (most similar) snippet block, if any.

    Returns (path, snippet_lines) with comment prefixes stripped. Used by
    the mock backend that answers with a snippet prefix.
    """
    lines = prompt.split("\n")
    header = COMMENT_PREFIX + SNIPPET_HEADER_PREFIX
    start = None
    for i, line in enumerate(lines):
        if line.startswith(header):
            start = i
    if start is None:
        return None
    path = lines[start][len(header) :]
    body: list[str] = []
    for line in lines[start + 1 :]:
        if line.startswith(COMMENT_PREFIX):
            body.append(line[len(COMMENT_PREFIX) :])
        elif line == "#":
            body.append("")
        else:
            break
    return path, body
