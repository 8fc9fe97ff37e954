"""Compact-log filter for captured simulator logs.

Hybrid allowlist + tail-anchor strategy. Used by the orchestrators in
`observer/runner.py` to slim the captured `gpmap_mcp` log when their
`verbose` kwarg is False.

Lines are kept if:
  - they match any allowlist pattern (warnings, errors, step summaries,
    world builds, skipped edges, tracebacks),
  - they are inside a multi-line traceback block opened by an allowlist
    hit, or
  - they fall within the final `tail_lines` lines.

Returns `(filtered_text, dropped_count)`; a non-zero count is the caller's
cue that `verbose=True` would show more.
"""

import re
from typing import Tuple


_KEEP_PATTERNS = (
    re.compile(r"\[ERROR\]"),
    re.compile(r"\[WARNING\]"),
    re.compile(r"\[CRITICAL\]"),
    re.compile(r"built (shared|self-only) world"),
    re.compile(r"\bstep \d+/\d+:"),
    re.compile(r"\bskipped\b", re.IGNORECASE),
    re.compile(r"degenerate", re.IGNORECASE),
    re.compile(r"raised the objective"),
    re.compile(r"wrote \d+ files"),
    re.compile(r"Traceback \(most recent call last\)"),
    re.compile(r'^\s*File ".*", line \d+'),
)

_TRACEBACK_OPEN_RE = re.compile(r"Traceback \(most recent call last\)")


def _is_signal(line: str) -> bool:
    return any(pat.search(line) for pat in _KEEP_PATTERNS)


def compact_log(text: str, *, tail_lines: int = 20) -> Tuple[str, int]:
    """Filter `text` to a compact subset; return (filtered_text, dropped).

    Behaviour:
      - Empty input -> ("", 0).
      - Input no longer than `tail_lines` -> returned verbatim with 0 dropped.
      - Otherwise, allowlist + multi-line traceback state + tail anchor.
    """
    if not text:
        return text, 0

    lines = text.splitlines()
    n = len(lines)
    if n <= tail_lines:
        return text, 0

    keep = [False] * n
    in_traceback = False
    for i, line in enumerate(lines):
        if _is_signal(line):
            keep[i] = True
            if _TRACEBACK_OPEN_RE.search(line):
                in_traceback = True
            continue
        if in_traceback:
            if line.strip() == "":
                in_traceback = False
                continue
            keep[i] = True
            # First non-indented line is the exception itself; it closes the block.
            if not line.startswith((" ", "\t")):
                in_traceback = False

    for i in range(max(0, n - tail_lines), n):
        keep[i] = True

    kept = [line for line, k in zip(lines, keep) if k]
    out = "\n".join(kept)
    if text.endswith("\n"):
        out += "\n"
    return out, n - len(kept)
