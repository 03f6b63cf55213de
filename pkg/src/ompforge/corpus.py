"""Corpus pipeline: turn raw C/C++ sources into training samples.

The stages mirror how the samples are consumed downstream: strip comments,
pair every ``#pragma omp`` line with the statement it governs, reposition
the pragma after its scope so a left-to-right model predicts it as a
continuation, filter oversized samples, split train/test, and count pragma
frequencies. Everything here is lexical; sources do not need to compile.
"""

from __future__ import annotations

import json
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from . import clex
from .errors import EmptyCorpus, MalformedPragma
from .pragma import canonical

log = logging.getLogger(__name__)

_OMP_LINE_RE = re.compile(r"[ \t]*#[ \t]*pragma\s+omp\b")
_PRAGMA_LINE_RE = re.compile(r"[ \t]*#[ \t]*pragma\b")

SOURCE_SUFFIXES = (".c", ".h", ".cc", ".cpp", ".hpp")


@dataclass(frozen=True)
class CorpusSample:
    """One pragma paired with the code construct it governs."""

    id: str
    language: str
    scope: str
    pragma: str
    repo: str | None = None


@dataclass(frozen=True)
class TrainingText:
    """Scope followed by its canonical pragma, newline-terminated.

    The pragma is always the last pragma-bearing line of ``text``, so the
    generation target stays recoverable from the text alone.
    """

    text: str
    id: str | None = None


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic train/test split parameters."""

    test_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(
                f"test_fraction must be in (0,1), got {self.test_fraction}")


def strip_comments(source: str) -> str:
    """Remove ``//`` and ``/* */`` comments from C/C++ text.

    Line comments are removed up to (not including) their newline, so line
    counts are preserved; a backslash before the newline extends the
    comment, C-style, and each swallowed newline is re-emitted. Block
    comments become a single space to keep token boundaries. String and
    character literals pass through untouched. An unterminated block
    comment is logged and the remainder passed through verbatim.
    """
    out: list[str] = []
    i = 0
    n = len(source)
    while i < n:
        c = source[i]
        if c == "/" and i + 1 < n:
            nxt = source[i + 1]
            if nxt == "/":
                i += 2
                while i < n and source[i] != "\n":
                    if source[i] == "\\" and i + 1 < n and source[i + 1] == "\n":
                        out.append("\n")
                        i += 2
                    elif (source[i] == "\\" and i + 2 < n
                          and source[i + 1] == "\r" and source[i + 2] == "\n"):
                        out.append("\n")
                        i += 3
                    else:
                        i += 1
                continue
            if nxt == "*":
                end = source.find("*/", i + 2)
                if end == -1:
                    log.warning("unterminated block comment at offset %d", i)
                    out.append(source[i:])
                    break
                out.append(" ")
                i = end + 2
                continue
        if c == '"' or c == "'":
            j = i + 1
            while j < n:
                if source[j] == "\\" and j + 1 < n:
                    j += 2
                    continue
                if source[j] == c or source[j] == "\n":
                    break
                j += 1
            if j < n and source[j] == c:
                j += 1
            out.append(source[i:j])
            i = j
            continue
        out.append(c)
        i += 1
    return "".join(out)


def join_pragma_continuations(text: str) -> str:
    """Join backslash-continued ``#pragma`` lines into one logical line."""
    lines = text.split("\n")
    out: list[str] = []
    i = 0
    while i < len(lines):
        line = lines[i]
        if _PRAGMA_LINE_RE.match(line):
            while line.rstrip().endswith("\\") and i + 1 < len(lines):
                i += 1
                line = line.rstrip()[:-1].rstrip() + " " + lines[i].lstrip()
        out.append(line)
        i += 1
    return "\n".join(out)


def _skip_literal(text: str, pos: int) -> int:
    # pos is at the opening quote; returns the position just past the close.
    quote = text[pos]
    j = pos + 1
    n = len(text)
    while j < n:
        if text[j] == "\\" and j + 1 < n:
            j += 2
            continue
        if text[j] == quote or text[j] == "\n":
            return j + 1 if text[j] == quote else j
        j += 1
    return j


def _skip_ws_and_pragmas(text: str, pos: int) -> int:
    # Advance past whitespace and preprocessor lines (stacked pragmas,
    # #defines) so the statement scan starts at real code; a '#' can never
    # start a statement.
    n = len(text)
    while pos < n:
        while pos < n and text[pos] in " \t\r\n":
            pos += 1
        if pos < n and text[pos] == "#":
            eol = text.find("\n", pos)
            pos = n if eol == -1 else eol + 1
            continue
        break
    return pos


_STMT_KEYWORD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _consume_balanced(text: str, pos: int, open_ch: str, close_ch: str) -> int | None:
    # pos at open_ch; returns position past the matching close, or None.
    depth = 0
    n = len(text)
    while pos < n:
        c = text[pos]
        if c in "\"'":
            pos = _skip_literal(text, pos)
            continue
        if c == open_ch:
            depth += 1
        elif c == close_ch:
            depth -= 1
            if depth == 0:
                return pos + 1
        pos += 1
    return None


def _consume_statement(text: str, pos: int) -> int | None:
    """Lexically consume one statement starting at ``pos``.

    Handles compound statements, ``for``/``while``/``if``/``switch`` with
    their bodies, ``do ... while(...);``, and plain statements up to a
    top-level ``;``. Returns the position just past the statement, or None
    when no statement starts here.
    """
    n = len(text)
    while pos < n and text[pos] in " \t\r\n":
        pos += 1
    if pos >= n:
        return None
    c = text[pos]
    if c == "{":
        return _consume_balanced(text, pos, "{", "}")
    if c == "}":
        return None
    m = _STMT_KEYWORD_RE.match(text, pos)
    keyword = m.group() if m else None
    if keyword in ("for", "while", "if", "switch"):
        pos = m.end()
        while pos < n and text[pos] in " \t\r\n":
            pos += 1
        if pos < n and text[pos] == "(":
            after = _consume_balanced(text, pos, "(", ")")
            if after is None:
                return None
            pos = after
        end = _consume_statement(text, pos)
        if end is None:
            return None
        if keyword == "if":
            look = end
            while look < n and text[look] in " \t\r\n":
                look += 1
            if text.startswith("else", look) and not _STMT_KEYWORD_RE.match(text, look + 4):
                tail = _consume_statement(text, look + 4)
                if tail is not None:
                    return tail
        return end
    if keyword == "do":
        body_end = _consume_statement(text, m.end())
        if body_end is None:
            return None
        look = body_end
        while look < n and text[look] in " \t\r\n":
            look += 1
        if text.startswith("while", look):
            paren = look + 5
            while paren < n and text[paren] in " \t\r\n":
                paren += 1
            if paren < n and text[paren] == "(":
                after = _consume_balanced(text, paren, "(", ")")
                if after is not None:
                    while after < n and text[after] in " \t\r\n":
                        after += 1
                    if after < n and text[after] == ";":
                        return after + 1
        return body_end
    # plain statement: scan to a semicolon at top level
    depth = 0
    while pos < n:
        ch = text[pos]
        if ch in "\"'":
            pos = _skip_literal(text, pos)
            continue
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            if depth == 0:
                return None
            depth -= 1
        elif ch == ";" and depth == 0:
            return pos + 1
        pos += 1
    return None


def extract_omp_regions(source: str, *, path: str = "<memory>",
                        language: str = "c",
                        repo: str | None = None) -> list[CorpusSample]:
    """Pair every ``#pragma omp`` line with its governing statement.

    Expects comment-stripped text; backslash-continued pragma lines are
    joined here. Stacked pragmas attach to the same scope as separate
    samples. Sites with no following statement, or whose pragma does not
    parse, are skipped with a warning. Sample ids are ``path:offset`` with
    the offset of the pragma line in the processed text.
    """
    text = join_pragma_continuations(source)
    samples: list[CorpusSample] = []
    pos = 0
    n = len(text)
    while pos < n:
        eol = text.find("\n", pos)
        if eol == -1:
            eol = n
        line = text[pos:eol]
        if _OMP_LINE_RE.match(line):
            pragma_text = line.strip()
            try:
                canonical(pragma_text)
            except MalformedPragma as exc:
                log.warning("%s:%d: skipping unparseable pragma: %s",
                            path, pos, exc)
                pos = eol + 1
                continue
            stmt_start = _skip_ws_and_pragmas(text, eol + 1 if eol < n else n)
            stmt_end = _consume_statement(text, stmt_start)
            if stmt_end is None:
                log.warning("%s:%d: pragma has no following statement", path, pos)
            else:
                while stmt_start < stmt_end and text[stmt_start] in " \t\r\n":
                    stmt_start += 1
                samples.append(CorpusSample(
                    id=f"{path}:{pos}",
                    language=language,
                    scope=text[stmt_start:stmt_end],
                    pragma=pragma_text,
                    repo=repo,
                ))
        pos = eol + 1
    return samples


def reposition(sample: CorpusSample) -> TrainingText:
    """Place the canonical pragma after its scope: ``scope\\npragma\\n``."""
    return TrainingText(text=f"{sample.scope}\n{canonical(sample.pragma)}\n",
                        id=sample.id)


def size_filter(text: TrainingText, max_tokens: int = 100,
                max_bytes: int = 1_048_576) -> bool:
    """True when the sample should be kept.

    Drops texts with more than ``max_tokens`` lexical tokens or more than
    ``max_bytes`` UTF-8 bytes. The defaults are deliberately small; both
    are configurable at every call site.
    """
    if len(text.text.encode("utf-8")) > max_bytes:
        return False
    return clex.count_tokens(text.text) <= max_tokens


def split(corpus: list[TrainingText], spec: SplitSpec) -> tuple[list[TrainingText], list[TrainingText]]:
    """Deterministic shuffle-split into (train, test).

    ``|test| = round(test_fraction * N)`` with halves rounding up. The two
    parts partition the corpus: nothing lost, nothing duplicated.
    """
    if not corpus:
        raise EmptyCorpus("cannot split an empty corpus")
    n = len(corpus)
    n_test = int(n * spec.test_fraction + 0.5)
    order = list(range(n))
    random.Random(spec.seed).shuffle(order)
    test = [corpus[i] for i in order[:n_test]]
    train = [corpus[i] for i in order[n_test:]]
    return train, test


def pragma_frequency(pragmas, top: int | None = None) -> list[tuple[str, int]]:
    """Histogram of canonical pragma forms, most frequent first.

    Whitespace variants of the same pragma count together. Ties break
    lexicographically. ``top`` truncates to the k most frequent entries.
    """
    counts: Counter[str] = Counter()
    for text in pragmas:
        try:
            counts[canonical(text)] += 1
        except MalformedPragma:
            counts[" ".join(text.split())] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:top] if top is not None else ranked


def last_pragma_line(text: str) -> str | None:
    """The last newline-terminated line starting with ``#``, if any."""
    for line in reversed(text.rstrip("\n").split("\n")):
        if line.lstrip().startswith("#"):
            return line
    return None


def training_text_to_sample(tt: TrainingText, language: str = "c") -> CorpusSample:
    """Recover the (scope, pragma) pair from a training text."""
    lines = tt.text.rstrip("\n").split("\n")
    if not lines or not lines[-1].lstrip().startswith("#"):
        raise ValueError("training text does not end with a pragma line")
    return CorpusSample(id=tt.id or "", language=language,
                        scope="\n".join(lines[:-1]), pragma=lines[-1].strip())


def read_source_file(path: str | Path) -> str:
    """Read a source file as UTF-8, replacing invalid byte sequences."""
    data = Path(path).read_bytes()
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError:
        log.warning("%s: invalid UTF-8 replaced", path)
        return data.decode("utf-8", errors="replace")


def write_samples(samples, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps({"id": s.id, "lang": s.language,
                                 "scope": s.scope, "pragma": s.pragma,
                                 "repo": s.repo}, sort_keys=True) + "\n")


def read_samples(path: str | Path) -> list[CorpusSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(CorpusSample(id=obj["id"], language=obj["lang"],
                                    scope=obj["scope"], pragma=obj["pragma"],
                                    repo=obj.get("repo")))
    return out


def write_shards(texts, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tt in texts:
            obj = {"text": tt.text}
            if tt.id is not None:
                obj["id"] = tt.id
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_shards(path: str | Path) -> list[TrainingText]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(TrainingText(text=obj["text"], id=obj.get("id")))
    return out
