"""OpenMP pragma model: parsing, canonical rendering, and matching.

A pragma is modeled as the fixed ``#pragma omp`` prefix followed by an
ordered list of items. Each item is a directive or clause name with an
optional parenthesized control structure, e.g. ``reduction(+:sum)``.
Rendering is canonical: single spaces between items, no padding inside
parentheses. All comparisons in this module go through the canonical form,
so inputs that differ only in whitespace compare equal.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import MalformedPragma, UnknownClause

PREFIX = "#pragma omp"

# OpenMP 4.5 construct keywords. Words of combined constructs (e.g.
# "parallel for", "target teams distribute") classify one by one. Anything
# not listed in either set classifies as a clause, which keeps the parser
# total on unknown or vendor-specific names.
DIRECTIVES = frozenset({
    "parallel", "for", "sections", "section", "single", "simd", "task",
    "taskloop", "taskyield", "taskwait", "taskgroup", "target", "teams",
    "distribute", "master", "critical", "barrier", "atomic", "ordered",
    "flush", "cancel", "cancellation", "point", "threadprivate", "declare",
    "data", "enter", "exit", "update",
})
CLAUSES = frozenset({
    "private", "shared", "firstprivate", "lastprivate", "reduction",
    "schedule", "collapse", "num_threads", "default", "nowait", "if",
    "final", "untied", "mergeable", "map", "device", "dist_schedule",
    "proc_bind", "safelen", "simdlen", "linear", "aligned", "uniform",
    "inbranch", "notinbranch", "copyin", "copyprivate", "depend",
    "priority", "grainsize", "num_tasks", "nogroup", "defaultmap",
    "is_device_ptr", "use_device_ptr", "num_teams", "thread_limit", "hint",
    "to", "from", "link", "read", "write", "capture", "seq_cst", "release",
    "acquire",
})
KNOWN_NAMES = DIRECTIVES | CLAUSES

_PREFIX_RE = re.compile(r"[ \t]*#[ \t]*pragma\s+omp\b")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_WORD_RE = re.compile(r"[A-Za-z0-9_]")


def classify(name: str) -> str:
    """Return ``"directive"`` or ``"clause"`` for an item name."""
    return "directive" if name in DIRECTIVES else "clause"


def _canon_control(text: str) -> str:
    # Collapse whitespace: keep a single space only where removing it would
    # glue two identifier characters together ("unsigned int" survives,
    # "static ,  4" becomes "static,4").
    parts = text.split()
    out: list[str] = []
    for part in parts:
        if out and _WORD_RE.match(out[-1][-1]) and _WORD_RE.match(part[0]):
            out.append(" ")
        out.append(part)
    return "".join(out)


@dataclass(frozen=True)
class PragmaItem:
    """One directive or clause, with its control structure when present.

    ``control`` is the parenthesized argument with outer parentheses
    stripped and internal whitespace collapsed; ``None`` when the source
    item had no parenthesized argument.
    """

    kind: str
    name: str
    control: str | None = None


@dataclass(frozen=True)
class PragmaAst:
    """A parsed pragma: the fixed prefix plus ordered items.

    ``raw`` keeps the text as encountered and is excluded from equality;
    two ASTs are equal when their items are.
    """

    items: tuple[PragmaItem, ...]
    raw: str = field(default="", compare=False)
    prefix: tuple[str, str] = ("#pragma", "omp")


def parse_pragma(text: str) -> PragmaAst:
    """Parse one pragma line into a :class:`PragmaAst`.

    The text must begin (after leading whitespace) with the ``#pragma omp``
    prefix and have backslash continuations already joined. Nested
    parentheses inside a control structure are balanced and kept.

    Raises :class:`MalformedPragma` on a missing prefix, unbalanced
    parentheses, or a position where an item name is expected but absent.
    """
    m = _PREFIX_RE.match(text)
    if m is None:
        raise MalformedPragma(f"missing '#pragma omp' prefix: {text!r}")
    pos = m.end()
    n = len(text)
    items: list[PragmaItem] = []
    while True:
        while pos < n and text[pos].isspace():
            pos += 1
        if pos >= n:
            break
        im = _IDENT_RE.match(text, pos)
        if im is None:
            raise MalformedPragma(
                f"expected item name at offset {pos}: {text!r}")
        name = im.group()
        pos = im.end()
        after_name = pos
        while pos < n and text[pos].isspace():
            pos += 1
        control = None
        if pos < n and text[pos] == "(":
            depth = 1
            j = pos + 1
            while j < n and depth:
                if text[j] == "(":
                    depth += 1
                elif text[j] == ")":
                    depth -= 1
                j += 1
            if depth:
                raise MalformedPragma(
                    f"unbalanced parentheses after {name!r}: {text!r}")
            control = _canon_control(text[pos + 1:j - 1])
            pos = j
        else:
            pos = after_name
        items.append(PragmaItem(classify(name), name, control))
    return PragmaAst(items=tuple(items), raw=text)


def render_pragma(ast: PragmaAst) -> str:
    """Render an AST in canonical form.

    Single spaces between items, ``name(control)`` with no inner padding; an
    AST with no items renders as the bare prefix.
    """
    parts = [PREFIX]
    for item in ast.items:
        if item.control is None:
            parts.append(item.name)
        else:
            parts.append(f"{item.name}({item.control})")
    return " ".join(parts)


def canonical(text: str) -> str:
    """Parse-then-render shortcut: the canonical form of a pragma line."""
    return render_pragma(parse_pragma(text))


def strict_match(expected: str, generated: str) -> bool:
    """Exact-match criterion: canonical renderings must be identical.

    Order- and control-sensitive. Text that does not parse as a pragma
    never matches; the function is total.
    """
    try:
        exp = canonical(expected)
    except MalformedPragma:
        return False
    try:
        gen = canonical(generated)
    except MalformedPragma:
        return False
    return exp == gen


def _require_known(clause: str) -> None:
    if clause not in KNOWN_NAMES:
        raise UnknownClause(f"not in the OpenMP keyword table: {clause!r}")


def clause_match(expected: PragmaAst, generated: PragmaAst, clause: str) -> bool:
    """Presence-only agreement on one component name.

    True when the expected and generated pragmas agree on whether an item
    named ``clause`` is present; controls are ignored, and agreement on
    absence counts as a match.
    """
    _require_known(clause)
    has_exp = any(item.name == clause for item in expected.items)
    has_gen = any(item.name == clause for item in generated.items)
    return has_exp == has_gen


def clause_and_control_match(expected: PragmaAst, generated: PragmaAst,
                             clause: str) -> bool:
    """Presence agreement plus control-structure equality.

    When the component is present on both sides, the canonicalized control
    texts must be identical too (compared item by item in source order; a
    control on one side with none on the other is a mismatch).
    """
    if not clause_match(expected, generated, clause):
        return False
    exp_controls = [i.control for i in expected.items if i.name == clause]
    gen_controls = [i.control for i in generated.items if i.name == clause]
    return exp_controls == gen_controls


def first_component(continuation: str) -> tuple[PragmaItem | None, str]:
    """Extract the first directive/clause name from raw backend output.

    Returns ``(item, remainder)`` where the item carries only the name (no
    control; those belong to the final generation phase), or ``(None,
    continuation)`` for end-of-pragma: empty text, a newline before any
    name, or leading content that does not lex as a name.
    """
    i = 0
    n = len(continuation)
    while i < n and continuation[i] in " \t":
        i += 1
    if i >= n or continuation[i] in "\r\n":
        return None, continuation
    m = _IDENT_RE.match(continuation, i)
    if m is None:
        return None, continuation
    name = m.group()
    return PragmaItem(classify(name), name, None), continuation[m.end():]
