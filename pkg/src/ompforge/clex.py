"""Lexical tokenizer for C/C++ source text.

Splits text into code tokens: identifiers, preprocessor-style numbers,
string/character literals as single tokens, multi-character operators by
maximal munch, and one token per remaining punctuation character. Unknown
bytes become single-character tokens, so tokenization never fails.
Whitespace separates tokens and is not itself a token.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


@dataclass(frozen=True)
class Token:
    value: str
    start: int

    @property
    def end(self) -> int:
        return self.start + len(self.value)


# pp-number covers every C/C++ numeric literal form including suffixes and
# hex floats (1.e+5f, 0x1.8p3, 100ULL) without enumerating them; the
# signed-exponent pair must come first in the alternation or the bare
# letter match would strand the sign.
_STRING = r'(?:u8|u|U|L)?"(?:\\.|[^"\\\n])*"'
_CHAR = r"(?:u8|u|U|L)?'(?:\\.|[^'\\\n])*'"
_NUMBER = r"\.?[0-9](?:[eEpP][+-]|[0-9a-zA-Z_.])*"
_IDENT = r"[A-Za-z_$][A-Za-z0-9_$]*"

_OPERATORS = [
    "<<=", ">>=", "...", "->*",
    "::", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "##", ".*",
]
_OPERATORS.sort(key=len, reverse=True)

_MASTER = re.compile("|".join(
    [_STRING, _CHAR, _NUMBER, _IDENT] + [re.escape(op) for op in _OPERATORS]
))

_WHITESPACE = " \t\r\n\f\v"


def tokenize(text: str) -> list[Token]:
    """Tokenize ``text``, keeping the start offset of every token."""
    tokens: list[Token] = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos] in _WHITESPACE:
            pos += 1
            continue
        m = _MASTER.match(text, pos)
        if m is not None:
            tokens.append(Token(m.group(), pos))
            pos = m.end()
        else:
            tokens.append(Token(text[pos], pos))
            pos += 1
    return tokens


def token_values(text: str) -> list[str]:
    """Tokenize and return just the token strings."""
    return [tok.value for tok in tokenize(text)]


def count_tokens(text: str) -> int:
    return len(tokenize(text))


_WORD_CHAR = re.compile(r"[A-Za-z0-9_$]")


def joiner(previous: str, current: str) -> str:
    """Separator to place between two adjacent tokens when re-joining.

    A space where gluing would merge identifier/number characters, and
    after a closing parenthesis before a name, which reproduces the
    canonical spacing of rendered pragmas (``reduction(+:sum) private(v)``,
    ``schedule(static,4)``); every other adjacency stays tight.
    """
    if not previous or not _WORD_CHAR.match(current[0]):
        return ""
    if _WORD_CHAR.match(previous[-1]) or previous[-1] == ")":
        return " "
    return ""


def detokenize(tokens: list[str]) -> str:
    """Join tokens back into text with :func:`joiner` spacing."""
    out: list[str] = []
    for tok in tokens:
        if out:
            out.append(joiner(out[-1], tok))
        out.append(tok)
    return "".join(out)
