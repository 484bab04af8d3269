"""Tokenizer for the statement language.

Keywords are matched case-insensitively by the parser; identifier tokens
keep their original spelling. `//` starts a line comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class ParseError(ValueError):
    """Syntax error with 1-based position information."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} at line {line}, column {col}")
        self.message = message
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT | STRING | INT | FLOAT | OP | EOF
    value: str
    line: int
    col: int
    number: object = None  # parsed numeric payload for INT/FLOAT


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<float>\d+\.\d+(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\.\d+(?:[eE][-+]?\d+)?)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"(?:[^"\\\x00-\x1f]|\\.)*")
  | (?P<op><=|>=|!=|[-+*/(){}\[\],;:.=<>?])
    """,
    re.VERBOSE,
)

_ESCAPES = {'"': '"', "\\": "\\", "/": "/", "b": "\b", "f": "\f", "n": "\n", "r": "\r", "t": "\t"}


def _unescape(body: str, line: int, col: int) -> str:
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        esc = body[i + 1]
        if esc in _ESCAPES:
            out.append(_ESCAPES[esc])
            i += 2
        elif esc == "u":
            hexs = body[i + 2 : i + 6]
            if len(hexs) != 4:
                raise ParseError("malformed \\u escape", line, col)
            try:
                out.append(chr(int(hexs, 16)))
            except ValueError:
                raise ParseError("malformed \\u escape", line, col) from None
            i += 6
        else:
            raise ParseError(f"bad escape \\{esc}", line, col)
    return "".join(out)


def tokenize(text: str) -> list:
    tokens = []
    pos = 0
    line = 1
    line_start = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(
                f"unexpected character {text[pos]!r}", line, pos - line_start + 1
            )
        col = pos - line_start + 1
        kind = m.lastgroup
        raw = m.group(0)
        if kind == "ws" or kind == "comment":
            pass
        elif kind == "float":
            tokens.append(Token("FLOAT", raw, line, col, float(raw)))
        elif kind == "int":
            tokens.append(Token("INT", raw, line, col, int(raw)))
        elif kind == "ident":
            tokens.append(Token("IDENT", raw, line, col))
        elif kind == "string":
            tokens.append(Token("STRING", _unescape(raw[1:-1], line, col), line, col))
        else:
            tokens.append(Token("OP", raw, line, col))
        newlines = raw.count("\n")
        if newlines:
            line += newlines
            line_start = pos + raw.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("EOF", "", line, n - line_start + 1))
    return tokens
