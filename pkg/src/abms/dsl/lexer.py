"""Tokenizer for the modeling language.

Total over arbitrary input: unknown characters and unterminated strings
become error tokens for the parser to report, never exceptions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..source import SourceSpan

KEYWORDS = frozenset(
    """
    model environment grid width height wrap cartesian graph from
    agent entity create fixed random at gis osm edges node edge
    attr integer real boolean identifier text
    capability mobility random_walk step disease state_machine flow_control
    streams auto stream capacity qlearning alpha gamma epsilon plans bins
    reward external adaptation
    machine initial state transition guard abort to
    plan phase green duration
    probabilistic deterministic conditional custom all_of any_of rate
    transmission proximity contact probability infectious condition sources
    passive immunity mortality
    every_timeunit specific_timeunit when_condition leaving_compartment
    states introduce arbitrary eligible aperiodic periodic
    output every series concern members
    count sum where is and or not true false
    """.split()
)

_TOKEN_RE = re.compile(
    r"""
      (?P<ws>[\s]+)
    | (?P<comment>\#[^\n]*)
    | (?P<real>\d+\.\d+)
    | (?P<int>\d+)
    | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<string>"(?:\\.|[^"\\\n])*")
    | (?P<badstring>"(?:\\.|[^"\\\n])*)
    | (?P<punct>\.\.|==|!=|<=|>=|[{}(),.=<>+\-*/])
    | (?P<error>.)
    """,
    re.VERBOSE | re.DOTALL,
)

_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}


@dataclass(frozen=True)
class Token:
    type: str  # kw | ident | int | real | string | punct | error | eof
    value: object  # parsed value (str for idents/kw/punct, numbers for literals)
    text: str
    line: int
    col: int
    end_line: int
    end_col: int

    def span(self, file: str) -> SourceSpan:
        return SourceSpan(file, self.line, self.col, self.end_line, self.end_col)

    def describe(self) -> str:
        if self.type == "eof":
            return "end of input"
        if self.type in ("kw", "punct"):
            return f"'{self.text}'"
        if self.type == "ident":
            return f"identifier '{self.text}'"
        return self.type


def _unescape(body: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body):
            out.append(_ESCAPES.get(body[i + 1], body[i + 1]))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def tokenize(text: str) -> list[Token]:
    """Tokens for ``text``, always ending with a single eof token."""
    tokens: list[Token] = []
    line, col = 1, 1
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        assert m is not None  # the error alternative matches any character
        kind = m.lastgroup or "error"
        raw = m.group()
        start_line, start_col = line, col
        newlines = raw.count("\n")
        if newlines:
            line += newlines
            col = len(raw) - raw.rfind("\n")
        else:
            col += len(raw)
        pos = m.end()
        if kind in ("ws", "comment"):
            continue
        end_line, end_col = line, col
        if kind == "int":
            tokens.append(Token("int", int(raw), raw, start_line, start_col, end_line, end_col))
        elif kind == "real":
            tokens.append(Token("real", float(raw), raw, start_line, start_col, end_line, end_col))
        elif kind == "ident":
            ttype = "kw" if raw in KEYWORDS else "ident"
            tokens.append(Token(ttype, raw, raw, start_line, start_col, end_line, end_col))
        elif kind == "string":
            tokens.append(Token("string", _unescape(raw[1:-1]), raw, start_line, start_col, end_line, end_col))
        elif kind == "badstring":
            tokens.append(Token("error", "unterminated string", raw, start_line, start_col, end_line, end_col))
        elif kind == "punct":
            tokens.append(Token("punct", raw, raw, start_line, start_col, end_line, end_col))
        else:
            tokens.append(Token("error", f"unexpected character {raw!r}", raw, start_line, start_col, end_line, end_col))
    tokens.append(Token("eof", "", "", line, col, line, col))
    return tokens
