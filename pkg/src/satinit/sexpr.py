"""Minimal s-expression reader for SMT-LIB solver output."""
from __future__ import annotations

from fractions import Fraction


class ParseError(ValueError):
    def __init__(self, msg, offset=None):
        self.offset = offset
        super().__init__(msg if offset is None else f"{msg} (at byte {offset})")


class Symbol(str):
    """Bare token; plain ``str`` is used for string literals."""

    def __repr__(self):
        return f"Symbol({str.__repr__(self)})"


class StringLit(str):
    def __repr__(self):
        return f"StringLit({str.__repr__(self)})"


def _skip(text: str, i: int) -> int:
    n = len(text)
    while i < n:
        c = text[i]
        if c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            break
    return i


def _read(text: str, i: int):
    c = text[i]
    if c == "(":
        start = i
        items = []
        i += 1
        while True:
            i = _skip(text, i)
            if i >= len(text):
                raise ParseError("unclosed '('", start)
            if text[i] == ")":
                return items, i + 1
            item, i = _read(text, i)
            items.append(item)
    if c == ")":
        raise ParseError("unexpected ')'", i)
    if c == '"':
        start = i
        i += 1
        buf = []
        while True:
            if i >= len(text):
                raise ParseError("unterminated string literal", start)
            if text[i] == '"':
                # SMT-LIB escapes a quote by doubling it
                if text.startswith('""', i):
                    buf.append('"')
                    i += 2
                    continue
                return StringLit("".join(buf)), i + 1
            buf.append(text[i])
            i += 1
    if c == "|":
        end = text.find("|", i + 1)
        if end < 0:
            raise ParseError("unterminated quoted symbol", i)
        return Symbol(text[i + 1:end]), end + 1
    start = i
    while i < len(text) and not text[i].isspace() and text[i] not in '();"|':
        i += 1
    return Symbol(text[start:i]), i


def parse_all(text: str) -> list:
    out = []
    i = _skip(text, 0)
    while i < len(text):
        item, i = _read(text, i)
        out.append(item)
        i = _skip(text, i)
    return out


def parse(text: str):
    items = parse_all(text)
    if len(items) != 1:
        raise ParseError(f"expected one expression, found {len(items)}")
    return items[0]


def to_text(expr) -> str:
    if isinstance(expr, list):
        return "(" + " ".join(to_text(e) for e in expr) + ")"
    if isinstance(expr, StringLit):
        return '"' + expr.replace('"', '""') + '"'
    return str(expr)


def numeral_value(expr) -> Fraction:
    """Exact value of an SMT-LIB real constant term.

    Accepts numerals, decimals, and ``/``, ``-``, ``+``, ``*`` applied to
    such terms (the forms solvers print in models).
    """
    if isinstance(expr, Symbol):
        s = str(expr)
        if s and (s[0].isdigit() or (s[0] == "." and len(s) > 1)):
            try:
                return Fraction(s)
            except ValueError:
                pass
        raise ValueError(f"not a numeric literal: {s!r}")
    if isinstance(expr, list) and expr and isinstance(expr[0], Symbol):
        op, args = str(expr[0]), [numeral_value(a) for a in expr[1:]]
        if op == "-" and len(args) == 1:
            return -args[0]
        if op == "-" and args:
            out = args[0]
            for a in args[1:]:
                out -= a
            return out
        if op == "+" and args:
            return sum(args, Fraction(0))
        if op == "*" and args:
            out = Fraction(1)
            for a in args:
                out *= a
            return out
        if op == "/" and len(args) >= 2:
            out = args[0]
            for a in args[1:]:
                if a == 0:
                    raise ValueError("division by zero in literal")
                out /= a
            return out
    raise ValueError(f"not a numeric literal: {to_text(expr)}")
