"""Textual concrete syntax: parser to the semantic model and canonical formatter."""

from .lexer import Token, tokenize
from .parser import ParseError, ParseResult, parse, parse_model
from .formatter import format_model

__all__ = [
    "Token",
    "tokenize",
    "ParseError",
    "ParseResult",
    "parse",
    "parse_model",
    "format_model",
]
