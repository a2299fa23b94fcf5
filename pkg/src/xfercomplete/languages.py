"""Language registry and lossless lexing for the two sample languages.

Two toy-but-plausible languages stand in for a production multi-language
corpus: ``curly`` (camelCase identifiers, brace/semicolon syntax) and
``snake`` (snake_case identifiers, indentation syntax). Lexing is lossless:
every character of the input belongs to exactly one token, so concatenating
token texts reconstructs the source byte-for-byte. Whitespace and comments
come back as ``other`` tokens; model-facing pipelines drop them via
:func:`significant`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

IDENTIFIER = "identifier"
KEYWORD = "keyword"
PUNCTUATION = "punctuation"
LITERAL = "literal"
OTHER = "other"
CONTROL = "control"  # synthetic <lang-*> tokens, never produced by lex()

TOKEN_KINDS = (IDENTIFIER, KEYWORD, PUNCTUATION, LITERAL, OTHER)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")
_STRING_RE = re.compile(r"\"(?:[^\"\\\n]|\\.)*\"|'(?:[^'\\\n]|\\.)*'")
_SPACE_RE = re.compile(r"[ \t\r\n]+")
_CONTROL_RE = re.compile(r"<lang-([a-z]+)>\Z")

# Longest-match-first operator table shared by both languages.
_OPERATORS = (
    "===", "!==", "==", "!=", "<=", ">=", "&&", "||", "->", "=>", "+=", "-=",
    "*=", "/=", "**", "//", "::", "{", "}", "(", ")", "[", "]", ";", ",", ".",
    ":", "=", "+", "-", "*", "/", "%", "<", ">", "!", "&", "|", "^", "~", "?",
    "@", "#",
)


class LexError(ValueError):
    """Raised for unregistered languages or undecodable content."""


@dataclass(frozen=True)
class Token:
    kind: str
    text: str

    def __post_init__(self) -> None:
        if self.kind not in TOKEN_KINDS + (CONTROL,):
            raise ValueError(f"unknown token kind {self.kind!r}")


@dataclass(frozen=True)
class Language:
    name: str
    keywords: frozenset[str]
    line_comment: str
    # Keywords that introduce a fresh declaration; the identifier right after
    # one is never an eligible completion target.
    declaration_keywords: frozenset[str]
    identifier_style: str  # "camel" | "snake", used by the corpus generator
    default_candidate_mean: float = 26.3


_REGISTRY: dict[str, Language] = {}


def register(language: Language) -> None:
    _REGISTRY[language.name] = language


def get_language(name: str) -> Language:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise LexError(f"unregistered language {name!r}") from None


def registered_languages() -> list[str]:
    return sorted(_REGISTRY)


register(Language(
    name="curly",
    keywords=frozenset("""
        function return if else for while class new let const import export
        extends this true false null break continue
    """.split()),
    line_comment="//",
    declaration_keywords=frozenset({"function", "class", "let", "const"}),
    identifier_style="camel",
    default_candidate_mean=99.5,
))

register(Language(
    name="snake",
    keywords=frozenset("""
        def return if elif else for while class import from pass in not and or
        lambda with as None True False break continue
    """.split()),
    line_comment="#",
    declaration_keywords=frozenset({"def", "class"}),
    identifier_style="snake",
    default_candidate_mean=26.3,
))


def lang_control_token(name: str) -> str:
    get_language(name)
    return f"<lang-{name}>"


def control_token_language(text: str) -> str | None:
    """Language name if ``text`` is a registered control token, else None."""
    m = _CONTROL_RE.match(text)
    if m and m.group(1) in _REGISTRY:
        return m.group(1)
    return None


def lex(content: str, language: str) -> list[Token]:
    """Lex source text into a lossless token stream.

    Every character lands in exactly one token; whitespace and comments are
    ``other`` tokens, so ``detokenize(lex(s)) == s``.
    """
    lang = get_language(language)
    if not isinstance(content, str):
        raise LexError("content must be text; decode bytes before lexing")
    if "\x00" in content:
        raise LexError("binary content (NUL byte) cannot be lexed")

    tokens: list[Token] = []
    i, n = 0, len(content)
    while i < n:
        m = _SPACE_RE.match(content, i)
        if m:
            tokens.append(Token(OTHER, m.group()))
            i = m.end()
            continue
        if content.startswith(lang.line_comment, i):
            end = content.find("\n", i)
            end = n if end == -1 else end
            tokens.append(Token(OTHER, content[i:end]))
            i = end
            continue
        m = _STRING_RE.match(content, i)
        if m:
            tokens.append(Token(LITERAL, m.group()))
            i = m.end()
            continue
        m = _NUMBER_RE.match(content, i)
        if m:
            tokens.append(Token(LITERAL, m.group()))
            i = m.end()
            continue
        m = _IDENT_RE.match(content, i)
        if m:
            text = m.group()
            kind = KEYWORD if text in lang.keywords else IDENTIFIER
            tokens.append(Token(kind, text))
            i = m.end()
            continue
        for op in _OPERATORS:
            if content.startswith(op, i):
                tokens.append(Token(PUNCTUATION, op))
                i += len(op)
                break
        else:
            tokens.append(Token(OTHER, content[i]))
            i += 1
    return tokens


def detokenize(tokens: list[Token]) -> str:
    return "".join(t.text for t in tokens)


def significant(tokens: list[Token]) -> list[Token]:
    """Drop whitespace/comment tokens; keeps everything a model should see."""
    return [t for t in tokens if t.kind != OTHER]


def classify_text(text: str, language: str) -> Token:
    """Re-derive a significant token's kind from its text.

    Used when token sequences round-trip through JSONL (which stores texts
    only). Control tokens classify as CONTROL; they are introduced by
    language tagging, never by the lexer.
    """
    lang = get_language(language)
    if control_token_language(text) is not None:
        return Token(CONTROL, text)
    if _IDENT_RE.fullmatch(text):
        if text in lang.keywords:
            return Token(KEYWORD, text)
        return Token(IDENTIFIER, text)
    if _NUMBER_RE.fullmatch(text) or _STRING_RE.fullmatch(text):
        return Token(LITERAL, text)
    return Token(PUNCTUATION, text)


def classify_texts(texts: list[str], language: str) -> list[Token]:
    return [classify_text(t, language) for t in texts]


def is_identifier_text(text: str) -> bool:
    return bool(_IDENT_RE.fullmatch(text))
