"""Bigram identifier encoding with a per-example copy mechanism.

Every identifier becomes exactly two subtokens: either ``(token, </t>)``
when the whole token is a known vocabulary entry (or has a single partial
token), or the two halves obtained by splitting its partial-token list at
the midpoint. Out-of-vocabulary halves are replaced, per example, by
indexed ``<var-i>`` placeholders assigned in first-occurrence order, so a
model can predict novel names by reference instead of by content.

Splitting rules (fixed and tested, since reasonable lexers disagree):
underscores separate partials and are never emitted; a camel boundary falls
before an uppercase run's last capital when a lowercase follows; digits
glue to the partial being built. Halves are literal substrings of the
original token, and the separator dropped at the midpoint is recorded so
decoding is exact.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from . import vocab as vocab_mod
from .languages import (CONTROL, IDENTIFIER, Token, classify_texts)
from .vocab import END, Vocabulary


class TokenizerError(ValueError):
    pass


def _partial_spans(token: str) -> list[tuple[int, int]]:
    """Character spans of the partial tokens inside an identifier."""
    spans: list[tuple[int, int]] = []
    start = None
    n = len(token)
    for i, c in enumerate(token):
        if c == "_":
            if start is not None:
                spans.append((start, i))
                start = None
            continue
        if start is None:
            start = i
            continue
        prev = token[i - 1]
        boundary = False
        if c.isupper():
            if prev.islower() or prev.isdigit():
                boundary = True
            elif prev.isupper() and i + 1 < n and token[i + 1].islower():
                boundary = True
        if boundary:
            spans.append((start, i))
            start = i
    if start is not None:
        spans.append((start, n))
    if not spans:
        # all-underscore identifiers ("_", "__") count as one partial
        spans = [(0, n)]
    return spans


def split_identifier(token: str) -> list[str]:
    """Partial tokens of an identifier; underscores are consumed, not emitted."""
    if not token:
        raise TokenizerError("cannot split an empty identifier")
    return [token[a:b] for a, b in _partial_spans(token)]


def _encode_identifier(token: str, vocabulary: Vocabulary | None
                       ) -> tuple[str, str, str | None]:
    """(sub1, sub2, dropped_separator); sub2 == </t> means whole-token form."""
    if not token:
        raise TokenizerError("cannot encode an empty identifier")
    if vocabulary is not None and token in vocabulary:
        return token, END, None
    spans = _partial_spans(token)
    if len(spans) == 1:
        return token, END, None
    k = (len(spans) + 1) // 2  # ceil: first half takes the longer sublist
    left_end = spans[k - 1][1]
    right_start = spans[k][0]
    return token[:left_end], token[right_start:], token[left_end:right_start]


def bigram_encode(token: str, vocabulary: Vocabulary | None = None) -> tuple[str, str]:
    """Length-2 subtoken encoding of one identifier."""
    sub1, sub2, _ = _encode_identifier(token, vocabulary)
    return sub1, sub2


class VarMap:
    """Per-example registry of OOV subtoken strings -> placeholder indices."""

    def __init__(self, budget: int):
        self.budget = budget
        self._index: dict[str, int] = {}
        self.overflowed: list[str] = []

    def lookup(self, subtoken: str) -> int | None:
        return self._index.get(subtoken)

    def assign(self, subtoken: str) -> int | None:
        """Index for ``subtoken``, assigning the next free one; None on overflow."""
        idx = self._index.get(subtoken)
        if idx is not None:
            return idx
        if len(self._index) >= self.budget:
            self.overflowed.append(subtoken)
            return None
        idx = len(self._index)
        self._index[subtoken] = idx
        return idx

    def as_dict(self) -> dict[int, str]:
        return {i: s for s, i in self._index.items()}

    def assignments(self) -> dict[str, int]:
        return dict(self._index)

    def __len__(self) -> int:
        return len(self._index)


@dataclass
class EncodedSequence:
    """Subtoken ids plus what is needed to invert them exactly.

    ``arities[i]`` is how many id positions source token i occupies (2 for
    identifiers, 1 otherwise); ``joins`` holds, per two-half identifier, the
    separator dropped at the split point.
    """
    ids: list[int]
    var_map: dict[int, str]
    source_len: int
    arities: list[int] = field(default_factory=list)
    joins: list[str] = field(default_factory=list)
    overflow_count: int = 0


def encode_sequence(tokens: list[Token], vocabulary: Vocabulary,
                    var_map: VarMap | None = None) -> EncodedSequence:
    """Encode a lexed significant-token sequence.

    Identifiers get the bigram treatment with copy placeholders; everything
    else maps to its single vocabulary id or ``<unk>``. Passing an existing
    ``var_map`` continues an example (the service uses this to keep context
    and candidate placeholders consistent).
    """
    vm = var_map if var_map is not None else VarMap(vocabulary.n_placeholders)
    ids: list[int] = []
    arities: list[int] = []
    joins: list[str] = []

    def subtoken_id(sub: str) -> int:
        known = vocabulary.get(sub)
        if known is not None:
            return known
        idx = vm.assign(sub)
        if idx is None:
            return vocabulary.unk_id
        return vocabulary.placeholder_id(idx)

    for tok in tokens:
        if tok.kind == IDENTIFIER:
            sub1, sub2, sep = _encode_identifier(tok.text, vocabulary)
            ids.append(subtoken_id(sub1))
            if sub2 == END:
                ids.append(vocabulary.end_id)
            else:
                ids.append(subtoken_id(sub2))
                joins.append(sep if sep is not None else "")
            arities.append(2)
        elif tok.kind == CONTROL:
            cid = vocabulary.get(tok.text)
            if cid is None:
                raise TokenizerError(f"control token {tok.text!r} missing from vocabulary")
            ids.append(cid)
            arities.append(1)
        else:
            ids.append(vocabulary.get(tok.text, vocabulary.unk_id))
            arities.append(1)

    return EncodedSequence(
        ids=ids,
        var_map=vm.as_dict(),
        source_len=len(tokens),
        arities=arities,
        joins=joins,
        overflow_count=len(vm.overflowed),
    )


def decode(encoded: EncodedSequence, vocabulary: Vocabulary) -> list[str]:
    """Exact inverse of encode_sequence on identifier content.

    Non-identifier tokens that fell to ``<unk>`` decode as the literal
    ``<unk>`` marker; identifier halves always resolve through the
    vocabulary or the example's var_map.
    """

    def resolve(token_id: int) -> str:
        idx = vocabulary.placeholder_index(token_id)
        if idx is not None:
            try:
                return encoded.var_map[idx]
            except KeyError:
                raise TokenizerError(
                    f"placeholder <var-{idx}> missing from var_map (corrupted example)"
                ) from None
        return vocabulary.string(token_id)

    out: list[str] = []
    pos = 0
    join_iter = iter(encoded.joins)
    for arity in encoded.arities:
        if arity == 1:
            out.append(resolve(encoded.ids[pos]))
            pos += 1
            continue
        first, second = encoded.ids[pos], encoded.ids[pos + 1]
        pos += 2
        if second == vocabulary.end_id:
            out.append(resolve(first))
        else:
            out.append(resolve(first) + next(join_iter) + resolve(second))
    if pos != len(encoded.ids):
        raise TokenizerError("arity table does not cover the id sequence")
    return out


def count_units(tokens: list[Token], counts: Counter) -> None:
    """Accumulate vocabulary units for one token sequence.

    Identifiers contribute their whole string plus their two midpoint
    halves, so frequent names end up in-vocab (taking the whole-token
    encoding) while rarer ones stay compositional. Other significant
    tokens contribute their text; control tokens are specials and skipped.
    """
    for tok in tokens:
        if tok.kind == IDENTIFIER:
            counts[tok.text] += 1
            sub1, sub2, _ = _encode_identifier(tok.text, None)
            if sub2 != END:
                counts[sub1] += 1
                counts[sub2] += 1
        elif tok.kind != CONTROL:
            counts[tok.text] += 1


def build_vocab(datasets, cutoff: int = vocab_mod.DEFAULT_CUTOFF,
                n_placeholders: int = vocab_mod.DEFAULT_PLACEHOLDERS) -> Vocabulary:
    """Frequency table over bigram-encoded corpora -> Vocabulary.

    Accepts any iterable of datasets whose items are either token sequences
    (``.tokens`` + ``.language``) or completion events (context + accepted).
    """
    counts: Counter = Counter()
    for ds in datasets:
        for item in ds.items:
            if hasattr(item, "tokens"):
                stream = classify_texts(item.tokens, item.language)
            else:
                stream = classify_texts(
                    list(item.context_tokens) + [item.accepted], item.language)
            count_units(stream, counts)
    return vocab_mod.build_from_counts(counts, cutoff=cutoff, n_placeholders=n_placeholders)
