"""Subtoken vocabulary: dense ids, special tokens, union, TSV persistence.

Layout is fixed: ``<pad>``, ``<unk>``, ``</t>``, then the copy-mechanism
placeholders ``<var-0>..<var-N-1>``, then one ``<lang-*>`` control token per
registered language, then corpus entries ordered by (-count, subtoken).
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field

from . import languages

PAD = "<pad>"
UNK = "<unk>"
END = "</t>"

DEFAULT_PLACEHOLDERS = 64
DEFAULT_CUTOFF = 2


def var_token(i: int) -> str:
    return f"<var-{i}>"


@dataclass
class Vocabulary:
    subtokens: list[str]
    counts: list[int]
    n_placeholders: int = DEFAULT_PLACEHOLDERS
    id_of: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.id_of:
            self.id_of = {s: i for i, s in enumerate(self.subtokens)}
        if len(self.id_of) != len(self.subtokens):
            raise ValueError("duplicate subtoken strings in vocabulary")

    # -- structural accessors -------------------------------------------------

    def __len__(self) -> int:
        return len(self.subtokens)

    def __contains__(self, subtoken: str) -> bool:
        return subtoken in self.id_of

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def end_id(self) -> int:
        return 2

    @property
    def n_specials(self) -> int:
        return 3 + self.n_placeholders + len(languages.registered_languages())

    def placeholder_id(self, index: int) -> int:
        if not 0 <= index < self.n_placeholders:
            raise IndexError(f"placeholder index {index} out of budget")
        return 3 + index

    def placeholder_index(self, token_id: int) -> int | None:
        """Inverse of placeholder_id; None for non-placeholder ids."""
        if 3 <= token_id < 3 + self.n_placeholders:
            return token_id - 3
        return None

    def lang_id(self, language: str) -> int:
        return self.id_of[languages.lang_control_token(language)]

    def get(self, subtoken: str, default: int | None = None) -> int | None:
        return self.id_of.get(subtoken, default)

    def string(self, token_id: int) -> str:
        return self.subtokens[token_id]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for s, c in zip(self.subtokens, self.counts):
            h.update(f"{s}\t{c}\n".encode("utf-8"))
        return h.hexdigest()[:16]

    # -- persistence -----------------------------------------------------------

    def dump(self) -> str:
        return "".join(f"{s}\t{c}\n" for s, c in zip(self.subtokens, self.counts))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.dump())

    @classmethod
    def from_dump(cls, text: str) -> "Vocabulary":
        subtokens, counts = [], []
        for line in text.splitlines():
            if not line:
                continue
            s, c = line.split("\t")
            subtokens.append(s)
            counts.append(int(c))
        n_placeholders = sum(1 for s in subtokens if s.startswith("<var-"))
        return cls(subtokens, counts, n_placeholders)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls.from_dump(f.read())


def _specials(n_placeholders: int) -> list[str]:
    out = [PAD, UNK, END]
    out.extend(var_token(i) for i in range(n_placeholders))
    out.extend(languages.lang_control_token(l) for l in languages.registered_languages())
    return out


def build_from_counts(counts: Counter, cutoff: int = DEFAULT_CUTOFF,
                      n_placeholders: int = DEFAULT_PLACEHOLDERS) -> Vocabulary:
    """Assemble a vocabulary from a subtoken frequency table.

    Entries below ``cutoff`` are dropped; ordering is (-count, subtoken) so a
    rebuild on identical corpora is byte-identical.
    """
    specials = _specials(n_placeholders)
    special_set = set(specials)
    kept = sorted(
        ((s, c) for s, c in counts.items() if c >= cutoff and s not in special_set),
        key=lambda sc: (-sc[1], sc[0]),
    )
    subtokens = specials + [s for s, _ in kept]
    col = [0] * len(specials) + [c for _, c in kept]
    return Vocabulary(subtokens, col, n_placeholders)


def union(a: Vocabulary, b: Vocabulary) -> Vocabulary:
    """Entry-wise union with counts summed; specials are shared."""
    if a.n_placeholders != b.n_placeholders:
        raise ValueError("cannot union vocabularies with different placeholder budgets")
    merged: Counter = Counter()
    for voc in (a, b):
        for s, c in zip(voc.subtokens[voc.n_specials:], voc.counts[voc.n_specials:]):
            merged[s] += c
    # cutoff=1: both inputs already applied their own cutoffs
    return build_from_counts(merged, cutoff=1, n_placeholders=a.n_placeholders)
