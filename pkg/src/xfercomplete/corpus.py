"""Dataset construction: four corpus roles, event synthesis, splits, JSONL IO.

The four roles mirror the stages code moves through: ``ide`` (authoring-time
snapshots), ``commit`` (version-control files, a drifted distribution),
``autocompletion`` (logged accept events, the task-specific supervision),
and ``all`` (union of autocompletion and ide). Real acceptance telemetry is
not available at desk scale, so events are synthesized from source trees:
the accepted token is a real identifier occurrence and the candidate list
mixes same-file identifiers with corpus-frequent ones.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
from collections import Counter
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import languages
from .languages import (IDENTIFIER, KEYWORD, LexError, Token, get_language,
                        lang_control_token, lex, significant)
from .util import derive_seed, stable_hash

ROLE_AUTOCOMPLETION = "autocompletion"
ROLE_IDE = "ide"
ROLE_COMMIT = "commit"
ROLE_ALL = "all"
ROLES = (ROLE_AUTOCOMPLETION, ROLE_IDE, ROLE_COMMIT, ROLE_ALL)

ORIGIN_IDE = "ide_snapshot"
ORIGIN_COMMIT = "commit"
ORIGIN_ACCEPTANCE = "acceptance_log"
ORIGINS = (ORIGIN_IDE, ORIGIN_COMMIT, ORIGIN_ACCEPTANCE)

_EVENT_EPOCH = _dt.date(2024, 3, 4)


class CorpusError(ValueError):
    pass


@dataclass
class SourceDocument:
    path: str
    language: str
    content: str
    origin: str
    cursor_offset: int | None = None

    def __post_init__(self) -> None:
        get_language(self.language)
        if self.origin not in ORIGINS:
            raise CorpusError(f"unknown origin {self.origin!r} for {self.path}")
        if self.cursor_offset is not None and not (
                0 <= self.cursor_offset <= len(self.content)):
            raise CorpusError(
                f"cursor_offset {self.cursor_offset} outside [0, {len(self.content)}] "
                f"for {self.path}")


@dataclass
class CompletionEvent:
    id: str
    language: str
    context_tokens: list[str]
    candidates: list[str]
    accepted: str
    developer_id: str
    day: str

    def __post_init__(self) -> None:
        get_language(self.language)
        if not self.context_tokens:
            raise CorpusError(f"event {self.id}: empty context")
        if not self.candidates:
            raise CorpusError(f"event {self.id}: empty candidate list")
        if len(set(self.candidates)) != len(self.candidates):
            raise CorpusError(f"event {self.id}: duplicate candidates")
        if self.accepted not in self.candidates:
            raise CorpusError(f"event {self.id}: accepted token not among candidates")
        if not languages.is_identifier_text(self.accepted) or \
                self.accepted in get_language(self.language).keywords:
            raise CorpusError(
                f"event {self.id}: accepted {self.accepted!r} is not an "
                f"identifier-class token")


@dataclass
class SequenceItem:
    id: str
    language: str
    tokens: list[str]


@dataclass
class Dataset:
    role: str
    languages: set[str]
    items: list
    split: str = "train"

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise CorpusError(f"unknown dataset role {self.role!r}")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class EventPolicy:
    """Knobs for event synthesis.

    ``candidate_mean`` feeds a Poisson candidate-list sizer (or a constant
    when ``size_distribution`` is "fixed"); ``sample_rate`` is the fraction
    of eligible identifier occurrences that become events. Member accesses
    (the identifier right after a '.') are the canonical IDE completion and
    get ``member_bias`` times the base sampling rate.
    """
    candidate_mean: float = 26.3
    size_distribution: str = "poisson"  # "poisson" | "fixed"
    min_candidates: int = 2
    sample_rate: float = 0.25
    member_bias: float = 4.0
    # Distractors: in-scope names visible in the context window first (what
    # a static-analysis suggestion list really contains), then other
    # same-file names, then corpus-frequent ones.
    context_distractor_share: float = 0.5
    max_context_tokens: int = 96
    min_context_tokens: int = 4
    frequent_pool_size: int = 200


def document_tokens(doc: SourceDocument) -> list[Token]:
    """Significant lexical tokens of a document."""
    return significant(lex(doc.content, doc.language))


def eligible_sites(tokens: list[Token], language: str,
                   ambient_scope: set[str] | None = None) -> list[int]:
    """Indices of identifier occurrences an IDE would offer to complete.

    A suggestion engine only offers names that are in scope, so a site is
    eligible when its identifier was already seen earlier in the document
    or belongs to the ambient scope (imports / corpus-frequent library
    names). Member accesses (right after '.') are always eligible: static
    analysis enumerates members from the receiver, not from the local
    text. Occurrences right after a declaration keyword are fresh names
    and never eligible.
    """
    lang = get_language(language)
    ambient = ambient_scope or set()
    seen: set[str] = set()
    sites = []
    for i, tok in enumerate(tokens):
        if tok.kind != IDENTIFIER:
            continue
        prev = tokens[i - 1] if i > 0 else None
        declaration = (prev is not None and prev.kind == KEYWORD
                       and prev.text in lang.declaration_keywords)
        member = prev is not None and prev.text == "."
        if i > 0 and not declaration and \
                (member or tok.text in seen or tok.text in ambient):
            sites.append(i)
        seen.add(tok.text)
    return sites


def _event_identity(doc: SourceDocument, site: int, accepted: str) -> tuple[str, str, str]:
    h = stable_hash("event", doc.path, site, accepted)
    event_id = f"ev-{h:016x}"
    developer = f"dev-{h % 12:02d}"
    day = (_EVENT_EPOCH + _dt.timedelta(days=(h >> 8) % 14)).isoformat()
    return event_id, developer, day


def synthesize_events(documents: list[SourceDocument], policy: EventPolicy,
                      seed: int) -> list[CompletionEvent]:
    """Turn identifier occurrences in source trees into accept events.

    For each sampled eligible site the accepted token is the identifier that
    is really there; distractors come half from the same file and half from
    a corpus-frequency-weighted pool, deduplicated and sized per policy.
    Deterministic for a fixed (documents, policy, seed).
    """
    docs = sorted(documents, key=lambda d: d.path)
    corpus_freq: Counter = Counter()
    lexed: dict[str, list[Token]] = {}
    for doc in docs:
        toks = document_tokens(doc)
        lexed[doc.path] = toks
        lang = get_language(doc.language)
        for t in toks:
            if t.kind == IDENTIFIER and t.text not in lang.keywords:
                corpus_freq[t.text] += 1

    pool = corpus_freq.most_common(policy.frequent_pool_size)
    pool_tokens = [t for t, _ in pool]
    pool_weights = np.array([c for _, c in pool], dtype=np.float64)
    if pool_weights.size:
        pool_weights /= pool_weights.sum()

    ambient = {t for t, _ in pool}
    events: list[CompletionEvent] = []
    for doc in docs:
        rng = np.random.default_rng(derive_seed(seed, doc.path))
        toks = lexed[doc.path]
        file_idents = sorted({t.text for t in toks if t.kind == IDENTIFIER})
        sites = [i for i in eligible_sites(toks, doc.language, ambient)
                 if i >= policy.min_context_tokens]
        if not sites:
            continue
        rates = np.array([
            min(1.0, policy.sample_rate *
                (policy.member_bias if toks[i - 1].text == "." else 1.0))
            for i in sites])
        keep = rng.random(len(sites)) < rates
        for site, kept in zip(sites, keep):
            if not kept:
                continue
            accepted = toks[site].text
            if policy.size_distribution == "fixed":
                size = int(round(policy.candidate_mean))
            else:
                size = int(rng.poisson(policy.candidate_mean))
            size = max(size, policy.min_candidates)

            chosen: list[str] = [accepted]
            seen = {accepted}
            window = toks[max(0, site - policy.max_context_tokens):site]
            ctx_idents = sorted({t.text for t in window
                                 if t.kind == IDENTIFIER and t.text != accepted})
            n_ctx = int((size - 1) * policy.context_distractor_share)
            if ctx_idents:
                picks = rng.permutation(len(ctx_idents))[:n_ctx]
                for j in picks:
                    chosen.append(ctx_idents[j])
                    seen.add(ctx_idents[j])
            n_local = (size - 1 - (len(chosen) - 1)) // 2
            local_pool = [t for t in file_idents if t not in seen]
            if local_pool:
                picks = rng.permutation(len(local_pool))[:n_local]
                for j in picks:
                    chosen.append(local_pool[j])
                    seen.add(local_pool[j])
            while len(chosen) < size:
                remaining = [j for j, t in enumerate(pool_tokens) if t not in seen]
                if not remaining:
                    break
                w = pool_weights[remaining]
                draw = rng.choice(remaining, size=min(size - len(chosen), len(remaining)),
                                  replace=False, p=w / w.sum())
                for j in draw:
                    chosen.append(pool_tokens[j])
                    seen.add(pool_tokens[j])
            order = rng.permutation(len(chosen))
            candidates = [chosen[j] for j in order]

            context = [t.text for t in toks[:site]][-policy.max_context_tokens:]
            event_id, developer, day = _event_identity(doc, site, accepted)
            events.append(CompletionEvent(
                id=event_id, language=doc.language, context_tokens=context,
                candidates=candidates, accepted=accepted,
                developer_id=developer, day=day))
    return events


def build_dataset(role: str, language: str,
                  documents: list[SourceDocument] | None = None,
                  events: list[CompletionEvent] | None = None) -> Dataset:
    """One leaf-role dataset (ide/commit sequences or autocompletion events)."""
    if role == ROLE_AUTOCOMPLETION:
        if not events:
            raise CorpusError("autocompletion dataset requires completion events")
        bad = [e.id for e in events if e.language != language]
        if bad:
            raise CorpusError(f"event {bad[0]} is not in language {language!r}")
        return Dataset(role, {language}, list(events))
    if role in (ROLE_IDE, ROLE_COMMIT):
        expected = ORIGIN_IDE if role == ROLE_IDE else ORIGIN_COMMIT
        if not documents:
            raise CorpusError(f"{role} dataset requires source documents")
        items = []
        for doc in sorted(documents, key=lambda d: d.path):
            if doc.origin != expected:
                raise CorpusError(
                    f"document {doc.path}: origin {doc.origin!r} does not match "
                    f"role {role!r}")
            if doc.language != language:
                raise CorpusError(f"document {doc.path}: language mismatch")
            toks = [t.text for t in document_tokens(doc)]
            items.append(SequenceItem(id=doc.path, language=language, tokens=toks))
        return Dataset(role, {language}, items)
    raise CorpusError(f"build_dataset does not handle role {role!r}; "
                      f"use union_datasets for 'all'")


def union_datasets(autocompletion: Dataset, ide: Dataset) -> Dataset:
    """The 'all' role: exact multiset union of autocompletion and ide items."""
    if autocompletion.role != ROLE_AUTOCOMPLETION or ide.role != ROLE_IDE:
        raise CorpusError("union_datasets expects (autocompletion, ide) datasets")
    return Dataset(ROLE_ALL, set(autocompletion.languages) | set(ide.languages),
                   list(autocompletion.items) + list(ide.items))


def tag_language(sequence: list[str], language: str) -> list[str]:
    """Prepend the language control token; double-tagging is an error."""
    control = lang_control_token(language)
    if sequence and languages.control_token_language(sequence[0]) is not None:
        raise CorpusError(
            f"sequence already starts with control token {sequence[0]!r}")
    return [control] + list(sequence)


def _item_id(item) -> str:
    return item.id


def split_holdout(dataset: Dataset, fraction: float = 0.10,
                  seed: int = 0) -> tuple[Dataset, Dataset]:
    """Deterministic train/heldout partition keyed by item id.

    Items are ordered by a salted hash of their id and the lowest
    ``round(fraction*n)`` go to heldout, so membership is a function of
    (seed, id) ranking rather than input order.
    """
    if not 0 < fraction < 1:
        raise CorpusError(f"fraction must be in (0,1), got {fraction}")
    n = len(dataset.items)
    if n == 0:
        raise CorpusError("cannot split an empty dataset")
    k = round(fraction * n)
    ranked = sorted(dataset.items, key=lambda it: (stable_hash(seed, _item_id(it)),
                                                   _item_id(it)))
    held_ids = {_item_id(it) for it in ranked[:k]}
    train_items = [it for it in dataset.items if _item_id(it) not in held_ids]
    held_items = [it for it in dataset.items if _item_id(it) in held_ids]
    train = Dataset(dataset.role, set(dataset.languages), train_items, split="train")
    held = Dataset(dataset.role, set(dataset.languages), held_items, split="heldout")
    return train, held


def subsample_nested(items: list, fraction: float, seed: int) -> list:
    """First round(fraction*n) items in salted-hash order; nested across fractions."""
    if not 0 < fraction <= 1:
        raise CorpusError(f"fraction must be in (0,1], got {fraction}")
    k = round(fraction * len(items))
    ranked = sorted(items, key=lambda it: (stable_hash("subsample", seed, _item_id(it)),
                                           _item_id(it)))
    return ranked[:k]


# -- filesystem and JSONL ------------------------------------------------------


def data_root(default: str = ".") -> Path:
    return Path(os.environ.get("XFER_DATA_DIR", default))


def load_documents(directory, language: str, origin: str) -> list[SourceDocument]:
    """Read a source tree; ide snapshots get a deterministic cursor offset."""
    root = Path(directory)
    docs = []
    for path in sorted(root.rglob("*")):
        if not path.is_file():
            continue
        try:
            content = path.read_bytes().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise LexError(f"{path}: not valid UTF-8 text") from exc
        cursor = None
        if origin == ORIGIN_IDE and content:
            cursor = stable_hash("cursor", path.name) % (len(content) + 1)
        docs.append(SourceDocument(
            path=str(path.relative_to(root)), language=language,
            content=content, origin=origin, cursor_offset=cursor))
    return docs


def write_events_jsonl(events: list[CompletionEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ev in events:
            f.write(json.dumps(asdict(ev), ensure_ascii=False) + "\n")


def read_events_jsonl(path) -> list[CompletionEvent]:
    events = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            events.append(CompletionEvent(**obj))
    return events


def write_dataset_jsonl(dataset: Dataset, path) -> None:
    """Events keep their exact schema; sequence items carry a 'tokens' field."""
    with open(path, "w", encoding="utf-8") as f:
        for item in dataset.items:
            f.write(json.dumps(asdict(item), ensure_ascii=False) + "\n")


def read_dataset_jsonl(path, role: str) -> Dataset:
    items: list = []
    langs: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "accepted" in obj:
                item = CompletionEvent(**obj)
            else:
                item = SequenceItem(**obj)
            items.append(item)
            langs.add(item.language)
    return Dataset(role, langs, items)
