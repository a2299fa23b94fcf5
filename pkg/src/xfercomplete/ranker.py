"""Candidate ranking over a height-2 partial-token tree.

Candidates are bigram-encoded, so every one of them is a two-subtoken path:
first subtokens become tree roots, second subtokens become leaves. Scoring
needs one model pass over the shared context plus one batched single-token
extension covering all roots, which is what keeps ranking inside the
latency budget even with ~100 candidates.

Copy mechanism at inference: a candidate whose half matches an OOV subtoken
already seen in the context reuses that context placeholder; halves that
are new to the whole request get fresh placeholders assigned in sorted
order (so scores cannot depend on candidate list order).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .languages import is_identifier_text
from .model import TransformerLM
from .tokenizer import VarMap, _encode_identifier
from .vocab import END, Vocabulary


class RankerError(ValueError):
    pass


@dataclass
class TreeNode:
    first_id: int
    children: dict[int, list[int]] = field(default_factory=dict)  # second id -> cand idx

    @property
    def candidate_indices(self) -> list[int]:
        return [i for leaf in self.children.values() for i in leaf]


@dataclass
class PartialTokenTree:
    roots: dict[int, TreeNode]
    candidates: list[str]
    encodings: dict[int, tuple[int, int]]      # candidate index -> (first, second) ids
    skipped: list[tuple[str, str]]             # (candidate, reason)
    var_assignments: dict[str, int]            # subtoken -> placeholder index (request-wide)

    @property
    def height(self) -> int:
        return 2

    def leaf_count(self) -> int:
        return sum(len(leaf) for node in self.roots.values()
                   for leaf in node.children.values())


@dataclass(frozen=True)
class Suggestion:
    token: str
    score: float
    rank: int


@dataclass
class RankedSuggestions:
    items: list[Suggestion]
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def rank_of(self, token: str) -> int | None:
        for s in self.items:
            if s.token == token:
                return s.rank
        return None

    def __len__(self) -> int:
        return len(self.items)


def build_tree(candidates: list[str], vocabulary: Vocabulary,
               context_var_map: VarMap | None = None) -> PartialTokenTree:
    """Insert each candidate's bigram encoding into the height-2 tree.

    Unencodable candidates are excluded but reported in ``skipped``; they
    are never silently dropped.
    """
    if not candidates:
        raise RankerError("candidate list must be non-empty")
    if len(set(candidates)) != len(candidates):
        raise RankerError("candidate list contains duplicates")

    base: dict[str, int] = {} if context_var_map is None else \
        context_var_map.assignments()
    budget = vocabulary.n_placeholders

    halves: dict[int, tuple[str, str]] = {}
    skipped: list[tuple[str, str]] = []
    novel: set[str] = set()
    for i, cand in enumerate(candidates):
        if not cand or not is_identifier_text(cand):
            skipped.append((cand, "not an identifier token"))
            continue
        sub1, sub2, _ = _encode_identifier(cand, vocabulary)
        halves[i] = (sub1, sub2)
        for sub in (sub1, sub2):
            if sub != END and sub not in vocabulary and sub not in base:
                novel.add(sub)

    # Fresh placeholders in sorted order: assignment is a function of the
    # candidate SET, not the list order.
    assignments = dict(base)
    next_idx = len(base)
    for sub in sorted(novel):
        if next_idx >= budget:
            break
        assignments[sub] = next_idx
        next_idx += 1

    def resolve(sub: str) -> int:
        if sub == END:
            return vocabulary.end_id
        known = vocabulary.get(sub)
        if known is not None:
            return known
        idx = assignments.get(sub)
        if idx is None:
            return vocabulary.unk_id
        return vocabulary.placeholder_id(idx)

    roots: dict[int, TreeNode] = {}
    encodings: dict[int, tuple[int, int]] = {}
    for i, (sub1, sub2) in halves.items():
        fid, sid = resolve(sub1), resolve(sub2)
        encodings[i] = (fid, sid)
        node = roots.setdefault(fid, TreeNode(first_id=fid))
        node.children.setdefault(sid, []).append(i)

    return PartialTokenTree(roots=roots, candidates=list(candidates),
                            encodings=encodings, skipped=skipped,
                            var_assignments=assignments)


def score_candidates(context_ids, tree: PartialTokenTree,
                     lm: TransformerLM) -> RankedSuggestions:
    """Rank every encodable candidate in the tree against the model.

    score(c) = logP(first | context) + logP(second | context + first), with
    one prefill over the context and one batched one-token extension for all
    roots. Ties break by candidate text, then original index.
    """
    ids = np.asarray(context_ids, dtype=np.int64)
    if ids.size == 0:
        raise RankerError("context must be non-empty")
    if not tree.encodings:
        return RankedSuggestions(items=[], skipped=list(tree.skipped))

    lp1, cache = lm.prefill(ids)
    root_ids = sorted(tree.roots)
    lp2 = lm.extend(cache, np.asarray(root_ids, dtype=np.int64))
    row_of = {rid: r for r, rid in enumerate(root_ids)}

    scored = []
    for idx, (fid, sid) in tree.encodings.items():
        score = float(lp1[fid]) + float(lp2[row_of[fid], sid])
        scored.append((idx, tree.candidates[idx], score))
    scored.sort(key=lambda t: (-t[2], t[1], t[0]))
    items = [Suggestion(token=text, score=score, rank=r + 1)
             for r, (_, text, score) in enumerate(scored)]
    return RankedSuggestions(items=items, skipped=list(tree.skipped))


def top_k(ranked: RankedSuggestions, k: int = 3) -> list[Suggestion]:
    if k < 1:
        raise RankerError("k must be >= 1")
    return ranked.items[:k]
