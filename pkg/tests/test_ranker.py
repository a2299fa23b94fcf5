"""Height-2 tree ranking: structure invariants and brute-force equivalence."""

import numpy as np
import pytest

from xfercomplete import ranker as R
from xfercomplete import tokenizer as T
from xfercomplete import vocab as V
from xfercomplete.model import ModelConfig, TransformerLM, init_params, _log_softmax
from xfercomplete.tokenizer import VarMap
from xfercomplete.vocab import END


def make_vocab(words, placeholders=16):
    from collections import Counter
    return V.build_from_counts(Counter({w: 3 for w in words}), cutoff=1,
                               n_placeholders=placeholders)


@pytest.fixture(scope="module")
def vocab():
    words = ["foo", "bar", "baz", "fooBar", "get", "set", "index", "cache",
             "value", "Store", "load", "save", "x", "y"]
    return make_vocab(words)


@pytest.fixture(scope="module")
def lm(vocab):
    cfg = ModelConfig(vocab_size=len(vocab), context_len=32, d_model=16,
                      n_heads=2, n_layers=2, d_ff=32, seed=7)
    return TransformerLM(cfg, init_params(cfg, dtype=np.float64))


def brute_force_scores(context_ids, candidates, vocabulary, lm, var_map=None):
    """Independent per-candidate scoring: full forward per candidate, no tree.

    Placeholder assignment mirrors the documented request rule (context
    assignments plus fresh sorted halves) without using the tree code.
    """
    base = {} if var_map is None else var_map.assignments()
    halves = {}
    novel = set()
    for cand in candidates:
        sub1, sub2, _ = T._encode_identifier(cand, vocabulary)
        halves[cand] = (sub1, sub2)
        for sub in (sub1, sub2):
            if sub != END and sub not in vocabulary and sub not in base:
                novel.add(sub)
    assign = dict(base)
    nxt = len(base)
    for sub in sorted(novel):
        if nxt >= vocabulary.n_placeholders:
            break
        assign[sub] = nxt
        nxt += 1

    def rid(sub):
        if sub == END:
            return vocabulary.end_id
        if sub in vocabulary:
            return vocabulary.id_of[sub]
        if sub in assign:
            return vocabulary.placeholder_id(assign[sub])
        return vocabulary.unk_id

    scores = {}
    for cand in candidates:
        s1, s2 = halves[cand]
        id1, id2 = rid(s1), rid(s2)
        lp1 = _log_softmax(lm.forward(list(context_ids))[-1])[id1]
        lp2 = _log_softmax(lm.forward(list(context_ids) + [id1])[-1])[id2]
        scores[cand] = float(lp1 + lp2)
    return scores


# -- tree structure ----------------------------------------------------------------


def test_single_in_vocab_candidate_path(vocab):
    tree = R.build_tree(["fooBar"], vocab)
    assert tree.leaf_count() == 1
    (fid, sid) = tree.encodings[0]
    assert fid == vocab.id_of["fooBar"]
    assert sid == vocab.end_id


def test_shared_first_subtoken_shares_root(vocab):
    tree = R.build_tree(["fooBarBazQuux", "fooBarX"], vocab)
    assert len(tree.roots) == 1
    root = next(iter(tree.roots.values()))
    assert len(root.children) == 2
    assert tree.height == 2


def test_hundred_candidates_leaf_count(vocab):
    rng = np.random.default_rng(0)
    words = ["alpha", "beta", "gamma", "delta", "omega", "sigma", "theta", "kappa"]
    cands = set()
    while len(cands) < 100:
        n = rng.integers(1, 4)
        cands.add("".join(w.capitalize() if i else w
                          for i, w in enumerate(rng.choice(words, n))))
    tree = R.build_tree(sorted(cands), vocab)
    assert tree.leaf_count() == 100
    assert tree.height == 2
    covered = sorted(i for node in tree.roots.values()
                     for leaf in node.children.values() for i in leaf)
    assert covered == list(range(100))


def test_unencodable_candidate_reported_not_dropped(vocab):
    tree = R.build_tree(["fooBar", "not-an-identifier!"], vocab)
    assert [c for c, _ in tree.skipped] == ["not-an-identifier!"]
    assert len(tree.encodings) == 1


def test_empty_and_duplicate_candidates_error(vocab):
    with pytest.raises(R.RankerError):
        R.build_tree([], vocab)
    with pytest.raises(R.RankerError):
        R.build_tree(["foo", "foo"], vocab)


def test_candidates_share_context_placeholder(vocab):
    vm = VarMap(vocab.n_placeholders)
    vm.assign("zzzNovel")
    tree = R.build_tree(["zzzNovelThing", "other"], vocab, context_var_map=vm)
    fid, _ = tree.encodings[0]
    assert fid == vocab.placeholder_id(0)  # reuses the context assignment


# -- scoring -----------------------------------------------------------------------


def test_single_candidate_rank_one(vocab, lm):
    tree = R.build_tree(["cache"], vocab)
    ranked = R.score_candidates([vocab.id_of["foo"]], tree, lm)
    assert len(ranked.items) == 1
    assert ranked.items[0].rank == 1


def test_scores_nonincreasing_ranks_dense(vocab, lm):
    cands = ["foo", "bar", "baz", "cache", "index"]
    tree = R.build_tree(cands, vocab)
    ranked = R.score_candidates([vocab.id_of["x"], vocab.id_of["y"]], tree, lm)
    scores = [s.score for s in ranked.items]
    assert scores == sorted(scores, reverse=True)
    assert [s.rank for s in ranked.items] == list(range(1, len(cands) + 1))


def test_tie_break_lexicographic(vocab):
    """With identical scores everywhere, order must be lexicographic."""

    class UniformLM:
        class config:
            context_len = 32
            vocab_size = 0

        def __init__(self, v):
            UniformLM.config.vocab_size = len(v)

        def prefill(self, ids):
            n = UniformLM.config.vocab_size
            return np.zeros(n) - np.log(n), None

        def extend(self, cache, roots):
            n = UniformLM.config.vocab_size
            return np.zeros((len(roots), n)) - np.log(n)

    ulm = UniformLM(vocab)
    cands = ["delta", "alpha", "charlie", "bravo"]
    tree = R.build_tree(cands, vocab)
    ranked = R.score_candidates([1], tree, ulm)
    assert [s.token for s in ranked.items] == sorted(cands)


def test_permutation_invariance(vocab, lm):
    cands = ["foo", "bar", "cache", "zzzNovelOne", "zzzNovelTwo", "index"]
    context = [vocab.id_of["x"], vocab.id_of["get"]]
    ranked1 = R.score_candidates(context, R.build_tree(cands, vocab), lm)
    rng = np.random.default_rng(4)
    for _ in range(4):
        shuffled = [cands[i] for i in rng.permutation(len(cands))]
        ranked2 = R.score_candidates(context, R.build_tree(shuffled, vocab), lm)
        assert [(s.token, pytest.approx(s.score, abs=1e-12)) for s in ranked1.items] == \
               [(s.token, pytest.approx(s.score, abs=1e-12)) for s in ranked2.items]


def test_empty_context_errors(vocab, lm):
    tree = R.build_tree(["foo"], vocab)
    with pytest.raises(R.RankerError):
        R.score_candidates([], tree, lm)


def test_matches_brute_force_on_random_instances(vocab, lm):
    """Tree search == independent full-forward-per-candidate scoring."""
    rng = np.random.default_rng(11)
    pool = ["foo", "bar", "baz", "cache", "index", "value", "load", "save",
            "fooBar", "loadCache", "saveIndex", "zzzRare", "qqqNovelName",
            "cacheValue", "barBaz", "x", "y", "getSet"]
    for trial in range(12):
        k = int(rng.integers(2, 10))
        cands = sorted(rng.choice(pool, size=k, replace=False).tolist())
        ctx = rng.integers(vocab.n_specials, len(vocab), size=rng.integers(1, 12))
        vm = VarMap(vocab.n_placeholders)
        tree = R.build_tree(cands, vocab, context_var_map=vm)
        ranked = R.score_candidates(ctx, tree, lm)
        want = brute_force_scores(ctx, cands, vocab, lm, var_map=vm)
        got = {s.token: s.score for s in ranked.items}
        for cand in cands:
            assert abs(got[cand] - want[cand]) < 1e-6, (trial, cand)
        order_want = sorted(cands, key=lambda c: (-want[c], c))
        assert [s.token for s in ranked.items] == order_want


# -- top_k -------------------------------------------------------------------------


def test_top_k_prefix_and_short_lists(vocab, lm):
    tree = R.build_tree(["foo", "bar"], vocab)
    ranked = R.score_candidates([1], tree, lm)
    assert len(R.top_k(ranked, 3)) == 2
    assert R.top_k(ranked, 1)[0] == ranked.items[0]
    with pytest.raises(R.RankerError):
        R.top_k(ranked, 0)


def test_top_k_monotone_truncation(vocab, lm):
    cands = ["foo", "bar", "baz", "cache", "index", "value"]
    tree = R.build_tree(cands, vocab)
    ranked = R.score_candidates([2], tree, lm)
    for k in range(1, 6):
        assert R.top_k(ranked, k) == R.top_k(ranked, k + 1)[:k]
