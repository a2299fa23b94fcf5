"""Shared text-to-id encoding used by training, evaluation, and serving.

One definition of "how a context becomes model input" keeps the offline
training objective, the offline ranking evaluation, and the live service
consistent: multilingual models prepend the language control token, the
copy-mechanism var map is built over the full recorded context, and only
then is the id sequence truncated to the model window.
"""

from __future__ import annotations

from .corpus import CompletionEvent, SequenceItem
from .languages import CONTROL, IDENTIFIER, Token, classify_texts, lang_control_token
from .tokenizer import EncodedSequence, VarMap, encode_sequence
from .vocab import Vocabulary


def encode_texts(texts, language: str, vocabulary: Vocabulary,
                 multilingual: bool = False,
                 var_map: VarMap | None = None) -> EncodedSequence:
    tokens = classify_texts(list(texts), language)
    if multilingual:
        tokens = [Token(CONTROL, lang_control_token(language))] + tokens
    return encode_sequence(tokens, vocabulary, var_map)


def sequence_ids(item: SequenceItem, vocabulary: Vocabulary,
                 multilingual: bool = False) -> list[int]:
    return encode_texts(item.tokens, item.language, vocabulary, multilingual).ids


def event_context(event: CompletionEvent, vocabulary: Vocabulary,
                  multilingual: bool = False, window: int | None = None
                  ) -> tuple[list[int], VarMap]:
    """Context ids (truncated to the last ``window``) plus the live var map."""
    vm = VarMap(vocabulary.n_placeholders)
    enc = encode_texts(event.context_tokens, event.language, vocabulary,
                       multilingual, vm)
    ids = enc.ids if window is None else enc.ids[-window:]
    return ids, vm


def event_training_example(event: CompletionEvent, vocabulary: Vocabulary,
                           multilingual: bool, context_len: int,
                           accepted_weight: float = 4.0
                           ) -> tuple[list[int], list[int], list[float]]:
    """(inputs, targets, weights): LM loss over context + accepted bigram.

    The accepted token's two positions are up-weighted; the context keeps
    ordinary LM weight so representations stay anchored (selection-only
    loss starves them at desk scale and collapses ranking accuracy).
    """
    ctx_ids, vm = event_context(event, vocabulary, multilingual,
                                window=context_len - 2)
    acc = encode_sequence([Token(IDENTIFIER, event.accepted)], vocabulary, vm)
    ids = ctx_ids + acc.ids
    inputs, targets = ids[:-1], ids[1:]
    weights = [1.0] * len(targets)
    weights[-1] = accepted_weight
    weights[-2] = accepted_weight
    return inputs, targets, weights


def sequence_training_windows(item: SequenceItem, vocabulary: Vocabulary,
                              multilingual: bool, context_len: int,
                              min_window: int = 8):
    """Non-overlapping LM windows over one document; boundaries respected."""
    ids = sequence_ids(item, vocabulary, multilingual)
    out = []
    for start in range(0, max(len(ids) - 1, 0), context_len):
        chunk = ids[start:start + context_len + 1]
        if len(chunk) < 2:
            break
        if len(chunk) < min_window and start > 0:
            break  # skip degenerate tails, but keep short whole documents
        inputs, targets = chunk[:-1], chunk[1:]
        out.append((inputs, targets, [1.0] * len(targets)))
    return out
