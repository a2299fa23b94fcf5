"""Training orchestration: early stopping, chaining, provenance, sweeps."""

import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from xfercomplete import trainer as TR
from xfercomplete import tokenizer as T
from xfercomplete.corpus import Dataset, EventPolicy, synthesize_events
from xfercomplete.model import ModelConfig
from xfercomplete.trainer import (EarlyStopper, ExperimentConfig, TrainPhase,
                                  TrainerError, simulate_early_stop, train_phase)
from xfercomplete.util import derive_seed

SCHEMA = json.loads((Path(__file__).resolve().parents[1] /
                     "docs" / "results.schema.json").read_text())


@pytest.fixture(scope="module")
def small_setup(curly_ide_docs):
    """A deliberately tiny corpus so training runs in seconds."""
    from xfercomplete import corpus as C
    docs = curly_ide_docs[:8]
    ide = C.build_dataset("ide", "curly", documents=docs)
    policy = EventPolicy(candidate_mean=8, sample_rate=0.4)
    events = synthesize_events(docs, policy, seed=21)
    auto = C.build_dataset("autocompletion", "curly", events=events[:80])
    heldout = C.build_dataset("autocompletion", "curly", events=events[80:110])
    heldout.split = "heldout"
    vocab = T.build_vocab([ide], cutoff=2)
    cfg = ModelConfig(vocab_size=len(vocab), context_len=64, d_model=16,
                      n_heads=2, n_layers=1, d_ff=32, seed=5)
    return ide, auto, heldout, vocab, cfg


# -- early stopping rule -------------------------------------------------------------


def test_early_stop_spec_trace():
    """patience 2, losses [2.0, 1.9, 1.91, 1.92] -> stop at 4, keep epoch 2."""
    epochs_run, best = simulate_early_stop([2.0, 1.9, 1.91, 1.92], patience=2)
    assert epochs_run == 4
    assert best == 2


def test_early_stop_runs_out_of_epochs():
    epochs_run, best = simulate_early_stop([3.0, 2.0, 1.0], patience=2)
    assert epochs_run == 3
    assert best == 3


def test_early_stop_min_delta_deadband():
    # improvements smaller than min_delta do not reset patience
    epochs_run, best = simulate_early_stop([2.0, 1.9995, 1.999], patience=2,
                                           min_delta=1e-3)
    assert epochs_run == 3
    assert best == 1


def test_early_stopper_never_returns_worse_than_seen():
    losses = [5.0, 3.0, 4.0, 2.5, 2.6, 2.7, 2.8]
    stopper = EarlyStopper(patience=3, min_delta=1e-3)
    for i, l in enumerate(losses, start=1):
        if stopper.update(l, i):
            break
    assert stopper.best == 2.5


# -- train_phase -----------------------------------------------------------------------


def test_train_phase_overfits_small_corpus(small_setup):
    ide, auto, heldout, vocab, _ = small_setup
    cfg = ModelConfig(vocab_size=len(vocab), context_len=32, d_model=32,
                      n_heads=4, n_layers=2, d_ff=64, seed=5)
    tiny = Dataset("ide", {"curly"}, ide.items[:2])
    phase = TrainPhase(tiny, learning_rate=5e-4, max_epochs=20, patience=20,
                       batch_size=1, seed=1)
    ckpt = train_phase(None, phase, vocab, model_config=cfg)
    assert ckpt.provenance[-1]["epochs"] >= 1
    # loss after training is under half the fresh-model loss
    from xfercomplete.trainer import _build_examples, _dataset_loss
    from xfercomplete.model import TransformerLM
    ex = _build_examples(tiny.items, vocab, False, cfg.context_len)
    fresh_loss = _dataset_loss(TransformerLM(cfg), ex, 8, vocab.pad_id)
    trained_loss = _dataset_loss(ckpt.model(), ex, 8, vocab.pad_id)
    assert trained_loss < 0.5 * fresh_loss


def test_provenance_grows_by_one(small_setup):
    ide, auto, heldout, vocab, cfg = small_setup
    phase = TrainPhase(Dataset("ide", {"curly"}, ide.items[:2]),
                       learning_rate=5e-4, max_epochs=2, batch_size=8, seed=2)
    first = train_phase(None, phase, vocab, model_config=cfg)
    assert len(first.provenance) == 1
    second = train_phase(first, phase, vocab)
    assert len(second.provenance) == 2
    assert [e["phase"] for e in second.provenance] == ["pretrain", "pretrain"]


def test_empty_dataset_errors(small_setup):
    *_, vocab, cfg = small_setup
    with pytest.raises(TrainerError):
        train_phase(None, TrainPhase(Dataset("ide", {"curly"}, []), 5e-4),
                    vocab, model_config=cfg)


def test_vocab_mismatch_errors(small_setup):
    ide, auto, heldout, vocab, cfg = small_setup
    phase = TrainPhase(Dataset("ide", {"curly"}, ide.items[:2]),
                       learning_rate=5e-4, max_epochs=1, batch_size=8, seed=3)
    ckpt = train_phase(None, phase, vocab, model_config=cfg)
    other = T.build_vocab([Dataset("ide", {"curly"}, ide.items[:3])], cutoff=1)
    with pytest.raises(TrainerError):
        train_phase(ckpt, phase, other)


def test_phase_chaining_equals_run_config(small_setup, tmp_path):
    """run_config([p1, p2]) == train_phase(train_phase(fresh, p1), p2) exactly."""
    import dataclasses
    ide, auto, heldout, vocab, cfg = small_setup
    p1 = TrainPhase(Dataset("ide", {"curly"}, ide.items[:3]), 5e-4,
                    kind="pretrain", max_epochs=2, batch_size=8)
    p2 = TrainPhase(Dataset("autocompletion", {"curly"}, auto.items[:20]), 1e-4,
                    kind="finetune", max_epochs=2, batch_size=8)
    exp = ExperimentConfig(id=6, phases=[p1, p2], seed=123)
    ckpt_cfg, metrics = TR.run_config(exp, vocab, cfg, heldout,
                                      out_dir=tmp_path)

    manual = None
    for i, phase in enumerate((p1, p2)):
        manual = train_phase(manual,
                             dataclasses.replace(phase, seed=derive_seed(123, i)),
                             vocab, model_config=cfg)
    for name in manual.params:
        assert np.array_equal(manual.params[name], ckpt_cfg.params[name]), name

    # the result row validates against the documented schema
    rows = [json.loads(l) for l in
            (tmp_path / "results.jsonl").read_text().splitlines()]
    assert len(rows) == 1
    jsonschema.validate(rows[0], SCHEMA)


def test_config3_is_single_phase_from_fresh(small_setup):
    ide, auto, heldout, vocab, cfg = small_setup
    configs = TR.standard_configs(
        commit=Dataset("commit", {"curly"}, ide.items[:2]),
        all_ds=Dataset("all", {"curly"}, ide.items[:2]),
        autocompletion=Dataset("autocompletion", {"curly"}, auto.items[:10]),
        seed=9, max_epochs=1, batch_size=8)
    assert len(configs) == 7
    assert len(configs[3].phases) == 1
    assert configs[3].phases[0].dataset.role == "autocompletion"
    assert [p.dataset.role for p in configs[7].phases] == \
        ["commit", "all", "autocompletion"]
    assert configs[6].phases[0].learning_rate == TR.DEFAULT_PRETRAIN_LR
    assert configs[6].phases[1].learning_rate == TR.DEFAULT_FINETUNE_LR


# -- sweeps ---------------------------------------------------------------------------


def test_sweep_rows_and_nesting(small_setup):
    ide, auto, heldout, vocab, cfg = small_setup
    base_phase = TrainPhase(Dataset("ide", {"curly"}, ide.items[:3]), 5e-4,
                            max_epochs=1, batch_size=8, seed=0)
    base = train_phase(None, base_phase, vocab, model_config=cfg)
    rows = TR.sweep_finetune_size(
        base, fractions=[0.2, 1.0], finetune_dataset=auto,
        eval_heldout=heldout, vocabulary=vocab, model_config=cfg,
        seeds=[0], finetune_lr=1e-4, max_epochs=1, batch_size=8)
    assert [r["fraction"] for r in rows] == [0.2, 1.0]
    assert rows[0]["n_examples"] == round(0.2 * len(auto))
    for r in rows:
        assert 0.0 <= r["pretrained_top1_mean"] <= 1.0
        assert 0.0 <= r["scratch_top1_mean"] <= 1.0


def test_sweep_skips_empty_fraction(small_setup):
    ide, auto, heldout, vocab, cfg = small_setup
    small = Dataset("autocompletion", {"curly"}, auto.items[:3])
    with pytest.warns(UserWarning):
        rows = TR.sweep_finetune_size(
            None, fractions=[0.01], finetune_dataset=small,
            eval_heldout=heldout, vocabulary=vocab, model_config=cfg,
            seeds=[0], finetune_lr=1e-4, max_epochs=1, batch_size=8)
    assert rows == []
