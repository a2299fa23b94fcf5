"""Two-phase training orchestration, the 7-config matrix, and size sweeps.

A phase trains on one dataset at one learning rate with early stopping on a
held-back validation slice; chaining phases left to right reproduces the
pretrain-then-finetune protocol. Checkpoints accumulate provenance so any
result row can be traced back to its full lineage.
"""

from __future__ import annotations

import dataclasses
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, kernels
from .corpus import (Dataset, CompletionEvent, SequenceItem, CorpusError,
                     split_holdout, subsample_nested)
from .encoding import event_training_example, sequence_training_windows
from .model import (AdamOptimizer, ModelCheckpoint, ModelConfig,
                    TransformerLM, forward_batch, save_checkpoint)
from .util import derive_seed
from .vocab import Vocabulary

# Learning rates reported for the original two-phase protocol.
DEFAULT_PRETRAIN_LR = 5e-4
DEFAULT_FINETUNE_LR = 5e-6


class TrainerError(ValueError):
    pass


@dataclass
class TrainPhase:
    dataset: Dataset
    learning_rate: float
    kind: str = "pretrain"  # "pretrain" | "finetune"
    max_epochs: int = 20
    patience: int = 3
    min_delta: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    # "loss" stops on held-back LM loss; "rank" on held-back ranking top-1
    # (the task metric); "auto" picks rank for event datasets. LM loss keeps
    # improving while ranking degrades on small event sets, so task phases
    # need the task signal.
    early_stop_metric: str = "auto"

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise TrainerError("learning_rate must be positive")
        if self.patience < 1:
            raise TrainerError("patience must be >= 1")
        if self.kind not in ("pretrain", "finetune"):
            raise TrainerError(f"unknown phase kind {self.kind!r}")
        if self.early_stop_metric not in ("auto", "loss", "rank"):
            raise TrainerError(f"unknown early_stop_metric {self.early_stop_metric!r}")


@dataclass
class ExperimentConfig:
    id: int
    phases: list[TrainPhase]
    multilingual: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.id <= 7:
            raise TrainerError("config id must be 1..7")
        if not self.phases:
            raise TrainerError("an experiment needs at least one phase")


class EarlyStopper:
    """Patience-based stopping on validation loss with a min-delta deadband."""

    def __init__(self, patience: int, min_delta: float):
        self.patience = patience
        self.min_delta = min_delta
        self.best = float("inf")
        self.best_epoch = 0
        self.strikes = 0

    def update(self, loss: float, epoch: int) -> bool:
        """Record an epoch's validation loss; True means stop now."""
        if loss < self.best - self.min_delta:
            self.best = loss
            self.best_epoch = epoch
            self.strikes = 0
            return False
        self.strikes += 1
        return self.strikes >= self.patience


def simulate_early_stop(losses: list[float], patience: int,
                        min_delta: float = 1e-3) -> tuple[int, int]:
    """(epochs run, best epoch), both 1-based, for a given loss trace."""
    stopper = EarlyStopper(patience, min_delta)
    for epoch, loss in enumerate(losses, start=1):
        if stopper.update(loss, epoch):
            return epoch, stopper.best_epoch
    return len(losses), stopper.best_epoch


def _build_examples(items, vocabulary: Vocabulary, multilingual: bool,
                    context_len: int):
    examples = []
    for item in items:
        if isinstance(item, CompletionEvent):
            examples.append(event_training_example(item, vocabulary,
                                                   multilingual, context_len))
        elif isinstance(item, SequenceItem):
            examples.extend(sequence_training_windows(item, vocabulary,
                                                      multilingual, context_len))
        else:
            raise TrainerError(f"cannot train on item of type {type(item).__name__}")
    return examples


def _batches(examples, order, batch_size, pad_id):
    """Yield padded (ids, targets, weights) batches following ``order``."""
    for lo in range(0, len(order), batch_size):
        chunk = [examples[i] for i in order[lo:lo + batch_size]]
        width = max(len(e[0]) for e in chunk)
        b = len(chunk)
        ids = np.full((b, width), pad_id, dtype=np.int64)
        tgt = np.zeros((b, width), dtype=np.int64)
        wts = np.zeros((b, width), dtype=np.float32)
        for r, (inp, t, w) in enumerate(chunk):
            ids[r, :len(inp)] = inp
            tgt[r, :len(t)] = t
            wts[r, :len(w)] = w
        yield ids, tgt, wts


def _dataset_loss(lm: TransformerLM, examples, batch_size, pad_id) -> float:
    total, weight = 0.0, 0.0
    order = list(range(len(examples)))
    for ids, tgt, wts in _batches(examples, order, batch_size, pad_id):
        logits, _ = forward_batch(lm.config, lm.params, ids, train=False)
        flat = np.ascontiguousarray(logits.reshape(-1, lm.config.vocab_size))
        s, w, _ = kernels.softmax_xent(flat,
                                       np.ascontiguousarray(tgt.reshape(-1)),
                                       np.ascontiguousarray(wts.reshape(-1), dtype=flat.dtype))
        total += s
        weight += w
    if weight == 0:
        raise TrainerError("no loss-bearing positions in dataset")
    return total / weight


def train_phase(start: ModelCheckpoint | None, phase: TrainPhase,
                vocabulary: Vocabulary, model_config: ModelConfig | None = None,
                multilingual: bool = False) -> ModelCheckpoint:
    """Run one training phase and return the best-validation checkpoint.

    ``start=None`` trains from fresh initialization (``model_config``
    required). The phase's dataset must be tokenized with the checkpoint's
    vocabulary: fingerprints are compared, not assumed.
    """
    if len(phase.dataset) == 0:
        raise TrainerError("cannot train on an empty dataset")
    if start is not None:
        cfg = start.config
        fp = start.meta.get("vocab_fingerprint")
        if fp is not None and fp != vocabulary.fingerprint():
            raise TrainerError("checkpoint/vocabulary fingerprint mismatch")
        if cfg.vocab_size != len(vocabulary):
            raise TrainerError("checkpoint vocab_size does not match vocabulary")
        lm = start.model()
        provenance = list(start.provenance)
        multilingual = start.meta.get("multilingual", multilingual)
    else:
        if model_config is None:
            raise TrainerError("fresh training needs a model_config")
        if model_config.vocab_size != len(vocabulary):
            raise TrainerError("model_config vocab_size does not match vocabulary")
        cfg = model_config
        lm = TransformerLM(cfg)
        provenance = []

    # Validation slice for early stopping, carved from the phase's own data.
    try:
        train_ds, val_ds = split_holdout(phase.dataset, 0.10,
                                         seed=derive_seed(phase.seed, "earlystop"))
        if len(val_ds) == 0 or len(train_ds) == 0:
            raise CorpusError("degenerate split")
        val_items = val_ds.items
        train_items = train_ds.items
    except CorpusError:
        train_items = phase.dataset.items
        val_items = phase.dataset.items

    train_ex = _build_examples(train_items, vocabulary, multilingual, cfg.context_len)
    val_ex = _build_examples(val_items, vocabulary, multilingual, cfg.context_len)
    if not train_ex:
        raise TrainerError("dataset produced no training examples")

    metric = phase.early_stop_metric
    if metric == "auto":
        metric = "rank" if all(isinstance(it, CompletionEvent) for it in val_items) \
            else "loss"
    if metric == "rank":
        val_events = Dataset(phase.dataset.role, set(phase.dataset.languages),
                             list(val_items), split="heldout")

    def validation_score() -> float:
        """Lower is better: LM loss, or negated ranking top-1."""
        if metric == "loss":
            return _dataset_loss(lm, val_ex, phase.batch_size, pad_id)
        m, _ = evaluation.evaluate(lm, vocabulary, val_events,
                                   multilingual=multilingual)
        return -m.top1

    pad_id = vocabulary.pad_id
    opt = AdamOptimizer(lm.params)
    min_delta = phase.min_delta if metric == "loss" else 1e-9
    stopper = EarlyStopper(phase.patience, min_delta)
    best_params = {k: v.copy() for k, v in lm.params.items()}
    epochs_run = 0
    for epoch in range(1, phase.max_epochs + 1):
        rng = np.random.default_rng(derive_seed(phase.seed, "shuffle", epoch))
        order = rng.permutation(len(train_ex)).tolist()
        for step, (ids, tgt, wts) in enumerate(
                _batches(train_ex, order, phase.batch_size, pad_id)):
            drop_rng = np.random.default_rng(derive_seed(phase.seed, "drop", epoch, step))
            loss, grads = lm.loss_and_grads(ids, tgt, wts, rng=drop_rng)
            opt.step(lm.params, grads, phase.learning_rate)
        epochs_run = epoch
        score = validation_score()
        improved = score < stopper.best - stopper.min_delta
        stop = stopper.update(score, epoch)
        if improved:
            best_params = {k: v.copy() for k, v in lm.params.items()}
        if stop:
            break

    entry = {
        "phase": phase.kind,
        "role": phase.dataset.role,
        "languages": sorted(phase.dataset.languages),
        "items": len(phase.dataset),
        "learning_rate": phase.learning_rate,
        "epochs": epochs_run,
        "best_epoch": stopper.best_epoch,
        "seed": phase.seed,
    }
    meta = dict(start.meta) if start is not None else {}
    meta.setdefault("multilingual", multilingual)
    meta["vocab_fingerprint"] = vocabulary.fingerprint()
    meta["vocab"] = vocabulary.dump()
    return ModelCheckpoint(cfg, best_params, provenance + [entry], meta)


def run_config(exp: ExperimentConfig, vocabulary: Vocabulary,
               model_config: ModelConfig, eval_heldout: Dataset,
               out_dir=None) -> tuple[ModelCheckpoint, "evaluation.Metrics"]:
    """Chain an experiment's phases, evaluate on held-out events, log a row."""
    ckpt: ModelCheckpoint | None = None
    for i, phase in enumerate(exp.phases):
        phase = dataclasses.replace(phase, seed=derive_seed(exp.seed, i))
        ckpt = train_phase(ckpt, phase, vocabulary, model_config=model_config,
                           multilingual=exp.multilingual)
    lm = ckpt.model(dtype=np.float64)
    metrics, _ = evaluation.evaluate(lm, vocabulary, eval_heldout,
                                     multilingual=exp.multilingual)
    row = {
        "config_id": exp.id,
        "seed": exp.seed,
        "phases": [{"role": p["role"], "learning_rate": p["learning_rate"],
                    "epochs": p["epochs"]} for p in ckpt.provenance],
        "n": metrics.n,
        "top1": metrics.top1,
        "top3": metrics.top3,
        "mrr3": metrics.mrr3,
        "unscorable": metrics.unscorable,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, out / f"config{exp.id}_seed{exp.seed}.ckpt")
        with open(out / "results.jsonl", "a", encoding="utf-8") as f:
            f.write(json.dumps(row) + "\n")
    return ckpt, metrics


def standard_configs(commit: Dataset, all_ds: Dataset, autocompletion: Dataset,
                     seed: int = 0, pretrain_lr: float = DEFAULT_PRETRAIN_LR,
                     finetune_lr: float = DEFAULT_FINETUNE_LR,
                     multilingual: bool = False,
                     **phase_kwargs) -> dict[int, ExperimentConfig]:
    """The 7-row experiment matrix over (commit, all, autocompletion)."""

    def pt(ds):
        return TrainPhase(ds, pretrain_lr, kind="pretrain", **phase_kwargs)

    def ft(ds):
        return TrainPhase(ds, finetune_lr, kind="finetune", **phase_kwargs)

    rows = {
        1: [pt(commit)],
        2: [pt(all_ds)],
        3: [pt(autocompletion)],
        4: [pt(commit), pt(all_ds)],
        5: [pt(commit), ft(autocompletion)],
        6: [pt(all_ds), ft(autocompletion)],
        7: [pt(commit), pt(all_ds), ft(autocompletion)],
    }
    return {i: ExperimentConfig(id=i, phases=phases, seed=seed,
                                multilingual=multilingual)
            for i, phases in rows.items()}


def sweep_finetune_size(base: ModelCheckpoint | None, fractions: list[float],
                        finetune_dataset: Dataset, eval_heldout: Dataset,
                        vocabulary: Vocabulary, model_config: ModelConfig,
                        seeds: list[int], finetune_lr: float,
                        scratch_lr: float = DEFAULT_PRETRAIN_LR,
                        multilingual: bool = False,
                        subsample_seed: int = 0,
                        **phase_kwargs) -> list[dict]:
    """Paired pretrained-vs-scratch curves over fine-tuning set sizes.

    Subsamples are nested across fractions (salted-hash order), so curves
    differ only by how much data is revealed, never by which slice.
    """
    rows = []
    for fraction in sorted(fractions):
        items = subsample_nested(finetune_dataset.items, fraction, subsample_seed)
        if not items:
            warnings.warn(f"fraction {fraction} yields 0 examples; skipped")
            continue
        subset = Dataset(finetune_dataset.role, set(finetune_dataset.languages),
                         items)
        pre_scores, scratch_scores = [], []
        for seed in seeds:
            ft_phase = TrainPhase(subset, finetune_lr, kind="finetune",
                                  seed=derive_seed(seed, "ft", fraction),
                                  **phase_kwargs)
            pre_ckpt = train_phase(base, ft_phase, vocabulary,
                                   model_config=model_config,
                                   multilingual=multilingual)
            pre_lm = pre_ckpt.model(dtype=np.float64)
            m_pre, _ = evaluation.evaluate(pre_lm, vocabulary, eval_heldout,
                                           multilingual=multilingual)
            pre_scores.append(m_pre.top1)

            scratch_cfg = dataclasses.replace(model_config,
                                              seed=derive_seed(seed, "init", fraction))
            sc_phase = TrainPhase(subset, scratch_lr, kind="pretrain",
                                  seed=derive_seed(seed, "scratch", fraction),
                                  **phase_kwargs)
            sc_ckpt = train_phase(None, sc_phase, vocabulary,
                                  model_config=scratch_cfg,
                                  multilingual=multilingual)
            sc_lm = sc_ckpt.model(dtype=np.float64)
            m_sc, _ = evaluation.evaluate(sc_lm, vocabulary, eval_heldout,
                                          multilingual=multilingual)
            scratch_scores.append(m_sc.top1)

        rows.append({
            "fraction": fraction,
            "n_examples": len(items),
            "pretrained_top1_mean": float(np.mean(pre_scores)),
            "pretrained_top1_std": float(np.std(pre_scores)),
            "scratch_top1_mean": float(np.mean(scratch_scores)),
            "scratch_top1_std": float(np.std(scratch_scores)),
            "gap": float(np.mean(pre_scores) - np.mean(scratch_scores)),
        })
    return rows
