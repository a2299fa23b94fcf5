"""Command-line entry points for the whole pipeline (``xfer ...``).

Relative paths resolve against $XFER_DATA_DIR when it is set.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import corpus as corpus_mod
from . import evaluation, plots, samplegen, trainer as trainer_mod
from . import tokenizer as tokenizer_mod
from . import vocab as vocab_mod
from .languages import get_language, registered_languages
from .model import ModelConfig, load_checkpoint, save_checkpoint


def _resolve(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    root = os.environ.get("XFER_DATA_DIR")
    if root and not p.is_absolute():
        return Path(root) / p
    return p


@click.group()
def main() -> None:
    """Desk-scale transfer-learning autocompletion pipeline."""


# -- corpus ---------------------------------------------------------------------


@main.group()
def corpus() -> None:
    """Build datasets and splits from source trees."""


@corpus.command("build")
@click.option("--role", type=click.Choice(["autocompletion", "ide", "commit", "all"]),
              required=True)
@click.option("--lang", "language", type=click.Choice(registered_languages()),
              required=True)
@click.option("--in", "in_dir", required=True, help="source tree (ide/commit files)")
@click.option("--out", "out_file", required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--candidate-mean", type=float, default=None,
              help="mean candidate-list size (default: per-language)")
@click.option("--sample-rate", type=float, default=0.25, show_default=True)
@click.option("--events", "events_file", default=None,
              help="events JSONL (required for --role all)")
def corpus_build(role, language, in_dir, out_file, seed, candidate_mean,
                 sample_rate, events_file):
    """Build one dataset role from a source tree and write it as JSONL."""
    in_path = _resolve(in_dir)
    out_path = _resolve(out_file)
    if role == "commit":
        docs = corpus_mod.load_documents(in_path, language, corpus_mod.ORIGIN_COMMIT)
        ds = corpus_mod.build_dataset("commit", language, documents=docs)
    elif role == "ide":
        docs = corpus_mod.load_documents(in_path, language, corpus_mod.ORIGIN_IDE)
        ds = corpus_mod.build_dataset("ide", language, documents=docs)
    elif role == "autocompletion":
        docs = corpus_mod.load_documents(in_path, language, corpus_mod.ORIGIN_IDE)
        mean = candidate_mean or get_language(language).default_candidate_mean
        policy = corpus_mod.EventPolicy(candidate_mean=mean, sample_rate=sample_rate)
        events = corpus_mod.synthesize_events(docs, policy, seed)
        ds = corpus_mod.build_dataset("autocompletion", language, events=events)
    else:
        if not events_file:
            raise click.UsageError("--role all needs --events (autocompletion JSONL)")
        docs = corpus_mod.load_documents(in_path, language, corpus_mod.ORIGIN_IDE)
        ide_ds = corpus_mod.build_dataset("ide", language, documents=docs)
        auto_ds = corpus_mod.read_dataset_jsonl(_resolve(events_file), "autocompletion")
        ds = corpus_mod.union_datasets(auto_ds, ide_ds)
    corpus_mod.write_dataset_jsonl(ds, out_path)
    click.echo(f"wrote {len(ds)} {role} items to {out_path}")


@corpus.command("split")
@click.option("--in", "in_file", required=True)
@click.option("--role", type=click.Choice(["autocompletion", "ide", "commit", "all"]),
              default="autocompletion", show_default=True)
@click.option("--fraction", type=float, default=0.10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-train", required=True)
@click.option("--out-heldout", required=True)
def corpus_split(in_file, role, fraction, seed, out_train, out_heldout):
    """Deterministic train/heldout split keyed by item id."""
    ds = corpus_mod.read_dataset_jsonl(_resolve(in_file), role)
    train, heldout = corpus_mod.split_holdout(ds, fraction, seed)
    corpus_mod.write_dataset_jsonl(train, _resolve(out_train))
    corpus_mod.write_dataset_jsonl(heldout, _resolve(out_heldout))
    click.echo(f"split {len(ds)} -> {len(train)} train / {len(heldout)} heldout")


@main.command("gen-corpus")
@click.option("--out", "out_dir", required=True)
@click.option("--seed", type=int, default=7, show_default=True)
def gen_corpus(out_dir, seed):
    """Regenerate the bundled two-language sample corpus (deterministic)."""
    counts = samplegen.generate_tree(_resolve(out_dir), seed)
    for part, n in counts.items():
        click.echo(f"{part}: {n} files")


# -- vocabulary -------------------------------------------------------------------


@main.group("vocab")
def vocab_group() -> None:
    """Build and combine subtoken vocabularies."""


@vocab_group.command("build")
@click.option("--in", "in_files", multiple=True, required=True)
@click.option("--cutoff", type=int, default=vocab_mod.DEFAULT_CUTOFF, show_default=True)
@click.option("--placeholders", type=int, default=vocab_mod.DEFAULT_PLACEHOLDERS,
              show_default=True)
@click.option("--out", "out_file", required=True)
def vocab_build(in_files, cutoff, placeholders, out_file):
    """Count bigram subtokens over corpora and write a vocab TSV."""
    datasets = [corpus_mod.read_dataset_jsonl(_resolve(f), "all") for f in in_files]
    voc = tokenizer_mod.build_vocab(datasets, cutoff=cutoff,
                                    n_placeholders=placeholders)
    voc.save(_resolve(out_file))
    click.echo(f"vocabulary: {len(voc)} entries "
               f"({len(voc) - voc.n_specials} from corpus) -> {out_file}")


@vocab_group.command("union")
@click.argument("vocab_a")
@click.argument("vocab_b")
@click.option("--out", "out_file", required=True)
def vocab_union(vocab_a, vocab_b, out_file):
    """Union of two vocabularies with counts summed."""
    a = vocab_mod.Vocabulary.load(_resolve(vocab_a))
    b = vocab_mod.Vocabulary.load(_resolve(vocab_b))
    u = vocab_mod.union(a, b)
    u.save(_resolve(out_file))
    click.echo(f"union: {len(a)} + {len(b)} -> {len(u)} entries")


# -- training ---------------------------------------------------------------------


def _load_experiment(config_path: Path):
    with open(config_path, encoding="utf-8") as f:
        spec = json.load(f)
    voc = vocab_mod.Vocabulary.load(_resolve(spec["vocab"]))
    model_spec = dict(spec.get("model", {}))
    model_spec["vocab_size"] = len(voc)
    model_config = ModelConfig(**model_spec)
    phases = []
    for ph in spec["phases"]:
        ds = corpus_mod.read_dataset_jsonl(_resolve(ph["dataset"]), ph["role"])
        kwargs = {k: ph[k] for k in
                  ("max_epochs", "patience", "min_delta", "batch_size") if k in ph}
        phases.append(trainer_mod.TrainPhase(
            dataset=ds, learning_rate=ph["learning_rate"],
            kind=ph.get("kind", "pretrain"), **kwargs))
    exp = trainer_mod.ExperimentConfig(
        id=spec.get("id", 1), phases=phases,
        multilingual=spec.get("multilingual", False), seed=spec.get("seed", 0))
    heldout = corpus_mod.read_dataset_jsonl(_resolve(spec["eval_heldout"]),
                                            "autocompletion")
    return exp, voc, model_config, heldout


@main.command("train")
@click.option("--config", "config_path", required=True)
@click.option("--out", "out_dir", required=True)
def train(config_path, out_dir):
    """Run one experiment config (chained phases + held-out evaluation)."""
    exp, voc, model_config, heldout = _load_experiment(_resolve(config_path))
    ckpt, metrics = trainer_mod.run_config(exp, voc, model_config, heldout,
                                           out_dir=_resolve(out_dir))
    click.echo(f"config {exp.id}: top1={metrics.top1:.4f} top3={metrics.top3:.4f} "
               f"mrr3={metrics.mrr3:.4f} (n={metrics.n})")


@main.command("sweep")
@click.option("--base", "base_ckpt", default=None,
              help="checkpoint to fine-tune from (omit for fresh)")
@click.option("--finetune", "finetune_file", required=True)
@click.option("--heldout", "heldout_file", required=True)
@click.option("--vocab", "vocab_file", required=True)
@click.option("--fractions", default="0.01,0.1,1.0", show_default=True)
@click.option("--seeds", type=int, default=2, show_default=True)
@click.option("--finetune-lr", type=float, default=1e-4, show_default=True)
@click.option("--model-json", default=None, help="ModelConfig overrides as JSON")
@click.option("--multilingual", is_flag=True, default=False)
@click.option("--out", "out_dir", required=True)
def sweep(base_ckpt, finetune_file, heldout_file, vocab_file, fractions, seeds,
          finetune_lr, model_json, multilingual, out_dir):
    """Fine-tuning set-size sweep: pretrained vs scratch curves."""
    voc = vocab_mod.Vocabulary.load(_resolve(vocab_file))
    finetune_ds = corpus_mod.read_dataset_jsonl(_resolve(finetune_file),
                                                "autocompletion")
    heldout = corpus_mod.read_dataset_jsonl(_resolve(heldout_file), "autocompletion")
    base = load_checkpoint(_resolve(base_ckpt)) if base_ckpt else None
    overrides = json.loads(model_json) if model_json else {}
    overrides["vocab_size"] = len(voc)
    model_config = base.config if base is not None else ModelConfig(**overrides)
    rows = trainer_mod.sweep_finetune_size(
        base, [float(f) for f in fractions.split(",")], finetune_ds, heldout,
        voc, model_config, seeds=list(range(seeds)), finetune_lr=finetune_lr,
        multilingual=multilingual)
    out = _resolve(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.jsonl", "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    csv_path, svg_path = plots.write_sweep_outputs(rows, out)
    click.echo(f"sweep -> {csv_path}, {svg_path}")


@main.command("plot")
@click.option("--results", "results_file", default=None)
@click.option("--sweep", "sweep_file", default=None)
@click.option("--out-dir", required=True)
def plot(results_file, sweep_file, out_dir):
    """Render results tables and sweep curves to CSV/SVG."""
    out = _resolve(out_dir)
    if results_file:
        path = plots.write_results_table(_resolve(results_file), out)
        click.echo(f"results table -> {path}")
    if sweep_file:
        rows = [json.loads(l) for l in open(_resolve(sweep_file), encoding="utf-8")
                if l.strip()]
        csv_path, svg_path = plots.write_sweep_outputs(rows, out)
        click.echo(f"sweep -> {csv_path}, {svg_path}")
    if not results_file and not sweep_file:
        raise click.UsageError("nothing to plot; pass --results and/or --sweep")


# -- evaluation -------------------------------------------------------------------


@main.command("eval")
@click.option("--model", "model_file", required=True)
@click.option("--heldout", "heldout_file", required=True)
@click.option("--out", "out_file", required=True)
@click.option("--audit", "audit_file", default=None)
def eval_cmd(model_file, heldout_file, out_file, audit_file):
    """Offline metrics (top-1/top-3/MRR@3) over held-out events."""
    ckpt = load_checkpoint(_resolve(model_file))
    if "vocab" not in ckpt.meta:
        raise click.UsageError("checkpoint does not embed a vocabulary")
    voc = vocab_mod.Vocabulary.from_dump(ckpt.meta["vocab"])
    heldout = corpus_mod.read_dataset_jsonl(_resolve(heldout_file), "autocompletion")
    lm = ckpt.model(dtype=np.float64)
    metrics, audit = evaluation.evaluate(
        lm, voc, heldout, multilingual=ckpt.meta.get("multilingual", False))
    payload = {"n": metrics.n, "top1": metrics.top1, "top3": metrics.top3,
               "mrr3": metrics.mrr3, "unscorable": metrics.unscorable}
    with open(_resolve(out_file), "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    if audit_file:
        with open(_resolve(audit_file), "w", encoding="utf-8") as f:
            f.write("event_id,rank\n")
            for event_id, rank in audit:
                f.write(f"{event_id},{'' if rank is None else rank}\n")
    click.echo(json.dumps(payload))


@main.command("abtest")
@click.option("--control", "control_file", required=True)
@click.option("--experiment", "experiment_file", required=True)
@click.option("--out", "out_file", required=True)
@click.option("--level", type=float, default=0.95, show_default=True)
def abtest(control_file, experiment_file, out_file, level):
    """Welch-compared DCPU statistics for two observation logs."""
    control = evaluation.read_observations_jsonl(_resolve(control_file))
    experiment = evaluation.read_observations_jsonl(_resolve(experiment_file))
    result = evaluation.ab_compare(control, experiment)
    payload = dataclasses.asdict(result)
    payload["significant"] = evaluation.significance_gate(result, level)
    with open(_resolve(out_file), "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    click.echo(json.dumps(payload))


@main.command("simulate-ab")
@click.option("--developers", type=int, default=300, show_default=True)
@click.option("--days", type=int, default=14, show_default=True)
@click.option("--base-rate", type=float, default=18.0, show_default=True)
@click.option("--uplift", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-control", required=True)
@click.option("--out-experiment", required=True)
def simulate_ab(developers, days, base_rate, uplift, seed, out_control,
                out_experiment):
    """Synthetic per-developer usage logs for exercising the A/B path."""
    control, experiment = evaluation.simulate_ab(developers, days, base_rate,
                                                 uplift, seed)
    evaluation.write_observations_jsonl(control, _resolve(out_control))
    evaluation.write_observations_jsonl(experiment, _resolve(out_experiment))
    click.echo(f"wrote {len(control)} control / {len(experiment)} experiment "
               f"observations")


# -- serving ----------------------------------------------------------------------


@main.command("serve")
@click.option("--model", "model_file", required=True)
@click.option("--log", "log_file", default="events.jsonl", show_default=True)
@click.option("--port", type=int, default=8731, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--frontend", "frontend_dir", default=None,
              help="static bundle directory (frontend/dist)")
def serve(model_file, log_file, port, host, frontend_dir):
    """Serve ranked completions over HTTP and log acceptances."""
    import uvicorn

    from .service import CompletionService, create_app

    service = CompletionService(_resolve(model_file), _resolve(log_file))
    app = create_app(service, frontend_dir=_resolve(frontend_dir))
    click.echo(f"serving on http://{host}:{port} "
               f"(log: {log_file}, model: {model_file})")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
