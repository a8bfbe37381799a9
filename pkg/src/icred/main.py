"""
ICRED command-line interface.

Subcommands: ingest, synth, train, generate, evaluate, ablate, predict, config.
Settings resolve as command-line flag > --config file > built-in default.
Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from icred.config import MemoryType, RunConfig, load_run_config, print_config_status, settings, setup_logging
from icred.corpus import (
    SynthConfig,
    Vocabulary,
    build_vocabulary,
    corpus_stats,
    ingest,
    load_rules,
    read_jsonl,
    split_dataset,
    synth_generate,
    validate_corpus,
    write_jsonl,
)
from icred.errors import ConfigError, DataError, IcredError
from icred.evaluation import (
    ablation_report,
    build_report,
    evaluate_model,
    load_lexicon,
    print_reports,
    sparsity_report,
)
from icred.evaluation.report import bucket_table, write_json
from icred.model import ICREDModel, ModelParams, generate, load_word_vectors, variant_config
from icred.model.variants import COMPONENT_ABLATIONS, LABELS, VARIANTS
from icred.storage import CheckpointStorage, load_checkpoint
from icred.training import Trainer

console = Console()
logger = logging.getLogger("icred")


class IcredGroup(click.Group):
    """Maps ICRED errors onto exit codes in one place."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except IcredError as e:
            console.print(f"[red]Error: {escape(str(e))}[/red]")
            ctx.exit(e.exit_code)


# ==========================================
# SHARED OPTIONS
# ==========================================

def run_options(fn):
    return click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
                        help="key = value config file (flags take precedence)")(fn)


def seed_option(fn):
    return click.option("--seed", type=int, default=None, help="Random seed")(fn)


def threads_option(fn):
    return click.option("--threads", type=click.IntRange(min=1), default=None,
                        help="Worker cap for per-instance tapes (default: ICRED_THREADS)")(fn)



def model_options(fn):
    fn = click.option("--joint-prediction", is_flag=True, default=False, help="Train/use the interlocutor prediction heads")(fn)
    fn = click.option("--no-addressee-vector", is_flag=True, default=False, help="Drop the contextual addressee vector")(fn)
    fn = click.option("--no-speaker-vector", is_flag=True, default=False, help="Drop the contextual speaker vector")(fn)
    fn = click.option("--memory-type", type=click.Choice([m.value for m in MemoryType]), default=None,
                      help="What the decoder attends over")(fn)
    return fn


def model_overrides(
    memory_type: Optional[str] = None,
    no_speaker_vector: bool = False,
    no_addressee_vector: bool = False,
    joint_prediction: bool = False
) -> Dict[str, Any]:
    """Only flags the user actually set become overrides."""
    out: Dict[str, Any] = {}
    if memory_type is not None:
        out["memory_type"] = memory_type
    if no_speaker_vector:
        out["use_speaker_vector"] = False
    if no_addressee_vector:
        out["use_addressee_vector"] = False
    if joint_prediction:
        out["joint_prediction"] = True
    return out


def resolve(config_path: Optional[Path], **overrides) -> RunConfig:
    if config_path is not None and not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")
    return load_run_config(config_path, overrides)


def threads_of(run: RunConfig, flag: Optional[int]) -> int:
    return flag or run.train.workers


def load_model(path: Path, expected: Optional[Dict[str, Any]] = None) -> ICREDModel:
    config, params, vocab = load_checkpoint(path, expected)
    if vocab is None:
        raise ConfigError(f"checkpoint {path} has no vocabulary sidecar")
    return ICREDModel(config, params, vocab)


def load_instances(path: Path) -> list:
    instances = read_jsonl(path)
    if not instances:
        raise DataError(f"{path} holds no instances")
    return instances


def stats_table(stats, title: str = "Corpus statistics") -> Table:
    table = Table(title=title)
    table.add_column("Statistic", style="cyan")
    table.add_column("Value", style="yellow", justify="right")
    for name, value in stats.table_rows():
        table.add_row(name, value)
    return table


@click.group(cls=IcredGroup)
@click.version_option(package_name="icred")
def cli():
    """ICRED: response generation for multi-party conversations."""
    setup_logging()


# ==========================================
# DATA
# ==========================================

@cli.command("ingest")
@click.argument("raw_log", type=click.Path(path_type=Path))
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True, help="JSONL corpus to write")
@click.option("--window", type=click.IntRange(min=1), default=5, show_default=True, help="Context window (turns)")
@click.option("--rules", type=click.Path(path_type=Path), default=None, help="Generic-response patterns file")
@click.option("--addressee-pattern", default=None, help="Regex with 'name' and 'rest' groups")
@run_options
def cmd_ingest(raw_log, out_path, window, rules, addressee_pattern, config_path):
    """Turn a raw TIME<TAB>SPEAKER<TAB>UTTERANCE log into a JSONL corpus."""
    run = resolve(config_path, rules=rules)
    try:
        lines = Path(raw_log).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"Cannot read raw log {raw_log}: {e}") from e

    rules_path = run.paths.rules or settings.generic_rules_path
    instances, report = ingest(
        lines,
        window=window,
        rules=load_rules(rules_path),
        max_utterance_length=run.model.max_utterance_length,
        pattern=addressee_pattern
    )
    if not instances:
        raise DataError("no context instances could be built from the raw log")
    try:
        write_jsonl(out_path, instances)
    except OSError as e:
        raise DataError(f"Cannot write {out_path}: {e}") from e

    console.print(stats_table(corpus_stats(instances)))
    console.print(
        f"[dim]{report.conversations} conversations, {report.turns} turns, "
        f"{len(report.rejects)} rejected lines, {report.generic_dropped} generic responses dropped, "
        f"{report.missing_interlocutor} without both interlocutors in context[/dim]"
    )
    console.print(f"[green]✅ Wrote {len(instances)} instances to {out_path}[/green]")


@cli.command("synth")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--instances", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--interlocutors", type=click.IntRange(min=2), default=4, show_default=True)
@click.option("--content-vocab", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--turns", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--filler-per-utterance", type=click.IntRange(min=0), default=2, show_default=True)
@click.option("--addressee-rate", type=click.FloatRange(0.0, 1.0), default=0.8, show_default=True)
@click.option("--answers", type=click.IntRange(min=0), default=0, show_default=True,
              help="Question/answer pairs in the target's last utterance (0 = plain copy grammar)")
@click.option("--question-vocab", type=click.IntRange(min=1), default=40, show_default=True)
@run_options
@seed_option
def cmd_synth(out_dir, instances, interlocutors, content_vocab, turns, filler_per_utterance, addressee_rate,
              answers, question_vocab, config_path, seed):
    """Write a synthetic addressee-copy corpus (corpus + train/dev/test splits + vocabulary)."""
    run = resolve(config_path, seed=seed)
    synth = SynthConfig(
        instances=instances,
        interlocutors=interlocutors,
        content_vocab_size=content_vocab,
        turns=turns,
        filler_per_utterance=filler_per_utterance,
        addressee_rate=addressee_rate,
        answers=answers,
        question_vocab_size=question_vocab
    )
    corpus = synth_generate(synth, seed=run.train.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(out_dir / "corpus.jsonl", corpus)
    build_vocabulary(corpus).save(out_dir / "vocab.txt")
    if len(corpus) >= 10:
        for name, split in zip(("train", "dev", "test"), split_dataset(corpus, seed=run.train.seed)):
            write_jsonl(out_dir / f"{name}.jsonl", split)
    console.print(stats_table(corpus_stats(corpus), "Synthetic corpus"))
    console.print(f"[green]✅ Wrote {len(corpus)} instances to {out_dir}[/green]")


# ==========================================
# TRAINING
# ==========================================

def _vocabulary(run: RunConfig, train_split) -> Vocabulary:
    if run.paths.vocab is not None:
        if not Path(run.paths.vocab).exists():
            raise ConfigError(f"vocab not found: {run.paths.vocab}")
        return Vocabulary.load(run.paths.vocab)
    return build_vocabulary(train_split)


def train_variant(run: RunConfig, train_split, dev_split, checkpoint_dir: Path, variant: Optional[str] = None,
                  resume: bool = False, threads: int = 1):
    """Train (or resume) one model into ``checkpoint_dir``; returns the TrainResult."""
    train_cfg = run.train.model_copy(update={"checkpoint_dir": checkpoint_dir, "threads": threads})
    storage = CheckpointStorage(checkpoint_dir)

    if resume and storage.has_last():
        trainer = Trainer.resume(storage, train_split, dev_split, train_cfg)
    else:
        vocab = _vocabulary(run, train_split)
        model_cfg = run.model.model_copy(update={"vocab_size": len(vocab)})
        if variant is not None:
            model_cfg = variant_config(model_cfg, variant)
        params = ModelParams.initialize(model_cfg, seed=train_cfg.seed)
        if run.paths.word_vectors is not None:
            load_word_vectors(run.paths.word_vectors, vocab, params)
        trainer = Trainer(ICREDModel(model_cfg, params, vocab), train_split, dev_split, train_cfg, storage)

    problems = validate_corpus(train_split, max_utterance_length=trainer.model.config.max_utterance_length)
    if problems:
        logger.warning(f"{len(problems)} corpus problems, first: {problems[0]}")
    return trainer.train()


@cli.command("train")
@click.option("--train", "train_path", type=click.Path(path_type=Path), default=None, help="Training JSONL")
@click.option("--dev", "dev_path", type=click.Path(path_type=Path), default=None, help="Dev JSONL")
@click.option("--vocab", type=click.Path(path_type=Path), default=None, help="Vocabulary file (built from train if omitted)")
@click.option("--checkpoint-dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("--word-vectors", type=click.Path(path_type=Path), default=None, help="Pre-trained 'word v1 ... vd' file")
@click.option("--variant", type=click.Choice(list(VARIANTS)), default=None, help="Train an ablation variant")
@click.option("--max-steps", type=click.IntRange(min=0), default=None)
@click.option("--batch-size", type=click.IntRange(min=1), default=None)
@click.option("--lr", type=float, default=None)
@click.option("--resume", is_flag=True, default=False, help="Continue from last.ckpt in the checkpoint directory")
@model_options
@run_options
@seed_option
@threads_option
def cmd_train(train_path, dev_path, vocab, checkpoint_dir, word_vectors, variant, max_steps, batch_size, lr, resume,
              memory_type, no_speaker_vector, no_addressee_vector, joint_prediction, config_path, seed, threads):
    """Train a model; writes best.ckpt, last.ckpt and loss_curve.csv."""
    run = resolve(
        config_path,
        train_corpus=train_path, dev_corpus=dev_path, vocab=vocab, checkpoint_dir=checkpoint_dir,
        word_vectors=word_vectors, max_steps=max_steps, batch_size=batch_size, lr=lr, seed=seed, threads=threads,
        **model_overrides(memory_type, no_speaker_vector, no_addressee_vector, joint_prediction)
    )
    run.require_paths("train_corpus", "dev_corpus")
    if run.paths.word_vectors is not None:
        run.require_paths("word_vectors")
    if run.train.checkpoint_dir is None:
        raise ConfigError("Missing required setting: checkpoint_dir")

    result = train_variant(
        run, load_instances(run.paths.train_corpus), load_instances(run.paths.dev_corpus),
        Path(run.train.checkpoint_dir), variant=variant, resume=resume, threads=threads_of(run, threads)
    )
    best = "-" if result.best_dev is None else f"{result.best_dev:.4f} (step {result.best_step})"
    console.print(f"[green]✅ Trained {result.steps} steps; best dev NLL {best}[/green]")
    console.print(f"[dim]Checkpoints in {run.train.checkpoint_dir}[/dim]")


# ==========================================
# INFERENCE
# ==========================================

def _checkpoint(run: RunConfig) -> Path:
    run.require_paths("checkpoint")
    return Path(run.paths.checkpoint)


@cli.command("generate")
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
@click.option("--corpus", type=click.Path(path_type=Path), default=None, help="JSONL instances to respond to")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Write here instead of stdout")
@click.option("--beam", type=click.IntRange(min=1), default=1, show_default=True, help="Beam width (1 = greedy)")
@click.option("--predicted-roles", is_flag=True, default=False, help="Use predicted speaker/addressee (joint models)")
@model_options
@run_options
def cmd_generate(checkpoint, corpus, out_path, beam, predicted_roles, memory_type, no_speaker_vector,
                 no_addressee_vector, joint_prediction, config_path):
    """Generate one response line per input instance."""
    run = resolve(config_path, checkpoint=checkpoint, corpus=corpus, output=out_path)
    run.require_paths("corpus")
    model = load_model(_checkpoint(run), model_overrides(memory_type, no_speaker_vector, no_addressee_vector, joint_prediction))
    lines = [
        " ".join(generate(model, inst, beam_width=beam, use_predicted_roles=predicted_roles).tokens)
        for inst in load_instances(run.paths.corpus)
    ]
    text = "".join(f"{line}\n" for line in lines)
    if run.paths.output is not None:
        Path(run.paths.output).write_text(text, encoding="utf-8")
        console.print(f"[green]✅ Wrote {len(lines)} responses to {run.paths.output}[/green]")
    else:
        click.echo(text, nl=False)


@cli.command("evaluate")
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
@click.option("--corpus", type=click.Path(path_type=Path), default=None, help="JSONL test instances")
@click.option("--candidates", type=click.Path(path_type=Path), default=None, help="Score this response file instead of generating")
@click.option("--lexicon", type=click.Path(path_type=Path), default=None, help="Noun lexicon")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="JSON report")
@click.option("--beam", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--sparsity-train", type=click.Path(path_type=Path), default=None, help="Training JSONL for the sparsity buckets")
@click.option("--sparsity-edges", default="100,1000,5000", show_default=True, help="Comma-separated bucket edges")
@run_options
@threads_option
def cmd_evaluate(checkpoint, corpus, candidates, lexicon, out_path, beam, sparsity_train, sparsity_edges,
                 config_path, threads):
    """Score generated (or given) responses: BLEU, ROUGE-L, length, nouns."""
    run = resolve(config_path, checkpoint=checkpoint, corpus=corpus, lexicon=lexicon, output=out_path,
                  threads=threads)
    run.require_paths("corpus")
    instances = load_instances(run.paths.corpus)
    nouns = load_lexicon(run.paths.lexicon or settings.noun_lexicon_path)

    if candidates is not None:
        try:
            lines = Path(candidates).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise DataError(f"Cannot read candidates {candidates}: {e}") from e
        if len(lines) != len(instances):
            raise DataError(f"{len(lines)} candidate lines for {len(instances)} instances")
        report = build_report([line.split() for line in lines], [i.response for i in instances], nouns, variant="given")
    else:
        model = load_model(_checkpoint(run))
        report = evaluate_model(model, instances, nouns, beam_width=beam, threads=threads_of(run, threads))

    print_reports([report], console)
    if sparsity_train is not None:
        try:
            edges = [int(e) for e in sparsity_edges.split(",") if e.strip()]
        except ValueError as e:
            raise ConfigError(f"Invalid --sparsity-edges: {sparsity_edges}") from e
        if not edges or edges != sorted(edges):
            raise ConfigError("--sparsity-edges must be increasing integers")
        rows = sparsity_report(report, instances, load_instances(sparsity_train), edges, nouns)
        console.print(bucket_table(rows, "Target addressee training turns"))
    if run.paths.output is not None:
        write_json(run.paths.output, report)
        console.print(f"[green]✅ Report written to {run.paths.output}[/green]")


@cli.command("ablate")
@click.option("--corpus", type=click.Path(path_type=Path), default=None, help="JSONL test instances")
@click.option("--checkpoints-dir", type=click.Path(file_okay=False, path_type=Path), required=True,
              help="Holds <variant>/best.ckpt per variant")
@click.option("--variants", default=",".join(COMPONENT_ABLATIONS), show_default=True, help="Comma-separated variant names")
@click.option("--train", "train_path", type=click.Path(path_type=Path), default=None, help="Train missing variants from this JSONL")
@click.option("--dev", "dev_path", type=click.Path(path_type=Path), default=None)
@click.option("--lexicon", type=click.Path(path_type=Path), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="JSON report")
@click.option("--beam", type=click.IntRange(min=1), default=1, show_default=True)
@model_options
@run_options
@seed_option
@threads_option
def cmd_ablate(corpus, checkpoints_dir, variants, train_path, dev_path, lexicon, out_path, beam, memory_type,
               no_speaker_vector, no_addressee_vector, joint_prediction, config_path, seed, threads):
    """Evaluate every variant side by side, training missing ones when --train/--dev are given."""
    run = resolve(config_path, corpus=corpus, lexicon=lexicon, output=out_path, train_corpus=train_path,
                  dev_corpus=dev_path, seed=seed, threads=threads,
                  **model_overrides(memory_type, no_speaker_vector, no_addressee_vector, joint_prediction))
    run.require_paths("corpus")
    names = [v.strip() for v in variants.split(",") if v.strip()]
    unknown = [v for v in names if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"Unknown variants: {', '.join(unknown)}")
    workers = threads_of(run, threads)

    checkpoints: Dict[str, Optional[Path]] = {v: checkpoints_dir / v / "best.ckpt" for v in names}
    missing = [v for v, p in checkpoints.items() if not p.exists()]
    if missing and run.paths.train_corpus is not None and run.paths.dev_corpus is not None:
        run.require_paths("train_corpus", "dev_corpus")
        train_split = load_instances(run.paths.train_corpus)
        dev_split = load_instances(run.paths.dev_corpus)
        for v in missing:
            console.print(f"[cyan]Training variant {LABELS[v]}...[/cyan]")
            train_variant(run, train_split, dev_split, checkpoints_dir / v, variant=v, threads=workers)

    nouns = load_lexicon(run.paths.lexicon or settings.noun_lexicon_path)
    report = ablation_report(load_instances(run.paths.corpus), checkpoints, nouns, beam_width=beam, threads=workers)
    if not report.rows:
        raise DataError("no variant could be evaluated")
    print_reports(report.rows, console, title="Ablation")
    for v in report.skipped:
        console.print(f"[yellow]⚠️  Skipped {LABELS[v]} (no checkpoint)[/yellow]")
    if run.paths.output is not None:
        write_json(run.paths.output, report)
        console.print(f"[green]✅ Report written to {run.paths.output}[/green]")


@cli.command("predict")
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
@click.option("--corpus", type=click.Path(path_type=Path), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="JSON lines of predictions")
@run_options
def cmd_predict(checkpoint, corpus, out_path, config_path):
    """Predict the responding speaker and target addressee of each instance."""
    run = resolve(config_path, checkpoint=checkpoint, corpus=corpus, output=out_path)
    run.require_paths("corpus")
    model = load_model(_checkpoint(run))
    if not model.config.joint_prediction:
        raise ConfigError("checkpoint was not trained with --joint-prediction")

    table = Table(title="Interlocutor prediction")
    for column in ("#", "Speaker", "P", "Addressee", "P", "Gold"):
        table.add_column(column)
    rows: List[Dict[str, Any]] = []
    for i, inst in enumerate(load_instances(run.paths.corpus)):
        pred = model.predict_interlocutors(inst)
        speaker, addressee = pred.speaker, pred.addressee
        row = {
            "index": i,
            "speaker": speaker,
            "speaker_prob": float(pred.speaker_probs[pred.candidates.index(speaker)]),
            "addressee": addressee,
            "addressee_prob": float(pred.addressee_probs[pred.candidates.index(addressee)]),
            "candidates": pred.candidates,
            "speaker_distribution": [float(p) for p in pred.speaker_probs],
            "addressee_distribution": [float(p) for p in pred.addressee_probs],
            "degenerate": pred.degenerate,
        }
        rows.append(row)
        table.add_row(str(i), speaker, f"{row['speaker_prob']:.3f}", addressee, f"{row['addressee_prob']:.3f}",
                      f"{inst.responding_speaker} -> {inst.target_addressee}")
    console.print(table)
    if run.paths.output is not None:
        Path(run.paths.output).write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
        console.print(f"[green]✅ Wrote {len(rows)} predictions to {run.paths.output}[/green]")


@cli.command("config")
@model_options
@run_options
@seed_option
@threads_option
def cmd_config(memory_type, no_speaker_vector, no_addressee_vector, joint_prediction, config_path, seed, threads):
    """Show the resolved configuration."""
    run = resolve(config_path, seed=seed, threads=threads,
                  **model_overrides(memory_type, no_speaker_vector, no_addressee_vector, joint_prediction))
    print_config_status(run, console)


def main():
    cli(prog_name="icred")


if __name__ == "__main__":
    main()
