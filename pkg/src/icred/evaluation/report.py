"""
Evaluation reports: per-model EvalReport, interlocutor-prediction buckets,
addressee-sparsity buckets and the multi-variant ablation table.
"""

import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Set, Tuple, Union

from pydantic import BaseModel, Field
from rich.console import Console
from rich.table import Table

from icred.corpus.models import ContextInstance
from icred.errors import DomainError, IcredError
from icred.evaluation.metrics import (
    avg_length,
    bleu,
    noun_count,
    nouns_in,
    payload_accuracy,
    rouge_l,
    token_accuracy,
)
from icred.model.generation import GenerationResult, generate
from icred.model.network import ICREDModel
from icred.model.variants import LABELS, identify_variant
from icred.storage.checkpoint import load_checkpoint

logger = logging.getLogger(__name__)


# ============================================================================
# RECORDS
# ============================================================================

class InstanceRecord(BaseModel):
    """One evaluated instance."""
    index: int
    candidate: List[str]
    reference: List[str]
    length: int
    nouns: int
    target_addressee: Optional[str] = None
    memory_flagged: bool = False
    predicted_speaker: Optional[str] = None
    predicted_addressee: Optional[str] = None
    speaker_correct: Optional[bool] = None
    addressee_correct: Optional[bool] = None


class BucketRow(BaseModel):
    """Metrics over a subset of instances (empty subsets carry no scores)."""
    label: str
    count: int
    data_pct: float
    bleu: Optional[float] = None
    rouge_l: Optional[float] = None
    avg_length: Optional[float] = None
    avg_nouns: Optional[float] = None


class EvalReport(BaseModel):
    """Aggregate metrics plus the per-instance records they were computed from."""
    variant: Optional[str] = None
    count: int
    bleu: float = Field(..., ge=0.0, le=100.0)
    rouge_l: float = Field(..., ge=0.0, le=100.0)
    avg_length: float
    avg_nouns: float
    token_accuracy: float = Field(..., ge=0.0, le=100.0)
    payload_accuracy: float = Field(..., ge=0.0, le=100.0)
    records: List[InstanceRecord] = Field(default_factory=list)
    flags: Dict[str, List[int]] = Field(default_factory=dict)
    buckets: Optional[List[BucketRow]] = None


class AblationReport(BaseModel):
    rows: List[EvalReport] = Field(default_factory=list)
    skipped: List[str] = Field(default_factory=list)


# ============================================================================
# BUILDING REPORTS
# ============================================================================

def build_report(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    lexicon: FrozenSet[str],
    variant: Optional[str] = None,
    records: Optional[List[InstanceRecord]] = None
) -> EvalReport:
    """
    Aggregate metrics over aligned candidates and references.

    ``records`` may carry extra per-instance fields (flags, predictions);
    otherwise plain records are created.
    """
    if records is None:
        records = [
            InstanceRecord(index=i, candidate=list(c), reference=list(r), length=len(c), nouns=nouns_in(c, lexicon))
            for i, (c, r) in enumerate(zip(candidates, references))
        ]
    flags: Dict[str, List[int]] = {}
    empty_memory = [r.index for r in records if r.memory_flagged]
    if empty_memory:
        flags["empty_memory"] = empty_memory
    return EvalReport(
        variant=variant,
        count=len(candidates),
        bleu=bleu(candidates, references),
        rouge_l=rouge_l(candidates, references),
        avg_length=avg_length(candidates),
        avg_nouns=noun_count(candidates, lexicon),
        token_accuracy=token_accuracy(candidates, references),
        payload_accuracy=payload_accuracy(candidates, references),
        records=records,
        flags=flags
    )


def _record(index: int, instance: ContextInstance, result: GenerationResult, lexicon: FrozenSet[str]) -> InstanceRecord:
    record = InstanceRecord(
        index=index,
        candidate=result.tokens,
        reference=list(instance.response),
        length=len(result.tokens),
        nouns=nouns_in(result.tokens, lexicon),
        target_addressee=instance.target_addressee,
        memory_flagged=result.memory_flagged
    )
    if result.prediction is not None:
        record.predicted_speaker = result.responding_speaker
        record.predicted_addressee = result.target_addressee
        record.speaker_correct = result.responding_speaker == instance.responding_speaker
        record.addressee_correct = result.target_addressee == instance.target_addressee
    return record


def evaluate_model(
    model: ICREDModel,
    instances: Sequence[ContextInstance],
    lexicon: FrozenSet[str],
    beam_width: int = 1,
    use_predicted_roles: Optional[bool] = None,
    threads: int = 1,
    variant: Optional[str] = None
) -> EvalReport:
    """
    Generate for every instance and score against the gold responses.

    Joint-prediction models decode with their predicted roles by default and
    get the prediction-correctness buckets attached.

    Raises:
        DomainError: No instances
    """
    if not instances:
        raise DomainError("nothing to evaluate")
    if use_predicted_roles is None:
        use_predicted_roles = model.config.joint_prediction

    def one(i: int) -> InstanceRecord:
        result = generate(model, instances[i], beam_width=beam_width, use_predicted_roles=use_predicted_roles)
        return _record(i, instances[i], result, lexicon)

    indices = range(len(instances))
    if threads <= 1:
        records = [one(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            records = list(executor.map(one, indices))

    report = build_report(
        [r.candidate for r in records],
        [r.reference for r in records],
        lexicon,
        variant=variant or identify_variant(model.config),
        records=records
    )
    if use_predicted_roles:
        report.buckets = prediction_buckets(report, lexicon)
    return report


# ============================================================================
# BUCKETS
# ============================================================================

def _bucket(label: str, records: Sequence[InstanceRecord], total: int, lexicon: FrozenSet[str]) -> BucketRow:
    row = BucketRow(label=label, count=len(records), data_pct=100.0 * len(records) / total if total else 0.0)
    if records:
        cands = [r.candidate for r in records]
        refs = [r.reference for r in records]
        row.bleu = bleu(cands, refs)
        row.rouge_l = rouge_l(cands, refs)
        row.avg_length = avg_length(cands)
        row.avg_nouns = noun_count(cands, lexicon)
    return row


def prediction_partition(report: EvalReport) -> Dict[str, List[InstanceRecord]]:
    """Split records by (speaker correct, addressee correct) into four disjoint groups."""
    groups: Dict[str, List[InstanceRecord]] = {"True/True": [], "True/False": [], "False/True": [], "False/False": []}
    for r in report.records:
        if r.speaker_correct is None or r.addressee_correct is None:
            raise DomainError(f"instance {r.index} has no interlocutor prediction")
        groups[f"{r.speaker_correct}/{r.addressee_correct}"].append(r)
    return groups


def prediction_buckets(report: EvalReport, lexicon: FrozenSet[str]) -> List[BucketRow]:
    """Rows */*, True/True, True/*, */True, False/False over prediction correctness."""
    groups = prediction_partition(report)
    total = len(report.records)
    return [
        _bucket("*/*", report.records, total, lexicon),
        _bucket("True/True", groups["True/True"], total, lexicon),
        _bucket("True/*", groups["True/True"] + groups["True/False"], total, lexicon),
        _bucket("*/True", groups["True/True"] + groups["False/True"], total, lexicon),
        _bucket("False/False", groups["False/False"], total, lexicon),
    ]


def _turn_key(speaker: str, addressee: Optional[str], tokens: Sequence[str]) -> Tuple:
    return speaker, addressee, tuple(tokens)


def speaking_counts(instances: Sequence[ContextInstance]) -> Counter:
    """
    How many distinct turns (context turns and responses) each interlocutor said.

    Windows cut from one conversation overlap. When the opening turns of a
    context equal the closing turns of another instance (its context followed
    by its response), they are the same turns and are counted once: only the
    turns after the longest such overlap are new. The result does not depend
    on instance order, so shuffled splits count the same as the ingested file.
    """
    sequences = []
    for inst in instances:
        keys = [_turn_key(t.speaker, t.addressee, t.tokens) for t in inst.turns]
        if inst.response:
            keys.append(_turn_key(inst.responding_speaker, inst.target_addressee, inst.response))
        sequences.append(keys)

    closings: Dict[Tuple, Set[int]] = defaultdict(set)
    for i, keys in enumerate(sequences):
        for start in range(len(keys)):
            closings[tuple(keys[start:])].add(i)

    counts: Counter = Counter()
    for i, (inst, keys) in enumerate(zip(instances, sequences)):
        context = len(inst.turns)
        overlap = next((k for k in range(context, 0, -1) if closings.get(tuple(keys[:k]), set()) - {i}), 0)
        for speaker, _, _ in keys[overlap:]:
            counts[speaker] += 1
    return counts


def sparsity_report(
    report: EvalReport,
    test_instances: Sequence[ContextInstance],
    train_instances: Sequence[ContextInstance],
    edges: Sequence[int] = (100, 1000, 5000),
    lexicon: FrozenSet[str] = frozenset()
) -> List[BucketRow]:
    """
    Group test instances by how often their target addressee spoke in training.

    Intervals are [0, e0], (e0, e1], ..., (e_last, inf).
    """
    if len(report.records) != len(test_instances):
        raise DomainError("report and test instances are not aligned")
    counts = speaking_counts(train_instances)
    labels = [f"[0, {edges[0]}]"] + [f"({lo}, {hi}]" for lo, hi in zip(edges, edges[1:])] + [f"({edges[-1]}, inf)"]
    groups: List[List[InstanceRecord]] = [[] for _ in labels]
    for record, inst in zip(report.records, test_instances):
        spoken = counts[inst.target_addressee]
        slot = next((i for i, edge in enumerate(edges) if spoken <= edge), len(edges))
        groups[slot].append(record)
    return [_bucket(label, group, len(report.records), lexicon) for label, group in zip(labels, groups)]


# ============================================================================
# ABLATION
# ============================================================================

def ablation_report(
    instances: Sequence[ContextInstance],
    checkpoints: Mapping[str, Union[str, Path, None]],
    lexicon: FrozenSet[str],
    beam_width: int = 1,
    threads: int = 1
) -> AblationReport:
    """
    Evaluate one checkpoint per variant on ``instances``.

    Variants whose checkpoint is missing or unloadable are skipped with a warning.
    """
    out = AblationReport()
    for variant, path in checkpoints.items():
        if path is None or not Path(path).exists():
            logger.warning(f"No checkpoint for variant {variant}; skipping")
            out.skipped.append(variant)
            continue
        try:
            config, params, vocab = load_checkpoint(path)
        except IcredError as e:
            logger.warning(f"Cannot load checkpoint for variant {variant}: {e}; skipping")
            out.skipped.append(variant)
            continue
        if vocab is None:
            logger.warning(f"Checkpoint for {variant} has no vocabulary; skipping")
            out.skipped.append(variant)
            continue
        declared = identify_variant(config)
        if declared != variant:
            logger.warning(f"Checkpoint for {variant} is configured as {declared}")
        model = ICREDModel(config, params, vocab)
        out.rows.append(evaluate_model(model, instances, lexicon, beam_width=beam_width, threads=threads, variant=variant))
    return out


# ============================================================================
# RENDERING
# ============================================================================

def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.2f}"


def report_table(reports: Sequence[EvalReport], title: str = "Evaluation") -> Table:
    table = Table(title=title)
    for column in ("Model", "BLEU", "ROUGE-L", "Length", "#Noun", "TokAcc", "Payload", "N"):
        table.add_column(column, justify="left" if column == "Model" else "right")
    for r in reports:
        name = LABELS.get(r.variant or "", r.variant or "-")
        table.add_row(name, _fmt(r.bleu), _fmt(r.rouge_l), _fmt(r.avg_length), _fmt(r.avg_nouns),
                      _fmt(r.token_accuracy), _fmt(r.payload_accuracy), str(r.count))
    return table


def bucket_table(rows: Sequence[BucketRow], title: str) -> Table:
    table = Table(title=title)
    for column in ("Bucket", "Data %", "BLEU", "ROUGE-L", "Length", "#Noun"):
        table.add_column(column, justify="left" if column == "Bucket" else "right")
    for row in rows:
        table.add_row(row.label, _fmt(row.data_pct), _fmt(row.bleu), _fmt(row.rouge_l),
                      _fmt(row.avg_length), _fmt(row.avg_nouns))
    return table


def print_reports(reports: Sequence[EvalReport], console: Optional[Console] = None, title: str = "Evaluation") -> None:
    """Print the aligned table, plus bucket tables for joint-prediction rows."""
    console = console or Console()
    console.print(report_table(reports, title))
    for r in reports:
        if r.buckets:
            console.print(bucket_table(r.buckets, f"Interlocutor prediction: {LABELS.get(r.variant or '', r.variant)}"))
        if r.flags.get("empty_memory"):
            console.print(f"[yellow]{len(r.flags['empty_memory'])} instances with empty addressee memory[/yellow]")


def write_json(path: Union[str, Path], payload: BaseModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(payload.model_dump_json(indent=2), encoding="utf-8")
    return path
