"""Response metrics and evaluation reports."""

from icred.evaluation.metrics import (
    avg_length,
    bleu,
    load_lexicon,
    noun_count,
    payload_accuracy,
    rouge_l,
    token_accuracy,
)
from icred.evaluation.report import (
    AblationReport,
    BucketRow,
    EvalReport,
    InstanceRecord,
    ablation_report,
    build_report,
    evaluate_model,
    prediction_buckets,
    prediction_partition,
    print_reports,
    sparsity_report,
)
