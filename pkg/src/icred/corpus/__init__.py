"""Chat-log ingestion, context instances, vocabulary and synthetic corpora."""

from icred.corpus.builder import annotate_conversation, build_contexts, ingest
from icred.corpus.dataset import corpus_stats, read_jsonl, split_dataset, split_sizes, validate_corpus, write_jsonl
from icred.corpus.models import ContextInstance, CorpusStats, DialogueTurn, IngestReport, RawTurn, RejectedLine
from icred.corpus.parser import extract_addressee, filter_generic, load_rules, parse_raw_log, tokenize
from icred.corpus.synth import SynthConfig, payload_of, synth_generate
from icred.corpus.vocabulary import BOS_ID, EOS_ID, PAD_ID, UNK_ID, Vocabulary, build_vocabulary
