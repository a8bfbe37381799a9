"""
Tests for the command-line interface.
"""

import json

import pytest
from click.testing import CliRunner

from icred.corpus import read_jsonl
from icred.main import cli

from tests.builders import FIXTURES

TINY_CONFIG = """\
# tiny model for command tests
word_dim = 8
utterance_hidden_dim = 8
interlocutor_dim = 8
decoder_dim = 8
max_response_length = 6
max_steps = 2
eval_every = 1
batch_size = 4
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A synthetic corpus and one trained tiny checkpoint shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.cfg").write_text(TINY_CONFIG, encoding="utf-8")
    runner = CliRunner()

    result = runner.invoke(cli, ["synth", "--out-dir", str(root / "data"), "--instances", "40",
                                 "--content-vocab", "6", "--seed", "3"])
    assert result.exit_code == 0, result.output

    result = runner.invoke(cli, [
        "train", "--train", str(root / "data" / "train.jsonl"), "--dev", str(root / "data" / "dev.jsonl"),
        "--checkpoint-dir", str(root / "ckpt"), "--config", str(root / "tiny.cfg"),
    ])
    assert result.exit_code == 0, result.output
    return root


def test_ingest(runner, tmp_path):
    out = tmp_path / "corpus.jsonl"
    result = runner.invoke(cli, ["ingest", str(FIXTURES / "sample_log.txt"), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert len(read_jsonl(out)) == 3
    assert "# Contexts" in result.output


def test_ingest_missing_log_exits_2(runner, tmp_path):
    result = runner.invoke(cli, ["ingest", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "c.jsonl")])
    assert result.exit_code == 2
    assert "Error" in result.output


def test_missing_config_file_exits_2(runner, tmp_path):
    result = runner.invoke(cli, ["config", "--config", str(tmp_path / "none.cfg")])
    assert result.exit_code == 2


def test_unknown_config_key_exits_2(runner, tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("hidden_size = 3\n", encoding="utf-8")
    result = runner.invoke(cli, ["config", "--config", str(path)])
    assert result.exit_code == 2
    assert "hidden_size" in result.output


def test_config_shows_flag_over_file(runner, workspace):
    result = runner.invoke(cli, ["config", "--config", str(workspace / "tiny.cfg"), "--memory-type", "latest"])
    assert result.exit_code == 0, result.output
    assert "latest" in result.output
    assert "word_dim" in result.output


def test_synth_writes_splits(workspace):
    data = workspace / "data"
    sizes = [len(read_jsonl(data / f"{name}.jsonl")) for name in ("train", "dev", "test")]
    assert sizes == [32, 4, 4]
    assert (data / "vocab.txt").exists()


def test_synth_question_answer_grammar(runner, tmp_path):
    result = runner.invoke(cli, ["synth", "--out-dir", str(tmp_path), "--instances", "20", "--content-vocab", "8",
                                 "--answers", "8", "--question-vocab", "10", "--seed", "2"])
    assert result.exit_code == 0, result.output
    for inst in read_jsonl(tmp_path / "corpus.jsonl"):
        table = inst.turns[inst.last_turn_by(inst.target_addressee)].tokens
        assert len(table) == 16
        assert inst.response[-1] in table[1::2]

    result = runner.invoke(cli, ["synth", "--out-dir", str(tmp_path), "--content-vocab", "4", "--answers", "8"])
    assert result.exit_code == 2


def test_train_writes_checkpoints(workspace):
    ckpt = workspace / "ckpt"
    assert (ckpt / "best.ckpt").exists()
    assert (ckpt / "last.ckpt.adam").exists()
    assert len((ckpt / "loss_curve.csv").read_text(encoding="utf-8").splitlines()) == 3


def test_train_resume_continues(runner, workspace, tmp_path):
    ckpt = tmp_path / "ckpt"
    base = ["train", "--train", str(workspace / "data" / "train.jsonl"), "--dev", str(workspace / "data" / "dev.jsonl"),
            "--checkpoint-dir", str(ckpt), "--config", str(workspace / "tiny.cfg")]
    assert runner.invoke(cli, base + ["--max-steps", "1"]).exit_code == 0
    result = runner.invoke(cli, base + ["--resume"])
    assert result.exit_code == 0, result.output
    state = json.loads((ckpt / "last.ckpt.state.json").read_text(encoding="utf-8"))
    assert state["step"] == 2


def test_train_needs_corpus(runner, tmp_path):
    result = runner.invoke(cli, ["train", "--train", str(tmp_path / "none.jsonl"), "--dev", str(tmp_path / "none.jsonl"),
                                 "--checkpoint-dir", str(tmp_path / "ckpt")])
    assert result.exit_code == 2


def test_generate_one_line_per_instance(runner, workspace, tmp_path):
    out = tmp_path / "responses.txt"
    result = runner.invoke(cli, ["generate", "--checkpoint", str(workspace / "ckpt" / "best.ckpt"),
                                 "--corpus", str(workspace / "data" / "test.jsonl"), "--out", str(out), "--beam", "2"])
    assert result.exit_code == 0, result.output
    assert len(out.read_text(encoding="utf-8").splitlines()) == 4


def test_generate_with_mismatched_flag_exits_2(runner, workspace):
    result = runner.invoke(cli, ["generate", "--checkpoint", str(workspace / "ckpt" / "best.ckpt"),
                                 "--corpus", str(workspace / "data" / "test.jsonl"), "--memory-type", "all"])
    assert result.exit_code == 2
    assert "memory_type" in result.output


@pytest.mark.parametrize("command", ["generate", "evaluate", "predict"])
def test_seed_is_not_offered_where_unused(runner, command):
    result = runner.invoke(cli, [command, "--seed", "1"])
    assert result.exit_code == 2
    assert "No such option" in result.output


def test_evaluate_gold_candidates_score_100(runner, workspace, tmp_path):
    test_path = workspace / "data" / "test.jsonl"
    candidates = tmp_path / "gold.txt"
    candidates.write_text("".join(" ".join(i.response) + "\n" for i in read_jsonl(test_path)), encoding="utf-8")
    out = tmp_path / "report.json"

    result = runner.invoke(cli, ["evaluate", "--corpus", str(test_path), "--candidates", str(candidates), "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["bleu"] == pytest.approx(100.0)
    assert report["rouge_l"] == pytest.approx(100.0)


def test_evaluate_candidate_count_must_match(runner, workspace, tmp_path):
    candidates = tmp_path / "short.txt"
    candidates.write_text("only one line\n", encoding="utf-8")
    result = runner.invoke(cli, ["evaluate", "--corpus", str(workspace / "data" / "test.jsonl"),
                                 "--candidates", str(candidates)])
    assert result.exit_code == 2


def test_evaluate_checkpoint_with_sparsity(runner, workspace, tmp_path):
    out = tmp_path / "report.json"
    result = runner.invoke(cli, [
        "evaluate", "--checkpoint", str(workspace / "ckpt" / "best.ckpt"),
        "--corpus", str(workspace / "data" / "test.jsonl"), "--out", str(out),
        "--sparsity-train", str(workspace / "data" / "train.jsonl"), "--sparsity-edges", "5,20",
    ])
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["count"] == 4 and report["variant"] == "full"


def test_predict_requires_joint_checkpoint(runner, workspace):
    result = runner.invoke(cli, ["predict", "--checkpoint", str(workspace / "ckpt" / "best.ckpt"),
                                 "--corpus", str(workspace / "data" / "test.jsonl")])
    assert result.exit_code == 2


def test_joint_train_and_predict(runner, workspace, tmp_path):
    data = workspace / "data"
    result = runner.invoke(cli, ["train", "--train", str(data / "train.jsonl"), "--dev", str(data / "dev.jsonl"),
                                 "--checkpoint-dir", str(tmp_path / "joint"), "--config", str(workspace / "tiny.cfg"),
                                 "--joint-prediction"])
    assert result.exit_code == 0, result.output

    out = tmp_path / "predictions.jsonl"
    result = runner.invoke(cli, ["predict", "--checkpoint", str(tmp_path / "joint" / "best.ckpt"),
                                 "--corpus", str(data / "test.jsonl"), "--out", str(out)])
    assert result.exit_code == 0, result.output
    rows = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert len(rows) == 4
    assert all(r["speaker"] != r["addressee"] for r in rows)
    assert all(sum(r["speaker_distribution"]) == pytest.approx(1.0) for r in rows)


def test_ablate_trains_missing_variants(runner, workspace, tmp_path):
    data = workspace / "data"
    out = tmp_path / "ablation.json"
    result = runner.invoke(cli, [
        "ablate", "--corpus", str(data / "test.jsonl"), "--checkpoints-dir", str(tmp_path / "variants"),
        "--variants", "full,no_memory", "--train", str(data / "train.jsonl"), "--dev", str(data / "dev.jsonl"),
        "--config", str(workspace / "tiny.cfg"), "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text(encoding="utf-8"))
    assert [row["variant"] for row in report["rows"]] == ["full", "no_memory"]
    assert report["skipped"] == []


def test_ablate_without_checkpoints_exits_2(runner, workspace, tmp_path):
    result = runner.invoke(cli, ["ablate", "--corpus", str(workspace / "data" / "test.jsonl"),
                                 "--checkpoints-dir", str(tmp_path / "empty")])
    assert result.exit_code == 2


def test_ablate_rejects_unknown_variant(runner, workspace, tmp_path):
    result = runner.invoke(cli, ["ablate", "--corpus", str(workspace / "data" / "test.jsonl"),
                                 "--checkpoints-dir", str(tmp_path), "--variants", "full,bogus"])
    assert result.exit_code == 2
