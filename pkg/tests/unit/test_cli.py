"""
Tests for the command-line interface.
"""

import argparse
import json

import pandas as pd
import pytest

from echo_moe.base.config import RunConfig
from echo_moe.cli import EXIT_ERROR, EXIT_INVARIANT, EXIT_OK, _resolve_config, build_parser, main
from echo_moe.exceptions import InvariantError
from echo_moe.factory import load_run_config, read_config_echo
from echo_moe.metrics import AVERAGE_ROW
from echo_moe.textpipe import TemplateClass, read_records


@pytest.fixture
def config_file(run_config, temp_dir):
    """Run configuration on disk with room for the longest caption."""
    model = run_config.model.model_copy(update={"max_len": 64})
    run = run_config.model_copy(update={"model": model})
    path = temp_dir / "config.json"
    path.write_text(run.model_dump_json(indent=2))
    return path


@pytest.fixture
def corpus_dir(config_file, temp_dir):
    """A synthesized corpus."""
    out = temp_dir / "corpus"
    assert main(["synth", "--config", str(config_file), "--out", str(out)]) == EXIT_OK
    return out


def lines(path) -> list[str]:
    return path.read_bytes().decode("utf-8").split("\n")[:-1]


class TestParser:
    """Test argument parsing."""

    def test_subcommands(self):
        parser = build_parser()
        for argv in (
            ["synth"],
            ["train", "--stage", "I"],
            ["decode", "--checkpoint", "c"],
            ["eval", "--pred", "p", "--ref", "r"],
            ["dedup", "in", "out"],
            ["route-stats", "--out", "r.csv"],
        ):
            assert parser.parse_args(argv).command == argv[0]

    def test_unknown_stage(self):
        """argparse rejects stages outside the choices."""
        with pytest.raises(SystemExit) as exc_info:
            main(["train", "--stage", "III"])
        assert exc_info.value.code == 2


class TestConfigResolution:
    """Test JSON, environment and flag precedence."""

    @staticmethod
    def namespace(config=None, seed=None, debug=False):
        return argparse.Namespace(config=config, seed=seed, debug=debug)

    def test_file(self, config_file):
        assert _resolve_config(self.namespace(str(config_file))).seed == 7

    def test_environment_over_file(self, config_file, monkeypatch):
        monkeypatch.setenv("ECHO_MOE_SEED", "42")
        assert _resolve_config(self.namespace(str(config_file))).seed == 42

    def test_flag_over_environment(self, config_file, monkeypatch):
        monkeypatch.setenv("ECHO_MOE_SEED", "42")
        run = _resolve_config(self.namespace(str(config_file), seed=5, debug=True))

        assert run.seed == 5
        assert run.debug is True
        assert run.model.max_len == 64


class TestSynth:
    """Test corpus synthesis."""

    def test_files(self, corpus_dir):
        manifest = json.loads((corpus_dir / "manifest.json").read_text())

        assert manifest["captions"] == 6
        assert manifest["instructions"] == 20
        assert manifest["config"]["seed"] == 7

    def test_counts_from_flags(self, config_file, temp_dir):
        out = temp_dir / "small"
        argv = ["synth", "--config", str(config_file), "--out", str(out), "--count", "2"]
        assert main(argv) == EXIT_OK
        assert len(lines(out / "captions.jsonl")) == 2

    def test_generator_records(self, config_file, temp_dir):
        """A registered generator turns every caption into instruction records."""
        out = temp_dir / "generated"
        argv = ["synth", "--config", str(config_file), "--out", str(out), "--generator", "echo"]
        assert main(argv) == EXIT_OK

        records = read_records(out / "generated.jsonl")
        captions = lines(out / "captions.jsonl")
        assert len(records) == 2 * len(captions)
        assert all(r.source.startswith("echo:") for r in records)
        assert {r.template_class for r in records} == {TemplateClass.OPEN, TemplateClass.CLOSED}
        assert read_config_echo(out / "generated.jsonl")["generator"] == "echo"

    def test_unknown_generator(self, config_file, temp_dir):
        argv = ["synth", "--config", str(config_file), "--out", str(temp_dir / "g")]
        assert main([*argv, "--generator", "missing"]) == EXIT_ERROR


class TestDedupCommand:
    """Test the dedup subcommand."""

    def test_outputs(self, corpus_dir, temp_dir):
        """Accepted records, a rejection report led by its header, and review batches."""
        out = temp_dir / "dedup" / "accepted.jsonl"
        review = temp_dir / "dedup" / "review.jsonl"
        argv = ["dedup", str(corpus_dir / "instructions.jsonl"), str(out), "--review", str(review)]
        assert main(argv) == EXIT_OK

        rejected = [json.loads(line) for line in lines(out.with_suffix(".rejected.jsonl"))]
        header = rejected[0]["header"]
        assert header["input"] == 20
        assert header["accepted"] == len(lines(out))
        assert header["accepted"] + header["rejected"] == 20
        assert len(rejected) == header["rejected"] + 1
        assert len(lines(review)) == 1

    def test_config_echo(self, config_file, corpus_dir, temp_dir):
        """Accepted records and the rejection header carry the resolved configuration."""
        out = temp_dir / "accepted.jsonl"
        argv = ["dedup", "--config", str(config_file), str(corpus_dir / "instructions.jsonl")]
        assert main([*argv, str(out), "--hamming", "2"]) == EXIT_OK

        echo = read_config_echo(out)
        assert RunConfig.model_validate(echo["run"]) == load_run_config(config_file)
        assert echo["hamming_threshold"] == 2
        assert echo["rouge_threshold"] == 0.7
        header = json.loads(lines(out.with_suffix(".rejected.jsonl"))[0])["header"]
        assert RunConfig.model_validate(header["config"]) == load_run_config(config_file)

    def test_invalid_utf8_input(self, temp_dir):
        """Undecodable bytes are a data error, not a crash."""
        src = temp_dir / "bad.jsonl"
        src.write_bytes(b'{"id": "a", "question": "q", "answer": "\xff"}\n')
        assert main(["dedup", str(src), str(temp_dir / "o.jsonl")]) == EXIT_ERROR

    def test_missing_input(self, temp_dir):
        argv = ["dedup", str(temp_dir / "none.jsonl"), str(temp_dir / "o.jsonl")]
        assert main(argv) == EXIT_ERROR


class TestEvalCommand:
    """Test the eval subcommand."""

    def test_report(self, temp_dir):
        (temp_dir / "pred.txt").write_text("a b c\nx y\n")
        (temp_dir / "ref.txt").write_text("a b c\nx z\n")
        (temp_dir / "tags.txt").write_text("liver\nkidney\n")
        out = temp_dir / "report.csv"
        argv = [
            "eval",
            "--pred",
            str(temp_dir / "pred.txt"),
            "--ref",
            str(temp_dir / "ref.txt"),
            "--tags",
            str(temp_dir / "tags.txt"),
            "--out",
            str(out),
        ]
        assert main(argv) == EXIT_OK

        frame = pd.read_csv(out)
        assert list(frame["tag"]) == ["kidney", "liver", AVERAGE_ROW]
        echo = read_config_echo(out)
        assert echo["pred"] == str(temp_dir / "pred.txt")
        assert RunConfig.model_validate(echo["run"]).metrics.tokenization == "word"

    def test_length_mismatch(self, temp_dir):
        (temp_dir / "pred.txt").write_text("a\nb\n")
        (temp_dir / "ref.txt").write_text("a\n")
        argv = ["eval", "--pred", str(temp_dir / "pred.txt"), "--ref", str(temp_dir / "ref.txt")]
        assert main(argv) == EXIT_ERROR

    def test_missing_config(self, temp_dir):
        argv = ["eval", "--config", str(temp_dir / "nope.json"), "--pred", "p", "--ref", "r"]
        assert main(argv) == EXIT_ERROR


class TestModelCommands:
    """Test train, decode and route-stats."""

    def test_stage_two_needs_checkpoint(self, config_file, corpus_dir):
        argv = ["train", "--config", str(config_file), "--stage", "II", "--corpus", str(corpus_dir)]
        assert main(argv) == EXIT_ERROR

    def test_train_decode_route(self, config_file, corpus_dir, temp_dir):
        """A base-stage checkpoint decodes and exports routing statistics."""
        run_dir = temp_dir / "base"
        common = ["--config", str(config_file)]
        argv = ["train", *common, "--stage", "base", "--corpus", str(corpus_dir)]
        assert main([*argv, "--out", str(run_dir), "--epochs", "1"]) == EXIT_OK
        checkpoint = run_dir / "checkpoint"
        assert (checkpoint / "manifest.json").exists()

        outputs = temp_dir / "decoded.txt"
        refs = temp_dir / "refs.txt"
        argv = ["decode", *common, "--checkpoint", str(checkpoint), "--corpus", str(corpus_dir)]
        argv += ["--max-new", "4", "--out", str(outputs), "--references-out", str(refs)]
        assert main(argv) == EXIT_OK
        assert len(lines(outputs)) == 6
        assert len(lines(refs)) == 6
        echo = read_config_echo(outputs)
        assert echo["checkpoint"] == str(checkpoint)
        assert echo["max_new"] == 4
        assert RunConfig.model_validate(echo["run"]) == load_run_config(config_file)
        assert read_config_echo(refs) == echo

        routing = temp_dir / "routing.csv"
        argv = ["route-stats", *common, "--checkpoint", str(checkpoint)]
        argv += ["--corpus", str(corpus_dir), "--out", str(routing)]
        assert main(argv) == EXIT_OK
        frame = pd.read_csv(routing, comment="#")
        assert len(frame) == 2 * 4

    def test_invariant_exit_code(self, config_file, corpus_dir, temp_dir, mocker):
        """A failed invariant check exits with status 1."""
        mocker.patch("echo_moe.cli.write_routing_csv", side_effect=InvariantError("F sum"))
        argv = ["route-stats", "--config", str(config_file), "--corpus", str(corpus_dir)]
        assert main([*argv, "--out", str(temp_dir / "r.csv")]) == EXIT_INVARIANT

    def test_prompt_file_decode(self, config_file, corpus_dir, temp_dir):
        """Text-only prompts decode without an image."""
        run_dir = temp_dir / "base"
        argv = ["train", "--config", str(config_file), "--stage", "base"]
        argv += ["--corpus", str(corpus_dir), "--out", str(run_dir), "--total-steps", "1"]
        assert main(argv) == EXIT_OK

        prompts = temp_dir / "prompts.txt"
        prompts.write_text("describe\nwhat is seen\n")
        argv = ["decode", "--checkpoint", str(run_dir / "checkpoint")]
        argv += ["--prompt-file", str(prompts), "--max-new", "3", "--out", str(temp_dir / "o.txt")]
        assert main(argv) == EXIT_OK
        assert len(lines(temp_dir / "o.txt")) == 2
