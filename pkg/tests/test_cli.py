import hashlib
import json
import subprocess
import sys

import pytest

from measured.cli import build_parser, main
from measured.data import read_jsonl


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


SUBCOMMANDS = [
    "ingest", "synth", "stats", "train", "eval", "predict", "fewshot", "export",
]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A tiny end-to-end workspace: corpus, checkpoint, reports."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.jsonl"
    ckpt = root / "model.npz"
    code = main(["synth", "--out", str(corpus), "--n", "280", "--seed", "5"])
    assert code == 0
    code = main(
        [
            "train",
            "--data", str(corpus),
            "--out", str(ckpt),
            "--variant", "joint-unit",
            "--feature-dim", "1024",
            "--hidden-dim", "12",
            "--batch-size", "32",
            "--epochs", "3",
            "--warmup", "10",
            "--lr", "5e-3",
            "--history", str(root / "history.jsonl"),
            "--seed", "3",
        ]
    )
    assert code == 0
    return root


class TestHelp:
    def test_top_level_help(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for name in SUBCOMMANDS:
            assert name in out

    @pytest.mark.parametrize("name", SUBCOMMANDS)
    def test_subcommand_help_documents_shared_flags(self, name, capsys):
        with pytest.raises(SystemExit) as exc:
            main([name, "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for flag in ("--registry", "--seed", "--out", "--config"):
            assert flag in out

    def test_unknown_flag_is_an_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--frobnicate", "3"])
        assert exc.value.code == 2

    def test_every_documented_option_has_help_text(self):
        parser, commands = build_parser()
        for cmd in commands.values():
            for action in cmd.parser._actions:
                assert action.help, action.dest


class TestSynthIngestStats:
    def test_synth_deterministic_and_idempotent(self, tmp_path, capsys):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(["synth", "--out", str(a), "--n", "60", "--seed", "9"]) == 0
        assert main(["synth", "--out", str(b), "--n", "60", "--seed", "9"]) == 0
        assert sha(a) == sha(b)

    def test_ingest_adds_fields_and_reports_drops(self, tmp_path, capsys):
        raw = tmp_path / "raw.jsonl"
        records = [
            {"text": "a [#NUM] [#UNIT] b", "number": 2.0, "unit": "km"},
            {"text": "a [#NUM] [#UNIT] b", "number": -5.0, "unit": "km"},
            {"text": "a [#NUM] [#UNIT] b", "number": 1.0, "unit": "wug"},
        ]
        raw.write_text("\n".join(json.dumps(r) for r in records))
        out = tmp_path / "canonical.jsonl"
        code, _, err = run(
            ["ingest", "--data", str(raw), "--out", str(out)], capsys
        )
        assert code == 0
        assert "negative: 1" in err
        assert "unknown-unit: 1" in err
        kept = list(read_jsonl(out))
        assert len(kept) == 1
        assert kept[0]["dimension"] == "length"
        assert kept[0]["canonical_number"] == 2000.0

    def test_stats_document(self, workdir, tmp_path, capsys):
        out = tmp_path / "stats.json"
        code, _, _ = run(
            ["stats", "--data", str(workdir / "corpus.jsonl"), "--out", str(out)],
            capsys,
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["split_sizes"] == {"all": 280}
        assert set(doc["dimension_counts"]) == {
            "length", "mass", "time", "area", "velocity", "power", "temperature",
        }


class TestTrainEval:
    def test_history_written(self, workdir):
        records = list(read_jsonl(workdir / "history.jsonl"))
        assert records
        assert set(records[0]) == {"epoch", "train_loss", "val_metric", "lr"}

    def test_train_summary_on_stdout(self, tmp_path, workdir, capsys):
        ckpt = tmp_path / "m.npz"
        code, out, _ = run(
            [
                "train",
                "--data", str(workdir / "corpus.jsonl"),
                "--out", str(ckpt),
                "--variant", "dim",
                "--feature-dim", "512",
                "--hidden-dim", "8",
                "--batch-size", "32",
                "--epochs", "2",
                "--warmup", "5",
                "--lr", "5e-3",
                "--seeds", "2",
            ],
            capsys,
        )
        assert code == 0
        summary = json.loads(out)
        assert summary["seeds"] == 2
        assert "mean" in summary and "sd" in summary

    def test_eval_report(self, workdir, tmp_path, capsys):
        out = tmp_path / "report.json"
        csv_dir = tmp_path / "tables"
        code, _, _ = run(
            [
                "eval",
                "--checkpoint", str(workdir / "model.npz"),
                "--data", str(workdir / "corpus.jsonl"),
                "--out", str(out),
                "--csv-dir", str(csv_dir),
            ],
            capsys,
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert {"dim", "unit", "num"} <= set(doc["probes"])
        assert "majority_dimension" in doc["baselines"]
        assert (csv_dir / "dim_confusion.csv").exists()

    def test_eval_probe_subset(self, workdir, tmp_path, capsys):
        out = tmp_path / "r.json"
        code, _, _ = run(
            [
                "eval",
                "--checkpoint", str(workdir / "model.npz"),
                "--data", str(workdir / "corpus.jsonl"),
                "--probes", "dim,num",
                "--out", str(out),
            ],
            capsys,
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert "dim" in doc["probes"] and "num" in doc["probes"]
        assert "unit" not in doc["probes"]

    def test_eval_rejects_foreign_registry(self, workdir, tmp_path, capsys):
        other = tmp_path / "registry.txt"
        other.write_text(
            "dim length L1 M0 T0 I0 Θ0 N0 J0\n"
            "unit m length scale=1 offset=0\n"
        )
        code, _, err = run(
            [
                "eval",
                "--checkpoint", str(workdir / "model.npz"),
                "--data", str(workdir / "corpus.jsonl"),
                "--registry", str(other),
            ],
            capsys,
        )
        assert code == 1
        assert "fingerprint" in err


class TestPredictExport:
    def test_predict_jsonl(self, workdir, tmp_path, capsys):
        sentences = tmp_path / "in.jsonl"
        sentences.write_text(
            json.dumps({"text": "The plant generates [#NUM] [#UNIT] for the grid ."})
            + "\n"
            + "The tower stands [#NUM] [#UNIT] tall above the plaza .\n"
        )
        out = tmp_path / "pred.jsonl"
        code, _, _ = run(
            [
                "predict",
                "--checkpoint", str(workdir / "model.npz"),
                "--input", str(sentences),
                "--out", str(out),
            ],
            capsys,
        )
        assert code == 0
        records = list(read_jsonl(out))
        assert len(records) == 2
        for r in records:
            assert {"text", "dimension", "unit", "number", "canonical_number"} <= set(r)
            assert r["number"] > 0
            assert abs(sum(r["dim_probs"].values()) - 1.0) < 1e-9

    def test_export_tsv(self, workdir, tmp_path, capsys):
        out = tmp_path / "emb.tsv"
        code, _, _ = run(
            [
                "export",
                "--checkpoint", str(workdir / "model.npz"),
                "--data", str(workdir / "corpus.jsonl"),
                "--out", str(out),
                "--limit", "10",
            ],
            capsys,
        )
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 11
        header = lines[0].split("\t")
        assert header[-3:] == ["dimension", "unit", "exponent_bin"]
        assert header[0] == "h_0" and header[11] == "h_11"


class TestFewshot:
    def test_tiny_grid_shape(self, workdir, tmp_path, capsys):
        out = tmp_path / "fewshot.json"
        code, _, _ = run(
            [
                "fewshot",
                "--data", str(workdir / "corpus.jsonl"),
                "--k", "3,5",
                "--seeds", "1",
                "--feature-dim", "512",
                "--hidden-dim", "8",
                "--batch-size", "16",
                "--epochs", "2",
                "--warmup", "5",
                "--lr", "5e-3",
                "--out", str(out),
            ],
            capsys,
        )
        assert code == 0
        doc = json.loads(out.read_text())
        for table in ("dimension_macro_f1", "number_log_mae"):
            for regime in ("finetuned", "frozen"):
                assert set(doc[table][regime]) == {"3", "5"}
                for cell in doc[table][regime].values():
                    assert {"mean", "sd", "values"} <= set(cell)
        assert "majority" in doc["dimension_macro_f1"]
        assert "median" in doc["number_log_mae"]


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, tmp_path, capsys):
        config = tmp_path / "run.conf"
        config.write_text("n=30\nseed=4\n")
        a = tmp_path / "a.jsonl"
        code, _, _ = run(
            ["synth", "--config", str(config), "--out", str(a)], capsys
        )
        assert code == 0
        assert len(list(read_jsonl(a))) == 30

        b = tmp_path / "b.jsonl"
        code, _, _ = run(
            ["synth", "--config", str(config), "--n", "44", "--out", str(b)],
            capsys,
        )
        assert code == 0
        assert len(list(read_jsonl(b))) == 44

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        config = tmp_path / "bad.conf"
        config.write_text("wibble=1\n")
        code, _, err = run(
            ["synth", "--config", str(config), "--out", str(tmp_path / "x")],
            capsys,
        )
        assert code == 1
        assert "wibble" in err

    def test_boolean_config_value(self, tmp_path, capsys):
        config = tmp_path / "run.conf"
        config.write_text("balanced=false\nn=40\n")
        out = tmp_path / "c.jsonl"
        code, _, _ = run(
            ["synth", "--config", str(config), "--out", str(out), "--seed", "2"],
            capsys,
        )
        assert code == 0
        assert len(list(read_jsonl(out))) == 40


class TestInstalledEntryPoint:
    def test_console_script_runs(self):
        proc = subprocess.run(
            [sys.executable, "-m", "measured.cli", "--help"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "measured" in proc.stdout
