"""
Tests for the command-line interface
"""

import shutil
from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner

from opmatch import __version__
from opmatch.cli import cli
from opmatch.core.session import LEDGER, PROVENANCE
from opmatch.database import RunLedger

TINY_RUN = """\
seed = 7

[corpus]
n_images = 6
image_size = 16
patch_size = 8
stride = 8
noise_sigma = 0.01
clean_fraction = 0.34
test_fraction = 0.17

[corpus.degradation.kernel]
kind = "gaussian"
size = 5
sigma = 1.0

[prior]
epochs = 1
max_steps = 3
batch = 4
dtype = "float64"

[prior.arch]
hidden = 8
depth = 3
time_embed_dim = 8

[match]
total_op_steps = 2
batch = 4
lr_operator = 0.01
snapshot_every = 1

[match.init.kernel]
kind = "dirac"
size = 5

[restore]
iterations = 5
tile = 16
overlap = 4

[oracle]
dims = [1, 2]
amplitudes = []
rotation_trials = 2
moment_trials = 2
moment_samples = 2000

[sweep]
noise_levels = [0.0, 0.02]
"""

DETERMINISTIC_SUFFIXES = {".opmt", ".csv", ".json"}


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(TINY_RUN)
    return path


def invoke(runner, config_file, out, *args):
    return runner.invoke(cli, ["--config", str(config_file), "--out", str(out), *args])


def outputs(root: Path):
    return {
        p.relative_to(root): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.suffix in DETERMINISTIC_SUFFIXES
    }


class TestArguments:
    """Global flags and config errors"""

    def test_version(self, runner):
        result = runner.invoke(cli, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_missing_seed(self, runner, tmp_path):
        """Without a seed in file or flags the run is refused"""
        result = runner.invoke(cli, ["--out", str(tmp_path), "generate"])
        assert result.exit_code == 2
        assert "seed" in result.output

    def test_unknown_key(self, runner, tmp_path):
        """Misspelled keys fail before any work"""
        path = tmp_path / "bad.toml"
        path.write_text("seed = 1\n[match]\nlr_operatr = 0.1\n")
        result = invoke(runner, path, tmp_path / "out", "generate")
        assert result.exit_code == 2
        assert "lr_operatr" in result.output
        assert not (tmp_path / "out" / "corpus").exists()

    def test_seed_flag_overrides(self, runner, config_file, tmp_path):
        """--seed replaces the configured seed in the provenance"""
        out = tmp_path / "out"
        result = runner.invoke(
            cli, ["--config", str(config_file), "--seed", "11", "--out", str(out), "generate"]
        )
        assert result.exit_code == 0, result.output
        assert '"seed": 11' in (out / PROVENANCE).read_text()


class TestPrerequisites:
    """Commands name the step that must run first"""

    def test_match_without_prior(self, runner, config_file, tmp_path):
        out = tmp_path / "out"
        assert invoke(runner, config_file, out, "generate").exit_code == 0
        result = invoke(runner, config_file, out, "match")
        assert result.exit_code == 4
        assert "run `opmatch train-prior` first" in result.output

    def test_train_prior_without_corpus(self, runner, config_file, tmp_path):
        result = invoke(runner, config_file, tmp_path / "out", "train-prior")
        assert result.exit_code == 4
        assert "run `opmatch generate` first" in result.output

    def test_evaluate_without_restore(self, runner, config_file, tmp_path):
        out = tmp_path / "out"
        invoke(runner, config_file, out, "generate")
        result = invoke(runner, config_file, out, "evaluate")
        assert result.exit_code == 4
        assert "run `opmatch restore` first" in result.output

    def test_failed_run_in_ledger(self, runner, config_file, tmp_path):
        """A refused command is still audited"""
        out = tmp_path / "out"
        invoke(runner, config_file, out, "train-prior")
        ledger = RunLedger(out / LEDGER)
        try:
            (run,) = ledger.runs()
            assert run["command"] == "train-prior"
            assert run["status"] == "FAILED"
        finally:
            ledger.dispose()

    def test_match_sr_needs_image(self, runner, config_file, tmp_path):
        result = invoke(runner, config_file, tmp_path / "out", "match-sr")
        assert result.exit_code == 2
        assert "--image" in result.output


class TestPipeline:
    """The full command chain on a tiny corpus"""

    def run_all(self, runner, config_file, out, *flags):
        for command in ("generate", "train-prior", "match", "restore", "evaluate"):
            result = runner.invoke(
                cli, ["--config", str(config_file), "--out", str(out), *flags, command]
            )
            assert result.exit_code == 0, f"{command}: {result.output}"
        return result

    def test_chain(self, runner, config_file, tmp_path):
        """Every step writes its artifacts and the ledger follows along"""
        out = tmp_path / "out"
        result = self.run_all(runner, config_file, out)
        assert "kernel_ncc" in result.output
        assert (out / "corpus" / "manifest.json").exists()
        assert (out / "prior" / "index.json").exists()
        assert (out / "match" / "history.csv").exists()
        assert len(list((out / "restore").glob("*.png"))) == 1
        metrics = pd.read_csv(out / "evaluate" / "metrics.csv")
        assert len(metrics) == 1
        kernels = pd.read_csv(out / "evaluate" / "kernel_metrics.csv")
        assert kernels.loc[0, "kernel_id"] == "kernel"

        ledger = RunLedger(out / LEDGER)
        try:
            runs = ledger.runs()
            assert [r["command"] for r in runs] == [
                "generate",
                "train-prior",
                "match",
                "restore",
                "evaluate",
            ]
            assert all(r["status"] == "COMPLETED" for r in runs)
            kinds = {a["kind"] for a in ledger.artifacts(runs[2]["id"])}
            assert {"operator", "kernel", "history"} <= kinds
        finally:
            ledger.dispose()

    def test_rerun_is_byte_identical(self, runner, config_file, tmp_path):
        """Same config and seed, same bytes"""
        self.run_all(runner, config_file, tmp_path / "a", "--no-ledger")
        self.run_all(runner, config_file, tmp_path / "b", "--no-ledger")
        a, b = outputs(tmp_path / "a"), outputs(tmp_path / "b")
        assert a.keys() == b.keys()
        assert a == b
        assert not (tmp_path / "a" / LEDGER).exists()

    def test_restore_explicit_input(self, runner, config_file, tmp_path):
        """--input restores files outside the corpus"""
        out = tmp_path / "out"
        self.run_all(runner, config_file, out)
        inputs = tmp_path / "inputs"
        inputs.mkdir()
        (restored,) = (out / "restore").glob("*.png")
        shutil.copy(restored, inputs / "external.png")
        result = invoke(runner, config_file, out, "restore", "--input", str(inputs))
        assert result.exit_code == 0, result.output
        assert "Restored 1 image(s)" in result.output
        assert (out / "restore" / "external.opmt").exists()


class TestOracleCommand:
    """The closed-form check suite"""

    def test_small_suite(self, runner, config_file, tmp_path):
        out = tmp_path / "out"
        result = invoke(runner, config_file, out, "oracle")
        assert result.exit_code == 0, result.output
        report = pd.read_csv(out / "oracle" / "oracle_report.csv")
        assert report["passed"].all()
        assert "oracle case(s) passed" in result.output


class TestSweepCommand:
    """Noise robustness study"""

    def test_one_row_per_level(self, runner, config_file, tmp_path):
        out = tmp_path / "out"
        result = invoke(runner, config_file, out, "sweep-noise")
        assert result.exit_code == 0, result.output
        table = pd.read_csv(out / "sweep" / "sweep.csv")
        assert list(table["noise_sigma"]) == [0.0, 0.02]
        assert table["kernel_ncc"].between(-1.0, 1.0).all()
        assert (out / "sweep" / "sigma_0.02" / "match" / "operator").is_dir()
