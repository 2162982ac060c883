"""
Tests for run configuration and the run session
"""

import json

import pytest

from opmatch.core.config import RunConfig, config_hash, load_config, parse_config
from opmatch.core.errors import ConfigError
from opmatch.core.session import LEDGER, PROVENANCE, RunSession, file_sha256
from opmatch.database import RunLedger


class TestConfig:
    """TOML loading and validation"""

    def test_seed_required(self):
        """A configuration without a seed is refused"""
        with pytest.raises(ConfigError, match="seed"):
            parse_config({})

    def test_overrides_win(self, tmp_path):
        """Command-line values replace the file's; None leaves them alone"""
        path = tmp_path / "run.toml"
        path.write_text('seed = 1\noutput_dir = "a"\n\n[match]\nbatch = 8\n')
        cfg = load_config(path, {"seed": 5, "output_dir": None})
        assert cfg.seed == 5
        assert cfg.output_dir == "a"
        assert cfg.match.batch == 8

    def test_unknown_key(self):
        """Typos are errors, not silently ignored"""
        with pytest.raises(ConfigError, match="lr_operatr"):
            parse_config({"seed": 0, "match": {"lr_operatr": 0.1}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")

    def test_malformed_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("seed = = 1\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_exit_code(self):
        assert ConfigError("x").exit_code == 2

    def test_hash_is_canonical(self):
        """Equal configs hash equally; any change shows"""
        a = RunConfig(seed=1)
        assert config_hash(a) == config_hash(RunConfig(seed=1))
        assert config_hash(a) != config_hash(RunConfig(seed=2))
        assert len(config_hash(a)) == 64
        assert config_hash(a) == config_hash(RunConfig(seed=1, output_dir="elsewhere"))


class TestRunSession:
    """Provenance and ledger bookkeeping"""

    def test_provenance_written(self, tmp_path):
        """provenance.json names command, hash and seed"""
        cfg = RunConfig(seed=3)
        with RunSession("generate", cfg, tmp_path) as session:
            assert session.run_id is not None
        provenance = json.loads((tmp_path / PROVENANCE).read_text())
        assert provenance["command"] == "generate"
        assert provenance["seed"] == 3
        assert provenance["config_hash"] == config_hash(cfg)
        assert "numpy" in provenance["versions"]

    def test_provenance_reproducible(self, tmp_path):
        """Reruns write identical provenance bytes"""
        cfg = RunConfig(seed=3)
        with RunSession("match", cfg, tmp_path / "a", ledger=False):
            pass
        with RunSession("match", cfg, tmp_path / "b", ledger=False):
            pass
        assert (tmp_path / "a" / PROVENANCE).read_bytes() == (tmp_path / "b" / PROVENANCE).read_bytes()

    def test_artifacts_checksummed(self, tmp_path):
        """Files are recorded with their sha256"""
        target = tmp_path / "kernel.csv"
        target.write_text("1,2,3\n")
        with RunSession("match", RunConfig(seed=0), tmp_path) as session:
            session.artifact(target, "kernel")
            run_id = session.run_id
        ledger = RunLedger(tmp_path / LEDGER)
        try:
            (record,) = ledger.artifacts(run_id)
            assert record["kind"] == "kernel"
            assert record["sha256"] == file_sha256(target)
            assert ledger.runs()[0]["status"] == "COMPLETED"
        finally:
            ledger.dispose()

    def test_failure_recorded(self, tmp_path):
        """An exception marks the run FAILED and propagates"""
        with pytest.raises(RuntimeError):
            with RunSession("match", RunConfig(seed=0), tmp_path) as session:
                run_id = session.run_id
                raise RuntimeError("boom")
        ledger = RunLedger(tmp_path / LEDGER)
        try:
            assert ledger.runs()[0]["status"] == "FAILED"
            assert ledger.audit_trail(run_id)[-1] == "RUN_FAILED"
        finally:
            ledger.dispose()

    def test_without_ledger(self, tmp_path):
        """No database is created when the ledger is off"""
        with RunSession("oracle", RunConfig(seed=0), tmp_path, ledger=False) as session:
            assert session.run_id is None
            session.artifact(tmp_path / PROVENANCE, "report")
        assert not (tmp_path / LEDGER).exists()
