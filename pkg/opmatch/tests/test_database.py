import pytest

from opmatch.database import AuditLog, RunLedger, RunRecord


@pytest.fixture
def ledger(tmp_path):
    db = RunLedger(tmp_path / "ledger.sqlite3")
    yield db
    db.dispose()


def test_run_lifecycle(ledger):
    """A run opens, records an artifact and closes with an audit trail."""
    run_id = ledger.start_run("match", "abc123", 7, {"seed": 7})
    ledger.record_artifact(run_id, "operator", "runs/x/operator", "f" * 64)
    ledger.finish_run(run_id)

    (run,) = ledger.runs()
    assert run["id"] == run_id
    assert run["command"] == "match"
    assert run["seed"] == 7
    assert run["status"] == "COMPLETED"
    assert ledger.artifacts(run_id) == [
        {"kind": "operator", "path": "runs/x/operator", "sha256": "f" * 64}
    ]
    assert ledger.audit_trail(run_id) == ["RUN_START", "ARTIFACT", "RUN_END"]


def test_failed_run(ledger):
    """Any status other than COMPLETED is logged as a failure."""
    run_id = ledger.start_run("train-prior", "h", 1, {})
    ledger.finish_run(run_id, "FAILED", "NumericalError: nan")
    assert ledger.runs()[0]["status"] == "FAILED"
    assert ledger.audit_trail(run_id)[-1] == "RUN_FAILED"

    session = ledger.get_session()
    try:
        event = session.query(AuditLog).filter_by(event_type="RUN_FAILED").one()
        assert event.description == "NumericalError: nan"
        assert session.get(RunRecord, run_id).finished_at is not None
    finally:
        session.close()


def test_unknown_run(ledger):
    with pytest.raises(KeyError):
        ledger.finish_run(42)


def test_runs_filtered_by_command(ledger):
    """Runs come back in id order, optionally filtered."""
    first = ledger.start_run("generate", "a", 1, {})
    ledger.start_run("match", "b", 1, {})
    third = ledger.start_run("generate", "c", 2, {})
    assert [r["id"] for r in ledger.runs("generate")] == [first, third]
    assert len(ledger.runs()) == 3


def test_free_audit_entry(ledger):
    run_id = ledger.start_run("oracle", "h", 0, {})
    ledger.add_audit_log(run_id, "NOTE", "manual entry")
    assert ledger.audit_trail(run_id) == ["RUN_START", "NOTE"]


def test_ledger_persists(tmp_path):
    """A reopened ledger sees earlier runs."""
    path = tmp_path / "ledger.sqlite3"
    first = RunLedger(path)
    first.start_run("generate", "h", 3, {"seed": 3})
    first.dispose()

    second = RunLedger(path)
    try:
        assert [r["seed"] for r in second.runs()] == [3]
    finally:
        second.dispose()
