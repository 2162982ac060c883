from typing import Any, Dict, List, Optional

from sqlalchemy import create_engine
from sqlalchemy.orm import Session, sessionmaker

from .models import ArtifactRecord, AuditLog, Base, RunRecord, _utcnow


class RunLedger:
    """
    SQLite ledger of runs, their artifacts and an audit trail.
    """

    def __init__(self, db_path: str = "opmatch.sqlite3"):
        self.db_path = str(db_path)
        self.engine = create_engine(f"sqlite:///{self.db_path}")
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)
        Base.metadata.create_all(bind=self.engine)

    def get_session(self) -> Session:
        return self.SessionLocal()

    def start_run(self, command: str, config_hash: str, seed: int, config: Dict[str, Any]) -> int:
        """Creates a run row and logs RUN_START; returns the run id."""
        db = self.get_session()
        try:
            run = RunRecord(command=command, config_hash=config_hash, seed=seed, config=config)
            db.add(run)
            db.flush()
            db.add(AuditLog(run_id=run.id, event_type="RUN_START", description=command))
            db.commit()
            return run.id
        finally:
            db.close()

    def record_artifact(self, run_id: int, kind: str, path: str, sha256: Optional[str] = None):
        db = self.get_session()
        try:
            db.add(ArtifactRecord(run_id=run_id, kind=kind, path=path, sha256=sha256))
            db.add(AuditLog(run_id=run_id, event_type="ARTIFACT", description=f"{kind}: {path}"))
            db.commit()
        finally:
            db.close()

    def finish_run(self, run_id: int, status: str = "COMPLETED", description: str = ""):
        """Closes a run; any status other than COMPLETED is logged as RUN_FAILED."""
        db = self.get_session()
        try:
            run = db.get(RunRecord, run_id)
            if run is None:
                raise KeyError(f"no run with id {run_id}")
            run.status = status
            run.finished_at = _utcnow()
            event = "RUN_END" if status == "COMPLETED" else "RUN_FAILED"
            db.add(AuditLog(run_id=run_id, event_type=event, description=description or status))
            db.commit()
        finally:
            db.close()

    def add_audit_log(self, run_id: Optional[int], event_type: str, description: str):
        db = self.get_session()
        try:
            db.add(AuditLog(run_id=run_id, event_type=event_type, description=description))
            db.commit()
        finally:
            db.close()

    def runs(self, command: Optional[str] = None) -> List[Dict[str, Any]]:
        db = self.get_session()
        try:
            query = db.query(RunRecord)
            if command is not None:
                query = query.filter(RunRecord.command == command)
            return [
                {
                    "id": r.id,
                    "command": r.command,
                    "config_hash": r.config_hash,
                    "seed": r.seed,
                    "status": r.status,
                }
                for r in query.order_by(RunRecord.id).all()
            ]
        finally:
            db.close()

    def artifacts(self, run_id: int) -> List[Dict[str, Any]]:
        db = self.get_session()
        try:
            rows = db.query(ArtifactRecord).filter(ArtifactRecord.run_id == run_id)
            return [
                {"kind": a.kind, "path": a.path, "sha256": a.sha256}
                for a in rows.order_by(ArtifactRecord.id).all()
            ]
        finally:
            db.close()

    def audit_trail(self, run_id: int) -> List[str]:
        db = self.get_session()
        try:
            rows = db.query(AuditLog).filter(AuditLog.run_id == run_id)
            return [e.event_type for e in rows.order_by(AuditLog.id).all()]
        finally:
            db.close()

    def dispose(self):
        self.engine.dispose()
