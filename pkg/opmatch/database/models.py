from datetime import datetime, timezone

from sqlalchemy import JSON, Column, DateTime, ForeignKey, Integer, String
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class RunRecord(Base):
    """
    One CLI invocation: command, effective config hash and seed.
    """

    __tablename__ = "runs"

    id = Column(Integer, primary_key=True)
    command = Column(String, nullable=False)
    config_hash = Column(String, nullable=False, index=True)
    seed = Column(Integer, nullable=False)
    config = Column(JSON, nullable=False)
    status = Column(String, default="RUNNING")
    started_at = Column(DateTime, default=_utcnow)
    finished_at = Column(DateTime)

    artifacts = relationship("ArtifactRecord", back_populates="run")
    audit_events = relationship("AuditLog", back_populates="run")


class ArtifactRecord(Base):
    """
    A file a run produced, with its content checksum.
    """

    __tablename__ = "artifacts"

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False)
    kind = Column(String, nullable=False)
    path = Column(String, nullable=False)
    sha256 = Column(String)
    created_at = Column(DateTime, default=_utcnow)

    run = relationship("RunRecord", back_populates="artifacts")


class AuditLog(Base):
    """
    Append-only event trail (RUN_START, ARTIFACT, RUN_END, RUN_FAILED).
    """

    __tablename__ = "audit_logs"

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey("runs.id"))
    event_type = Column(String, nullable=False)
    description = Column(String)
    timestamp = Column(DateTime, default=_utcnow)

    run = relationship("RunRecord", back_populates="audit_events")
