from .manager import RunLedger
from .models import ArtifactRecord, AuditLog, Base, RunRecord

__all__ = ["Base", "RunRecord", "ArtifactRecord", "AuditLog", "RunLedger"]
