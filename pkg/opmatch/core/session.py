"""Run lifecycle: provenance file plus ledger bookkeeping for one CLI command."""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import scipy

from .config import RunConfig, config_hash

logger = logging.getLogger(__name__)

PROVENANCE = "provenance.json"
LEDGER = "opmatch.sqlite3"


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def package_versions() -> Dict[str, str]:
    from .. import __version__

    return {"opmatch": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


class RunSession:
    """Coordinates one command: provenance, artifacts and the audit trail.

    The ledger lives next to the outputs and is a log only; the provenance
    file has no timestamps, so reruns reproduce it byte for byte.
    """

    def __init__(self, command: str, cfg: RunConfig, out_dir: Union[str, Path], ledger: bool = True):
        self.command = command
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.use_ledger = ledger
        self.ledger = None
        self.run_id: Optional[int] = None
        self.config_hash = config_hash(cfg)

    def start(self) -> Dict[str, Any]:
        """
        Initializes the run:
        1. Creates the output directory.
        2. Writes provenance.json.
        3. Opens a ledger record (RUN_START).
        """
        self.out_dir.mkdir(parents=True, exist_ok=True)
        provenance = {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
            "versions": package_versions(),
        }
        (self.out_dir / PROVENANCE).write_text(
            json.dumps(provenance, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        if self.use_ledger:
            from ..database import RunLedger

            self.ledger = RunLedger(str(self.out_dir / LEDGER))
            self.run_id = self.ledger.start_run(
                self.command, self.config_hash, self.cfg.seed, self.cfg.model_dump(mode="json")
            )
        logger.info("%s: run %s, config %s", self.command, self.run_id, self.config_hash[:12])
        return {"run_id": self.run_id, "config_hash": self.config_hash, "status": "READY"}

    def artifact(self, path: Union[str, Path], kind: str) -> Path:
        path = Path(path)
        if self.ledger is not None:
            checksum = file_sha256(path) if path.is_file() else None
            self.ledger.record_artifact(self.run_id, kind, str(path), checksum)
        return path

    def finish(self, status: str = "COMPLETED", description: str = "") -> None:
        if self.ledger is not None:
            self.ledger.finish_run(self.run_id, status, description)
            self.ledger.dispose()
            self.ledger = None

    def __enter__(self) -> "RunSession":
        self.start()
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc is None:
            self.finish()
        else:
            self.finish("FAILED", f"{exc_type.__name__}: {exc}")
        return False
