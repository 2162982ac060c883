"""
Match run recording
===================

Collects one record per operator step, writes ``history.csv`` with pandas,
kernel PNG snapshots every ``snapshot_every`` steps and a diagnostic plot
at the end of the run.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from ..autodiff import no_grad  # noqa: E402
from ..operators import export_kernel_png, save_operator  # noqa: E402
from ..operators.export import operator_kernel_rows  # noqa: E402

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["step", "cfm_aux_loss", "op_grad_norm", "ikl_surrogate", "sigma"]


class MatchRecorder:
    """Callback passed to ``match``; ``None`` output directory keeps records in memory."""

    def __init__(self, out_dir: Optional[Union[str, Path]] = None, snapshot_every: int = 100):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.snapshot_every = snapshot_every
        self.records: List[Dict[str, Any]] = []
        if self.out_dir is not None:
            (self.out_dir / "snapshots").mkdir(parents=True, exist_ok=True)

    def __call__(self, state, record: Dict[str, Any]) -> None:
        self.records.append(dict(record))
        step = record["step"]
        if self.out_dir is not None and step % self.snapshot_every == 0:
            export_kernel_png(state.op, self.out_dir / "snapshots" / f"kernel_{step:06d}.png")

    def frame(self) -> pd.DataFrame:
        df = pd.DataFrame.from_records(self.records)
        if df.empty:
            return pd.DataFrame(columns=HISTORY_COLUMNS)
        ordered = [c for c in HISTORY_COLUMNS if c in df.columns]
        return df[ordered + sorted(c for c in df.columns if c not in ordered)]

    def write_history(self) -> Optional[Path]:
        if self.out_dir is None:
            return None
        path = self.out_dir / "history.csv"
        self.frame().to_csv(path, index=False, float_format="%.9g")
        return path

    def snapshot_failure(self, state) -> Optional[Path]:
        """Persist the operator that produced a non-finite value."""
        if self.out_dir is None:
            return None
        path = self.out_dir / "failure_snapshot"
        save_operator(state.op, path)
        self.write_history()
        return path

    def finish(self, state) -> None:
        if self.out_dir is None:
            return
        self.write_history()
        plot_match(self.frame(), state.op, self.out_dir / "match.png")


def plot_match(history: pd.DataFrame, op, path: Union[str, Path]) -> Path:
    """Loss curves next to the current kernel."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    if not history.empty:
        axes[0].plot(history["step"], history["cfm_aux_loss"], lw=0.8)
        axes[0].set_title("auxiliary CFM loss")
        axes[1].semilogy(history["step"], history["op_grad_norm"] + 1e-12, lw=0.8)
        axes[1].set_title("operator gradient norm")
    for ax in axes[:2]:
        ax.set_xlabel("operator step")
    with no_grad():
        rows = operator_kernel_rows(op)
    kernel = np.asarray(rows[len(rows) // 2][0])
    axes[2].imshow(kernel, cmap="magma")
    axes[2].set_title("kernel")
    axes[2].axis("off")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
