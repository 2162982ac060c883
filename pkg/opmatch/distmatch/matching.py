"""
Operator matching
=================

Alternates two updates until the step budget is spent:

1. the auxiliary flow model is fitted (CFM loss) to samples of the current
   operator's output ``A_w(x) + eps``;
2. the operator takes one Adam step along the IKL gradient plus the
   weighted kernel regularizers.

The prior (teacher) stays frozen throughout; the auxiliary model starts as a
copy of it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from ..autodiff import Adam, Tensor, no_grad, warmup_inverse_sqrt
from ..core.config import MatchConfig
from ..core.errors import NumericalError
from ..data.patches import PatchSource
from ..flow import VelocityField, cfm_loss
from ..operators import apply, regularization_loss
from ..operators.forward import ForwardOperator
from .ikl import ikl_surrogate, output_conditioning

logger = logging.getLogger(__name__)

Recorder = Callable[["MatchState", Dict[str, Any]], None]


@dataclass
class MatchState:
    """Everything one match run owns."""

    teacher: VelocityField
    aux: VelocityField
    op: ForwardOperator
    step: int = 0
    loss_history: List[Dict[str, Any]] = field(default_factory=list)
    teacher_checksum: str = ""

    def __post_init__(self):
        if not self.teacher_checksum:
            self.teacher_checksum = self.teacher.checksum()

    def check_teacher(self) -> None:
        if self.teacher.checksum() != self.teacher_checksum:
            raise RuntimeError("prior weights changed during matching")


def init_aux(teacher: VelocityField) -> VelocityField:
    """Trainable copy of the prior, EMA shadow included."""
    aux = teacher.copy()
    for p in aux.params.values():
        p.requires_grad = True
    return aux


def _finite_or_raise(value: float, what: str, state: MatchState, recorder) -> None:
    if np.isfinite(value):
        return
    snapshot = None
    if recorder is not None and hasattr(recorder, "snapshot_failure"):
        snapshot = recorder.snapshot_failure(state)
    raise NumericalError(
        f"{what} became {value} at operator step {state.step}",
        snapshot=str(snapshot) if snapshot else None,
    )


def aux_step(
    state: MatchState,
    optimizer: Adam,
    clean: PatchSource,
    cfg: MatchConfig,
    rng: np.random.Generator,
    recorder=None,
) -> float:
    """One CFM update of the auxiliary model on fresh operator outputs."""
    batch = clean.sample(cfg.batch, rng, random_coords=cfg.random_coords)
    with no_grad():
        y = apply(state.op, batch, rng)
    cond = (
        output_conditioning(batch, y.shape[2:]) if state.aux.arch.cond_channels else None
    )
    optimizer.zero_grad()
    loss = cfm_loss(state.aux, Tensor._wrap(y.data), cond, rng, t_clamp=cfg.t_clamp)
    value = float(loss.data)
    _finite_or_raise(value, "auxiliary CFM loss", state, recorder)
    loss.backward()
    optimizer.step()
    return value


def op_step(
    state: MatchState,
    optimizer: Adam,
    clean: PatchSource,
    cfg: MatchConfig,
    rng: np.random.Generator,
    recorder=None,
) -> Dict[str, float]:
    """One operator update along IKL gradient + regularizer gradients."""
    batch = clean.sample(cfg.batch, rng, random_coords=cfg.random_coords)
    optimizer.zero_grad()
    terms = ikl_surrogate(
        state.teacher, state.aux, state.op, batch, rng, cfg.t_clamp, cfg.time_weight
    )
    reg_total, reg_values = regularization_loss(state.op, cfg.reg_weights)
    total = terms.surrogate + reg_total
    _finite_or_raise(float(total.data), "operator objective", state, recorder)
    total.backward()
    grad_norm = optimizer.grad_norm()
    _finite_or_raise(grad_norm, "operator gradient norm", state, recorder)
    optimizer.step()
    out = {"ikl_surrogate": float(terms.surrogate.data), "op_grad_norm": grad_norm}
    out.update({f"reg_{k}": v for k, v in reg_values.items()})
    return out


def match(
    teacher: VelocityField,
    clean: PatchSource,
    op_init: ForwardOperator,
    cfg: Optional[MatchConfig] = None,
    rng: Optional[np.random.Generator] = None,
    recorder: Optional[Recorder] = None,
) -> Tuple[ForwardOperator, MatchState]:
    """Fit ``op_init`` so that its outputs on ``clean`` follow the prior."""
    cfg = cfg or MatchConfig()
    if rng is None:
        rng = np.random.default_rng(cfg.seed if cfg.seed is not None else 0)
    teacher.freeze()
    state = MatchState(teacher=teacher, aux=init_aux(teacher), op=op_init)

    schedule = warmup_inverse_sqrt(cfg.aux_warmup_steps) if cfg.aux_warmup_steps else None
    aux_opt = Adam(state.aux.parameters(), lr=cfg.lr_aux, schedule=schedule)
    op_params = [p for p in state.op.parameters() if p.requires_grad]
    op_opt = Adam(op_params, lr=cfg.lr_operator)
    logger.info(
        "matching %r: %d operator step(s), %d aux step(s) each, %d warmup aux step(s)",
        state.op,
        cfg.total_op_steps,
        cfg.aux_steps_per_op_step,
        cfg.aux_warmup_steps,
    )

    for _ in range(cfg.aux_warmup_steps):
        aux_step(state, aux_opt, clean, cfg, rng, recorder)

    bar = tqdm(
        range(1, cfg.total_op_steps + 1), desc="match", disable=not cfg.progress, leave=False
    )
    for step in bar:
        state.step = step
        aux_losses = [
            aux_step(state, aux_opt, clean, cfg, rng, recorder)
            for _ in range(cfg.aux_steps_per_op_step)
        ]
        record: Dict[str, Any] = {"step": step, "cfm_aux_loss": float(np.mean(aux_losses))}
        record.update(op_step(state, op_opt, clean, cfg, rng, recorder))
        record["sigma"] = state.op.sigma
        state.loss_history.append(record)
        if recorder is not None:
            recorder(state, record)
        if step % cfg.log_every == 0 or step == cfg.total_op_steps:
            logger.info(
                "match step %d/%d aux-loss %.5f op-grad %.4g sigma %.4g",
                step,
                cfg.total_op_steps,
                record["cfm_aux_loss"],
                record["op_grad_norm"],
                record["sigma"],
            )
        bar.set_postfix(aux=f"{record['cfm_aux_loss']:.4f}")

    state.check_teacher()
    if recorder is not None and hasattr(recorder, "finish"):
        recorder.finish(state)
    return state.op, state
