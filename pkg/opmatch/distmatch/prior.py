"""
Prior training
==============

Fits a conditional flow-matching model to corrupted patches. The EMA
weights of the trained network are the operative prior.
"""

from __future__ import annotations

import logging
import math
from typing import Any, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from ..autodiff import Adam, Tensor, warmup_inverse_sqrt
from ..core.config import PriorConfig
from ..core.errors import CorpusError, NumericalError
from ..data.patches import PatchSource
from ..flow import VelocityField, cfm_loss, ema_update

logger = logging.getLogger(__name__)


def total_steps(n_patches: int, cfg: PriorConfig) -> int:
    steps = cfg.epochs * max(1, math.ceil(n_patches / cfg.batch))
    return min(steps, cfg.max_steps) if cfg.max_steps else steps


def check_finite(value: float, what: str, step: int) -> None:
    if not math.isfinite(value):
        raise NumericalError(f"{what} became {value} at step {step}")


def train_prior(
    corrupted: PatchSource,
    cfg: Optional[PriorConfig] = None,
    rng: Optional[np.random.Generator] = None,
    seed: int = 0,
    history: Optional[List[Dict[str, Any]]] = None,
) -> VelocityField:
    """Train a velocity field on ``corrupted`` and return its frozen EMA model.

    Positional channels are used exactly when the source carries coordinates.
    ``history`` (if given) receives one record per step.
    """
    cfg = cfg or PriorConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    if len(corrupted) == 0:
        raise CorpusError("cannot train a prior on an empty patch source")
    arch = cfg.arch.model_copy(
        update={
            "channels": corrupted.channels,
            "cond_channels": 2 if corrupted.with_coords else 0,
        }
    )
    model = VelocityField(arch, seed=seed, dtype=cfg.dtype)
    schedule = warmup_inverse_sqrt(cfg.warmup_steps) if cfg.warmup_steps else None
    optimizer = Adam(model.parameters(), lr=cfg.lr, schedule=schedule)
    steps = total_steps(len(corrupted), cfg)
    logger.info(
        "training prior: %d step(s), %d parameter(s), %d patch(es)",
        steps,
        model.num_parameters(),
        len(corrupted),
    )

    smoothed = None
    bar = tqdm(range(1, steps + 1), desc="prior", disable=not cfg.progress, leave=False)
    for step in bar:
        batch = corrupted.sample(cfg.batch, rng, coord_dropout=cfg.coord_dropout)
        z1 = Tensor._wrap(batch.pixels.data.astype(model.dtype))
        cond = batch.conditioning()
        optimizer.zero_grad()
        loss = cfm_loss(model, z1, cond, rng, t_clamp=cfg.t_clamp)
        value = float(loss.data)
        check_finite(value, "prior loss", step)
        loss.backward()
        optimizer.step()
        ema_update(model, cfg.ema_decay)

        smoothed = value if smoothed is None else 0.98 * smoothed + 0.02 * value
        if history is not None:
            history.append({"step": step, "loss": value, "loss_ema": smoothed})
        if step % cfg.log_every == 0 or step == steps:
            logger.info(
                "prior step %d/%d loss %.5f (smoothed %.5f) grad-norm %.4g",
                step,
                steps,
                value,
                smoothed,
                optimizer.grad_norm(),
            )
        bar.set_postfix(loss=f"{smoothed:.4f}")

    return model.ema_model()
