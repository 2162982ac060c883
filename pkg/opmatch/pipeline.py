"""
Pipeline steps
==============

Each ``run_*`` function performs one CLI command against an output
directory laid out as::

    <out>/corpus/        generate
    <out>/prior/         train-prior
    <out>/match/         match (operator/, kernel.*, history.csv, snapshots/)
    <out>/restore/       restore (<id>.png, <id>.opmt)
    <out>/evaluate/      evaluate (metrics.csv, kernel_metrics.csv)
    <out>/oracle/        oracle (oracle_report.csv)
    <out>/sr/            match-sr
    <out>/sweep/         sweep-noise

Every step draws randomness from a stream keyed by (seed, step name), so a
rerun with the same configuration reproduces its outputs.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .autodiff import load_tensor, no_grad, save_tensor
from .core.config import OperatorConfig, RunConfig
from .core.errors import ConfigError, MissingPrerequisiteError
from .data import Corpus, generate_corpus, image_rng, list_images, load_image, save_image
from .distmatch import MatchRecorder, match, match_sr, train_prior
from .flow import VelocityField
from .metrics import MetricReport, kernel_alignment
from .operators import build_operator, export_kernel, load_operator, save_operator
from .operators.forward import ForwardOperator, KernelGridOperator, interpolate_kernels
from .oracle import assert_passed, run_oracle_suite, write_report
from .restore import restore_tiles

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def stage_rng(cfg: RunConfig, stage: str) -> np.random.Generator:
    return image_rng(cfg.seed, stage)


def _require(path: Path, step: str, what: str) -> Path:
    if not path.exists():
        raise MissingPrerequisiteError(f"{what} not found at {path}", step)
    return path


def _positional(cfg: RunConfig) -> bool:
    return cfg.match.init.variant == "grid"


# ============================================================================
# STEPS
# ============================================================================


def run_generate(cfg: RunConfig, out: PathLike) -> Dict[str, Any]:
    root = Path(out) / "corpus"
    manifest = generate_corpus(cfg.corpus, root, cfg.seed)
    counts = {k: len(v["sources"]) for k, v in manifest["splits"].items()}
    logger.info("corpus written to %s: %s", root, counts)
    return {"corpus": root / "manifest.json", "counts": counts}


def run_train_prior(cfg: RunConfig, out: PathLike) -> Dict[str, Any]:
    out = Path(out)
    corpus = Corpus.open(out / "corpus")
    source = corpus.source("corrupted", with_coords=_positional(cfg))
    model = train_prior(source, cfg.prior, stage_rng(cfg, "train-prior"), seed=cfg.seed)
    path = model.save(out / "prior")
    return {"prior": path, "parameters": model.num_parameters()}


def run_match(cfg: RunConfig, out: PathLike) -> Dict[str, Any]:
    out = Path(out)
    corpus = Corpus.open(out / "corpus")
    teacher = VelocityField.load(_require(out / "prior", "train-prior", "prior checkpoint"))
    clean = corpus.source("clean", with_coords=_positional(cfg))
    rng = stage_rng(cfg, "match")
    op_init = build_operator(
        cfg.match.init, rng, image_extent=clean.image_extent, learnable=True
    )
    recorder = MatchRecorder(out / "match", snapshot_every=cfg.match.snapshot_every)
    op, state = match(teacher, clean, op_init, cfg.match, rng, recorder)
    operator_dir = save_operator(op, out / "match" / "operator")
    kernel = export_kernel(op, out / "match")
    return {
        "operator": operator_dir,
        "kernel": kernel,
        "history": out / "match" / "history.csv",
        "steps": state.step,
    }


def restoration_operator(cfg: RunConfig, out: Path) -> ForwardOperator:
    choice = cfg.restore.operator
    if choice == "learned":
        return load_operator(_require(out / "match" / "operator", "match", "learned operator"))
    corpus = Corpus.open(out / "corpus")
    if choice == "true":
        return corpus.true_operator()
    dirac = OperatorConfig(channels=corpus.config.channels, noise_sigma=corpus.config.noise_sigma)
    return build_operator(dirac)


def _inputs(cfg: RunConfig, out: Path, inputs: Optional[Sequence[PathLike]]):
    if not inputs:
        corpus = Corpus.open(out / "corpus")
        ids = [Path(i).stem for i in corpus.ids("test")]
        return list(zip(ids, corpus.images("test", "corrupted")))
    items = []
    for entry in inputs:
        entry = Path(entry)
        paths = list_images(entry) if entry.is_dir() else [entry]
        items.extend((p.stem, load_image(p).data) for p in paths)
    return items


def run_restore(
    cfg: RunConfig, out: PathLike, inputs: Optional[Sequence[PathLike]] = None
) -> Dict[str, Any]:
    out = Path(out)
    op = restoration_operator(cfg, out)
    if cfg.restore.solver == "wiener" and op.variant.value != "uniform":
        raise ConfigError(f"restore.solver = 'wiener' cannot invert a {op.variant} operator")
    target = out / "restore"
    target.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    for image_id, image in _inputs(cfg, out, inputs):
        restored = restore_tiles(image, op, cfg.restore)
        save_tensor(target / f"{image_id}.opmt", restored)
        bit_depth = 16 if restored.shape[0] == 1 else 8
        written.append(save_image(target / f"{image_id}.png", restored, bit_depth=bit_depth))
        logger.info("restored %s", image_id)
    return {"restored": written}


def learned_kernel_rows(op: ForwardOperator, truth: ForwardOperator) -> List[tuple]:
    """``(id, learned, true)`` kernel pairs; one per grid node for spatially varying operators."""
    with no_grad():
        if isinstance(op, KernelGridOperator):
            gy, gx = op.grid_shape
            rows = []
            nodes = op.node_kernels().data
            for i in range(gy):
                for j in range(gx):
                    at = op.node_position(i, j)
                    true_k = (
                        interpolate_kernels(truth, at).data
                        if isinstance(truth, KernelGridOperator)
                        else truth.materialize_kernel(at).data
                    )
                    rows.append((f"node_{i}_{j}", nodes[i, j], true_k))
            return rows
        centre = None
        if isinstance(truth, KernelGridOperator):
            h, w = truth.image_extent
            centre = ((h - 1) / 2.0, (w - 1) / 2.0)
        return [("kernel", op.materialize_kernel().data, truth.materialize_kernel(centre).data)]


def _channel_mean(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k)
    return k.mean(axis=0) if k.ndim == 3 else k


def run_evaluate(cfg: RunConfig, out: PathLike) -> Dict[str, Any]:
    out = Path(out)
    corpus = Corpus.open(out / "corpus")
    restored_dir = _require(out / "restore", "restore", "restored images")
    report = MetricReport(cfg.metrics)
    ids = [Path(i).stem for i in corpus.ids("test")]
    for image_id, clean in zip(ids, corpus.images("test", "clean")):
        path = _require(restored_dir / f"{image_id}.opmt", "restore", f"restoration of {image_id}")
        report.add_image(image_id, load_tensor(path), clean)
    operator_dir = out / "match" / "operator"
    if operator_dir.exists():
        op = load_operator(operator_dir)
        for kernel_id, learned, true in learned_kernel_rows(op, corpus.true_operator()):
            report.add_kernel(kernel_id, _channel_mean(learned), _channel_mean(true))
    images, kernels = report.write(out / "evaluate")
    return {"metrics": images, "kernel_metrics": kernels, "summary": report.summary()}


def run_oracle(cfg: RunConfig, out: PathLike) -> Dict[str, Any]:
    report = run_oracle_suite(cfg.oracle, cfg.seed)
    path = write_report(report, Path(out) / "oracle" / "oracle_report.csv")
    passed, total = int(report["passed"].sum()), len(report)
    result = {"report": path, "passed": passed, "total": total}
    assert_passed(report)
    return result


def run_match_sr(cfg: RunConfig, out: PathLike, image: Optional[PathLike] = None) -> Dict[str, Any]:
    out = Path(out)
    source = image or cfg.sr.image
    if source is None:
        raise ConfigError("match-sr needs an image: pass --image or set sr.image")
    lr = load_image(source).data
    recorder = MatchRecorder(out / "sr", snapshot_every=cfg.match.snapshot_every)
    op, state = match_sr(
        lr, cfg.sr, cfg.prior, cfg.match, stage_rng(cfg, "match-sr"), cfg.seed, recorder
    )
    operator_dir = save_operator(op, out / "sr" / "operator")
    kernel = export_kernel(op, out / "sr")
    return {"operator": operator_dir, "kernel": kernel, "steps": state.step}


def run_sweep_noise(cfg: RunConfig, out: PathLike) -> Dict[str, Any]:
    """Generate, train and match once per noise level; tabulate kernel NCC."""
    root = Path(out) / "sweep"
    rows = []
    for sigma in cfg.sweep.noise_levels:
        level_cfg = cfg.model_copy(
            update={
                "corpus": cfg.corpus.model_copy(update={"noise_sigma": sigma}),
                "match": cfg.match.model_copy(
                    update={"init": cfg.match.init.model_copy(update={"noise_sigma": sigma})}
                ),
            }
        )
        level_dir = root / f"sigma_{sigma:g}"
        run_generate(level_cfg, level_dir)
        run_train_prior(level_cfg, level_dir)
        run_match(level_cfg, level_dir)
        corpus = Corpus.open(level_dir / "corpus")
        op = load_operator(level_dir / "match" / "operator")
        nccs = [
            kernel_alignment(
                _channel_mean(learned), _channel_mean(true), cfg.metrics.ncc_max_shift, cfg.metrics.flip
            ).ncc
            for _, learned, true in learned_kernel_rows(op, corpus.true_operator())
        ]
        rows.append({"noise_sigma": sigma, "kernel_ncc": float(np.mean(nccs))})
        logger.info("sweep sigma=%g: kernel NCC %.4f", sigma, rows[-1]["kernel_ncc"])
    path = root / "sweep.csv"
    pd.DataFrame.from_records(rows, columns=["noise_sigma", "kernel_ncc"]).to_csv(
        path, index=False, float_format="%.6f"
    )
    return {"sweep": path, "rows": rows}
