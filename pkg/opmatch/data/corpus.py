"""
Degraded corpus generation
==========================

A corpus is a directory::

    manifest.json            sources per split, config, patch records
    true_operator/           archive of the degradation operator
    true_kernel.opmt         its materialized kernel (centre kernel for grids)
    clean/<id>.opmt          clean images of the clean split
    corrupted/<id>.opmt      degraded images of the corrupted split
    test/<id>.clean.opmt     held-out pairs for evaluation
    test/<id>.corrupted.opmt

The operator is applied to full images before any patching, so a spatially
varying operator leaves genuine positional structure in the patches. Clean
and corrupted splits are drawn from disjoint source images.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from ..autodiff import load_tensor, no_grad, save_tensor
from ..core.config import CorpusConfig, CorpusSpec
from ..core.datatypes import Split
from ..core.errors import CorpusError, MissingPrerequisiteError
from ..operators import apply_image, build_operator, load_operator, save_operator
from ..operators.forward import ForwardOperator
from .io import list_images, load_image
from .patches import PatchSource, patch_centers, patch_grid
from .synthetic import synthetic_image

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SYNTHETIC_PREFIX = "synthetic:"


def image_rng(seed: int, image_id: str) -> np.random.Generator:
    """Per-image stream derived from ``(seed, image_id)``, independent of order."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(image_id.encode())]))


def check_disjoint(splits: Dict[str, List[str]]) -> None:
    names = sorted(splits)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            overlap = set(splits[a]) & set(splits[b])
            if overlap:
                raise CorpusError(
                    f"splits {a!r} and {b!r} share source images: {sorted(overlap)[:5]}"
                )


def source_image(source: str, image_id: str, size: int, channels: int, seed: int) -> np.ndarray:
    """Fetch or synthesize the clean ``[C, H, W]`` image named ``image_id``."""
    if source.startswith(SYNTHETIC_PREFIX):
        name = source[len(SYNTHETIC_PREFIX) :]
        return synthetic_image(name, size, image_rng(seed, "source/" + image_id), channels)
    path = Path(source) / image_id
    img = load_image(path).data
    if img.shape[1] < size or img.shape[2] < size:
        raise CorpusError(f"{path} is smaller than {size}x{size}")
    if img.shape[0] != channels:
        raise CorpusError(f"{path} has {img.shape[0]} channel(s), expected {channels}")
    return img[:, :size, :size].copy()


def source_ids(source: str, n_images: int) -> List[str]:
    if source.startswith(SYNTHETIC_PREFIX):
        return [f"img{i:04d}" for i in range(n_images)]
    names = [p.name for p in list_images(source)]
    if len(names) < 3:
        raise CorpusError(f"{source} holds {len(names)} image(s); at least 3 are needed")
    return names[:n_images]


def partition(ids: List[str], cfg: CorpusConfig, seed: int) -> Dict[str, List[str]]:
    """Split source ids into disjoint clean / corrupted / test sets."""
    order = [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]
    n = len(order)
    n_clean = max(1, int(round(cfg.clean_fraction * n)))
    n_test = max(1, int(round(cfg.test_fraction * n)))
    if n_clean + n_test >= n:
        raise CorpusError(f"{n} image(s) cannot fill three disjoint splits")
    return {
        str(Split.CLEAN): sorted(order[:n_clean]),
        str(Split.TEST): sorted(order[n_clean : n_clean + n_test]),
        str(Split.CORRUPTED): sorted(order[n_clean + n_test :]),
    }


def _patch_records(ids: List[str], spec: CorpusSpec) -> List[Dict[str, Any]]:
    size = spec.image_size
    corners = patch_grid(size, size, spec.patch_size, spec.stride)
    centres = patch_centers(np.asarray(corners, dtype=np.float64), spec.patch_size, (size, size))
    return [
        {"source": image_id, "row": r, "col": c, "coords": [float(u), float(v)]}
        for image_id in ids
        for (r, c), (u, v) in zip(corners, centres)
    ]


def generate_split(
    spec: CorpusSpec,
    out_dir: Union[str, Path],
    operator: Optional[ForwardOperator] = None,
) -> Dict[str, Any]:
    """Write one split of a corpus and return its manifest entry."""
    out_dir = Path(out_dir)
    ids = list(spec.source_ids)
    if not ids:
        raise CorpusError(f"split {spec.split!r} has no source images")
    split = Split(spec.split)
    if split is not Split.CLEAN and operator is None:
        operator = build_operator(
            spec.degradation.model_copy(update={"noise_sigma": spec.noise_sigma}),
            np.random.default_rng(spec.seed),
            image_extent=(spec.image_size, spec.image_size),
        )
    directory = out_dir / str(split)
    directory.mkdir(parents=True, exist_ok=True)
    with no_grad():
        for image_id in ids:
            stem = Path(image_id).stem
            clean = source_image(spec.source, image_id, spec.image_size, spec.channels, spec.seed)
            if split is Split.CLEAN:
                save_tensor(directory / f"{stem}.opmt", clean)
                continue
            corrupted = apply_image(operator, clean, image_rng(spec.seed, "noise/" + image_id))
            if split is Split.TEST:
                save_tensor(directory / f"{stem}.clean.opmt", clean)
                save_tensor(directory / f"{stem}.corrupted.opmt", corrupted)
            else:
                save_tensor(directory / f"{stem}.opmt", corrupted)
    logger.info("wrote %d %s image(s) to %s", len(ids), split, directory)
    return {
        "sources": ids,
        "patch_size": spec.patch_size,
        "stride": spec.stride,
        "patches": _patch_records(ids, spec),
    }


def generate_corpus(
    cfg: CorpusConfig, out_dir: Union[str, Path], seed: int
) -> Dict[str, Any]:
    """Generate the three splits, the true operator and the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = partition(source_ids(cfg.source, cfg.n_images), cfg, seed)
    check_disjoint(splits)
    extent = (cfg.image_size, cfg.image_size)
    degradation = cfg.degradation.model_copy(update={"noise_sigma": cfg.noise_sigma})
    operator = build_operator(degradation, np.random.default_rng(seed), image_extent=extent)
    save_operator(operator, out_dir / "true_operator")
    with no_grad():
        centre = ((extent[0] - 1) / 2.0, (extent[1] - 1) / 2.0)
        save_tensor(out_dir / "true_kernel.opmt", operator.materialize_kernel(centre).data)

    entries = {}
    for split, ids in splits.items():
        spec = CorpusSpec(
            source=cfg.source,
            source_ids=ids,
            image_size=cfg.image_size,
            channels=cfg.channels,
            patch_size=cfg.patch_size,
            stride=cfg.stride,
            degradation=degradation,
            noise_sigma=cfg.noise_sigma,
            split=split,
            seed=seed,
        )
        entries[split] = generate_split(spec, out_dir, operator)

    manifest = {
        "format": "opmatch-corpus",
        "version": 1,
        "seed": seed,
        "config": cfg.model_dump(mode="json"),
        "true_operator": "true_operator",
        "true_kernel": "true_kernel.opmt",
        "splits": entries,
    }
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


@dataclass
class Corpus:
    """Read access to a generated corpus directory."""

    root: Path
    manifest: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def open(cls, root: Union[str, Path]) -> "Corpus":
        root = Path(root)
        path = root / MANIFEST
        if not path.exists():
            raise MissingPrerequisiteError(f"no corpus manifest at {path}", "generate")
        manifest = json.loads(path.read_text())
        check_disjoint({k: v["sources"] for k, v in manifest["splits"].items()})
        return cls(root=root, manifest=manifest)

    @property
    def config(self) -> CorpusConfig:
        return CorpusConfig.model_validate(self.manifest["config"])

    def ids(self, split: Union[Split, str]) -> List[str]:
        return list(self.manifest["splits"][str(Split(split))]["sources"])

    def images(self, split: Union[Split, str], kind: str = "corrupted") -> List[np.ndarray]:
        split = Split(split)
        directory = self.root / str(split)
        out = []
        for image_id in self.ids(split):
            stem = Path(image_id).stem
            name = f"{stem}.{kind}.opmt" if split is Split.TEST else f"{stem}.opmt"
            out.append(load_tensor(directory / name))
        return out

    def source(
        self,
        split: Union[Split, str],
        patch_size: Optional[int] = None,
        stride: Optional[int] = None,
        with_coords: bool = True,
    ) -> PatchSource:
        cfg = self.config
        return PatchSource(
            images=self.images(split),
            patch_size=patch_size or cfg.patch_size,
            stride=stride or cfg.stride,
            image_ids=self.ids(split),
            with_coords=with_coords,
        )

    def true_operator(self) -> ForwardOperator:
        return load_operator(self.root / self.manifest["true_operator"])

    def true_kernel(self) -> np.ndarray:
        return load_tensor(self.root / self.manifest["true_kernel"])
