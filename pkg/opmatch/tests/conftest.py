"""Shared fixtures: seeded generators, tiny configs and small images."""

import logging

import numpy as np
import pytest

from opmatch.core.config import (
    ArchConfig,
    CorpusConfig,
    KernelSpec,
    MatchConfig,
    OperatorConfig,
    PriorConfig,
    RunConfig,
)
from opmatch.data import dead_leaves


@pytest.fixture(autouse=True)
def package_logger():
    """Undo CLI logging setup so caplog sees package records."""
    yield
    log = logging.getLogger("opmatch")
    log.handlers.clear()
    log.propagate = True
    log.setLevel(logging.NOTSET)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch():
    return ArchConfig(hidden=8, depth=3, time_embed_dim=8)


@pytest.fixture
def tiny_prior(tiny_arch):
    return PriorConfig(arch=tiny_arch, epochs=1, max_steps=3, batch=4, dtype="float64")


@pytest.fixture
def tiny_match():
    return MatchConfig(
        total_op_steps=2,
        batch=4,
        lr_operator=1e-2,
        init=OperatorConfig(kernel=KernelSpec(kind="dirac", size=5)),
        snapshot_every=1,
    )


@pytest.fixture
def tiny_corpus():
    return CorpusConfig(
        n_images=6,
        image_size=16,
        patch_size=8,
        stride=8,
        degradation=OperatorConfig(kernel=KernelSpec(kind="gaussian", size=5, sigma=1.0)),
        noise_sigma=0.01,
        clean_fraction=0.34,
        test_fraction=0.17,
    )


@pytest.fixture
def tiny_run(tmp_path, tiny_corpus, tiny_prior, tiny_match):
    return RunConfig(
        seed=7,
        output_dir=str(tmp_path / "run"),
        corpus=tiny_corpus,
        prior=tiny_prior,
        match=tiny_match,
    )


@pytest.fixture
def leaves(rng):
    """A 32x32 single-channel dead-leaves image in [-1, 1]."""
    return dead_leaves(32, rng)


@pytest.fixture
def gaussian7():
    from opmatch.operators import gaussian_kernel

    return gaussian_kernel(7, 1.0)
