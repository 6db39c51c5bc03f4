"""Shared fixtures: tiny network configs and a small synthetic corpus."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest
import torch

from fpdeblur.dataops import SyntheticSource, build_dataset
from fpdeblur.networks import NetConfig
from fpdeblur.training import TrainConfig

torch.set_num_threads(1)


def micro_net(resolution: int = 8) -> NetConfig:
    """Smallest config the architecture allows (used for gradient checks)."""
    return NetConfig(base_resolution=resolution, base_channels=2, unet_depth=2, max_channels=4,
                     verifier_blocks=4, verifier_channels=2, blocks_per_stage=1, embedding_dim=4,
                     patchgan_layers=3, disc_channels=2)


def small_net(resolution: int = 32) -> NetConfig:
    return NetConfig(base_resolution=resolution, base_channels=4, unet_depth=3, max_channels=16,
                     verifier_blocks=4, verifier_channels=4, blocks_per_stage=1, embedding_dim=16,
                     patchgan_layers=3, disc_channels=4)


def small_train_config(**kw) -> TrainConfig:
    base = dict(epochs=2, ridge_epochs=1, verifier_epochs=1, batch_size=4, verifier_pairs_per_epoch=8,
                sigma=5.0, seed=0, net=small_net())
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """6 subjects x 3 impressions, 32 px crops, sigma 5 (fast, for plumbing tests)."""
    out = tmp_path_factory.mktemp("tiny_data")
    return build_dataset(SyntheticSource(6, 3, 96, (12.0, 16.0), seed=3), out, sigmas=[5.0],
                         crop_size=32, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance bookkeeping

ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    """Log one acceptance criterion outcome (printed again in the terminal summary)."""
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE.append((criterion, passed, detail))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")


# ---------------------------------------------------------------- desk-scale smoke runs

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk_smoke.toml"


def run_desk_pipeline(root: Path) -> dict:
    """dataset, both pretrainings, proposed-model training, evaluation and report via the CLI."""
    from fpdeblur.cli import main

    def cli(*argv):
        code = main([str(a) for a in argv])
        if code != 0:
            raise RuntimeError(f"fpdeblur {argv[0]} exited with {code}")

    t0 = time.time()
    cfg = ["--config", DESK_CONFIG]
    manifest = root / "data" / "manifest.json"
    cli("dataset", *cfg, "--out", root / "data")
    cli("pretrain-ridge", *cfg, "--manifest", manifest, "--out", root / "ridge")
    cli("pretrain-verifier", *cfg, "--manifest", manifest, "--out", root / "verifier")
    cli("train", *cfg, "--manifest", manifest, "--ridge", root / "ridge" / "ridge_extractor.ckpt",
        "--verifier", root / "verifier" / "verifier.ckpt", "--out", root / "train")
    cli("eval", *cfg, "--manifest", manifest, "--generator", root / "train" / "generator.ckpt",
        "--verifier", root / "verifier" / "verifier.ckpt", "--out", root / "eval")
    cli("report", *cfg, "--inputs", root / "eval", "--out", root / "report")
    return {"root": root, "seconds": time.time() - t0, "manifest": manifest}


@pytest.fixture(scope="session")
def desk_smoke(tmp_path_factory):
    """Two identically seeded desk-scale runs (the second one checks determinism)."""
    first = run_desk_pipeline(tmp_path_factory.mktemp("smoke_a"))
    second = run_desk_pipeline(tmp_path_factory.mktemp("smoke_b"))
    return first, second
