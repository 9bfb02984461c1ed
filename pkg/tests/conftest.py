"""Shared fixtures: a tiny trained service data directory.

Building the models takes a few seconds, so the directory is built once per
session and copied wholesale by tests that mutate it (labels, retraining).
"""

import shutil

import numpy as np
import pytest

from riskmon import dataset, encoder, riskcore, service

SAFE_EPISODE_ID = "pick_peg_train_000"
FAULT_EPISODE_ID = "pick_peg_fault_000"
FAULT_START, FAULT_END = 15, 20


def moving_square_frames(n=40, seed=1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    frames = np.zeros((n, 64, 64))
    for i in range(n):
        frames[i, 10:30, 8 + i // 2 : 20 + i // 2] = 0.7
    frames += rng.normal(0, 0.01, frames.shape)
    return np.clip(frames, 0, 1)


def build_service_data(root) -> dict:
    """Write episodes + a registered model version under `root`.

    The fault episode replays the safe one with a burst of all-white frames
    (the risky-anchor look), so the installed model flags it deterministically
    and exactly once under pause debouncing.
    """
    frames = moving_square_frames()
    safe_u8 = (frames * 255).astype(np.uint8)
    safe_ep = dataset.EpisodeRecord(
        episode_id=SAFE_EPISODE_ID,
        skill="pick_peg",
        frames=safe_u8,
        provenance="training_execution",
    )
    fault_frames = safe_u8.copy()
    fault_frames[FAULT_START:FAULT_END] = 255
    fault_ep = dataset.EpisodeRecord(
        episode_id=FAULT_EPISODE_ID,
        skill="pick_peg",
        frames=fault_frames,
        provenance="test_seen",
        fault_kind="peg_missing",
        risky_intervals=[(FAULT_START, FAULT_END)],
    )
    ae = encoder.train_autoencoder(frames, epochs=30, seed=0)
    view = dataset.selected_view([safe_ep], ae, dataset.build_anchors())
    gpm = riskcore.train_risk_gp(view)

    episodes_root = root / "episodes"
    dataset.save_episode(safe_ep, episodes_root / safe_ep.episode_id)
    dataset.save_episode(fault_ep, episodes_root / fault_ep.episode_id)
    version = service.install_models(
        root, "pick_peg", ae, gpm, trained_on=[safe_ep.episode_id]
    )
    return {"root": root, "version": version, "ae": ae, "gp": gpm}


@pytest.fixture(scope="session")
def service_data_template(tmp_path_factory):
    root = tmp_path_factory.mktemp("service_template")
    return build_service_data(root)


@pytest.fixture()
def service_data(service_data_template, tmp_path):
    """A private mutable copy of the prebuilt service data directory."""
    root = tmp_path / "data"
    shutil.copytree(service_data_template["root"], root)
    return {**service_data_template, "root": root}
