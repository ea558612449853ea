"""Session fixtures for the acceptance suite.

The slow pieces are the two trained networks; they are built once per session
and shared by every criterion that needs them.  Set DPDIST_MODEL_CACHE to a
directory to reuse trained archives across sessions while iterating (the
cache key is the full training config, so stale hits are impossible).
"""

import hashlib
import os
import time
from pathlib import Path

import pytest

from dpdist.formats import load_model, save_model
from dpdist.network import TrainConfig, train

# Desk-scale training configuration for the acceptance runs.  Width is
# narrowed from the full-scale 1024 (quality is indistinguishable here and
# steps cost 2.2x less).  The rate starts at 1.25e-3 and halves every 2000
# steps, so the final quarter of the run sits below 1e-4 and settles the
# endpoint instead of sampling the oscillation of a hotter phase.
DESK_HIDDEN = (512, 512, 512)
DESK_STEPS = 10_000
DESK_LR = 1.25e-3
DESK_DECAY_INTERVAL = 2_000
DESK_SCENES = 2
DESK_POOL = 64

MAIN_CONFIG = TrainConfig(
    seed=42,
    steps=DESK_STEPS,
    scenes_per_step=DESK_SCENES,
    hidden=DESK_HIDDEN,
    learning_rate=DESK_LR,
    decay_interval=DESK_DECAY_INTERVAL,
    shape_kinds=("plane", "sphere", "box"),
    pool_size=DESK_POOL,
)

GENERALIZATION_CONFIG = TrainConfig(
    seed=42,
    steps=DESK_STEPS,
    scenes_per_step=DESK_SCENES,
    hidden=DESK_HIDDEN,
    learning_rate=DESK_LR,
    decay_interval=DESK_DECAY_INTERVAL,
    shape_kinds=("plane", "box"),
    pool_size=DESK_POOL,
)


def _train_cached(config, name):
    cache_dir = os.environ.get("DPDIST_MODEL_CACHE")
    if not cache_dir:
        t0 = time.monotonic()
        model, history = train(config)
        return model, history, time.monotonic() - t0
    key = hashlib.sha256(repr(config).encode()).hexdigest()[:16]
    path = Path(cache_dir) / f"{name}-{key}.dpd1"
    if path.exists():
        return load_model(path), None, 0.0
    t0 = time.monotonic()
    model, history = train(config)
    elapsed = time.monotonic() - t0
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    return model, history, elapsed


@pytest.fixture(scope="session")
def main_training():
    """Model trained on planes+spheres+boxes plus its loss history and wall time."""
    return _train_cached(MAIN_CONFIG, "main")


@pytest.fixture(scope="session")
def main_model(main_training):
    return main_training[0]


@pytest.fixture(scope="session")
def generalization_model():
    """Model trained on planes+boxes only (spheres/cylinders never seen)."""
    return _train_cached(GENERALIZATION_CONFIG, "gen")[0]
