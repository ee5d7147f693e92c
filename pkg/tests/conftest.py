"""Session-scoped fixtures shared by the acceptance suite.

The reference bundle and the 1500-iteration training run are expensive, so
they are built once per session and only when a test first asks for them.
Wall-clock durations of these builds are recorded in `acceptance_timings`
for the end-to-end runtime budget check.
"""

import dataclasses
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from splat4d.synthetic import generate_synthetic, reference_spec
from splat4d.training import TrainConfig, train

ACCEPTANCE_SEED = 0
ACCEPTANCE_ITERS = 1500


@pytest.fixture(scope="session")
def acceptance_timings():
    return {}


@pytest.fixture(scope="session")
def reference_bundle(acceptance_timings):
    t0 = time.perf_counter()
    bundle, _ = generate_synthetic(reference_spec(), seed=ACCEPTANCE_SEED)
    acceptance_timings["synth"] = time.perf_counter() - t0
    return bundle


@pytest.fixture(scope="session")
def trained_result(reference_bundle, acceptance_timings):
    config = TrainConfig(max_iters=ACCEPTANCE_ITERS, seed=ACCEPTANCE_SEED, mode="lite")
    t0 = time.perf_counter()
    result = train(reference_bundle, config=config)
    acceptance_timings["train"] = time.perf_counter() - t0
    return result


@pytest.fixture(scope="session")
def held_out_frames():
    """Ground-truth views halfway between training frames in time AND pose.

    Doubling the frame rate of the reference spec (same scene, same object
    trajectories, same camera arc) puts every odd frame of the double-rate
    clip midway between two training frames: timestamp (2j+1)/60 s between
    j/30 and (j+1)/30, camera at arc parameter (2j+1)/118 between j/59 and
    (j+1)/59. Those odd frames are never seen in training.
    """
    spec = reference_spec()
    double_rate = dataclasses.replace(
        spec, n_frames=2 * spec.n_frames - 1, fps=2 * spec.fps
    )
    bundle, _ = generate_synthetic(double_rate, seed=ACCEPTANCE_SEED)
    return [
        (np.array(bundle.images[i]), bundle.poses[i], float(bundle.timestamps[i]))
        for i in range(1, double_rate.n_frames, 2)
    ]
