"""Regenerate tests/data/golden_path.json (run once; the file is committed)."""
import json
from pathlib import Path

import numpy as np

from chaplygin import BallModel, IntegratorConfig, NoiseConfig, physical_inertia, simulate_ensemble

GOLDEN = Path(__file__).parent / "data" / "golden_path.json"
SETUP = {"n": 3, "masses": [1.0, 2.0, 3.5], "h": 0.01, "T": 1.0, "seed": 1234, "stride": 10}


def compute(backend=None):
    model = BallModel(SETUP["n"], physical_inertia(SETUP["n"], SETUP["masses"]))
    cfg = IntegratorConfig(h=SETUP["h"], master_seed=SETUP["seed"], path_count=1)
    ens = simulate_ensemble(model, np.eye(SETUP["n"]), SETUP["T"], cfg, NoiseConfig(),
                            snapshot_stride=SETUP["stride"], backend=backend)
    return ens.snapshots[0]


if __name__ == "__main__":
    snaps = compute("python")
    GOLDEN.parent.mkdir(exist_ok=True)
    GOLDEN.write_text(json.dumps({"setup": SETUP, "snapshots": snaps.reshape(len(snaps), -1).tolist()},
                                 indent=None) + "\n")
