"""Tests for run manifests."""
import json
import time

import numpy as np

from svyfosr.models.replicates import BootType
from svyfosr.schemas import SmootherSpec
from svyfosr.utils.audit import write_manifest


def test_manifest_serializes_numpy_enums_and_paths(tmp_path):
    """Test that arrays, numpy scalars, enums and paths land in the manifest as plain JSON."""
    path = write_manifest(
        tmp_path,
        "fit",
        time.perf_counter(),
        seed=3,
        config={
            "boot_type": BootType.RWYB,
            "lambdas": np.array([0.5, 2.0]),
            "B": np.int64(40),
            "out": tmp_path / "bands",
            "smoother": SmootherSpec(basis_dim=12),
        },
        outputs=[tmp_path / "band_x.csv"],
        results={"q95": {"x": np.float64(2.7)}},
    )
    manifest = json.loads(path.read_text())
    config = manifest["config"]
    assert config["boot_type"] == "rwyb"
    assert config["lambdas"] == [0.5, 2.0]
    assert config["B"] == 40
    assert config["out"] == str(tmp_path / "bands")
    assert config["smoother"]["basis_dim"] == 12
    assert manifest["results"]["q95"]["x"] == 2.7
    assert manifest["outputs"] == [str(tmp_path / "band_x.csv")]
    assert manifest["seed"] == 3
