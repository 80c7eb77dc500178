import json
import subprocess
import sys

import pytest
import torch


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def prunepack_cli():
    """Invoke the planner CLI (the only supported interface to it)."""

    def _run(*args):
        return subprocess.run(
            [sys.executable, "-m", "prunepack.cli", *args],
            capture_output=True, text=True,
        )

    return _run


@pytest.fixture
def uniform_scores_for_graph():
    """Build a {layer_id: scores} file from an exported graph document."""

    def _scores(graph_path, scores_path):
        with open(graph_path) as fh:
            doc = json.load(fh)
        scores = {
            layer["id"]: [float(j + 1) for j in range(layer["c_out"])]
            for layer in doc["layers"]
            if layer["kind"] in ("conv", "pointwise_conv", "depthwise_conv", "linear")
        }
        with open(scores_path, "w") as fh:
            json.dump(scores, fh)
        return scores_path

    return _scores
