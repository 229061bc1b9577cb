import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rewave.config import load_config  # noqa: E402
from rewave.pipeline import generate_dataset  # noqa: E402


@pytest.fixture(scope="session")
def tiny_config():
    # 2 classes x 10 images on a small retina; cheap enough for per-test copies
    return load_config(
        None,
        [
            "master_seed=7",
            "retina_radius=24.0",
            "image_side=32",
            "images_per_class=10",
            'grid.altered=["propagation_prob"]',
            "grid.values.propagation_prob=[0.8, 1.0]",
            "grid.base.spontaneous_rate=0.002",
            "selection.threshold=5",
        ],
    )


@pytest.fixture()
def tiny_dataset(tmp_path, tiny_config):
    out = tmp_path / "tiny"
    generate_dataset(tiny_config, out, workers=1)
    return out


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
