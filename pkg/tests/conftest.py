import json

import pytest

from wavefuse.datakit.dataset import write_dataset
from wavefuse.datakit.splits import SplitSpec

TINY_CONFIG = {
    "seed": 5,
    "model": {"d": 16, "encoder_layers": 1, "decoder_layers": 1, "queries": 5, "heads": 2, "points": 2,
              "ffn": 32, "backbone_widths": [4, 8, 8, 8, 8, 8]},
    "fusion": {"mode": "gated"},
    "optimizer": {"epochs": 1, "lr": 1e-3},
    "audio": {"epochs": 1},
}


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "ds"
    write_dataset(root, 30, seed=11, split=SplitSpec(counts=(18, 6, 6)))
    return root


@pytest.fixture
def tiny_config(tmp_path, small_dataset):
    """Writes a tiny gated-fusion config pointing at the shared dataset; returns (path, dict)."""

    def make(**overrides):
        raw = json.loads(json.dumps(TINY_CONFIG))
        raw["data"] = {"path": str(small_dataset)}
        for key, value in overrides.items():
            if value is None:
                raw.pop(key, None)
            elif isinstance(value, dict):
                raw.setdefault(key, {}).update(value)
            else:
                raw[key] = value
        path = tmp_path / f"cfg{len(list(tmp_path.glob('cfg*.json')))}.json"
        path.write_text(json.dumps(raw))
        return path, raw

    return make


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[ACCEPTANCE].append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash[ACCEPTANCE])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
