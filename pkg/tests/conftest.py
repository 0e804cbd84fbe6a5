import numpy as np
import pytest

from zoneids.adapters import attach_adapters
from zoneids.data import Dataset
from zoneids.models import build_universal

# Filled by tests/test_acceptance.py: criterion number -> (passed, description)
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        passed, desc, detail = ACCEPTANCE_RESULTS[num]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num:>2}: {status}  {desc}  [{detail}]")


def toy_dataset(n=200, d=8, seed=0, families=("benign", "scan"), shift=1.5):
    """Two-family dataset in [0, 1]: the attack family is shifted upwards."""
    rng = np.random.default_rng(seed)
    fams = np.array([families[i % len(families)] for i in range(n)], dtype=object)
    x = rng.normal(0.35, 0.1, size=(n, d))
    x[fams != "benign"] += shift * 0.2
    return Dataset(np.clip(x, 0, 1), fams, [f"f{j}" for j in range(d)])


@pytest.fixture
def toy():
    return toy_dataset()


@pytest.fixture
def tiny_universal():
    return build_universal(8, scale=0.125, seed=1)


@pytest.fixture
def tiny_zone(tiny_universal):
    return attach_adapters(tiny_universal, reduction=2, seed=2)


def make_zone_runtimes(k=4, n=40, local_epochs_data=True, seed=0):
    """``k`` zones sharing a tiny backbone; zone ``i`` starts with head bias ``i``
    and holds ``n + 10*i`` local rows so FedAvg weights differ."""
    from zoneids.adapters import extract_shared
    from zoneids.federation import ZoneRuntime

    universal = build_universal(8, scale=0.125, seed=seed)
    zones = []
    for i in range(k):
        model = attach_adapters(universal, reduction=2, seed=seed)
        model.net.params["head.out.bias"][:] = float(i)
        data = toy_dataset(n + 10 * i, seed=seed + i)
        zones.append(ZoneRuntime(i, model, extract_shared(model, len(data)), data,
                                 holdout=toy_dataset(30, seed=100 + i)))
    return universal, zones


def small_config_dict(**overrides):
    """A seconds-scale synthetic experiment used by runner and CLI tests."""
    raw = {
        "synthetic": {"n_benign": 600, "known_families": {"scan": 200, "dos": 200},
                      "withheld_families": {"ddos": 80, "mitm": 80}},
        "model": {"universal": {"epochs": 6}, "autoencoder": {"epochs": 6}},
        "adapter": {"init": {"epochs": 2}},
        "federation": {"rounds": 2, "local_epochs": 1, "local_learning_rate": 0.1},
        "pseudo_label": {"labelled_fraction": 0.5},
        "score_grid": [[1, 0, 0, 1], [0, 1, 0, 1], [1, 1.5, 1.5, 2.5]],
        "seeds": [0],
    }
    raw.update(overrides)
    return raw
