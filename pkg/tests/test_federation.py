import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from conftest import make_zone_runtimes
from zoneids import netsim
from zoneids.adapters import extract_shared
from zoneids.anomaly import AnomalyScoreConfig, PseudoLabelConfig, ReconError
from zoneids.errors import CongruenceError, EmptyUpdateSetError
from zoneids.federation import (
    CURRENT,
    INITIAL,
    LAST_RECEIVED,
    Coordinator,
    RoundConfig,
    fed_avg,
    run_federation,
    run_round,
)
from zoneids.models import build_autoencoder
from zoneids.nn import ParameterSet

NO_TRAIN = RoundConfig(rounds=1, local_epochs=0, local_learning_rate=0.1)


def ps(value, m, name="w"):
    return ParameterSet([(name, np.array([float(value)]))], sample_count=m)


def test_fed_avg_examples():
    assert fed_avg([ps(0, 1), ps(1, 1)])["w"][0] == 0.5
    out = fed_avg([ps(0, 3), ps(4, 1)])
    assert out["w"][0] == 1.0
    assert out.sample_count == 4


def test_fed_avg_errors():
    with pytest.raises(EmptyUpdateSetError):
        fed_avg([])
    with pytest.raises(CongruenceError):
        fed_avg([ps(0, 1), ps(0, 1, name="v")])
    with pytest.raises(ValueError):
        fed_avg([ps(0, 0)])


def _random_sets(seed, k, shape=(3, 2)):
    rng = np.random.default_rng(seed)
    return [ParameterSet([("a", rng.normal(size=shape)), ("b", rng.normal(size=4))],
                         sample_count=int(rng.integers(1, 1000))) for _ in range(k)]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_fed_avg_permutation_invariant_and_bounded(seed, k):
    sets = _random_sets(seed, k)
    out = fed_avg(sets)
    perm = np.random.default_rng(seed).permutation(k)
    shuffled = fed_avg([sets[i] for i in perm])
    for name in out:
        np.testing.assert_allclose(shuffled[name], out[name], rtol=0, atol=1e-12)
        stack = np.stack([s[name] for s in sets])
        assert np.all(out[name] >= stack.min(axis=0)) and np.all(out[name] <= stack.max(axis=0))
    assert fed_avg([sets[0]] * k).bit_equal(sets[0])


def _shared(zone):
    return extract_shared(zone.model, 1)


def _bias(zone):
    return float(zone.model.net.params["head.out.bias"][0])


def _expected_mean(zones, ids):
    m = np.array([len(zones[i].local_data) for i in ids], dtype=float)
    return float(np.sum(m * np.array(ids, dtype=float)) / m.sum())


def test_perfect_link_round():
    _, zones = make_zone_runtimes()
    server = Coordinator(zones[0].initial_deployed.copy())
    out = run_round(server, zones, netsim.LinkModel(), NO_TRAIN, 1)
    assert [z for z, _ in out.contributors] == [0, 1, 2, 3]
    assert [m for _, m in out.contributors] == [40, 50, 60, 70]
    assert out.timeouts == [] and not out.server_model_used
    for z in zones:
        assert _shared(z).bit_equal(out.aggregate)
        assert z.active_source == CURRENT
    assert _bias(zones[0]) == pytest.approx(_expected_mean(zones, [0, 1, 2, 3]), abs=1e-15)


def test_dropped_broadcast_uses_fallback_chain():
    _, zones = make_zone_runtimes()
    link = netsim.LinkModel()
    link.script(1, 2, netsim.DOWN, netsim.ScriptedOutcome(drop=True))
    link.script(2, 2, netsim.DOWN, netsim.ScriptedOutcome(drop=True))
    link.script(2, 1, netsim.DOWN, netsim.ScriptedOutcome(drop=True))
    server = Coordinator(zones[0].initial_deployed.copy())
    r1 = run_round(server, zones, link, NO_TRAIN, 1)
    assert r1.timeouts == [2] and r1.sources[2] == INITIAL
    assert _bias(zones[2]) == 2.0
    r2 = run_round(server, zones, link, NO_TRAIN, 2)
    assert r2.sources == {0: CURRENT, 1: LAST_RECEIVED, 2: INITIAL, 3: CURRENT}
    assert _shared(zones[1]).bit_equal(r1.aggregate)


def test_all_uploads_dropped_rebroadcasts_stored_model():
    _, zones = make_zone_runtimes()
    link = netsim.LinkModel()
    server = Coordinator(zones[0].initial_deployed.copy())
    first = run_round(server, zones, link, NO_TRAIN, 1)
    for z in range(4):
        link.script(2, z, netsim.UP, netsim.ScriptedOutcome(drop=True))
    for z in zones:
        z.model.net.params["head.out.bias"][:] = 9.0
    out = run_round(server, zones, link, NO_TRAIN, 2)
    assert out.aggregate is None and out.server_model_used
    assert out.upload_failures == [0, 1, 2, 3] and out.contributors == []
    for z in zones:
        assert _shared(z).bit_equal(first.aggregate)


def test_late_upload_is_excluded():
    _, zones = make_zone_runtimes()
    link = netsim.LinkModel()
    link.script(1, 3, netsim.UP, netsim.ScriptedOutcome(delay=75.0))
    out = run_round(Coordinator(zones[0].initial_deployed.copy()), zones, link, NO_TRAIN, 1)
    assert out.upload_failures == [3]
    assert _bias(zones[0]) == pytest.approx(_expected_mean(zones, [0, 1, 2]), abs=1e-15)


def _federate(zones, universal, rounds, **kw):
    ae = build_autoencoder(8, scale=0.25, seed=0)
    ref = ReconError.from_raw(ae.errors(zones[0].local_data.features))
    cfg = RoundConfig(rounds=rounds, local_epochs=1, local_learning_rate=0.1, batch_size=16)
    grid = [AnomalyScoreConfig(0, 1, 0, 1), AnomalyScoreConfig(1, 1.5, 1.5, 2.5)]
    return run_federation(universal, ae, ref, zones, netsim.LinkModel(), cfg,
                          PseudoLabelConfig(grid[1]), grid, labelled_fraction=1.0, **kw)


def test_zero_rounds_keep_initial_models():
    universal, zones = make_zone_runtimes()
    before = [z.model.net.params.copy() for z in zones]
    res = _federate(zones, universal, 0)
    assert res.outcomes == [] and len(res.evaluations) == 1
    for z, b in zip(zones, before):
        assert z.model.net.params.bit_equal(b)


def test_rounds_evaluated_and_converge_to_one_shared_set():
    universal, zones = make_zone_runtimes()
    res = _federate(zones, universal, 3)
    assert len(res.outcomes) == 3 and len(res.evaluations) == 4
    assert all(sorted(ev) == [0, 1, 2, 3] for ev in res.evaluations)
    first = _shared(zones[0])
    for z in zones[1:]:
        assert _shared(z).bit_equal(first)
    assert first.bit_equal(res.outcomes[-1].aggregate)


def test_federation_is_deterministic():
    def run():
        universal, zones = make_zone_runtimes(seed=3)
        res = _federate(zones, universal, 2)
        return [o.summary() for o in res.outcomes], _shared(zones[0])

    (a, pa), (b, pb) = run(), run()
    assert a == b and pa.bit_equal(pb)


def test_zone_with_no_training_rows_is_idle():
    universal, zones = make_zone_runtimes()
    zones[1].train_labels = np.full(len(zones[1].local_data), -1)
    out = run_round(Coordinator(zones[0].initial_deployed.copy()), zones, netsim.LinkModel(),
                    NO_TRAIN, 1)
    assert out.idle == [1]
    assert [z for z, _ in out.contributors] == [0, 2, 3]
    assert_array_equal(sorted(out.sources), [0, 1, 2, 3])


def test_round_config_validation():
    for kw in ({"rounds": -1}, {"local_epochs": -1}, {"local_learning_rate": 0}, {"timeout": 0}):
        with pytest.raises(ValueError):
            RoundConfig(**kw)
