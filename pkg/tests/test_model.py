import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbnn_imc.errors import ProbabilityRangeError, ShapeMismatchError, SpecParseError
from bbnn_imc.model import (
    NetworkSpec, ProbabilityMap, deterministic_ensemble, fc, load_ensemble, load_network_spec,
    load_probability_map, sample_ensembles, save_ensemble, save_network_spec, save_probability_map,
)
from bbnn_imc.toy import toy_cnn_spec


def test_network_spec_round_trip(tmp_path, toy_cnn):
    spec, _ = toy_cnn
    save_network_spec(spec, tmp_path / "n.yaml")
    assert load_network_spec(tmp_path / "n.yaml") == spec


def test_network_spec_rejects_garbage(tmp_path):
    (tmp_path / "bad.yaml").write_text("format: something-else\n")
    with pytest.raises(SpecParseError):
        load_network_spec(tmp_path / "bad.yaml")


def test_probability_map_round_trip(tmp_path, toy_cnn):
    spec, pmap = toy_cnn
    save_probability_map(pmap, tmp_path / "p.bbnp")
    assert load_probability_map(tmp_path / "p.bbnp", spec) == pmap


def test_probability_range_checked():
    with pytest.raises(ProbabilityRangeError):
        ProbabilityMap((np.array([[0.5, 1.5]]),))


def test_shape_mismatch_detected():
    spec = NetworkSpec((1, 1, 4), 2, (fc(4, 2),))
    with pytest.raises(ShapeMismatchError):
        ProbabilityMap((np.full((3, 2), 0.5),)).check_against(spec)


def test_ensemble_round_trip(tmp_path, toy_cnn):
    _, pmap = toy_cnn
    e = sample_ensembles(pmap, 1, seed=3)[0]
    save_ensemble(e, tmp_path / "e.bbne")
    back = load_ensemble(tmp_path / "e.bbne")
    assert all(np.array_equal(a, b) for a, b in zip(e.layers, back.layers))


def test_samples_honour_deterministic_cells(toy_cnn):
    _, pmap = toy_cnn
    for e in sample_ensembles(pmap, 3, seed=1):
        for p, w in zip(pmap.layers, e.layers):
            assert np.all(w[p == 1.0] == 1) and np.all(w[p == 0.0] == -1)


def test_deterministic_ensemble_is_most_probable():
    pmap = ProbabilityMap((np.array([[0.2, 0.5, 0.9]], np.float32),))
    assert deterministic_ensemble(pmap).layers[0].tolist() == [[-1, 1, 1]]


@settings(max_examples=20, deadline=None)
@given(p=st.floats(0.01, 0.99), seed=st.integers(0, 2**32 - 1))
def test_sampling_rate_within_binomial_bounds(p, seed):
    n = 20000
    pmap = ProbabilityMap((np.full((n, 1), p, np.float32),))
    w = sample_ensembles(pmap, 1, seed)[0].layers[0]
    q = float(np.float32(p))
    sigma = np.sqrt(n * q * (1 - q))
    assert abs((w == 1).sum() - n * q) <= 4 * sigma


def test_worker_count_does_not_change_samples(toy_cnn):
    _, pmap = toy_cnn
    a = sample_ensembles(pmap, 5, seed=9, workers=1)
    b = sample_ensembles(pmap, 5, seed=9, workers=8)
    for ea, eb in zip(a, b):
        assert all(np.array_equal(x, y) for x, y in zip(ea.layers, eb.layers))


def test_different_seeds_differ(toy_cnn):
    _, pmap = toy_cnn
    a = sample_ensembles(pmap, 1, seed=1)[0]
    b = sample_ensembles(pmap, 1, seed=2)[0]
    assert any(not np.array_equal(x, y) for x, y in zip(a.layers, b.layers))


def test_layer_io_shapes():
    shapes = toy_cnn_spec().layer_io_shapes()
    assert shapes[0][0] == (1, 8, 8)
    assert shapes[-1][1][-1] == 10


def test_half_probability_single_synapse():
    pmap = ProbabilityMap((np.full((1, 1), 0.5, np.float32),))
    w = np.array([e.layers[0][0, 0] for e in sample_ensembles(pmap, 10000, seed=11)])
    assert abs(((w + 1) / 2).mean() - 0.5) <= 3 * np.sqrt(0.25 / 10000)
