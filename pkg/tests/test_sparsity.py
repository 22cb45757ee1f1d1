import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bbnn_imc.model import ProbabilityMap
from bbnn_imc.sparsity import SparsityProfile, clamp, clamp_before_fel, layer_stats, select_fel


def _pmap(*layers):
    return ProbabilityMap(tuple(np.asarray(p, np.float32) for p in layers))


def test_layer_stats_counts():
    prof = layer_stats(_pmap([[0, 1, 0.5], [0.2, 1, 1]], [[0.0, 1.0]]))
    assert prof.n == (6, 2) and prof.n_p == (2, 0)
    assert prof.frac_of_layer == (2 / 6, 0.0)
    assert prof.frac_of_total == (1.0, 0.0)


def test_clamp_snaps_near_extremes():
    out = clamp(_pmap([[0.005, 0.995, 0.5, 0.01, 0.99]]), tau=0.01)
    assert out.layers[0][0].tolist() == pytest.approx([0.0, 1.0, 0.5, 0.01, 0.99])


def test_clamp_rejects_bad_tau():
    with pytest.raises(ValueError):
        clamp(_pmap([[0.5]]), tau=0.5)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (6, 5), elements=st.floats(0, 1, width=32)), st.floats(0, 0.49))
def test_clamp_never_adds_probabilistic_cells(p, tau):
    before = layer_stats(_pmap(p))
    after = layer_stats(clamp(_pmap(p), tau))
    assert after.n_p[0] <= before.n_p[0]


def test_fel_rule_exact_threshold():
    # tail mass from layer 3 is exactly 0.9
    prof = SparsityProfile(n=(10, 10, 10, 10), n_p=(1, 0, 4, 5))
    d = select_fel(prof, 0.9)
    assert d.fel == 3 and d.mass == pytest.approx(0.9)
    assert select_fel(prof, 0.91).fel == 1


def test_fel_deepest_layer_when_tail_suffices():
    assert select_fel(SparsityProfile(n=(5, 5, 5), n_p=(0, 0, 7)), 0.9).fel == 3


def test_fel_degenerate_profile():
    with pytest.raises(ValueError):
        select_fel(SparsityProfile(n=(5,), n_p=(0,)))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=10).filter(lambda v: sum(v) > 0),
       st.floats(0.0, 1.0))
def test_fel_is_deepest_satisfying_layer(n_p, thr):
    prof = SparsityProfile(n=tuple(100 for _ in n_p), n_p=tuple(n_p))
    fel = select_fel(prof, thr).fel
    total = sum(n_p)
    assert sum(n_p[fel - 1:]) >= thr * total - 1e-9
    for deeper in range(fel + 1, len(n_p) + 1):
        assert sum(n_p[deeper - 1:]) < thr * total


def test_clamp_before_fel_rounds_shallow_layers():
    out = clamp_before_fel(_pmap([[0.3, 0.5, 0.7]], [[0.3]]), fel=2)
    assert out.layers[0].tolist() == [[0.0, 1.0, 1.0]]
    assert out.layers[1][0].tolist() == pytest.approx([0.3])


def test_fel_uniform_mass_high_threshold():
    assert select_fel(SparsityProfile(n=(10,) * 9, n_p=(1,) * 9), 0.95).fel == 1
