import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbnn_imc.uncertainty import aleatoric_roc, decompose, entropy, epistemic_roc, roc_auc, roc_curve


def pairwise_auc(scores, labels):
    pos = scores[labels]
    neg = scores[~labels]
    diff = pos[:, None] - neg[None, :]
    return ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (pos.size * neg.size)


def test_entropy_values():
    assert entropy([0.7, 0.3]) == pytest.approx(0.610864, abs=1e-6)
    assert entropy([1.0, 0.0]) == 0.0
    assert entropy([0.25] * 4) == pytest.approx(math.log(4))


def test_entropy_validation():
    for bad in ([0.5, 0.6], [-0.1, 1.1], [np.nan, 1.0]):
        with pytest.raises(ValueError):
            entropy(bad)


def test_identical_predictors_have_no_epistemic_part(rng):
    p = rng.dirichlet(np.ones(7))
    u = decompose(np.tile(p, (10, 1)))
    assert abs(u.epistemic[0]) < 1e-12
    assert u.total[0] == pytest.approx(entropy(p))


def test_maximal_disagreement_is_ln2():
    u = decompose(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert u.epistemic[0] == math.log(2)
    assert u.aleatoric[0] == 0.0


def test_epistemic_non_negative_on_random_sets(rng):
    n_mc = rng.integers(1, 12, size=10000)
    for k in np.unique(n_mc):
        m = int((n_mc == k).sum())
        probs = rng.dirichlet(np.full(5, 0.3), size=(m, int(k)))
        assert decompose(probs).epistemic.min() >= -1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10), st.integers(2, 6), st.integers(0, 2**31))
def test_decomposition_sums(n_mc, c, seed):
    probs = np.random.default_rng(seed).dirichlet(np.ones(c), size=(3, n_mc))
    u = decompose(probs)
    np.testing.assert_allclose(u.total, u.aleatoric + u.epistemic, atol=1e-12)
    assert np.all(u.total <= math.log(c) + 1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 1000), st.integers(1, 20), st.integers(0, 2**31))
def test_auc_matches_pairwise_oracle(n, levels, seed):
    rng = np.random.default_rng(seed)
    labels = rng.random(n) < 0.4
    labels[0], labels[1] = True, False
    scores = rng.integers(0, levels, size=n).astype(float)  # plenty of ties
    assert abs(roc_auc(scores, labels) - pairwise_auc(scores, labels)) <= 1e-9


def test_roc_curve_endpoints(rng):
    fpr, tpr, thr = roc_curve(rng.random(50), np.arange(50) % 2 == 0)
    assert (fpr[0], tpr[0], thr[0]) == (0.0, 0.0, np.inf)
    assert fpr[-1] == 1.0 and tpr[-1] == 1.0
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


def test_random_scores_give_half(rng):
    n = 10000
    assert roc_auc(rng.random(n), rng.random(n) < 0.5) == pytest.approx(0.5, abs=0.02)


def test_all_ties_give_half():
    assert roc_auc(np.zeros(10), np.arange(10) % 2 == 0) == 0.5


def test_perfect_separation():
    assert roc_auc([3.0, 2.0, 1.0, 0.0], [True, True, False, False]) == 1.0


def test_single_class_rejected():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [True, True])
    with pytest.raises(ValueError):
        aleatoric_roc([0.1, 0.2], [True, True])
    with pytest.raises(ValueError):
        epistemic_roc([0.1], [])


def test_roc_wrappers_orientation():
    assert aleatoric_roc([0.1, 0.9], [True, False]) == 1.0
    assert epistemic_roc([0.0, 0.1], [0.5, 0.7]) == 1.0


def test_aleatoric_auc_half_when_uninformative(rng):
    assert aleatoric_roc(rng.random(10000), rng.random(10000) < 0.7) == pytest.approx(0.5, abs=0.02)
