import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbnn_imc.errors import PackingError
from bbnn_imc.model import ProbabilityMap, sample_ensembles
from bbnn_imc.splitter import (
    decomposed_mvm, pack_ensembles, pack_tile_position, sp_mvm, split_dp_sp, squeeze_layer, squeeze_rows,
    subarray_count, tile, unsqueeze,
)


def _random_p(rng, shape, frac=0.2):
    p = np.where(rng.random(shape) < 0.5, 0.0, 1.0).astype(np.float32)
    m = rng.random(shape) < frac
    p[m] = rng.uniform(0.05, 0.95, m.sum())
    return p


def test_split_planes_sum_to_sample(rng):
    p = _random_p(rng, (20, 12))
    split = split_dp_sp(p)
    w = sample_ensembles(ProbabilityMap((p,)), 1, 0)[0].layers[0]
    assert np.array_equal(split.deterministic + split.stochastic(w), w)
    assert not np.any(split.deterministic[split.template_mask()])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64), st.integers(0, 2**31))
def test_decomposition_exact(r, c, seed):
    rng = np.random.default_rng(seed)
    p = _random_p(rng, (r, c))
    split = split_dp_sp(p)
    w = sample_ensembles(ProbabilityMap((p,)), 1, seed)[0].layers[0]
    x = rng.integers(-128, 128, size=(3, r))
    assert np.array_equal(decomposed_mvm(split, w, x), x @ w.astype(np.int64))


def test_tiling_covers_matrix():
    tiles = tile((300, 130), (128, 128))
    assert len(tiles) == 6
    cover = np.zeros((300, 130), int)
    for t in tiles:
        cover[t.row_slice, t.col_slice] += 1
    assert np.all(cover == 1)


def test_squeeze_round_trip(rng):
    v = np.zeros((16, 8), np.int8)
    v[[1, 5, 9]] = rng.choice([-1, 1], size=(3, 8))
    sq = squeeze_rows(v)
    assert sq.retained == 3 and sq.f_p == 3 / 16
    assert np.array_equal(unsqueeze(sq), v)


def test_packing_fixture_42_rows():
    assert subarray_count([42] * 10, 128) == 4


def test_packing_f_p_point_one():
    assert subarray_count([13] * 10, 128) == 2
    assert subarray_count([12] * 10, 128) == 1


def _blocks(rng, retained, rows=128, cols=16):
    out = []
    for k in retained:
        v = np.zeros((rows, cols), np.int8)
        idx = rng.choice(rows, size=k, replace=False)
        v[idx] = rng.choice([-1, 1], size=(k, cols))
        v[idx, 0] = 1  # keep every chosen row non-zero
        out.append(squeeze_rows(v))
    return out


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 128), min_size=1, max_size=12), st.integers(0, 2**31))
def test_split_policy_uses_ceiling(retained, seed):
    blocks = _blocks(np.random.default_rng(seed), retained)
    packed = pack_tile_position(blocks, 128, 16)
    assert len(packed) == math.ceil(sum(retained) / 128) == subarray_count(retained, 128)


def test_first_fit_keeps_blocks_whole(rng):
    blocks = _blocks(rng, [42] * 10)
    packed = pack_tile_position(blocks, 128, 16, policy="first-fit")
    assert len(packed) == 4  # three blocks per subarray
    for sub in packed:
        assert len({s.ensemble for s in sub.segments}) == len(sub.segments)


def test_first_fit_rejects_tall_block(rng):
    with pytest.raises(PackingError):
        pack_tile_position(_blocks(rng, [10], rows=20, cols=4), 8, 4, policy="first-fit")


def test_sp_mvm_matches_dense(rng):
    p = _random_p(rng, (200, 40), frac=0.05)
    split = split_dp_sp(p)
    tiles = tile(split.shape, (64, 64))
    ens = sample_ensembles(ProbabilityMap((p,)), 3, 7)
    squeezed = [squeeze_layer(split.stochastic(e.layers[0]), tiles) for e in ens]
    packed = pack_ensembles(squeezed, 3, 64)
    x = rng.integers(-128, 128, size=(2, 200))
    for i, e in enumerate(ens, start=1):
        ws = split.stochastic(e.layers[0]).astype(np.int64)
        assert np.array_equal(sp_mvm(packed, x, i, 40), x @ ws)


def test_f_p_of_fig_example():
    v = np.zeros((128, 128), np.int8)
    v[:42, 3] = 1
    assert squeeze_rows(v).f_p == pytest.approx(0.328, abs=1e-3)


def test_segments_straddling_subarrays(rng):
    # three 100-row blocks in 128-row subarrays: ensemble 2 spans two subarrays
    p = np.where(rng.random((128, 16)) < 0.5, 0.0, 1.0).astype(np.float32)
    p[:100, 0] = 0.5
    split = split_dp_sp(p)
    ens = sample_ensembles(ProbabilityMap((p,)), 3, 1)
    tiles = tile(split.shape, (128, 128))
    packed = pack_ensembles([squeeze_layer(split.stochastic(e.layers[0]), tiles) for e in ens], 3, 128)
    assert len(packed) == 3
    assert sum(2 in sub.ensembles for sub in packed) == 2
    x = rng.integers(-128, 128, size=(4, 128))
    for i, e in enumerate(ens, start=1):
        assert np.array_equal(sp_mvm(packed, x, i, 16), x @ split.stochastic(e.layers[0]).astype(np.int64))
