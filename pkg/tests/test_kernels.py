import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbnn_imc import kernels

BACKENDS = sorted(kernels.BACKENDS)


def _case(rng, p=5, r=20, c=7):
    x = rng.integers(-128, 128, size=(p, r))
    w = rng.choice([-1, 0, 1], size=(r, c))
    return x, (w > 0).astype(float), (w < 0).astype(float), w


def test_compiled_backend_available():
    assert "cython" in kernels.BACKENDS


@pytest.mark.parametrize("backend", BACKENDS)
def test_noise_free_equals_integer_product(backend, rng):
    x, gp, gn, w = _case(rng)
    out = kernels.bitserial_mvm(x, gp, gn, 8, backend=backend)
    assert np.array_equal(out, x @ w)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 40), st.integers(1, 12), st.integers(2, 8), st.integers(0, 2**31))
def test_integer_oracle_any_width(p, r, c, nbits, seed):
    rng = np.random.default_rng(seed)
    lo, hi = -(1 << (nbits - 1)), (1 << (nbits - 1))
    x = rng.integers(lo, hi, size=(p, r))
    w = rng.choice([-1, 0, 1], size=(r, c))
    for b in BACKENDS:
        out = kernels.bitserial_mvm(x, (w > 0) * 1.0, (w < 0) * 1.0, nbits, backend=b)
        assert np.array_equal(out, x @ w)


def test_backends_agree_with_noise(rng):
    x, gp, gn, _ = _case(rng, p=9, r=64, c=16)
    outs = [kernels.bitserial_mvm(x, gp, gn, 8, 0.02, np.random.default_rng(3), backend=b) for b in BACKENDS]
    for o in outs[1:]:
        np.testing.assert_allclose(o, outs[0], rtol=0, atol=1e-9)


def test_noise_chunking_invariant(rng, monkeypatch):
    x, gp, gn, _ = _case(rng, p=12, r=32, c=8)
    full = kernels.bitserial_mvm(x, gp, gn, 8, 0.01, np.random.default_rng(4))
    monkeypatch.setattr(kernels, "_MAX_NOISE", 600)
    chunked = kernels.bitserial_mvm(x, gp, gn, 8, 0.01, np.random.default_rng(4))
    np.testing.assert_allclose(chunked, full, rtol=0, atol=1e-9)


def test_noise_perturbs_result(rng):
    x, gp, gn, w = _case(rng)
    out = kernels.bitserial_mvm(x, gp, gn, 8, 0.05, np.random.default_rng(0))
    assert not np.array_equal(out, x @ w)
    assert np.abs(out - x @ w).max() < 50


def test_adc_quantizes_and_saturates(rng):
    x, gp, gn, w = _case(rng, r=16)
    ideal = kernels.bitserial_mvm(x, gp, gn, 8)
    coarse = kernels.bitserial_mvm(x, gp, gn, 8, adc_bits=4)
    assert not np.array_equal(coarse, ideal)
    fine = kernels.bitserial_mvm(x, gp, gn, 8, adc_bits=6, full_scale=31.0)
    assert np.array_equal(fine, ideal)  # step 1 with enough range is lossless


def test_input_range_checked():
    with pytest.raises(ValueError):
        kernels.bitserial_mvm(np.array([[200]]), np.ones((1, 1)), np.zeros((1, 1)), 8)
    with pytest.raises(ValueError):
        kernels.bitserial_mvm(np.array([[1]]), np.ones((1, 1)), np.zeros((1, 1)), 8, sigma=0.1)


def test_zero_input_gives_zero_output(rng):
    _, gp, gn, _ = _case(rng)
    out = kernels.bitserial_mvm(np.zeros((3, 20), np.int64), gp, gn, 8, 0.05, np.random.default_rng(0))
    assert np.array_equal(out, np.zeros((3, 7)))


def test_random_32x32_subarrays_exact(rng):
    for _ in range(100):
        x = rng.integers(-128, 128, size=(1, 32))
        w = rng.choice([-1, 0, 1], size=(32, 32))
        assert np.array_equal(kernels.bitserial_mvm(x, (w > 0) * 1.0, (w < 0) * 1.0, 8), x @ w)
