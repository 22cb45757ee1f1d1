import numpy as np
import pytest

from bbnn_imc.device import (
    DeviceConfig, apply_compensation, drift, drift_compensation_factor, load_device_config, program,
    program_subarray, read, sample_drift_exponents, save_device_config, weight_to_conductance,
)
from bbnn_imc.errors import CompensationUnavailableError, SpecParseError
from bbnn_imc.model import BatchNorm


def test_differential_mapping():
    cfg = DeviceConfig()
    gp, gn = weight_to_conductance(np.array([1, -1, 0]), cfg)
    assert gp.tolist() == [cfg.g_max, 0, 0] and gn.tolist() == [0, cfg.g_max, 0]
    with pytest.raises(ValueError):
        weight_to_conductance(np.array([2]), cfg)


def test_drift_oracle():
    assert drift(25.0, 0.06, 1e4, 1.0) == pytest.approx(25.0 * 10 ** -0.24, rel=1e-12)
    assert drift(25.0, 0.06, 1e4, 1.0) == pytest.approx(14.3858, rel=1e-4)
    assert drift_compensation_factor(1e4, 1.0, 0.06) == pytest.approx(1.7378, rel=1e-4)


def test_drift_identity_at_t0_and_causality():
    g = np.array([1.0, 2.0])
    assert np.array_equal(drift(g, 0.1, 1.0, 1.0), g)
    with pytest.raises(ValueError):
        drift(g, 0.1, 0.5, 1.0)


def test_compensation_cancels_uniform_drift():
    alpha = drift_compensation_factor(1e7, 1.0, 0.06)
    g = drift(25e-6, 0.06, 1e7, 1.0)
    assert g * alpha == pytest.approx(25e-6, rel=1e-12)


def test_apply_compensation_scales_gain_only():
    bn = BatchNorm((2.0, 0.5), (1.0, -1.0))
    out = apply_compensation(bn, 3.0)
    assert out.scale == pytest.approx((6.0, 1.5)) and out.shift == (1.0, -1.0)
    with pytest.raises(CompensationUnavailableError):
        apply_compensation(None, 2.0)


def test_program_noise_statistics():
    cfg = DeviceConfig(g_max=1.0, sigma_prog=0.03)
    g = program(np.full(100000, 0.5), cfg, np.random.default_rng(0))
    assert abs(g.mean() - 0.5) < 1e-3
    assert g.std() == pytest.approx(0.03, rel=0.02)
    assert g.min() >= 0 and g.max() <= 1


def test_read_noise_fresh_each_read():
    cfg = DeviceConfig(g_max=1.0)
    rng = np.random.default_rng(0)
    g = np.full(10, 0.5)
    assert not np.array_equal(read(g, cfg, rng), read(g, cfg, rng))
    assert np.array_equal(read(g, DeviceConfig.ideal(g_max=1.0), rng), g)


def test_drift_exponents_clip_at_zero():
    cfg = DeviceConfig(nu_mean=0.0, nu_std=0.05)
    nu = sample_drift_exponents(10000, cfg, np.random.default_rng(0))
    assert nu.min() >= 0.0


def test_program_subarray_is_reproducible():
    w = np.random.default_rng(0).choice([-1, 1], size=(8, 4))
    a = program_subarray(w, DeviceConfig(), np.random.default_rng(5))
    b = program_subarray(w, DeviceConfig(), np.random.default_rng(5))
    assert np.array_equal(a.g_plus, b.g_plus) and np.array_equal(a.nu_minus, b.nu_minus)
    gp, _ = a.at(10.0, 1.0)
    assert np.all(gp <= a.g_plus)


def test_config_round_trip(tmp_path):
    cfg = DeviceConfig(sigma_read=0.02, adc_bits=6)
    save_device_config(cfg, tmp_path / "d.yaml")
    assert load_device_config(tmp_path / "d.yaml") == cfg
    (tmp_path / "bad.yaml").write_text("format: bbnn-device\nversion: 1\nbogus: 1\n")
    with pytest.raises(SpecParseError):
        load_device_config(tmp_path / "bad.yaml")


def test_config_validation():
    with pytest.raises(ValueError):
        DeviceConfig(sigma_read=-1)
    with pytest.raises(ValueError):
        DeviceConfig(adc_bits=1)


def test_programming_clips_at_g_max():
    # target at the ceiling: the clipped Gaussian's mean is g_max - sigma / sqrt(2 pi)
    cfg = DeviceConfig()
    n, sigma = 100000, cfg.sigma_prog * cfg.g_max
    g = program(np.full(n, cfg.g_max), cfg, np.random.default_rng(2))
    expected = cfg.g_max - sigma / np.sqrt(2 * np.pi)
    assert abs(g.mean() - expected) <= 3 * sigma / np.sqrt(n)


def test_read_mean_unbiased():
    cfg = DeviceConfig()
    g = read(np.full(100000, 12.5e-6), cfg, np.random.default_rng(3))
    assert abs(g.mean() - 12.5e-6) <= 3 * cfg.sigma_read * cfg.g_max / np.sqrt(g.size)
