"""PCM cell model: differential mapping, programming and read noise, drift.

Conductances are expressed in siemens by default. The crossbar engine runs
the same functions on a copy of the config with ``g_max = 1`` so that
noise-free column sums are exact small integers.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .container import atomic_write_text
from .errors import CompensationUnavailableError, SpecParseError
from .model import BatchNorm

DEVICE_FORMAT = "bbnn-device"


@dataclass(frozen=True)
class DeviceConfig:
    """Device constants. Noise scales are fractions of ``g_max``; times in seconds."""

    g_max: float = 25e-6
    sigma_prog: float = 0.03
    sigma_read: float = 0.01
    nu_mean: float = 0.06
    nu_std: float = 0.01
    t0: float = 1.0
    input_bits: int = 8
    adc_bits: int | None = None  # None: ideal, full-precision column sums

    def __post_init__(self):
        if self.g_max <= 0:
            raise ValueError("g_max must be positive")
        if min(self.sigma_prog, self.sigma_read, self.nu_std) < 0:
            raise ValueError("noise parameters must be non-negative")
        if self.t0 <= 0:
            raise ValueError("t0 must be positive")
        if self.input_bits < 1:
            raise ValueError("input_bits must be >= 1")
        if self.adc_bits is not None and self.adc_bits < 2:
            raise ValueError("adc_bits must be >= 2 or None")

    @classmethod
    def ideal(cls, **overrides) -> "DeviceConfig":
        """Noise-free, drift-free devices."""
        base = dict(sigma_prog=0.0, sigma_read=0.0, nu_mean=0.0, nu_std=0.0)
        base.update(overrides)
        return cls(**base)

    def normalized(self) -> "DeviceConfig":
        return replace(self, g_max=1.0)


def save_device_config(cfg: DeviceConfig, path) -> None:
    doc = {"format": DEVICE_FORMAT, "version": 1, **asdict(cfg)}
    atomic_write_text(path, yaml.safe_dump(doc, sort_keys=False))


def load_device_config(path) -> DeviceConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise SpecParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != DEVICE_FORMAT:
        raise SpecParseError(f"{path}: not a {DEVICE_FORMAT} file")
    known = {f.name for f in fields(DeviceConfig)}
    unknown = set(doc) - known - {"format", "version"}
    if unknown:
        raise SpecParseError(f"{path}: unknown device fields {sorted(unknown)}")
    try:
        return DeviceConfig(**{k: v for k, v in doc.items() if k in known})
    except (TypeError, ValueError) as exc:
        raise SpecParseError(f"{path}: {exc}") from exc


def weight_to_conductance(w, cfg: DeviceConfig) -> tuple[np.ndarray, np.ndarray]:
    """Differential pair targets: +1 -> (G_max, 0), -1 -> (0, G_max), 0 -> (0, 0)."""
    w = np.asarray(w)
    if not np.all((w == -1) | (w == 0) | (w == 1)):
        raise ValueError("weights must be ternary (-1, 0, +1)")
    g_plus = np.where(w > 0, cfg.g_max, 0.0)
    g_minus = np.where(w < 0, cfg.g_max, 0.0)
    return g_plus, g_minus


def program(target, cfg: DeviceConfig, rng: np.random.Generator) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    if np.any(target < 0) or np.any(target > cfg.g_max):
        raise ValueError("programming target outside [0, g_max]")
    if cfg.sigma_prog == 0:
        return target.copy()
    noisy = target + rng.normal(0.0, cfg.sigma_prog * cfg.g_max, size=target.shape)
    return np.clip(noisy, 0.0, cfg.g_max)


def drift(g0, nu, t: float, t0: float):
    """Power-law decay ``G0 * (t / t0) ** -nu``."""
    if t < t0:
        raise ValueError(f"drift time {t} precedes reference time {t0}")
    if t == t0:
        return np.array(g0, dtype=np.float64, copy=True)
    return np.asarray(g0, dtype=np.float64) * np.power(t / t0, -np.asarray(nu, dtype=np.float64))


def read(g, cfg: DeviceConfig, rng: np.random.Generator) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if cfg.sigma_read == 0:
        return g.copy()
    return np.clip(g + rng.normal(0.0, cfg.sigma_read * cfg.g_max, size=g.shape), 0.0, cfg.g_max)


def drift_compensation_factor(t: float, t0: float, nu_mean: float) -> float:
    if t < t0:
        raise ValueError(f"drift time {t} precedes reference time {t0}")
    return float((t / t0) ** nu_mean)


def apply_compensation(bn: BatchNorm | None, alpha: float) -> BatchNorm:
    """Scale batch-norm gains by ``alpha``; shifts are untouched."""
    if bn is None:
        raise CompensationUnavailableError("layer has no batch norm; drift compensation unavailable")
    return bn.scaled(alpha)


def sample_drift_exponents(shape, cfg: DeviceConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.nu_std == 0:
        return np.full(shape, cfg.nu_mean, dtype=np.float64)
    return np.maximum(rng.normal(cfg.nu_mean, cfg.nu_std, size=shape), 0.0)


@dataclass(frozen=True)
class DeviceState:
    """Programmed differential pairs of one physical subarray.

    Conductances are in the units of the config used to program them.
    """

    g_plus: np.ndarray
    g_minus: np.ndarray
    nu_plus: np.ndarray
    nu_minus: np.ndarray
    programmed_at: float = 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.g_plus.shape

    def at(self, t: float, t0: float) -> tuple[np.ndarray, np.ndarray]:
        """Drifted conductances at elapsed time ``t`` since programming."""
        return drift(self.g_plus, self.nu_plus, t, t0), drift(self.g_minus, self.nu_minus, t, t0)


def program_subarray(weights, cfg: DeviceConfig, rng: np.random.Generator) -> DeviceState:
    """Map ternary weights to pairs, program both devices, draw drift exponents.

    Draw order is fixed (G+ noise, G- noise, nu+, nu-) so a keyed stream
    reproduces the same cell state.
    """
    gp_t, gn_t = weight_to_conductance(weights, cfg)
    gp = program(gp_t, cfg, rng)
    gn = program(gn_t, cfg, rng)
    nup = sample_drift_exponents(gp.shape, cfg, rng)
    nun = sample_drift_exponents(gn.shape, cfg, rng)
    for a in (gp, gn, nup, nun):
        a.setflags(write=False)
    return DeviceState(gp, gn, nup, nun)
