"""Bit-serial crossbar MVM kernel with a compiled core and a numpy fallback.

The compiled Cython module is used when importable; set
``BBNN_IMC_KERNEL=python`` to force the fallback. Both cores consume the same
pre-drawn noise vector, so they agree to floating-point summation order
(bit-exactly for integer-valued conductances).

Noise layout: for each input position, for each bit cycle, for each driven
row (ascending), for each column, one (G+, G-) pair of standard normals.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:
    from . import _bitserial as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback.bitserial_core}
if _compiled is not None:
    BACKENDS["cython"] = _compiled.bitserial_core

_requested = os.environ.get("BBNN_IMC_KERNEL", "").lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(f"BBNN_IMC_KERNEL={_requested!r} is not available (have {sorted(BACKENDS)})")
BACKEND = _requested or ("cython" if "cython" in BACKENDS else "python")

_MAX_NOISE = 1 << 22  # standard normals drawn per chunk


def _bit_planes(x: np.ndarray, nbits: int) -> np.ndarray:
    mask = np.int64((1 << nbits) - 1)
    shifts = np.arange(nbits, dtype=np.int64)
    return ((x & mask)[:, None, :] >> shifts[None, :, None]) & 1


def bitserial_mvm(
    x,
    g_plus,
    g_minus,
    nbits: int,
    sigma: float = 0.0,
    rng: np.random.Generator | None = None,
    g_max: float = 1.0,
    adc_bits: int | None = None,
    full_scale: float | None = None,
    backend: str | None = None,
) -> np.ndarray:
    """Stream two's-complement ``x`` (positions x rows) bit by bit through a crossbar.

    Each cycle drives the rows whose bit is set, reads the differential
    column currents (with fresh read noise of std ``sigma`` per cell when
    ``sigma > 0``), digitizes them and shift-adds with weight ``2**b``; the
    sign bit carries weight ``-2**(n-1)``. Returns column sums in units of
    ``g_max``-scaled current, shape (positions, columns).
    """
    core = BACKENDS[backend or BACKEND]
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.int64)
    gp = np.ascontiguousarray(g_plus, dtype=np.float64)
    gn = np.ascontiguousarray(g_minus, dtype=np.float64)
    P, R = x.shape
    if gp.shape != gn.shape or gp.ndim != 2:
        raise ValueError("g_plus and g_minus must be matching 2-D arrays")
    if R > gp.shape[0]:
        raise ValueError(f"input width {R} exceeds subarray rows {gp.shape[0]}")
    if R < gp.shape[0]:
        gp, gn = gp[:R].copy(), gn[:R].copy()
    lo, hi = -(1 << (nbits - 1)), (1 << (nbits - 1)) - 1
    if x.size and (x.min() < lo or x.max() > hi):
        raise ValueError(f"inputs outside {nbits}-bit signed range [{lo}, {hi}]")

    if adc_bits is None:
        levels, step = 0, 1.0
    else:
        levels = (1 << (adc_bits - 1)) - 1
        step = (full_scale if full_scale is not None else float(R) * g_max) / levels

    C = gp.shape[1]
    if sigma <= 0.0:
        return core(x, gp, gn, nbits, 0.0, np.zeros(0), g_max, levels, step)
    if rng is None:
        raise ValueError("a read-noise rng is required when sigma > 0")

    active = _bit_planes(x, nbits).sum(axis=(1, 2))  # driven row-cycles per position
    out = np.empty((P, C))
    start = 0
    while start < P:
        stop, budget = start, 0
        while stop < P and (stop == start or budget + active[stop] * C * 2 <= _MAX_NOISE):
            budget += int(active[stop]) * C * 2
            stop += 1
        noise = rng.standard_normal(budget)
        out[start:stop] = core(x[start:stop], gp, gn, nbits, float(sigma), noise, g_max, levels, step)
        start = stop
    return out
