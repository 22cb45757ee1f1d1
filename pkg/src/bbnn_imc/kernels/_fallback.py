"""Pure numpy bit-serial crossbar MVM, used when the compiled kernel is absent."""
from __future__ import annotations

import numpy as np


def bitserial_core(x, gp, gn, nbits, sigma, noise, g_max, adc_levels, adc_step):
    x = np.asarray(x, dtype=np.int64)
    P, R = x.shape
    C = gp.shape[1]
    mask = np.int64((1 << nbits) - 1) if nbits < 63 else np.int64(-1)
    u = x & mask
    shifts = np.arange(nbits, dtype=np.int64)
    bits = (u[:, None, :] >> shifts[None, :, None]) & 1  # (P, n, R)

    if sigma > 0.0:
        p_idx, b_idx, r_idx = np.nonzero(bits)
        z = np.asarray(noise).reshape(-1, C, 2)
        a = np.clip(gp[r_idx] + sigma * z[:, :, 0], 0.0, g_max)
        d = np.clip(gn[r_idx] + sigma * z[:, :, 1], 0.0, g_max)
        diff = a - d
        cur = np.zeros((P * nbits, C))
        if diff.shape[0]:
            keys = p_idx * nbits + b_idx
            uniq, starts = np.unique(keys, return_index=True)
            cur[uniq] = np.add.reduceat(diff, starts, axis=0)
        cur = cur.reshape(P, nbits, C)
    else:
        cur = bits.astype(np.float64) @ (np.asarray(gp) - np.asarray(gn))

    if adc_levels > 0:
        cur = np.clip(np.rint(cur / adc_step), -adc_levels, adc_levels) * adc_step

    acc = np.zeros((P, C))
    for b in range(nbits):
        coeff = float(2.0**b)
        if b == nbits - 1:
            coeff = -coeff
        acc += coeff * cur[:, b, :]
    return acc
