"""Pure-software ternary/binary network, used as the digital oracle.

Convolutions are evaluated directly as sums of shifted input windows, not
through the patch-gather lowering the crossbar engine uses. Integer products
are formed in float64, exact for the magnitudes involved (< 2**53).
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .model import NetworkSpec
from .ops import post_process, softmax


def direct_conv(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """``x`` (C, H, W), ``w`` (k, k, C, O) -> (O, H_out, W_out)."""
    k = w.shape[0]
    xp = np.pad(np.asarray(x, dtype=np.float64), ((0, 0), (padding, padding), (padding, padding)))
    _, hp, wp = xp.shape
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    out = np.zeros((w.shape[3], ho, wo))
    wf = np.asarray(w, dtype=np.float64)
    for dy in range(k):
        for dx in range(k):
            window = xp[:, dy:dy + stride * (ho - 1) + 1:stride, dx:dx + stride * (wo - 1) + 1:stride]
            out += np.einsum("chw,co->ohw", window, wf[dy, dx])
    return out


def pre_activation(spec: NetworkSpec, l: int, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    layer = spec.layers[l]
    if layer.kind == "conv":
        return direct_conv(x, w, layer.stride, layer.padding)
    return np.asarray(x, dtype=np.float64).reshape(-1) @ np.asarray(w, dtype=np.float64)


def forward(spec: NetworkSpec, weights: Sequence[np.ndarray], x: np.ndarray, nbits: int = 8,
            return_pre: bool = False):
    """Logits of one network on one input; optionally the per-layer pre-activations."""
    pre = []
    a = np.asarray(x)
    for l, layer in enumerate(spec.layers):
        z = pre_activation(spec, l, a, weights[l])
        pre.append(z)
        a = post_process(z, layer, nbits)
    return (a, pre) if return_pre else a


def ensemble_predictors(spec: NetworkSpec, ensembles, inputs: np.ndarray, nbits: int = 8):
    """(logits, probabilities), each shaped (inputs, ensembles, classes)."""
    logits = np.array([[forward(spec, e.layers, x, nbits) for e in ensembles] for x in inputs])
    return logits, softmax(logits)
