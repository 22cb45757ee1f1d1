"""Convolution lowering and the digital post-processing shared by every path."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError
from .model import BatchNorm, LayerSpec, conv_output_hw


@dataclass(frozen=True)
class ConvLowering:
    """Patch-gather schedule for one convolution.

    ``patch_index[p, r]`` is the flat index into the zero-padded input of the
    value that drives crossbar row ``r`` at output position ``p``. Rows are
    ordered ``(dy, dx, in_channel)`` to match the weight reshape; positions
    are row-major over the output map.
    """

    in_shape: tuple[int, int, int]
    out_hw: tuple[int, int]
    padding: int
    patch_index: np.ndarray = field(repr=False)

    @property
    def n_positions(self) -> int:
        return self.patch_index.shape[0]

    @property
    def matrix_rows(self) -> int:
        return self.patch_index.shape[1]

    def patches(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != self.in_shape:
            raise ShapeMismatchError(f"input shape {x.shape} != expected {self.in_shape}")
        p = self.padding
        xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
        return xp.reshape(-1)[self.patch_index]

    def fold(self, z: np.ndarray) -> np.ndarray:
        """(positions, out_channels) -> (out_channels, H_out, W_out)."""
        ho, wo = self.out_hw
        return np.ascontiguousarray(z.reshape(ho, wo, -1).transpose(2, 0, 1))


def lower_conv(layer: LayerSpec, in_shape: tuple[int, int, int]) -> ConvLowering:
    if layer.kind != "conv":
        raise ShapeMismatchError("lower_conv needs a convolution layer")
    c, h, w = in_shape
    if c != layer.in_channels:
        raise ShapeMismatchError(f"input has {c} channels, layer expects {layer.in_channels}")
    k, s, p = layer.kernel_size, layer.stride, layer.padding
    ho, wo = conv_output_hw(h, w, layer)
    if ho < 1 or wo < 1:
        raise ShapeMismatchError("kernel larger than padded input")
    hp, wp = h + 2 * p, w + 2 * p
    oy, ox = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
    dy, dx, ci = np.meshgrid(np.arange(k), np.arange(k), np.arange(c), indexing="ij")
    base = (oy.reshape(-1, 1) * s) * wp + ox.reshape(-1, 1) * s
    offs = ci.reshape(1, -1) * (hp * wp) + dy.reshape(1, -1) * wp + dx.reshape(1, -1)
    return ConvLowering((c, h, w), (ho, wo), p, (base + offs).astype(np.intp))


def batch_norm(z: np.ndarray, bn: BatchNorm | None) -> np.ndarray:
    """Channel axis first: ``z`` is (channels,) or (channels, H, W)."""
    z = np.asarray(z, dtype=np.float64)
    if bn is None:
        return z
    shape = (-1,) + (1,) * (z.ndim - 1)
    return np.asarray(bn.scale).reshape(shape) * z + np.asarray(bn.shift).reshape(shape)


def relu(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0.0)


def max_pool(v: np.ndarray, window: int, stride: int) -> np.ndarray:
    c, h, w = v.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    out = np.full((c, ho, wo), -np.inf)
    for dy in range(window):
        for dx in range(window):
            out = np.maximum(out, v[:, dy:dy + stride * (ho - 1) + 1:stride, dx:dx + stride * (wo - 1) + 1:stride])
    return out


def quantize(v: np.ndarray, act_range: float, nbits: int) -> np.ndarray:
    """Real activations -> n-bit signed codes; ``act_range`` maps to the top code."""
    top = (1 << (nbits - 1)) - 1
    return np.clip(np.rint(np.asarray(v) / act_range * top), -top - 1, top).astype(np.int64)


def post_process(z: np.ndarray, layer: LayerSpec, nbits: int, bn: BatchNorm | None = None) -> np.ndarray:
    """BN -> ReLU -> pool -> quantize (the last step is skipped for logits)."""
    v = batch_norm(z, layer.batch_norm if bn is None else bn)
    if layer.activation == "relu":
        v = relu(v)
    if layer.pool is not None:
        v = max_pool(v, layer.pool.window, layer.pool.stride)
    if layer.act_range is None:
        return v
    return quantize(v, layer.act_range, nbits)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
