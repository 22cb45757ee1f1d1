"""Crossbar inference for the dense, LS and LS+RS mappings.

Weights live on simulated PCM subarrays (differential pairs, normalized so
``g_max = 1``); activations are streamed bit-serially, column sums are
accumulated digitally across tiles, and BN / ReLU / pooling run in real
arithmetic before re-quantizing for the next layer.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _rng
from .device import DeviceConfig, DeviceState, apply_compensation, drift_compensation_factor, program_subarray
from .errors import CompensationUnavailableError, PackingError, ShapeMismatchError
from .kernels import bitserial_mvm
from .model import BinaryEnsemble, LayerSpec, NetworkSpec, ProbabilityMap, sample_ensembles
from .ops import ConvLowering, lower_conv, post_process, softmax
from .sparsity import DEFAULT_MASS_THRESHOLD, DEFAULT_TAU, clamp, clamp_before_fel, layer_stats, select_fel
from .splitter import PackedSubarray, PlaneSplit, Tile, pack_tile_position, split_dp_sp, squeeze_rows, tile

# sub-keys distinguishing physical copies in the RNG key space
_FULL, _DP, _SP = 0, 1, 2


class MappingMode(str, enum.Enum):
    DENSE = "dense"
    LS = "ls"
    LSRS = "lsrs"


@dataclass(frozen=True)
class PredictorSet:
    """Per-input ensemble predictors, shape (inputs, n_mc, classes)."""

    probs: np.ndarray
    logits: np.ndarray

    @property
    def n_mc(self) -> int:
        return self.probs.shape[1]

    @property
    def marginal(self) -> np.ndarray:
        return self.probs.mean(axis=1)

    @property
    def predicted(self) -> np.ndarray:
        return np.argmax(self.marginal, axis=-1)


@dataclass
class LayerState:
    index: int
    spec: LayerSpec
    in_shape: tuple[int, ...]
    tiles: list[Tile]
    ensembled: bool
    lowering: ConvLowering | None = None
    copies: dict[int, list[DeviceState]] = field(default_factory=dict)  # 0: shared copy
    dp: list[DeviceState] | None = None
    packed: list[PackedSubarray] | None = None
    sp: list[DeviceState] | None = None

    @property
    def n_cols(self) -> int:
        return self.spec.out_channels

    def patches(self, x: np.ndarray) -> np.ndarray:
        if self.lowering is not None:
            return self.lowering.patches(x)
        return np.asarray(x).reshape(1, -1)


@dataclass
class AnalogNetwork:
    spec: NetworkSpec
    mode: MappingMode
    fel: int
    n_mc: int
    device: DeviceConfig
    subarray: tuple[int, int]
    seed: int
    layers: list[LayerState]

    def layer_instances(self) -> int:
        """Programmed layer copies (an LS+RS DP counts as one copy)."""
        return sum(len(s.copies) + (1 if s.dp is not None else 0) for s in self.layers)

    def sp_subarrays(self) -> int:
        return sum(len(s.packed) for s in self.layers if s.packed is not None)


def _program_tiles(matrix: np.ndarray, tiles: Sequence[Tile], cfg: DeviceConfig, subarray, seed, key) -> list[DeviceState]:
    states = []
    R, C = subarray
    for t in tiles:
        cells = np.zeros((R, C), dtype=np.int8)
        cells[:t.rows, :t.cols] = matrix[t.row_slice, t.col_slice]
        states.append(program_subarray(cells, cfg, _rng.stream(seed, _rng.PROGRAM, *key, t.index)))
    return states


def program_network(
    spec: NetworkSpec,
    pmap: ProbabilityMap,
    ensembles: Sequence[BinaryEnsemble],
    mode: MappingMode | str,
    device: DeviceConfig,
    seed: int,
    fel: int | None = None,
    subarray: tuple[int, int] = (128, 128),
    packing: str = "split",
) -> AnalogNetwork:
    """Program every mapped cell for ``mode``.

    ``pmap`` must already be clamped before ``fel`` for LS and LS+RS, and
    ``ensembles`` must be sampled from it; dense mode programs one full copy
    of every layer per ensemble.
    """
    mode = MappingMode(mode)
    pmap.check_against(spec)
    n_mc = len(ensembles)
    if n_mc < 1:
        raise ValueError("need at least one ensemble")
    if mode is not MappingMode.DENSE:
        if fel is None:
            raise ValueError(f"mode {mode.value} requires a first ensembling layer")
        for l in range(fel - 1):
            p = pmap.layers[l]
            if np.any((p > 0) & (p < 1)):
                raise ValueError(f"layer {l + 1} precedes FEL {fel} but still has probabilistic synapses")
    fel = fel if fel is not None else 1
    cfg = device.normalized()
    io = spec.layer_io_shapes()
    states = []
    for l, layer in enumerate(spec.layers):
        rows, cols = layer.matrix_shape
        tiles = tile((rows, cols), subarray)
        ensembled = mode is MappingMode.DENSE or l + 1 >= fel
        st = LayerState(
            index=l, spec=layer, in_shape=io[l][0], tiles=tiles, ensembled=ensembled,
            lowering=lower_conv(layer, io[l][0]) if layer.kind == "conv" else None,
        )
        if not ensembled:
            st.copies[0] = _program_tiles(ensembles[0].matrix(l), tiles, cfg, subarray, seed, (l, _FULL, 0))
        elif mode is not MappingMode.LSRS:
            for e in ensembles:
                st.copies[e.index] = _program_tiles(e.matrix(l), tiles, cfg, subarray, seed, (l, _FULL, e.index))
        else:
            split = split_dp_sp(pmap.matrix(l))
            st.dp = _program_tiles(split.deterministic, tiles, cfg, subarray, seed, (l, _DP, 0))
            st.packed, st.sp = _program_sp(split, ensembles, l, tiles, cfg, subarray, seed, packing)
        states.append(st)
    return AnalogNetwork(spec, mode, fel, n_mc, device, tuple(subarray), seed, states)


def _program_sp(split: PlaneSplit, ensembles, l, tiles, cfg, subarray, seed, packing):
    R, C = subarray
    packed: list[PackedSubarray] = []
    for t in tiles:
        blocks = []
        for e in ensembles:
            ws = split.stochastic(e.matrix(l))
            blocks.append(squeeze_rows(ws[t.row_slice, t.col_slice], (t.row0, t.col0)))
        packed.extend(pack_tile_position(blocks, R, C, t.index, packing))
    states = []
    for k, sub in enumerate(packed):
        cells = np.zeros((R, C), dtype=np.int8)
        cells[:, :sub.cols] = sub.weights
        states.append(program_subarray(cells, cfg, _rng.stream(seed, _rng.PROGRAM, l, _SP, 0, k)))
    return packed, states


@dataclass(frozen=True)
class _ReadContext:
    t: float
    read_seed: int
    input_index: int


def _tile_sums(net: AnalogNetwork, st: LayerState, states: Sequence[DeviceState], patches, ctx, key) -> np.ndarray:
    cfg = net.device
    R = net.subarray[0]
    sigma = cfg.sigma_read
    out = np.zeros((patches.shape[0], st.n_cols))
    for t, dev in zip(st.tiles, states):
        gp, gn = dev.at(ctx.t, cfg.t0)
        rng = _rng.stream(ctx.read_seed, _rng.READ, *key, t.index, ctx.input_index) if sigma > 0 else None
        sums = bitserial_mvm(
            patches[:, t.row_slice], gp[:t.rows, :t.cols], gn[:t.rows, :t.cols], cfg.input_bits,
            sigma=sigma, rng=rng, adc_bits=cfg.adc_bits, full_scale=float(R),
        )
        out[:, t.col_slice] += sums
    return out


def _sp_sums(net: AnalogNetwork, st: LayerState, patches, ensemble: int, ctx) -> np.ndarray:
    cfg = net.device
    R = net.subarray[0]
    sigma = cfg.sigma_read
    out = np.zeros((patches.shape[0], st.n_cols))
    mine = [(k, sub) for k, sub in enumerate(st.packed) if ensemble in sub.ensembles]
    for k, sub in mine:
        x_sub = np.zeros((patches.shape[0], R), dtype=np.int64)
        for seg in sub.segments:
            if seg.ensemble == ensemble:
                x_sub[:, seg.start:seg.stop] = patches[:, seg.gather]
        used = max(seg.stop for seg in sub.segments)
        gp, gn = st.sp[k].at(ctx.t, cfg.t0)
        rng = _rng.stream(ctx.read_seed, _rng.READ, st.index, _SP, ensemble, k, ctx.input_index) if sigma > 0 else None
        sums = bitserial_mvm(
            x_sub[:, :used], gp[:used, :sub.cols], gn[:used, :sub.cols], cfg.input_bits,
            sigma=sigma, rng=rng, adc_bits=cfg.adc_bits, full_scale=float(R),
        )
        out[:, sub.col0:sub.col0 + sub.cols] += sums
    return out


def layer_pre_activation(net: AnalogNetwork, l: int, x: np.ndarray, ensemble: int, ctx: _ReadContext) -> np.ndarray:
    """Column sums for layer ``l`` (0-based), folded to the layer's output layout."""
    st = net.layers[l]
    patches = st.patches(x)
    if not st.ensembled:
        z = _tile_sums(net, st, st.copies[0], patches, ctx, (l, _FULL, 0, 0))
    elif st.dp is None:
        if ensemble not in st.copies:
            raise PackingError(f"ensemble {ensemble} is not mapped on layer {l + 1}")
        z = _tile_sums(net, st, st.copies[ensemble], patches, ctx, (l, _FULL, ensemble, 0))
    else:
        if not 1 <= ensemble <= net.n_mc:
            raise PackingError(f"ensemble {ensemble} is not mapped on layer {l + 1}")
        z = _tile_sums(net, st, st.dp, patches, ctx, (l, _DP, 0, ensemble))
        z += _sp_sums(net, st, patches, ensemble, ctx)
    if st.lowering is not None:
        return st.lowering.fold(z)
    return z[0]


def run_layer(net: AnalogNetwork, l: int, x: np.ndarray, ensemble: int = 0, t: float | None = None,
              compensate: bool = False, read_seed: int | None = None, input_index: int = 0) -> np.ndarray:
    ctx = _ReadContext(net.device.t0 if t is None else float(t), net.seed if read_seed is None else read_seed,
                       input_index)
    return _run_layer(net, l, x, ensemble, ctx, _compensated_bn(net, ctx.t, compensate))


def _compensated_bn(net: AnalogNetwork, t: float, compensate: bool):
    if not compensate:
        return [None] * net.spec.n_layers
    alpha = drift_compensation_factor(t, net.device.t0, net.device.nu_mean)
    out = []
    for l, layer in enumerate(net.spec.layers, start=1):
        try:
            out.append(apply_compensation(layer.batch_norm, alpha))
        except CompensationUnavailableError as exc:
            raise CompensationUnavailableError(f"layer {l}: {exc}") from None
    return out


def _run_layer(net, l, x, ensemble, ctx, bns):
    z = layer_pre_activation(net, l, x, ensemble, ctx)
    return post_process(z, net.spec.layers[l], net.device.input_bits, bns[l])


def run_inference(net: AnalogNetwork, inputs, t: float | None = None, compensate: bool = False,
                  read_seed: int | None = None) -> PredictorSet:
    """Ensemble predictors for a batch of inputs (each (C, H, W) of n-bit ints).

    Layers before the FEL run once per input and their output is reused by
    every ensemble member; dense mode evaluates each member end to end.
    """
    t = net.device.t0 if t is None else float(t)
    rs = net.seed if read_seed is None else read_seed
    bns = _compensated_bn(net, t, compensate)
    inputs = np.asarray(inputs)
    if inputs.shape[1:] != net.spec.input_shape:
        raise ShapeMismatchError(f"inputs shape {inputs.shape[1:]} != network input {net.spec.input_shape}")
    n_classes = net.spec.n_classes
    logits = np.zeros((len(inputs), net.n_mc, n_classes))
    start = 0 if net.mode is MappingMode.DENSE else net.fel - 1
    for j, x in enumerate(inputs):
        ctx = _ReadContext(t, rs, j)
        a = np.asarray(x, dtype=np.int64)
        for l in range(start):
            a = _run_layer(net, l, a, 0, ctx, bns)
        for i in range(1, net.n_mc + 1):
            h = a
            for l in range(start, net.spec.n_layers):
                h = _run_layer(net, l, h, i, ctx, bns)
            logits[j, i - 1] = h
    return PredictorSet(softmax(logits), logits)


@dataclass(frozen=True)
class Simulation:
    """Everything derived from a probability map for one simulated run."""

    network: AnalogNetwork
    ensembles: tuple[BinaryEnsemble, ...]
    pmap: ProbabilityMap  # after tau clamping and pre-FEL rounding
    fel: int


def build_simulation(
    spec: NetworkSpec,
    pmap: ProbabilityMap,
    mode: MappingMode | str,
    n_mc: int,
    seed: int,
    device: DeviceConfig,
    fel: int | None = None,
    tau: float = DEFAULT_TAU,
    mass_threshold: float = DEFAULT_MASS_THRESHOLD,
    subarray: tuple[int, int] = (128, 128),
    packing: str = "split",
) -> Simulation:
    """Clamp, pick the FEL, round earlier layers, sample ensembles and program.

    The same pre-FEL rounding is applied in every mode, so dense, LS and
    LS+RS implement the same network and differ only in hardware mapping.
    """
    pmap = clamp(pmap, tau)
    if fel is None:
        profile = layer_stats(pmap)
        fel = select_fel(profile, mass_threshold).fel if not profile.degenerate else spec.n_layers
    pmap = clamp_before_fel(pmap, fel)
    ensembles = sample_ensembles(pmap, n_mc, seed)
    net = program_network(spec, pmap, ensembles, mode, device, seed, fel, subarray, packing)
    return Simulation(net, ensembles, pmap, fel)
