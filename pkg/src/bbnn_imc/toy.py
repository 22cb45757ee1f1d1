"""Desk-scale stand-ins for a trained BBNN: generated probability maps and a toy task.

The generator reproduces the sparsity statistics of a trained binary
network: probabilistic synapses concentrated in the deep layers, every row
at most ``row_cap`` probabilistic, and a small fraction of all-deterministic
rows. Batch-norm gains and activation ranges are calibrated on the most
probable network so that activations use the quantizer range sensibly.

The toy task is prototype classification: each class is a random image
and inputs are noisy copies of it. The trailing fully connected layers are
fitted to the task by ridge regression on the features of the layers below
(deterministic cells take the sign of the coefficient, probabilistic cells
a logistic of it), which gives the network the margins of a trained model.
Out-of-distribution inputs come from a disjoint set of prototypes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import _rng
from .errors import InfeasibleTargetError
from .model import BatchNorm, NetworkSpec, Pool, ProbabilityMap, conv, deterministic_ensemble, fc
from .ops import post_process, quantize
from .reference import pre_activation

DEFAULT_ROW_CAP = 0.02
DEFAULT_ZERO_ROW_FRACTION = 0.015


def _place_probabilistic(rows, cols, n_target, cap, zero_row_fraction, rng):
    """Row/col indices of ``n_target`` probabilistic cells under a per-row cap."""
    if n_target == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    if n_target > cap * rows:
        raise InfeasibleTargetError(
            f"{n_target} probabilistic synapses requested but row cap allows {cap} x {rows} rows"
        )
    m = min(n_target, rows - int(round(zero_row_fraction * rows)))
    m = max(m, math.ceil(n_target / cap))
    chosen = np.sort(rng.choice(rows, size=m, replace=False))
    counts = np.ones(m, dtype=np.int64)
    extra = n_target - m
    if extra:
        slots = rng.choice(m * (cap - 1), size=extra, replace=False)
        counts += np.bincount(slots // (cap - 1), minlength=m)
    kmax = int(counts.max())
    order = np.argpartition(rng.random((m, cols)), kmax - 1, axis=1)[:, :kmax] if kmax < cols else \
        np.argsort(rng.random((m, cols)), axis=1)
    keep = np.arange(order.shape[1])[None, :] < counts[:, None]
    r = np.broadcast_to(chosen[:, None], order.shape)[keep]
    c = order[keep]
    return r, c


def generate_layer_probabilities(shape, target: float, rng, row_cap: float = DEFAULT_ROW_CAP,
                                 zero_row_fraction: float = DEFAULT_ZERO_ROW_FRACTION,
                                 prob_range: tuple[float, float] = (0.05, 0.95)) -> np.ndarray:
    if not 0.0 <= target <= 1.0:
        raise ValueError("target fraction must lie in [0, 1]")
    rows, cols = math.prod(shape[:-1]), shape[-1]
    cap = int(math.floor(row_cap * cols + 1e-9))
    n_target = int(round(target * rows * cols))
    if n_target and cap == 0:
        raise InfeasibleTargetError(f"row cap {row_cap} allows no probabilistic synapse in {cols}-column rows")
    p = np.where(rng.random((rows, cols)) < 0.5, 0.0, 1.0).astype(np.float32)
    r, c = _place_probabilistic(rows, cols, n_target, cap, zero_row_fraction, rng)
    p[r, c] = rng.uniform(prob_range[0], prob_range[1], size=r.size).astype(np.float32)
    return p.reshape(shape)


def generate_toy_model(
    spec: NetworkSpec,
    targets: Sequence[float],
    seed: int,
    row_cap: float | Sequence[float] = DEFAULT_ROW_CAP,
    zero_row_fraction: float = DEFAULT_ZERO_ROW_FRACTION,
    calibration_inputs: int = 32,
    logit_scale: float = 3.0,
    nbits: int = 8,
    fit_layers: int = 2,
    fit_inputs: int = 600,
) -> tuple[NetworkSpec, ProbabilityMap]:
    """Probability map with per-layer probabilistic fraction ``targets[l]``.

    ``spec`` supplies the layer shapes; the returned spec carries calibrated
    batch norm and activation ranges (skipped when ``calibration_inputs`` is
    0, which leaves unit BN, a default range and no fitted layers). The last
    ``fit_layers`` layers, if fully connected, are fitted to the toy task.
    """
    if len(targets) != spec.n_layers:
        raise ValueError(f"need {spec.n_layers} targets, got {len(targets)}")
    caps = [row_cap] * spec.n_layers if np.isscalar(row_cap) else list(row_cap)
    rng = _rng.stream(seed, _rng.GENERATE, 0)
    layers = tuple(
        generate_layer_probabilities(layer.weight_shape, t, rng, cap, zero_row_fraction)
        for layer, t, cap in zip(spec.layers, targets, caps)
    )
    pmap = ProbabilityMap(layers)
    if calibration_inputs <= 0:
        return _uncalibrated(spec), pmap
    calib = task_inputs(spec, calibration_inputs, seed, "ind", split=0)[0]
    spec = calibrate(spec, pmap, calib, logit_scale, nbits)
    if fit_layers > 0:
        x, y = task_inputs(spec, fit_inputs, seed, "ind", split=0)
        for l in range(max(0, spec.n_layers - fit_layers), spec.n_layers):
            if spec.layers[l].kind != "fc":
                continue
            pmap = fit_layer(spec, pmap, l, x, y, seed, nbits)
            spec = calibrate(spec, pmap, calib, logit_scale, nbits)
    return spec, pmap


def _uncalibrated(spec: NetworkSpec) -> NetworkSpec:
    layers = []
    for i, layer in enumerate(spec.layers):
        last = i == spec.n_layers - 1
        layers.append(replace(
            layer,
            batch_norm=layer.batch_norm or BatchNorm((1.0,) * layer.out_channels, (0.0,) * layer.out_channels),
            act_range=None if last else (layer.act_range or float(layer.matrix_shape[0])),
        ))
    return replace(spec, layers=tuple(layers))


def calibrate(spec: NetworkSpec, pmap: ProbabilityMap, inputs: np.ndarray, logit_scale: float = 3.0,
              nbits: int = 8) -> NetworkSpec:
    """Fit per-channel BN to standardize pre-activations of the most probable network."""
    weights = deterministic_ensemble(pmap).layers
    acts = [np.asarray(x, dtype=np.int64) for x in inputs]
    layers = []
    for l, layer in enumerate(spec.layers):
        z = np.array([pre_activation(spec, l, a, weights[l]) for a in acts])
        axes = (0,) + tuple(range(2, z.ndim))
        mean, std = z.mean(axis=axes), z.std(axis=axes)
        std = np.where(std > 0, std, 1.0)
        last = l == spec.n_layers - 1
        gain = (logit_scale if last else 1.0) / std
        bn = BatchNorm(tuple(float(g) for g in gain), tuple(float(-m * g) for m, g in zip(mean, gain)))
        if last:
            layers.append(replace(layer, batch_norm=bn, act_range=None))
            break
        v = [_post_real(zz, replace(layer, batch_norm=bn)) for zz in z]
        act_range = float(np.percentile(np.concatenate([x.ravel() for x in v]), 99.5))
        act_range = act_range if act_range > 0 else 1.0
        layer = replace(layer, batch_norm=bn, act_range=act_range)
        layers.append(layer)
        acts = [quantize(x, act_range, nbits) for x in v]
    return replace(spec, layers=tuple(layers))


def _post_real(z, layer):
    return post_process(z, replace(layer, act_range=None), 8)


def _features(spec: NetworkSpec, weights, inputs, upto: int, nbits: int) -> np.ndarray:
    out = []
    for a in inputs:
        for l in range(upto):
            a = post_process(pre_activation(spec, l, a, weights[l]), spec.layers[l], nbits)
        out.append(np.asarray(a, dtype=np.float64).reshape(-1))
    return np.array(out)


def fit_layer(spec: NetworkSpec, pmap: ProbabilityMap, l: int, inputs: np.ndarray, labels: np.ndarray,
              seed: int, nbits: int = 8, ridge: float = 1e-2, sharpness: float = 2.0) -> ProbabilityMap:
    """Refit layer ``l`` (fully connected) by ridge regression toward the class labels.

    The last layer regresses one-hot targets; a hidden layer regresses a
    random +-1 code of the class, so each unit separates a random half of
    the classes. Probabilistic positions are kept, only values change.
    """
    weights = deterministic_ensemble(pmap).layers
    feats = _features(spec, weights, inputs, l, nbits)
    target = np.eye(spec.n_classes)[labels] - 1.0 / spec.n_classes
    n_out = spec.layers[l].out_channels
    if l < spec.n_layers - 1:
        code = _rng.stream(seed, _rng.GENERATE, 1, l).choice([-1.0, 1.0], size=(spec.n_classes, n_out))
        target = target @ code
    fc_ = feats - feats.mean(axis=0)
    gram = fc_.T @ fc_
    reg = ridge * np.trace(gram) / len(gram) + 1e-12
    coef = np.linalg.solve(gram + reg * np.eye(len(gram)), fc_.T @ target)
    old = pmap.layers[l]
    prob = (old > 0) & (old < 1)
    z = coef.reshape(old.shape) / (coef.std() or 1.0)
    lo, hi = 0.05, 0.95
    new = np.where(prob, np.clip(1.0 / (1.0 + np.exp(-sharpness * z)), lo, hi), (z > 0).astype(np.float64))
    return ProbabilityMap(pmap.layers[:l] + (new.astype(np.float32),) + pmap.layers[l + 1:])


# --- inputs and the toy task ----------------------------------------------


def task_inputs(spec: NetworkSpec, n: int, seed: int, kind: str = "ind", split: int = 1,
                noise: float = 1.0, nbits: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Integer images and their prototype classes.

    Prototypes depend only on ``seed`` and ``kind`` (``ind`` or ``ood``);
    ``split`` selects an independent draw of samples (0 is used for fitting
    and calibration).
    """
    which = {"ind": 0, "ood": 1}[kind]
    proto = _rng.stream(seed, _rng.TASK, which, 0).standard_normal((spec.n_classes,) + spec.input_shape)
    rng = _rng.stream(seed, _rng.TASK, which, 1, split)
    cls = rng.integers(0, spec.n_classes, size=n)
    x = proto[cls] + noise * rng.standard_normal((n,) + spec.input_shape)
    top = (1 << (nbits - 1)) - 1
    return np.clip(np.rint(x * top / 3.0), -top - 1, top).astype(np.int64), cls


@dataclass(frozen=True)
class ToyTask:
    inputs: np.ndarray
    labels: np.ndarray  # -1 for out-of-distribution inputs


def make_task(spec: NetworkSpec, n: int, seed: int, kind: str = "ind", split: int = 1) -> ToyTask:
    x, cls = task_inputs(spec, n, seed, kind, split)
    return ToyTask(x, cls if kind == "ind" else np.full(n, -1))


# --- presets ---------------------------------------------------------------


def _relu_pool(pool: bool = False):
    return dict(activation="relu", pool=Pool(2, 2) if pool else None)


def toy_cnn_spec(n_classes: int = 10) -> NetworkSpec:
    """Four synaptic layers on 1x8x8 inputs."""
    return NetworkSpec(
        (1, 8, 8), n_classes,
        (conv(1, 8, **_relu_pool()), conv(8, 16, **_relu_pool(True)),
         fc(256, 64, activation="relu"), fc(64, n_classes)),
        name="toy-cnn",
    )


TOY_CNN_TARGETS = (1 / 72, 0.02, 0.03, 0.1)  # the first layer has 72 synapses
TOY_CNN_ROW_CAPS = (0.125, 0.125, 0.05, 0.2)


def desk_vgg_spec(n_classes: int = 10) -> NetworkSpec:
    """Nine synaptic layers (six conv, three FC) on 3x16x16 inputs."""
    return NetworkSpec(
        (3, 16, 16), n_classes,
        (conv(3, 16, **_relu_pool()), conv(16, 16, **_relu_pool(True)),
         conv(16, 32, **_relu_pool()), conv(32, 32, **_relu_pool(True)),
         conv(32, 64, **_relu_pool()), conv(64, 64, **_relu_pool(True)),
         fc(256, 256, activation="relu"), fc(256, 256, activation="relu"), fc(256, n_classes)),
        name="desk-vgg",
    )


# near-zero in layers 1-6, concentrated in 7-9
DESK_VGG_TARGETS = (0.0, 0.0005, 0.0005, 0.001, 0.001, 0.002, 0.012, 0.012, 0.05)
DESK_VGG_ROW_CAPS = (0.0625, 0.0625, 0.03125, 0.03125, 0.02, 0.02, 0.02, 0.02, 0.2)


def vgg_binaryconnect_spec(n_classes: int = 100) -> NetworkSpec:
    """Full-size VGG BinaryConnect topology on 3x32x32 inputs (cost projection only)."""
    return NetworkSpec(
        (3, 32, 32), n_classes,
        (conv(3, 128, **_relu_pool()), conv(128, 128, **_relu_pool(True)),
         conv(128, 256, **_relu_pool()), conv(256, 256, **_relu_pool(True)),
         conv(256, 512, **_relu_pool()), conv(512, 512, **_relu_pool(True)),
         fc(8192, 1024, activation="relu"), fc(1024, 1024, activation="relu"), fc(1024, n_classes)),
        name="vgg-binaryconnect",
    )


# about two probabilistic cells per 1024-wide FC row, so 128-wide tiles keep ~1/4 of their rows
VGG_BC_TARGETS = (0.0, 0.0005, 0.0005, 0.0005, 0.0004, 0.0003, 0.002, 0.002, 0.015)
VGG_BC_ROW_CAPS = 0.02

PRESETS = {
    "toy-cnn": (toy_cnn_spec, TOY_CNN_TARGETS, TOY_CNN_ROW_CAPS),
    "desk-vgg": (desk_vgg_spec, DESK_VGG_TARGETS, DESK_VGG_ROW_CAPS),
    "vgg-binaryconnect": (vgg_binaryconnect_spec, VGG_BC_TARGETS, VGG_BC_ROW_CAPS),
}


# the full-size network is only costed, so it skips calibration and fitting
PRESET_OPTIONS = {
    "toy-cnn": {},
    "desk-vgg": {"fit_inputs": 300},
    "vgg-binaryconnect": {"calibration_inputs": 0},
}


def preset_model(name: str, seed: int = 0, **overrides) -> tuple[NetworkSpec, ProbabilityMap]:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    make_spec, targets, caps = PRESETS[name]
    options = {**PRESET_OPTIONS[name], **overrides}
    return generate_toy_model(make_spec(), targets, seed, caps, **options)
