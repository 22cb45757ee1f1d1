"""Network description, probability maps, and Bernoulli ensemble sampling.

Weight tensors are laid out so that a row-major reshape gives the crossbar
matrix directly, with rows as inputs and columns as outputs:

* convolution: ``(kernel, kernel, in_channels, out_channels)``
* fully connected: ``(in_features, out_features)``
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import _rng
from .container import atomic_write_text, read_container, write_container
from .errors import ProbabilityRangeError, ShapeMismatchError, SpecParseError

SPEC_FORMAT = "bbnn-network"
SPEC_VERSION = 1


@dataclass(frozen=True)
class BatchNorm:
    """Per-channel affine ``y = scale * z + shift`` (running stats folded in)."""

    scale: tuple[float, ...]
    shift: tuple[float, ...]

    def __post_init__(self):
        if len(self.scale) != len(self.shift):
            raise SpecParseError("batch_norm scale and shift lengths differ")

    def scaled(self, alpha: float) -> "BatchNorm":
        return BatchNorm(tuple(alpha * g for g in self.scale), self.shift)


@dataclass(frozen=True)
class Pool:
    window: int
    stride: int


@dataclass(frozen=True)
class LayerSpec:
    """One synaptic layer plus its digital post-processing.

    ``act_range`` is the real value mapped to the largest activation code
    when the output is quantized for the next layer; the final layer keeps
    real-valued logits and leaves it ``None``.
    """

    kind: str  # "conv" | "fc"
    in_channels: int
    out_channels: int
    kernel_size: int = 1
    stride: int = 1
    padding: int = 0
    batch_norm: BatchNorm | None = None
    activation: str | None = None
    pool: Pool | None = None
    act_range: float | None = None

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "conv":
            k = self.kernel_size
            return (k, k, self.in_channels, self.out_channels)
        return (self.in_channels, self.out_channels)

    @property
    def matrix_shape(self) -> tuple[int, int]:
        if self.kind == "conv":
            return (self.kernel_size**2 * self.in_channels, self.out_channels)
        return (self.in_channels, self.out_channels)

    @property
    def n_synapses(self) -> int:
        return math.prod(self.weight_shape)


def conv(in_ch: int, out_ch: int, k: int = 3, stride: int = 1, padding: int | None = None, **post) -> LayerSpec:
    if padding is None:
        padding = k // 2
    return LayerSpec("conv", in_ch, out_ch, k, stride, padding, **post)


def fc(in_features: int, out_features: int, **post) -> LayerSpec:
    return LayerSpec("fc", in_features, out_features, **post)


def conv_output_hw(h: int, w: int, layer: LayerSpec) -> tuple[int, int]:
    k, s, p = layer.kernel_size, layer.stride, layer.padding
    return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, int, int]
    n_classes: int
    layers: tuple[LayerSpec, ...]
    name: str = "network"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.layer_io_shapes()  # validates

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer_io_shapes(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        """Input and output activation shapes per layer; raises on mismatch.

        Spatial tensors are ``(channels, height, width)``; fully connected
        activations are ``(features,)``.
        """
        if self.n_classes < 2:
            raise ShapeMismatchError("n_classes must be >= 2")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ShapeMismatchError(f"input_shape must be 3 positive dims, got {self.input_shape}")
        if not self.layers:
            raise ShapeMismatchError("network has no synaptic layers")
        shape: tuple[int, ...] = self.input_shape
        out = []
        for idx, layer in enumerate(self.layers, start=1):
            dims = (layer.in_channels, layer.out_channels, layer.kernel_size, layer.stride)
            if min(dims) < 1 or layer.padding < 0:
                raise ShapeMismatchError(f"layer {idx}: dimensions must be >= 1")
            if layer.kind == "conv":
                if len(shape) != 3:
                    raise ShapeMismatchError(f"layer {idx}: convolution after a fully connected layer")
                c, h, w = shape
                if c != layer.in_channels:
                    raise ShapeMismatchError(
                        f"layer {idx}: expects {layer.in_channels} input channels, previous output has {c}"
                    )
                ho, wo = conv_output_hw(h, w, layer)
                if ho < 1 or wo < 1:
                    raise ShapeMismatchError(f"layer {idx}: kernel larger than padded input")
                if layer.pool is not None:
                    pw, ps = layer.pool.window, layer.pool.stride
                    if pw < 1 or ps < 1 or pw > ho or pw > wo:
                        raise ShapeMismatchError(f"layer {idx}: invalid pooling window")
                    ho, wo = (ho - pw) // ps + 1, (wo - pw) // ps + 1
                new_shape: tuple[int, ...] = (layer.out_channels, ho, wo)
            elif layer.kind == "fc":
                n_in = math.prod(shape)
                if n_in != layer.in_channels:
                    raise ShapeMismatchError(
                        f"layer {idx}: expects {layer.in_channels} input features, previous output has {n_in}"
                    )
                if layer.pool is not None:
                    raise ShapeMismatchError(f"layer {idx}: pooling on a fully connected layer")
                new_shape = (layer.out_channels,)
            else:
                raise SpecParseError(f"layer {idx}: unknown layer type {layer.kind!r}")
            if layer.batch_norm is not None and len(layer.batch_norm.scale) != layer.out_channels:
                raise ShapeMismatchError(f"layer {idx}: batch_norm length != out_channels")
            out.append((shape, new_shape))
            shape = new_shape
        if shape != (self.n_classes,):
            raise ShapeMismatchError(f"final layer output {shape} does not match n_classes={self.n_classes}")
        return out


# --- network spec file -----------------------------------------------------


def _layer_to_dict(layer: LayerSpec) -> dict:
    d: dict = {"type": layer.kind}
    if layer.kind == "conv":
        d.update(
            in_channels=layer.in_channels,
            out_channels=layer.out_channels,
            kernel_size=layer.kernel_size,
            stride=layer.stride,
            padding=layer.padding,
        )
    else:
        d.update(in_features=layer.in_channels, out_features=layer.out_channels)
    if layer.batch_norm is not None:
        d["batch_norm"] = {
            "scale": [float(v) for v in layer.batch_norm.scale],
            "shift": [float(v) for v in layer.batch_norm.shift],
        }
    if layer.activation is not None:
        d["activation"] = layer.activation
    if layer.pool is not None:
        d["pool"] = {"window": layer.pool.window, "stride": layer.pool.stride}
    if layer.act_range is not None:
        d["act_range"] = float(layer.act_range)
    return d


def _layer_from_dict(d: dict, idx: int) -> LayerSpec:
    try:
        kind = d["type"]
        if kind == "conv":
            dims = dict(
                in_channels=int(d["in_channels"]),
                out_channels=int(d["out_channels"]),
                kernel_size=int(d["kernel_size"]),
                stride=int(d.get("stride", 1)),
                padding=int(d.get("padding", 0)),
            )
        elif kind == "fc":
            dims = dict(in_channels=int(d["in_features"]), out_channels=int(d["out_features"]))
        else:
            raise SpecParseError(f"layer {idx}: unknown type {kind!r}")
        bn = d.get("batch_norm")
        pool = d.get("pool")
        activation = d.get("activation")
        if activation not in (None, "relu"):
            raise SpecParseError(f"layer {idx}: unsupported activation {activation!r}")
        return LayerSpec(
            kind=kind,
            batch_norm=None if bn is None else BatchNorm(
                tuple(float(v) for v in bn["scale"]), tuple(float(v) for v in bn["shift"])
            ),
            activation=activation,
            pool=None if pool is None else Pool(int(pool["window"]), int(pool.get("stride", pool["window"]))),
            act_range=None if d.get("act_range") is None else float(d["act_range"]),
            **dims,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SpecParseError):
            raise
        raise SpecParseError(f"layer {idx}: malformed entry ({exc!r})") from exc


def network_to_dict(spec: NetworkSpec) -> dict:
    return {
        "format": SPEC_FORMAT,
        "version": SPEC_VERSION,
        "name": spec.name,
        "input_shape": list(spec.input_shape),
        "n_classes": spec.n_classes,
        "layers": [_layer_to_dict(layer) for layer in spec.layers],
    }


def network_from_dict(doc) -> NetworkSpec:
    if not isinstance(doc, dict):
        raise SpecParseError("network spec must be a mapping")
    if doc.get("format") != SPEC_FORMAT:
        raise SpecParseError(f"not a {SPEC_FORMAT} file (format={doc.get('format')!r})")
    if doc.get("version") != SPEC_VERSION:
        raise SpecParseError(f"unsupported network spec version {doc.get('version')!r}")
    try:
        layers = [_layer_from_dict(d, i) for i, d in enumerate(doc["layers"], start=1)]
        return NetworkSpec(
            input_shape=tuple(int(v) for v in doc["input_shape"]),
            n_classes=int(doc["n_classes"]),
            layers=tuple(layers),
            name=str(doc.get("name", "network")),
        )
    except (KeyError, TypeError) as exc:
        raise SpecParseError(f"malformed network spec ({exc!r})") from exc


def save_network_spec(spec: NetworkSpec, path) -> None:
    atomic_write_text(path, yaml.safe_dump(network_to_dict(spec), sort_keys=False))


def load_network_spec(path) -> NetworkSpec:
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpecParseError(f"{path}: {exc}") from exc
    return network_from_dict(doc)


# --- probability maps and ensembles ---------------------------------------


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-layer ``Pr(w = +1)`` tensors, float32, one entry per synapse."""

    layers: tuple[np.ndarray, ...]

    def __post_init__(self):
        layers = []
        for idx, p in enumerate(self.layers, start=1):
            p = np.array(p, dtype=np.float32)
            if not np.all((p >= 0.0) & (p <= 1.0)):
                raise ProbabilityRangeError(f"layer {idx}: probabilities outside [0, 1]")
            layers.append(_frozen(p))
        object.__setattr__(self, "layers", tuple(layers))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def check_against(self, spec: NetworkSpec) -> None:
        if self.n_layers != spec.n_layers:
            raise ShapeMismatchError(f"map has {self.n_layers} layers, network has {spec.n_layers}")
        for idx, (p, layer) in enumerate(zip(self.layers, spec.layers), start=1):
            if p.shape != layer.weight_shape:
                raise ShapeMismatchError(f"layer {idx}: map shape {p.shape} != weight shape {layer.weight_shape}")

    def matrix(self, index: int) -> np.ndarray:
        """Layer ``index`` (0-based) reshaped to its crossbar matrix."""
        p = self.layers[index]
        return p.reshape(-1, p.shape[-1])

    def __eq__(self, other):
        if not isinstance(other, ProbabilityMap) or self.n_layers != other.n_layers:
            return NotImplemented if not isinstance(other, ProbabilityMap) else False
        return all(a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.layers, other.layers))

    __hash__ = None


def save_probability_map(pmap: ProbabilityMap, path) -> None:
    write_container(path, b"BBNP", pmap.layers)


def load_probability_map(path, spec: NetworkSpec | None = None) -> ProbabilityMap:
    pmap = ProbabilityMap(tuple(read_container(path, b"BBNP")))
    if spec is not None:
        pmap.check_against(spec)
    return pmap


@dataclass(frozen=True)
class BinaryEnsemble:
    """One sampled network: ``index`` is 1-based, entries are int8 +-1."""

    index: int
    layers: tuple[np.ndarray, ...] = field(repr=False)

    def matrix(self, index: int) -> np.ndarray:
        w = self.layers[index]
        return w.reshape(-1, w.shape[-1])


def save_ensemble(ensemble: BinaryEnsemble, path) -> None:
    write_container(path, b"BBNE", ensemble.layers)


def load_ensemble(path, index: int = 1) -> BinaryEnsemble:
    layers = read_container(path, b"BBNE")
    for idx, w in enumerate(layers, start=1):
        if not np.all(np.abs(w) == 1):
            raise ProbabilityRangeError(f"layer {idx}: ensemble entries must be +-1")
    return BinaryEnsemble(index, tuple(_frozen(w) for w in layers))


def _sample_layer(p: np.ndarray, seed: int, layer: int, ensemble: int) -> np.ndarray:
    u = _rng.stream(seed, _rng.SAMPLE, layer, ensemble).random(p.size, dtype=np.float64)
    w = np.where(u.reshape(p.shape) < p, 1, -1).astype(np.int8)
    return _frozen(w)


def sample_ensembles(pmap: ProbabilityMap, n_mc: int, seed: int, workers: int = 1) -> tuple[BinaryEnsemble, ...]:
    """Draw ``n_mc`` independent networks, ``w = +1`` with probability ``p_w``.

    Each (layer, ensemble) pair owns one keyed stream whose k-th uniform
    decides synapse k, so the result is the same for any ``workers``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    jobs = [(i, l) for i in range(1, n_mc + 1) for l in range(pmap.n_layers)]

    def run(job):
        i, l = job
        return _sample_layer(pmap.layers[l], seed, l, i)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    out = []
    for i in range(n_mc):
        out.append(BinaryEnsemble(i + 1, tuple(results[i * pmap.n_layers:(i + 1) * pmap.n_layers])))
    return tuple(out)


def deterministic_ensemble(pmap: ProbabilityMap) -> BinaryEnsemble:
    """The most probable network: +1 where ``p_w >= 0.5``."""
    return BinaryEnsemble(0, tuple(_frozen(np.where(p >= 0.5, 1, -1).astype(np.int8)) for p in pmap.layers))
