"""Analytical latency, energy and area projection for the three mapping modes.

All quantities are SI (seconds, joules, square metres). Absolute constants
live in :class:`CostConfig` and are calibration inputs; what the model
guarantees are the structural relations between modes, schedules and
subarray sizes.

Every tile of a layer sits on its own subarray and all tiles fire in
parallel, so one matrix-vector product costs ``n`` bit-cycles of the
subarray plus an adder tree over row tiles. A bit-cycle costs
``t_wordline + t_row * R + t_adc * ceil(C / cols_per_adc)``: bit-line
settling grows with the rows and each shared ADC converts its columns in
turn.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .container import atomic_write_text
from .engine import MappingMode
from .errors import SpecParseError
from .model import NetworkSpec, ProbabilityMap, conv_output_hw
from .sparsity import probabilistic_mask
from .splitter import SqueezedSubmatrix, pack_tile_position, tile

COST_FORMAT = "bbnn-cost"
STAGE1_POLICIES = ("sequential", "pipelined")


@dataclass(frozen=True)
class CostConfig:
    """Per-operation constants of the crossbar accelerator."""

    input_bits: int = 8
    t_wordline: float = 2e-9  # per bit-cycle, fixed
    t_row: float = 5e-11  # per bit-cycle per physical row (bit-line settling)
    t_adc: float = 1e-9  # per conversion
    cols_per_adc: int = 8
    t_accumulate: float = 1e-9  # per adder-tree level per output position
    e_cell: float = 1e-14  # per driven cell per bit-cycle
    activity: float = 0.5  # fraction of bit-cycles with a row input bit set
    e_adc: float = 2e-12  # per conversion
    e_shift_add: float = 5e-14  # per column per bit-cycle per tile
    e_post: float = 1e-12  # BN, activation and pooling per output value
    a_cell: float = 4e-13  # two-device cell
    a_subarray_fixed: float = 2e-8  # buffers, shift-add and control per subarray
    a_adc: float = 3e-9
    a_row_driver: float = 1e-11
    a_global: float = 1e-6  # chip-level buffers and interconnect
    technology: str = "90nm"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and v < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if self.input_bits < 1 or self.cols_per_adc < 1:
            raise ValueError("input_bits and cols_per_adc must be >= 1")
        if not 0.0 <= self.activity <= 1.0:
            raise ValueError("activity must lie in [0, 1]")

    def cycle_latency(self, rows: int, cols: int) -> float:
        return self.t_wordline + self.t_row * rows + self.t_adc * math.ceil(cols / self.cols_per_adc)

    def subarray_area(self, rows: int, cols: int) -> float:
        return (rows * cols * self.a_cell + self.a_subarray_fixed
                + self.a_adc * math.ceil(cols / self.cols_per_adc) + self.a_row_driver * rows)


def save_cost_config(cfg: CostConfig, path) -> None:
    doc = {"format": COST_FORMAT, "version": 1, **asdict(cfg)}
    atomic_write_text(path, yaml.safe_dump(doc, sort_keys=False))


def load_cost_config(path) -> CostConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise SpecParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != COST_FORMAT:
        raise SpecParseError(f"{path}: not a {COST_FORMAT} file")
    known = {f.name for f in fields(CostConfig)}
    unknown = set(doc) - known - {"format", "version"}
    if unknown:
        raise SpecParseError(f"{path}: unknown cost fields {sorted(unknown)}")
    try:
        return CostConfig(**{k: v for k, v in doc.items() if k in known})
    except (TypeError, ValueError) as exc:
        raise SpecParseError(f"{path}: {exc}") from exc


# --- mapping ---------------------------------------------------------------


@dataclass(frozen=True)
class SpPosition:
    """Packed stochastic plane at one tile position.

    ``spans[i]`` is how many subarrays hold part of ensemble ``i + 1``.
    """

    retained: int
    cols: int
    subarrays: int
    spans: tuple[int, ...]


@dataclass(frozen=True)
class LayerMapping:
    index: int
    kind: str
    rows: int
    cols: int
    positions: int  # matrix-vector products per ensemble pass
    subarray: tuple[int, int]
    tile_shapes: tuple[tuple[int, int], ...]
    ensembled: bool
    sp: tuple[SpPosition, ...] = ()

    @property
    def row_tiles(self) -> int:
        return math.ceil(self.rows / self.subarray[0])

    @property
    def n_tiles(self) -> int:
        return len(self.tile_shapes)

    @property
    def mapped_cells(self) -> int:
        return sum(r * c for r, c in self.tile_shapes)

    @property
    def sp_subarrays(self) -> int:
        return sum(s.subarrays for s in self.sp)


@dataclass(frozen=True)
class NetworkMapping:
    name: str
    fel: int  # 1-based first ensembled layer
    n_mc: int
    subarray: tuple[int, int]
    policy: str
    layers: tuple[LayerMapping, ...]


def _sp_position(retained: int, cols: int, n_mc: int, rows: int, policy: str) -> SpPosition:
    if retained == 0:
        return SpPosition(0, cols, 0, (0,) * n_mc)
    if policy == "split":
        spans = tuple((((i + 1) * retained - 1) // rows) - (i * retained // rows) + 1 for i in range(n_mc))
        return SpPosition(retained, cols, math.ceil(n_mc * retained / rows), spans)
    # other policies: run the packer on placeholder blocks of the template shape
    block = SqueezedSubmatrix(np.zeros((retained, cols), np.int8), np.arange(retained), rows)
    packed = pack_tile_position([block] * n_mc, rows, cols, 0, policy)
    spans = tuple(sum(1 for p in packed if i in p.ensembles) for i in range(1, n_mc + 1))
    return SpPosition(retained, cols, len(packed), spans)


def build_network_mapping(spec: NetworkSpec, pmap: ProbabilityMap, fel: int, n_mc: int,
                          subarray: tuple[int, int] = (128, 128), policy: str = "split") -> NetworkMapping:
    """Tile counts and stochastic-plane packing for every layer.

    ``pmap`` should already be clamped; its probabilistic cells in layers at
    or after ``fel`` define the row-squeezed stochastic templates.
    """
    pmap.check_against(spec)
    if not 1 <= fel <= spec.n_layers:
        raise ValueError(f"fel {fel} outside 1..{spec.n_layers}")
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    r_sub, c_sub = subarray
    shapes = spec.layer_io_shapes()
    layers = []
    for l, layer in enumerate(spec.layers):
        rows, cols = layer.matrix_shape
        tiles = tile((rows, cols), subarray)
        ensembled = l + 1 >= fel
        positions = 1
        if layer.kind == "conv":
            ho, wo = conv_output_hw(shapes[l][0][1], shapes[l][0][2], layer)
            positions = ho * wo
        sp = ()
        if ensembled:
            mask = probabilistic_mask(pmap.matrix(l))
            sp = tuple(
                _sp_position(int(np.any(mask[t.row_slice, t.col_slice], axis=1).sum()), t.cols, n_mc, r_sub, policy)
                for t in tiles
            )
        layers.append(LayerMapping(l + 1, layer.kind, rows, cols, positions, (r_sub, c_sub),
                                   tuple((t.rows, t.cols) for t in tiles), ensembled, sp))
    return NetworkMapping(spec.name, fel, n_mc, (r_sub, c_sub), policy, tuple(layers))


# --- per-layer estimates ---------------------------------------------------


@dataclass(frozen=True)
class LayerCost:
    """Cost of one layer under one mode.

    ``latency`` and ``energy`` are per pass (one ensemble's evaluation);
    ``passes`` is how many passes an image needs and ``parallel`` whether
    those passes run side by side on replicated hardware. ``energy_shared``
    is spent once per image whatever the pass count (the deterministic
    plane, whose product every ensemble reuses).
    """

    index: int
    latency: float
    energy: float
    area: float
    subarrays: int
    passes: int
    parallel: bool
    ensembled: bool
    energy_shared: float = 0.0

    @property
    def energy_per_image(self) -> float:
        return self.energy_shared + self.energy * self.passes

    @property
    def latency_per_image(self) -> float:
        return self.latency if self.parallel else self.latency * self.passes


def _tree_levels(inputs: int) -> int:
    return math.ceil(math.log2(inputs)) if inputs > 1 else 0


def _mvm_energy(cfg: CostConfig, positions: int, cells: float, conversions: float, outputs: int) -> float:
    n = cfg.input_bits
    return positions * (
        n * cfg.activity * cells * cfg.e_cell
        + n * conversions * (cfg.e_adc + cfg.e_shift_add)
        + outputs * cfg.e_post
    )


def estimate_layer(m: LayerMapping, mode, cfg: CostConfig, n_mc: int) -> LayerCost:
    mode = MappingMode(mode)
    r_sub, c_sub = m.subarray
    conversions = sum(c for _, c in m.tile_shapes)
    fanin, shared = m.row_tiles, 0.0
    if mode is MappingMode.DENSE or (mode is MappingMode.LS and m.ensembled):
        # one full copy per ensemble, all evaluated side by side
        passes, parallel, subarrays = n_mc, True, n_mc * m.n_tiles
        energy = _mvm_energy(cfg, m.positions, m.mapped_cells, conversions, m.cols)
    elif not m.ensembled:
        passes, parallel, subarrays = 1, True, m.n_tiles
        energy = _mvm_energy(cfg, m.positions, m.mapped_cells, conversions, m.cols)
    else:
        # deterministic plane once, then each ensemble's packed stochastic rows in turn
        passes, parallel = n_mc, False
        subarrays = m.n_tiles + m.sp_subarrays
        sp_cells = sum(s.retained * s.cols for s in m.sp)
        sp_conv = sum(sum(s.spans) * s.cols for s in m.sp) / n_mc
        fanin += max((max(s.spans) for s in m.sp), default=0)
        shared = _mvm_energy(cfg, m.positions, m.mapped_cells, conversions, 0)
        energy = _mvm_energy(cfg, m.positions, sp_cells, sp_conv, m.cols)

    latency = m.positions * (cfg.input_bits * cfg.cycle_latency(r_sub, c_sub) + cfg.t_accumulate * _tree_levels(fanin))
    area = subarrays * cfg.subarray_area(r_sub, c_sub)
    return LayerCost(m.index, latency, float(energy), area, subarrays, passes, parallel, m.ensembled, float(shared))


# --- schedules -------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    stages: tuple[float, ...]

    @property
    def stage_latency(self) -> float:
        return max(self.stages)

    @property
    def throughput(self) -> float:
        return 1.0 / self.stage_latency


def pipeline_schedule(costs: Sequence[LayerCost], mode, n_mc: int, stage1: str = "sequential") -> Schedule:
    """Stage latencies of the pipelined accelerator.

    Dense and LS run one stage per layer. LS+RS runs two stages: the layers
    before the first ensembled layer, then every ensemble of the remaining
    layers back to back. ``stage1`` picks whether the first stage chains its
    layers (``sequential``) or overlaps them (``pipelined``).
    """
    mode = MappingMode(mode)
    if not costs:
        raise ValueError("no layers")
    if mode is not MappingMode.LSRS:
        return Schedule(tuple(c.latency for c in costs))
    if stage1 not in STAGE1_POLICIES:
        raise ValueError(f"stage1 must be one of {STAGE1_POLICIES}")
    pre = [c.latency for c in costs if not c.ensembled]
    post = sum(c.latency for c in costs if c.ensembled) * n_mc
    stages = []
    if pre:
        stages.append(sum(pre) if stage1 == "sequential" else max(pre))
    if post > 0:
        stages.append(post)
    return Schedule(tuple(stages))


def non_pipelined(costs: Sequence[LayerCost], mode, n_mc: int) -> tuple[float, float]:
    """(latency, energy) for one image processed start to finish."""
    mode = MappingMode(mode)
    if mode is MappingMode.LSRS:
        latency = sum(c.latency for c in costs if not c.ensembled) + n_mc * sum(c.latency for c in costs if c.ensembled)
    else:
        latency = sum(c.latency for c in costs)
    return latency, sum(c.energy_per_image for c in costs)


@dataclass(frozen=True)
class FoMs:
    power_efficiency: float  # FPS/W
    total_efficiency: float  # FPS/W/m^2
    edp: float  # J s
    leap: float  # J s m^2


def foms(latency: float, energy: float, area: float) -> FoMs:
    if min(latency, energy, area) <= 0:
        raise ValueError("latency, energy and area must be positive")
    eff = 1.0 / energy
    edp = latency * energy
    return FoMs(eff, eff / area, edp, edp * area)


# --- reports -----------------------------------------------------------------


@dataclass(frozen=True)
class CostReport:
    network: str
    mode: str
    n_mc: int
    fel: int
    subarray: tuple[int, int]
    pipeline: bool
    layers: tuple[LayerCost, ...]
    area: float
    energy: float
    stage_latencies: tuple[float, ...]
    throughput: float
    latency: float  # non-pipelined, per image
    foms: FoMs = field(default=None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["subarray"] = list(self.subarray)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def flat_row(self) -> dict:
        """One CSV row with display units (ms, mJ, cm^2)."""
        return {
            "network": self.network,
            "mode": self.mode,
            "subarray": f"{self.subarray[0]}x{self.subarray[1]}",
            "n_mc": self.n_mc,
            "fel": self.fel,
            "stage_latency_ms": max(self.stage_latencies) * 1e3,
            "throughput_fps": self.throughput,
            "latency_ms": self.latency * 1e3,
            "energy_mj": self.energy * 1e3,
            "area_cm2": self.area * 1e4,
            "power_eff_fps_per_w": self.foms.power_efficiency,
            "total_eff_fps_per_w_cm2": self.foms.power_efficiency / (self.area * 1e4),
            "edp_j_s": self.foms.edp,
            "leap_j_s_m2": self.foms.leap,
        }


def project(mapping: NetworkMapping, mode, cfg: CostConfig | None = None, pipeline: bool = True,
            stage1: str = "sequential") -> CostReport:
    cfg = cfg or CostConfig()
    mode = MappingMode(mode)
    costs = tuple(estimate_layer(m, mode, cfg, mapping.n_mc) for m in mapping.layers)
    schedule = pipeline_schedule(costs, mode, mapping.n_mc, stage1)
    latency, energy = non_pipelined(costs, mode, mapping.n_mc)
    area = sum(c.area for c in costs) + cfg.a_global
    f = foms(latency, energy, area)
    return CostReport(mapping.name, mode.value, mapping.n_mc, mapping.fel, mapping.subarray, pipeline, costs,
                      area, energy, schedule.stages, schedule.throughput, latency, f)


RATIO_FIELDS = ("stage_latency_ms", "latency_ms", "energy_mj", "area_cm2", "edp_j_s", "leap_j_s_m2")


def comparison_rows(reports: Sequence[CostReport]) -> list[dict]:
    """Flat rows with ``<fom>_ratio`` = dense value / this mode's value, per subarray size."""
    rows = [r.flat_row() for r in reports]
    dense = {row["subarray"]: row for row in rows if row["mode"] == MappingMode.DENSE.value}
    for row in rows:
        base = dense.get(row["subarray"])
        for k in RATIO_FIELDS:
            row[k + "_ratio"] = base[k] / row[k] if base is not None else float("nan")
    return rows


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def sweep(spec: NetworkSpec, pmap: ProbabilityMap, fel: int, n_mc: int, sizes=(32, 64, 128, 256),
          modes=tuple(MappingMode), cfg: CostConfig | None = None, policy: str = "split",
          stage1: str = "sequential") -> list[CostReport]:
    reports = []
    for size in sizes:
        mapping = build_network_mapping(spec, pmap, fel, n_mc, (size, size), policy)
        reports.extend(project(mapping, mode, cfg, True, stage1) for mode in modes)
    return reports
