"""Command-line front end: ``bbnn-imc <command> [options]``.

Every command reads a run configuration assembled from defaults, an
optional ``--config`` YAML file and command-line flags (flags win), writes
its outputs atomically into ``--output`` and leaves a ``run_config.yaml``
snapshot beside them. Exit codes: 0 success, 1 usage error, 2 data or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .container import atomic_write_text, read_dataset, write_dataset
from .cost import CostConfig, build_network_mapping, comparison_rows, load_cost_config, project, rows_to_csv, sweep
from .device import DeviceConfig, load_device_config
from .engine import MappingMode, build_simulation, run_inference
from .errors import DataError
from .model import (
    load_network_spec,
    load_probability_map,
    save_network_spec,
    save_probability_map,
)
from .sparsity import DEFAULT_MASS_THRESHOLD, DEFAULT_TAU, clamp, clamp_before_fel, layer_stats, select_fel
from .splitter import split_dp_sp, squeeze_layer, subarray_count, tile
from .toy import PRESETS, make_task, preset_model
from .uncertainty import aleatoric_roc, decompose, epistemic_roc, roc_curve

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
SIZES = (32, 64, 128, 256)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    network: str | None = None
    pmap: str | None = None
    preset: str | None = None
    device_config: str | None = None
    cost_config: str | None = None
    inputs: str | None = None
    ood_inputs: str | None = None
    predictions: list | None = None
    n_inputs: int = 100
    n_ood: int = 0
    mode: str = "lsrs"
    n_mc: int = 10
    tau: float = DEFAULT_TAU
    mass_threshold: float = DEFAULT_MASS_THRESHOLD
    fel: int | None = None
    subarray_size: int = 128
    packing: str = "split"
    seed: int = 0
    drift_time: float | None = None
    compensate: bool = False
    pipeline: bool = True
    stage1: str = "sequential"
    sizes: list | None = None
    output: str = "out"

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def load_run_config(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise DataError(f"{path}: config must be a mapping")
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    unknown = set(doc) - RunConfig.field_names()
    if unknown:
        raise DataError(f"{path}: unknown config keys {sorted(unknown)}")
    return doc


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicitly given flags."""
    values = load_run_config(args.config) if args.config else {}
    for name in RunConfig.field_names():
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    cfg = RunConfig(**values)
    if cfg.mode not in {m.value for m in MappingMode}:
        raise DataError(f"mode must be one of dense, ls, lsrs (got {cfg.mode!r})")
    if cfg.n_mc < 1 or cfg.n_inputs < 0 or cfg.n_ood < 0 or cfg.subarray_size < 1:
        raise DataError("n_mc and subarray_size must be >= 1, input counts >= 0")
    return cfg


# --- loading helpers ---------------------------------------------------------


def _model(cfg: RunConfig):
    if cfg.preset:
        if cfg.network or cfg.pmap:
            raise DataError("give either a preset or network/pmap files, not both")
        if cfg.preset not in PRESETS:
            raise DataError(f"unknown preset {cfg.preset!r}; choose from {sorted(PRESETS)}")
        return preset_model(cfg.preset, cfg.seed)
    if not (cfg.network and cfg.pmap):
        raise UsageError("need --network and --pmap (or --preset)")
    spec = load_network_spec(cfg.network)
    return spec, load_probability_map(cfg.pmap, spec)


def _device(cfg: RunConfig) -> DeviceConfig:
    return load_device_config(cfg.device_config) if cfg.device_config else DeviceConfig()


def _cost(cfg: RunConfig) -> CostConfig:
    return load_cost_config(cfg.cost_config) if cfg.cost_config else CostConfig()


def _clamped(cfg: RunConfig, spec, pmap):
    """Tau-clamped map, the FEL decision and the map rounded before the FEL."""
    pmap = clamp(pmap, cfg.tau)
    profile = layer_stats(pmap)
    if cfg.fel is not None:
        if not 1 <= cfg.fel <= spec.n_layers:
            raise DataError(f"fel {cfg.fel} outside 1..{spec.n_layers}")
        fel = cfg.fel
    else:
        fel = spec.n_layers if profile.degenerate else select_fel(profile, cfg.mass_threshold).fel
    return pmap, profile, fel, clamp_before_fel(pmap, fel)


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.output)


def _write_snapshot(cfg: RunConfig, command: str) -> None:
    doc = {"command": command, "version": __version__, **asdict(cfg)}
    atomic_write_text(_out(cfg) / "run_config.yaml", yaml.safe_dump(doc, sort_keys=False))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _json(doc) -> str:
    return json.dumps(doc, indent=2, default=_fmt) + "\n"


# --- commands ------------------------------------------------------------------


def cmd_generate(cfg: RunConfig) -> None:
    """Write a preset network, its probability map and toy-task evaluation sets."""
    if not cfg.preset:
        raise UsageError("generate needs --preset")
    spec, pmap = _model(cfg)
    out = _out(cfg)
    save_network_spec(spec, out / "network.yaml")
    save_probability_map(pmap, out / "pmap.bbnp")
    if cfg.n_inputs:
        task = make_task(spec, cfg.n_inputs, cfg.seed, "ind")
        write_dataset(out / "inputs.bbni", task.inputs, task.labels)
    if cfg.n_ood:
        ood = make_task(spec, cfg.n_ood, cfg.seed, "ood")
        write_dataset(out / "ood.bbni", ood.inputs)
    _write_snapshot(cfg, "generate")


def cmd_analyze(cfg: RunConfig) -> None:
    spec, pmap = _model(cfg)
    pmap, profile, fel, _ = _clamped(cfg, spec, pmap)
    rows = [tuple(r.values()) for r in profile.rows()]
    atomic_write_text(_out(cfg) / "sparsity.csv",
                      _csv(("layer", "n", "n_p", "frac_of_layer", "frac_of_total"), rows))
    summary = {"network": spec.name, "tau": cfg.tau, "n": sum(profile.n), "n_p": profile.total_probabilistic,
               "fel": fel, "mass_threshold": cfg.mass_threshold}
    if not profile.degenerate:
        summary["tail_mass"] = sum(profile.n_p[fel - 1:]) / profile.total_probabilistic
    atomic_write_text(_out(cfg) / "summary.json", _json(summary))
    _write_snapshot(cfg, "analyze")


def cmd_clamp(cfg: RunConfig) -> None:
    spec, pmap = _model(cfg)
    _, profile, fel, rounded = _clamped(cfg, spec, pmap)
    save_probability_map(rounded, _out(cfg) / "clamped.bbnp")
    after = layer_stats(rounded)
    atomic_write_text(_out(cfg) / "summary.json", _json({
        "tau": cfg.tau, "fel": fel, "n_p_before": layer_stats(pmap).total_probabilistic,
        "n_p_after_tau": profile.total_probabilistic, "n_p_after_fel": after.total_probabilistic,
    }))
    _write_snapshot(cfg, "clamp")


def cmd_split(cfg: RunConfig) -> None:
    """Per-tile stochastic-plane report for the ensembled layers."""
    spec, pmap = _model(cfg)
    _, _, fel, rounded = _clamped(cfg, spec, pmap)
    r = cfg.subarray_size
    rows, layers = [], []
    for l in range(fel - 1, spec.n_layers):
        sp = split_dp_sp(rounded.matrix(l))
        tiles = tile(sp.shape, (r, r))
        squeezed = squeeze_layer(sp.template_mask().astype(np.int8), tiles)
        total = 0
        for t, sq in zip(tiles, squeezed):
            count = subarray_count([sq.retained] * cfg.n_mc, r)
            total += count
            rows.append((l + 1, t.index, t.row0, t.col0, t.rows, t.cols, sq.retained, sq.f_p, count))
        layers.append({"layer": l + 1, "tiles": len(tiles), "n_stochastic": sp.n_stochastic,
                       "sp_subarrays": total, "ls_subarrays": cfg.n_mc * len(tiles)})
    header = ("layer", "tile", "row0", "col0", "rows", "cols", "retained", "f_p", "sp_subarrays")
    atomic_write_text(_out(cfg) / "split.csv", _csv(header, rows))
    atomic_write_text(_out(cfg) / "split.json", _json({"fel": fel, "n_mc": cfg.n_mc, "subarray": r,
                                                       "layers": layers}))
    _write_snapshot(cfg, "split")


def _evaluation_sets(cfg: RunConfig, spec):
    sets = []
    if cfg.inputs:
        x, y = read_dataset(cfg.inputs)
        sets.append(("ind", x, y if y is not None else np.full(len(x), -1)))
    elif cfg.preset:
        task = make_task(spec, cfg.n_inputs, cfg.seed, "ind")
        sets.append(("ind", task.inputs, task.labels))
    else:
        raise UsageError("simulate needs --inputs (or --preset to generate a toy task)")
    if cfg.ood_inputs:
        x, _ = read_dataset(cfg.ood_inputs)
        sets.append(("ood", x, np.full(len(x), -1)))
    elif cfg.preset and cfg.n_ood:
        ood = make_task(spec, cfg.n_ood, cfg.seed, "ood")
        sets.append(("ood", ood.inputs, ood.labels))
    return sets


def cmd_simulate(cfg: RunConfig) -> None:
    spec, pmap = _model(cfg)
    device = _device(cfg)
    sim = build_simulation(spec, pmap, cfg.mode, cfg.n_mc, cfg.seed, device, cfg.fel, cfg.tau,
                           cfg.mass_threshold, (cfg.subarray_size, cfg.subarray_size), cfg.packing)
    t = device.t0 if cfg.drift_time is None else cfg.drift_time
    pred_rows, prob_rows, summary = [], [], {"mode": cfg.mode, "n_mc": cfg.n_mc, "fel": sim.fel,
                                             "drift_time": t, "compensate": cfg.compensate}
    offset = 0
    for split_name, x, labels in _evaluation_sets(cfg, spec):
        ps = run_inference(sim.network, x, t=t, compensate=cfg.compensate, read_seed=cfg.seed + offset)
        u = decompose(ps)
        pred = ps.predicted
        correct = np.where(labels >= 0, pred == labels, False)
        for j in range(len(x)):
            pred_rows.append((offset + j, split_name, int(labels[j]), int(pred[j]),
                              int(correct[j]) if labels[j] >= 0 else "", u.total[j], u.aleatoric[j], u.epistemic[j]))
            for i in range(ps.n_mc):
                prob_rows.append((offset + j, split_name, i + 1, *ps.probs[j, i]))
        labelled = labels >= 0
        summary[split_name] = {
            "n": int(len(x)),
            "accuracy": float(correct[labelled].mean()) if labelled.any() else None,
            "mean_u_tot": float(u.total.mean()) if len(x) else None,
            "mean_u_a": float(u.aleatoric.mean()) if len(x) else None,
            "mean_u_e": float(u.epistemic.mean()) if len(x) else None,
        }
        offset += len(x)
    header = ("index", "split", "label", "predicted", "correct", "u_tot", "u_a", "u_e")
    atomic_write_text(_out(cfg) / "predictions.csv", _csv(header, pred_rows))
    header = ("index", "split", "ensemble") + tuple(f"p{c}" for c in range(spec.n_classes))
    atomic_write_text(_out(cfg) / "predictors.csv", _csv(header, prob_rows))
    atomic_write_text(_out(cfg) / "summary.json", _json(summary))
    _write_snapshot(cfg, "simulate")


def _read_predictions(paths):
    rows = []
    for path in paths:
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                need = {"split", "correct", "u_a", "u_e"}
                if not need <= set(reader.fieldnames or ()):
                    raise DataError(f"{path}: missing columns {sorted(need - set(reader.fieldnames or ()))}")
                rows.extend(reader)
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
    return rows


def cmd_roc(cfg: RunConfig) -> None:
    if not cfg.predictions:
        raise UsageError("roc needs --predictions (one or more simulate predictions.csv files)")
    rows = _read_predictions(cfg.predictions)
    try:
        ind = [r for r in rows if r["split"] == "ind" and r["correct"] != ""]
        u_a = np.array([float(r["u_a"]) for r in ind])
        correct = np.array([r["correct"] == "1" for r in ind])
        ue_ind = np.array([float(r["u_e"]) for r in rows if r["split"] == "ind"])
        ue_ood = np.array([float(r["u_e"]) for r in rows if r["split"] == "ood"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed predictions: {exc}") from exc
    curves, aucs = [], {}
    try:
        aucs["aleatoric_auc"] = aleatoric_roc(u_a, correct)
        curves.append(("aleatoric", roc_curve(u_a, ~correct)))
    except ValueError as exc:
        aucs["aleatoric_auc"], aucs["aleatoric_error"] = None, str(exc)
    try:
        aucs["epistemic_auc"] = epistemic_roc(ue_ind, ue_ood)
        labels = np.r_[np.zeros(ue_ind.size, bool), np.ones(ue_ood.size, bool)]
        curves.append(("epistemic", roc_curve(np.r_[ue_ind, ue_ood], labels)))
    except ValueError as exc:
        aucs["epistemic_auc"], aucs["epistemic_error"] = None, str(exc)
    if not curves:
        raise DataError("no ROC could be formed: " + "; ".join(v for k, v in aucs.items() if k.endswith("error")))
    out_rows = [(name, f, tp, th) for name, (fpr, tpr, thr) in curves for f, tp, th in zip(fpr, tpr, thr)]
    atomic_write_text(_out(cfg) / "roc.csv", _csv(("curve", "fpr", "tpr", "threshold"), out_rows))
    atomic_write_text(_out(cfg) / "auc.json", _json(aucs))
    _write_snapshot(cfg, "roc")


def cmd_project(cfg: RunConfig) -> None:
    spec, pmap = _model(cfg)
    _, _, fel, rounded = _clamped(cfg, spec, pmap)
    mapping = build_network_mapping(spec, rounded, fel, cfg.n_mc, (cfg.subarray_size, cfg.subarray_size),
                                    cfg.packing)
    report = project(mapping, cfg.mode, _cost(cfg), cfg.pipeline, cfg.stage1)
    atomic_write_text(_out(cfg) / "report.json", report.to_json())
    atomic_write_text(_out(cfg) / "report.csv", rows_to_csv([report.flat_row()]))
    _write_snapshot(cfg, "project")


def cmd_sweep(cfg: RunConfig) -> None:
    spec, pmap = _model(cfg)
    _, _, fel, rounded = _clamped(cfg, spec, pmap)
    sizes = tuple(cfg.sizes) if cfg.sizes else SIZES
    reports = sweep(spec, rounded, fel, cfg.n_mc, sizes, tuple(MappingMode), _cost(cfg), cfg.packing, cfg.stage1)
    atomic_write_text(_out(cfg) / "sweep.csv", rows_to_csv(comparison_rows(reports)))
    atomic_write_text(_out(cfg) / "sweep.json", _json([r.to_dict() for r in reports]))
    _write_snapshot(cfg, "sweep")


COMMANDS = {
    "generate": cmd_generate,
    "analyze": cmd_analyze,
    "clamp": cmd_clamp,
    "split": cmd_split,
    "simulate": cmd_simulate,
    "roc": cmd_roc,
    "project": cmd_project,
    "sweep": cmd_sweep,
}


# --- argument parsing --------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration (flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", "-o", help="output directory")


def _model_args(p):
    p.add_argument("--network", help="network spec (YAML)")
    p.add_argument("--pmap", help="probability map (BBNP container)")
    p.add_argument("--preset", help=f"built-in toy model: {', '.join(PRESETS)}")
    p.add_argument("--tau", type=float)
    p.add_argument("--mass-threshold", type=float)
    p.add_argument("--fel", type=int, help="first ensembled layer (1-based); default: selected from the map")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bbnn-imc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    helps = {
        "generate": "write a preset network, map and toy evaluation sets",
        "analyze": "per-layer sparsity profile and FEL",
        "clamp": "clamp near-deterministic probabilities and round layers before the FEL",
        "split": "deterministic/stochastic split and packing per tile",
        "simulate": "analog inference with uncertainty per input",
        "roc": "aleatoric and epistemic ROC curves from simulate predictions",
        "project": "latency, energy and area report for one mode",
        "sweep": "cost reports over subarray sizes and modes",
    }
    ps = {name: sub.add_parser(name, help=h, description=h) for name, h in helps.items()}
    for p in ps.values():
        _common(p)
    for name in ("generate", "analyze", "clamp", "split", "simulate", "project", "sweep"):
        _model_args(ps[name])
    for name in ("split", "simulate", "project", "sweep"):
        ps[name].add_argument("--n-mc", type=int)
        ps[name].add_argument("--packing", choices=("split", "first-fit"))
    for name in ("split", "simulate", "project"):
        ps[name].add_argument("--subarray-size", type=int)
    for name in ("generate", "simulate"):
        ps[name].add_argument("--n-inputs", type=int, help="toy-task inputs when generating")
        ps[name].add_argument("--n-ood", type=int, help="out-of-distribution toy inputs when generating")

    s = ps["simulate"]
    s.add_argument("--mode", choices=[m.value for m in MappingMode])
    s.add_argument("--inputs", help="evaluation set (BBNI container)")
    s.add_argument("--ood-inputs", help="out-of-distribution set (BBNI container)")
    s.add_argument("--device-config", help="device constants (YAML)")
    s.add_argument("--drift-time", type=float, help="seconds since programming (default t0)")
    s.add_argument("--compensate", action=argparse.BooleanOptionalAction, default=None,
                   help="scale BN by the drift compensation factor")

    ps["roc"].add_argument("--predictions", nargs="+", help="predictions.csv files from simulate")

    for name in ("project", "sweep"):
        ps[name].add_argument("--cost-config", help="cost constants (YAML)")
        ps[name].add_argument("--stage1", choices=("sequential", "pipelined"),
                              help="how LS+RS stage 1 runs the layers before the FEL")
    ps["project"].add_argument("--mode", choices=[m.value for m in MappingMode])
    ps["project"].add_argument("--pipeline", type=_bool, help="on|off")
    ps["sweep"].add_argument("--sizes", type=int, nargs="+", help="subarray sizes (default 32 64 128 256)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"bbnn-imc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"bbnn-imc: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
