"""Command-line front end: ``gridbo {allocate,synthesize,analyze,simulate,report}``.

A run is described by a JSON config::

    {
      "plant": "unbalanced_disk" | "robot_arm" | {"file": "plant.json"},
      "cost": {"terms": [{"inputs": "w", "outputs": "z", "norm": "hinf"}]},
      "controller": {"n_xk": 3, "fixed_zero_D": true},
      "init": {"mode": "corners" | "random" | "explicit", "n0": 2, "points": [...],
               "midpoint": false},
      "profile": "unbalanced_disk" | {"epsilon": 0.3, "n_max": 20, "n_initial": 5},
      "synthesis": {"restarts": 10, "budget": 500, "polish_budget": 3000},
      "refine_budget": 0,
      "n_target": 5,
      "seed": 0,
      "simulation": {"reference": "steps", "t_end": 15.0, "mass": 0.07, ...}
    }

Every key is optional except ``plant``; builtin plants carry defaults.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import benchmarks as bm
from .allocation import (AllocationResult, LpvDesign, allocate, corner_init,
                         derive_seed, explicit_init, random_init, table_to_csv,
                         trace_to_csv, worst_case_sweep)
from .bayesopt import PROFILES, AcquisitionConfig
from .costs import CostSpec
from .errors import AllocationError, GridboError, SynthesisError
from .lfr import LfrPlant
from .rbf import RbfControllerField
from .simulate import simulate_closed_loop, zoh_noise
from .synthesis import ControllerParam, ControllerStructure, SynthesisOptions

log = logging.getLogger("gridbo")

BUILTINS = ("unbalanced_disk", "robot_arm")

DEFAULTS = {
    "unbalanced_disk": {
        "controller": {"n_xk": 3, "fixed_zero_D": True},
        "init": {"mode": "corners"},
        "profile": "unbalanced_disk",
        "n_target": 5,
        "simulation": {"reference": "steps", "t_end": 15.0, "psd": 0.7, "hold": 0.01,
                       "disturbance": True, "max_step": 1e-2},
    },
    "robot_arm": {
        "controller": {"n_xk": 2, "fixed_zero_D": False},
        "init": {"mode": "corners", "midpoint": True},
        "profile": "robot_arm",
        "n_target": 8,
        "synthesis": {"restarts": 3, "budget": 400, "polish_budget": 1000},
        "refine_budget": 200,
        "reference": "ref1",
        "simulation": {"reference": "ref1", "t_end": 20.0, "max_step": 1e-2},
    },
}


class ConfigError(Exception):
    """Invalid or missing user input (exit code 2)."""


# ---------------------------------------------------------------- config

def load_config(path, overrides: dict | None = None) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict) or "plant" not in cfg:
        raise ConfigError("config must be an object with a 'plant' entry")
    base = p.parent
    name = cfg["plant"] if isinstance(cfg["plant"], str) else None
    if name is not None and name not in BUILTINS:
        raise ConfigError(f"unknown builtin plant {name!r}; expected one of {BUILTINS}")
    if isinstance(cfg["plant"], dict):
        f = Path(cfg["plant"].get("file", ""))
        f = f if f.is_absolute() else base / f
        if not f.is_file():
            raise ConfigError(f"plant file not found: {f}")
        cfg["plant"] = {"file": str(f)}
    merged = _merge(DEFAULTS.get(name, {}), cfg)
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k] = v
    merged.setdefault("seed", 0)
    merged.setdefault("synthesis", {})
    merged.setdefault("refine_budget", 0)
    return merged


def _merge(a: dict, b: dict) -> dict:
    out = json.loads(json.dumps(a))
    for k, v in b.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def build_plant(cfg) -> LfrPlant:
    spec = cfg["plant"]
    if spec == "unbalanced_disk":
        return bm.unbalanced_disk_genplant()
    if spec == "robot_arm":
        lo, hi = bm.arm_reference_box(cfg.get("reference", "ref1"))
        return bm.robot_arm_genplant(lo, hi)
    try:
        return LfrPlant.from_json(Path(spec["file"]).read_text())
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot read plant file: {exc}") from exc


def build_cost(cfg) -> CostSpec:
    try:
        return CostSpec.from_dict(cfg["cost"]) if "cost" in cfg else CostSpec.hinf()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid cost spec: {exc}") from exc


def build_profile(cfg) -> AcquisitionConfig:
    prof = cfg.get("profile", "unbalanced_disk")
    try:
        if isinstance(prof, str):
            base = PROFILES[prof]
        else:
            base = AcquisitionConfig(**prof)
    except KeyError as exc:
        raise ConfigError(f"unknown profile {prof!r}; expected one of {sorted(PROFILES)}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid profile: {exc}") from exc
    return base


def build_structure(cfg, plant: LfrPlant) -> ControllerStructure:
    c = cfg.get("controller", {})
    G = plant.G
    try:
        n_u = G.input_groups["u"][1]
        n_y = G.output_groups["y"][1]
        return ControllerStructure(int(c.get("n_xk", 2)), n_u, n_y, bool(c.get("fixed_zero_D", False)))
    except KeyError as exc:
        raise ConfigError("plant needs 'u' input and 'y' output groups") from exc


def build_synthesis(cfg) -> SynthesisOptions:
    try:
        return SynthesisOptions.from_dict(cfg.get("synthesis"))
    except TypeError as exc:
        raise ConfigError(f"invalid synthesis options: {exc}") from exc


# ---------------------------------------------------------------- artifacts

def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def controller_to_dict(k) -> dict:
    if isinstance(k, LpvDesign):
        return {"kind": "lpv", "shared": k.shared.to_dict(),
                "snapshots": [s.to_dict() for s in k.snapshots], "field": k.field.to_dict()}
    return {"kind": "robust", **k.to_dict()}


def controller_from_dict(d: dict):
    if d.get("kind") == "lpv":
        return LpvDesign(ControllerParam.from_dict(d["shared"]),
                         [ControllerParam.from_dict(s) for s in d["snapshots"]],
                         RbfControllerField.from_dict(d["field"]))
    return ControllerParam.from_dict(d)


def load_controller(path: Path):
    if not path.is_file():
        raise ConfigError(f"controller file not found: {path}")
    try:
        return controller_from_dict(json.loads(path.read_text()))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot read controller file {path}: {exc}") from exc


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _finite_or_str(v):
    v = float(v)
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


# ---------------------------------------------------------------- commands

def _initial(cfg, plant, structure, cost, opts):
    init = cfg.get("init", {"mode": "corners"})
    mode = init.get("mode", "corners")
    seed = derive_seed(cfg["seed"], 100)
    rb = int(cfg.get("refine_budget", 0))
    if mode == "corners":
        return corner_init(plant, structure, cost, seed, opts, bool(init.get("midpoint")), rb)
    if mode == "random":
        return random_init(plant, int(init.get("n0", 2)), structure, cost, seed, opts, rb)
    if mode == "explicit":
        if "points" not in init:
            raise ConfigError("explicit init needs 'points'")
        try:
            return explicit_init(plant, init["points"], structure, cost, seed, opts, rb)
        except (ValueError, GridboError) as exc:
            if isinstance(exc, SynthesisError):
                raise
            raise ConfigError(f"invalid initial points: {exc}") from exc
    raise ConfigError(f"unknown init mode {mode!r}")


def cmd_allocate(cfg, out: Path) -> int:
    plant, cost = build_plant(cfg), build_cost(cfg)
    structure, opts = build_structure(cfg, plant), build_synthesis(cfg)
    profile = build_profile(cfg)
    n_target = int(cfg.get("n_target", 5))
    sel0, k0 = _initial(cfg, plant, structure, cost, opts)
    atomic_write(out / "k0.json", _dump(controller_to_dict(k0)))
    atomic_write(out / "selection0.json", _dump(sel0.to_dict()))
    try:
        res = allocate(plant, cost, sel0, k0, n_target, profile, opts, structure,
                       derive_seed(cfg["seed"], 200), int(cfg.get("refine_budget", 0)))
    except AllocationError as exc:
        res = AllocationResult(exc.selection, exc.controller, exc.trace, True, str(exc))
        _write_allocation(out, res)
        log.error("%s", exc)
        return 1
    _write_allocation(out, res)
    return 0


def _write_allocation(out: Path, res: AllocationResult):
    atomic_write(out / "trace.csv", trace_to_csv(res.trace, res.selection.domain.n_blocks))
    atomic_write(out / "selection.json", _dump({**res.selection.to_dict(),
                                                "stopped_early": res.stopped_early,
                                                "reason": res.reason}))
    atomic_write(out / "controller.json", _dump(controller_to_dict(res.controller)))


def cmd_synthesize(cfg, out: Path) -> int:
    plant, cost = build_plant(cfg), build_cost(cfg)
    structure, opts = build_structure(cfg, plant), build_synthesis(cfg)
    sel, k = _initial(cfg, plant, structure, cost, opts)
    atomic_write(out / "selection.json", _dump(sel.to_dict()))
    atomic_write(out / "controller.json", _dump(controller_to_dict(k)))
    return 0


def cmd_analyze(cfg, out: Path, density: int, controller_path=None) -> int:
    plant, cost = build_plant(cfg), build_cost(cfg)
    if density < 2:
        raise ConfigError("--density must be >= 2")
    targets = [("sweep.csv", Path(controller_path) if controller_path else out / "controller.json")]
    if controller_path is None and (out / "k0.json").is_file():
        targets.append(("sweep_k0.csv", out / "k0.json"))
    names = plant.structure.names
    for fname, path in targets:
        k = load_controller(path)
        _, _, table = worst_case_sweep(plant, k, cost, density, derive_seed(cfg["seed"], 300))
        atomic_write(out / fname, table_to_csv(table, names))
    return 0


def _simulate_one(cfg, k):
    sim = cfg.get("simulation", {})
    name = cfg["plant"]
    t_end = float(sim.get("t_end", 10.0))
    kk = k.field if isinstance(k, LpvDesign) else k
    if name == "unbalanced_disk":
        model = bm.unbalanced_disk_model(sim.get("mass"))
        ref = bm.disk_reference(sim.get("reference", "steps"))
        dist, fil = None, None
        if sim.get("disturbance", True):
            dist = zoh_noise(float(sim.get("psd", 0.7)), float(sim.get("hold", 0.01)), t_end,
                             derive_seed(sim.get("seed", cfg["seed"]), 400))
            fil = bm.disk_filter("di")
        return simulate_closed_loop(model, kk, ref, (0.0, t_end), disturbance=dist,
                                    disturbance_filter=fil, max_step=float(sim.get("max_step", 1e-2)),
                                    dt_out=float(sim.get("hold", 0.01)))
    if name == "robot_arm":
        r, _ = bm.arm_reference(sim.get("reference", "ref1"))
        return simulate_closed_loop(bm.robot_arm_model(), kk, r, (0.0, t_end),
                                    max_step=float(sim.get("max_step", 1e-2)))
    raise ConfigError("simulation is only available for builtin benchmarks")


def cmd_simulate(cfg, out: Path, controller_path=None) -> int:
    targets = [("sim.csv", Path(controller_path) if controller_path else out / "controller.json")]
    if controller_path is None and (out / "k0.json").is_file():
        targets.append(("sim_k0.csv", out / "k0.json"))
    for fname, path in targets:
        k = load_controller(path)
        res = _simulate_one(cfg, k)
        atomic_write(out / fname, res.to_csv())
        meta = {"diverged": res.diverged, "message": res.message, "steps": res.steps,
                "rejected": res.rejected, "extrapolated_queries": res.extrapolated,
                "rmse": [_finite_or_str(v) for v in res.rmse]}
        atomic_write(out / (fname[:-4] + ".json"), _dump(meta))
    return 0


def _read_csv(path: Path):
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(v) for v in r] for r in rows[1:]]


def cmd_report(out: Path) -> int:
    if not out.is_dir():
        raise ConfigError(f"output directory not found: {out}")
    summary = {}
    if (out / "trace.csv").is_file():
        head, rows = _read_csv(out / "trace.csv")
        i_after = head.index("J_after")
        summary["allocation"] = {"iterations": len(rows),
                                 "final_J": _finite_or_str(rows[-1][i_after]) if rows else None}
    for name in ("sweep", "sweep_k0"):
        p = out / f"{name}.csv"
        if p.is_file():
            head, rows = _read_csv(p)
            J = np.array([r[-1] for r in rows])
            i = int(np.argmax(J))
            summary[name] = {"points": len(rows), "worst_J": _finite_or_str(J[i]),
                             "worst_theta": rows[i][:-1], "all_stable": bool(np.all(np.isfinite(J)))}
    for name in ("sim", "sim_k0"):
        p = out / f"{name}.csv"
        if p.is_file():
            head, rows = _read_csv(p)
            ny = sum(h.startswith("y") for h in head)
            data = np.array(rows).reshape(len(rows), len(head))
            y = data[:, [head.index(f"y{i + 1}") for i in range(ny)]]
            r = data[:, [head.index(f"r{i + 1}") for i in range(ny)]]
            meta = out / f"{name}.json"
            diverged = json.loads(meta.read_text())["diverged"] if meta.is_file() else False
            rm = np.full(ny, np.inf) if diverged or not len(rows) else np.sqrt(np.mean((y - r) ** 2, axis=0))
            summary[name] = {"diverged": diverged, "rmse": [_finite_or_str(v) for v in rm],
                             "t_end": float(data[-1, 0]) if len(rows) else 0.0}
    if not summary:
        raise ConfigError(f"no artifacts to report in {out}")
    atomic_write(out / "summary.json", _dump(summary))
    return 0


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridbo", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("allocate", "synthesize", "analyze", "simulate", "report"):
        s = sub.add_parser(name)
        if name != "report":
            s.add_argument("--config", required=True)
            s.add_argument("--seed", type=int)
            s.add_argument("--profile")
        s.add_argument("--out", required=True)
        s.add_argument("--jobs", type=int, default=1)
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "analyze":
            s.add_argument("--density", type=int, default=21)
        if name in ("analyze", "simulate"):
            s.add_argument("--controller")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.command == "report":
            return cmd_report(out)
        overrides = {"seed": args.seed, "profile": args.profile}
        cfg = load_config(args.config, overrides)
        if args.command == "allocate":
            return cmd_allocate(cfg, out)
        if args.command == "synthesize":
            return cmd_synthesize(cfg, out)
        if args.command == "analyze":
            return cmd_analyze(cfg, out, args.density, args.controller)
        return cmd_simulate(cfg, out, args.controller)
    except ConfigError as exc:
        print(f"gridbo: error: {exc}", file=sys.stderr)
        return 2
    except GridboError as exc:
        print(f"gridbo: runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
