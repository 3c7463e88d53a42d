"""Command-line interface: ``gkptrap <command> [options]``.

Every command accepts ``--config FILE`` (a JSON object whose keys are the
command's option names with underscores) and ``--out DIR``. Values resolve as
built-in defaults, then the config file, then explicit flags. Unknown config
keys are rejected before any computation starts.

Outputs go to ``DIR`` or, by default, to ``$GKPSIM_OUTPUT_ROOT/<command>-<hash>``
(``./runs`` when the variable is unset), where ``<hash>`` is derived from the
resolved configuration. Data files contain no timestamps; the start and end
times live only in ``manifest.json``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
Failures print a JSON object ``{"error", "message", "exit_code"}`` on stderr.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import GkpTrapError, InvalidDimension, InvalidInput, InvalidParameters
from .io import _jsonable, load_state, save_state, write_json, write_manifest

OUTPUT_ROOT_ENV = "GKPSIM_OUTPUT_ROOT"
DEFAULT_SCHEDULE = (1.0, 0.5, 0.31, 0.217, 0.167)
LATTICE_PRESETS = ("reference-lattice", "paper-lattice")


class ConfigError(GkpTrapError, ValueError):
    """Invalid or unknown configuration entry."""


# option tables: key -> (default, type, help). Types: float, int, str, bool,
# "floats"/"ints" for comma separated lists.
COMMON = {
    "seed": (0, int, "seed recorded in the manifest (all algorithms here are deterministic)"),
}
OPTIONS = {
    "params": {
        "trap": ("lattice", str, "tweezer or lattice"),
        "depth_mK": (1.5, float, "trap depth U0 / k_B in mK"),
        "waist_nm": (None, float, "beam waist w0 in nm"),
        "waist_um": (None, float, "beam waist w0 in um"),
        "wavelength_nm": (1040.0, float, "trap wavelength in nm"),
        "mass_u": (None, float, "atomic mass in u (default 87.906)"),
        "theta_deg": (45.0, float, "lattice folding angle in degrees"),
    },
    "prepare-ideal": {
        "scheme": ("corrective", str, "corrective or postselect"),
        "delta_init": (0.3, float, "Delta_Z of the squeezed input"),
        "rounds": (3, int, "number of rounds"),
        "dim": (150, int, "Fock cutoff"),
        "deltas": (None, "floats", "correction distances (default 1,0.5,0.31,0.217,0.167)"),
        "epsilons": (None, "floats", "pre-rotation distances (default zeros)"),
    },
    "optimize-deltas": {
        "delta_init": (0.3, float, "Delta_Z of the squeezed input"),
        "rounds": (5, int, "number of rounds (1..5)"),
        "dim": (150, int, "Fock cutoff"),
        "xtol": (1e-3, float, "absolute tolerance on each delta"),
    },
    "prepare-physical": {
        "preset": ("reference-lattice", str, "trap preset (reference-lattice, alias paper-lattice)"),
        "dims": ("8,8,36", "ints", "squeeze-stage cutoffs x,y,z"),
        "mixed_dims": ("3,3,36", "ints", "mixed-stage cutoffs x,y,z"),
        "deltas": ("1,0.5,0.303", "floats", "correction distances per round"),
        "depth_factor": (0.1, float, "depth during the quench, fraction of U0"),
        "ramp_us": (20.0, float, "ramp duration in us"),
        "mode": ("beam", str, "beam (exact tune-out potentials) or closed (ideal kicks)"),
        "harmonic": (False, bool, "replace the lattice by its harmonic approximation"),
        "step_tol": (1e-9, float, "local error target of the time stepper"),
    },
    "qec-round": {
        "state": (None, str, "input state file (default: finite code state)"),
        "logical": ("+", str, "logical code state used when no state file is given"),
        "delta": (0.3, float, "envelope Delta of the code state and of the round"),
        "dim": (150, int, "Fock cutoff of the generated code state"),
        "rounds": (1, int, "number of rounds"),
        "quadrature": ("both", str, "x, z or both"),
    },
    "wigner": {
        "state": (None, str, "state file"),
        "q_min": (-6.0, float, ""), "q_max": (6.0, float, ""),
        "p_min": (-6.0, float, ""), "p_max": (6.0, float, ""),
        "points": (121, int, "grid points per axis"),
        "svg": (False, bool, "also write an SVG heatmap (needs matplotlib)"),
    },
    "sweep": {
        "command": (None, str, "command to run for every point"),
        "base": ({}, dict, "base configuration (config file only)"),
        "vary": ({}, dict, "key -> list of values (config file only)"),
        "workers": (1, int, "parallel worker processes"),
    },
}


def _parse_list(value, kind, key):
    if value is None:
        return None
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
    elif isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        raise ConfigError(f"{key}: expected a list, got {value!r}")
    try:
        return [kind(p) for p in parts]
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: could not parse {value!r}") from None


def _coerce(key, value, typ):
    if value is None:
        return None
    if typ == "floats":
        return _parse_list(value, float, key)
    if typ == "ints":
        return _parse_list(value, int, key)
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if typ is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected an object")
        return value
    try:
        out = typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}") from None
    if typ is float and not math.isfinite(out):
        raise ConfigError(f"{key}: must be finite")
    return out


def resolve_config(command, file_cfg=None, overrides=None):
    """Merge defaults, config-file values and flag overrides; validate types."""
    table = {**OPTIONS[command], **COMMON}
    cfg = {k: v[0] for k, v in table.items()}
    for source in (file_cfg or {}, overrides or {}):
        for key, value in source.items():
            if key not in table:
                raise ConfigError(f"unknown configuration key {key!r} for command {command!r}")
            cfg[key] = value
    return {k: _coerce(k, v, table[k][1]) for k, v in cfg.items()}


def config_hash(command, cfg):
    blob = json.dumps({"command": command, "config": _jsonable(cfg)}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# -- commands -----------------------------------------------------------------------

def cmd_params(cfg, out):
    from .constants import SR88_MASS_U
    from .traps import LatticeSpec, TweezerSpec, format_report, params_report, trap_params

    mass_default = cfg["mass_u"] is None
    mass = SR88_MASS_U if mass_default else cfg["mass_u"]
    if cfg["waist_nm"] is not None and cfg["waist_um"] is not None:
        raise ConfigError("give either waist_nm or waist_um, not both")
    if cfg["waist_nm"] is None and cfg["waist_um"] is None:
        raise ConfigError("waist_nm or waist_um is required")
    waist_nm = cfg["waist_nm"] if cfg["waist_nm"] is not None else cfg["waist_um"] * 1e3
    if cfg["trap"] == "tweezer":
        spec = TweezerSpec.from_lab(cfg["depth_mK"], waist_nm, cfg["wavelength_nm"], mass)
    elif cfg["trap"] == "lattice":
        spec = LatticeSpec.from_lab(cfg["depth_mK"], waist_nm * 1e-3, cfg["wavelength_nm"], mass,
                                    cfg["theta_deg"])
    else:
        raise ConfigError("trap must be 'tweezer' or 'lattice'")
    report = params_report(spec, trap_params(spec))
    report["mass_u"] = mass
    text = format_report([report])
    print(text)
    files = [write_json(out / "params.json", report)]
    (out / "params.txt").write_text(text + "\n")
    files.append(out / "params.txt")
    return files, {"mass_default_used": mass_default}


def _rounds_csv(path, records):
    keys = ["round", "delta", "epsilon", "delta_x", "delta_z", "trace", "leakage"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in records:
            w.writerow(["" if r.get(k) is None else repr(float(r[k])) if k != "round" else r[k]
                        for k in keys])
    return path


def cmd_prepare_ideal(cfg, out):
    from .protocols import DeltaSchedule, corrective_prepare, postselect_prepare

    rounds = cfg["rounds"]
    if rounds < 0:
        raise ConfigError("rounds must be >= 0")
    if cfg["scheme"] == "postselect":
        res = postselect_prepare(cfg["delta_init"], rounds, cfg["dim"])
        records = [{"round": k, "delta_x": dx, "delta_z": dz}
                   for k, (dx, dz) in enumerate(res.squeezing_trace)]
        extra = {"success_prob": res.success_prob}
    elif cfg["scheme"] == "corrective":
        deltas = cfg["deltas"] or list(DEFAULT_SCHEDULE)
        if rounds > len(deltas):
            raise ConfigError(f"{rounds} rounds requested but only {len(deltas)} deltas given")
        sched = DeltaSchedule(deltas[:rounds], (cfg["epsilons"] or [0.0] * len(deltas))[:rounds])
        res = corrective_prepare(cfg["delta_init"], sched, cfg["dim"])
        records = res.records
        extra = {}
    else:
        raise ConfigError("scheme must be 'corrective' or 'postselect'")
    files = [write_json(out / "rounds.json", {"records": records, **extra}),
             _rounds_csv(out / "rounds.csv", records),
             save_state(out / "state.gkps", res.state, {"command": "prepare-ideal"})]
    for r in records:
        print(f"round {r['round']}: Delta_X = {r['delta_x']:.4f}  Delta_Z = {r['delta_z']:.4f}")
    return files, {}


def cmd_optimize_deltas(cfg, out):
    from .protocols import optimize_deltas

    sched = optimize_deltas(cfg["delta_init"], cfg["rounds"], cfg["dim"], xtol=cfg["xtol"])
    print("deltas: " + ", ".join(f"{d:.4f}" for d in sched.deltas))
    for note in sched.diagnostics:
        warnings.warn(note)
    return [write_json(out / "schedule.json", sched.to_dict())], {}


def cmd_prepare_physical(cfg, out):
    from .physical import LatticeRunConfig, run_lattice_preparation

    if cfg["preset"] not in LATTICE_PRESETS:
        raise ConfigError(f"unknown preset {cfg['preset']!r}; available: {', '.join(LATTICE_PRESETS)}")
    if cfg["mode"] not in ("beam", "closed"):
        raise ConfigError("mode must be 'beam' or 'closed'")
    if len(cfg["dims"]) != 3 or len(cfg["mixed_dims"]) != 3:
        raise ConfigError("dims and mixed_dims need three entries")
    run = LatticeRunConfig(squeeze_dims=tuple(cfg["dims"]), mixed_dims=tuple(cfg["mixed_dims"]),
                           depth_factor=cfg["depth_factor"], ramp=cfg["ramp_us"] * 1e-6,
                           deltas=tuple(cfg["deltas"]), displacement_mode=cfg["mode"],
                           harmonic=cfg["harmonic"], step_tol=cfg["step_tol"])
    traj = run_lattice_preparation(run)
    traj.write_csv(out / "trajectory.csv")
    for r in traj.records:
        print(f"round {r['round']}: Delta_X = {r['delta_x']:.4f}  Delta_Z = {r['delta_z']:.4f}  "
              f"ground pop = {r['ground_pop']:.4f}")
    files = [out / "trajectory.csv",
             write_json(out / "rounds.json", {"records": traj.records, "info": traj.info,
                                              "phase_log": traj.schedule.phase_log}),
             save_state(out / "state.gkps", traj.final_state, {"command": "prepare-physical"})]
    for w in traj.warnings:
        warnings.warn(w)
    return files, {}


def cmd_qec_round(cfg, out):
    from .gkp import effective_squeezing, finite_gkp_superposition
    from .protocols import qec_round

    if cfg["state"]:
        state, _ = _load(cfg["state"])
    else:
        state = finite_gkp_superposition(cfg["logical"], cfg["delta"], dim=cfg["dim"])
    records = [dict(zip(("delta_x", "delta_z"), effective_squeezing(state)), round=0)]
    for k in range(cfg["rounds"]):
        state = qec_round(state, cfg["delta"], quadrature=cfg["quadrature"])
        records.append(dict(zip(("delta_x", "delta_z"), effective_squeezing(state)), round=k + 1))
    for r in records:
        print(f"round {r['round']}: Delta_X = {r['delta_x']:.5f}  Delta_Z = {r['delta_z']:.5f}")
    return [write_json(out / "qec.json", {"records": records}),
            save_state(out / "state.gkps", state, {"command": "qec-round"})], {}


def _svg(path, W, q, p):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        warnings.warn("matplotlib not installed; SVG output skipped")
        return None
    plt.rcParams["svg.hashsalt"] = "gkptrap"
    fig, ax = plt.subplots(figsize=(5, 4.2))
    lim = float(np.max(np.abs(W))) or 1.0
    mesh = ax.pcolormesh(q, p, W, cmap="RdBu_r", vmin=-lim, vmax=lim, shading="auto")
    fig.colorbar(mesh, ax=ax, label="W(q, p)")
    ax.set_xlabel("q")
    ax.set_ylabel("p")
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def cmd_wigner(cfg, out):
    from .fock import partial_trace
    from .wigner import export_wigner, wigner

    if not cfg["state"]:
        raise ConfigError("state is required")
    if cfg["points"] < 2:
        raise ConfigError("points must be >= 2")
    state, header = _load(cfg["state"])
    if len(state.mode_shape) > 1:
        state = partial_trace(state, [len(state.mode_shape) - 1])
    q = np.linspace(cfg["q_min"], cfg["q_max"], cfg["points"])
    p = np.linspace(cfg["p_min"], cfg["p_max"], cfg["points"])
    W = wigner(state, q, p)
    files = list(export_wigner(out / "wigner.csv", W, q, p, {"source": str(cfg["state"])}))
    if cfg["svg"]:
        svg = _svg(out / "wigner.svg", W, q, p)
        if svg:
            files.append(svg)
    return files, {}


def _sweep_worker(args):
    command, cfg, out = args
    return run_command(command, cfg, Path(out), quiet=True)


def cmd_sweep(cfg, out):
    cmd = cfg["command"]
    if cmd not in OPTIONS or cmd == "sweep":
        raise ConfigError(f"sweep needs a runnable command, got {cmd!r}")
    vary = cfg["vary"]
    lengths = {len(v) for v in vary.values()}
    if len(lengths) > 1:
        raise ConfigError("all 'vary' lists must have equal length")
    n = lengths.pop() if lengths else 1
    jobs = []
    for i in range(n):
        point = dict(cfg["base"])
        point.update({k: v[i] for k, v in vary.items()})
        resolve_config(cmd, point)
        jobs.append((cmd, point, str(out / f"run-{i:03d}")))
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as ex:
            codes = list(ex.map(_sweep_worker, jobs))
    else:
        codes = [_sweep_worker(j) for j in jobs]
    summary = [{"run": Path(j[2]).name, "config": j[1], "exit_code": c} for j, c in zip(jobs, codes)]
    print(json.dumps(summary, indent=1))
    if any(codes):
        warnings.warn(f"{sum(1 for c in codes if c)} sweep runs failed")
    return [write_json(out / "sweep.json", summary)], {}


RUNNERS = {
    "params": cmd_params, "prepare-ideal": cmd_prepare_ideal, "optimize-deltas": cmd_optimize_deltas,
    "prepare-physical": cmd_prepare_physical, "qec-round": cmd_qec_round, "wigner": cmd_wigner,
    "sweep": cmd_sweep,
}


# -- driver -----------------------------------------------------------------------------

class StateFileError(GkpTrapError, OSError):
    """Unreadable or malformed state file."""


def _load(path):
    try:
        return load_state(path)
    except InvalidInput as exc:
        raise StateFileError(str(exc)) from None


def _exit_code(exc):
    if isinstance(exc, (ConfigError, InvalidParameters, InvalidDimension)):
        return 2
    if isinstance(exc, OSError):
        return 4
    return 3


def _fail(exc):
    code = _exit_code(exc)
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}),
          file=sys.stderr)
    return code


def run_command(command, cfg_in, out=None, quiet=False):
    """Resolve ``cfg_in``, run ``command`` and write outputs plus manifest; returns the exit code."""
    try:
        cfg = resolve_config(command, cfg_in)
    except ConfigError as exc:
        return _fail(exc)
    if out is None:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        out = root / f"{command}-{config_hash(command, cfg)}"
    out = Path(out)
    started = _now()
    try:
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if quiet:
                import contextlib
                import io as _io
                with contextlib.redirect_stdout(_io.StringIO()):
                    files, extra = RUNNERS[command](cfg, out)
            else:
                files, extra = RUNNERS[command](cfg, out)
        msgs = list(dict.fromkeys(f"{w.category.__name__}: {w.message}" for w in caught))
        write_manifest(out, command, cfg, [Path(f) for f in files], msgs, started, _now(),
                       __version__, extra)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        if not isinstance(exc, (GkpTrapError, ArithmeticError, OSError, np.linalg.LinAlgError,
                                ValueError)):
            raise
        return _fail(exc)
    if not quiet:
        print(f"outputs written to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="gkptrap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gkptrap {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, table in OPTIONS.items():
        sp = sub.add_parser(name, help=f"{name} command")
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out", help="output directory")
        for key, (default, typ, text) in {**table, **COMMON}.items():
            if typ is dict:
                continue
            flag = "--" + key.replace("_", "-")
            label = f"{text} (default {default})" if text else f"default {default}"
            if typ is bool:
                sp.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None,
                                help=label)
            else:
                sp.add_argument(flag, dest=key, default=None,
                                type=str if typ in ("floats", "ints") else typ, help=label)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.subcommand
    file_cfg = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            return _fail(exc)
        except json.JSONDecodeError as exc:
            return _fail(ConfigError(f"config file is not valid JSON: {exc}"))
        if not isinstance(file_cfg, dict):
            return _fail(ConfigError("config file must hold a JSON object"))
    flags = {k: v for k, v in vars(args).items()
             if k not in ("subcommand", "config", "out") and v is not None}
    merged = {**file_cfg, **flags}
    return run_command(command, merged, args.out)


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
