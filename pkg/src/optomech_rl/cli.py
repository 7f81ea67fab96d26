"""Command-line entry point: train, evaluate, sweep, wigner, validate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, ConfigError, ExperimentConfig, dump_config, load_config, preset_config, with_overrides
from .control import StatePrepEnv
from .diagnostics import (
    fock_matrix_map,
    log_negativity,
    mechanical_state,
    purity,
    wigner,
    wigner_axes,
    write_matrix_map_csv,
)
from .dynamics import PhysicsInvariantError
from .hilbert import carrier_detunings, validate_offresonance
from .rl import CheckpointError, actor_forward, load_actor, train

log = logging.getLogger("optomech_rl")

EXIT_OK, EXIT_CONFIG, EXIT_PHYSICS, EXIT_IO = 0, 2, 3, 4


def make_env(cfg: ExperimentConfig, check: bool = True) -> StatePrepEnv:
    return StatePrepEnv(cfg.system, cfg.target, cfg.T, cfg.S, cfg.omega_max,
                        fidelity_mode=cfg.fidelity_mode, n_sub=cfg.n_sub, check=check)


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# schedule files


def write_schedule_csv(path, amplitudes, dt):
    amplitudes = np.asarray(amplitudes)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t"] + [f"omega_{l + 1}" for l in range(amplitudes.shape[1])])
        for s, row in enumerate(amplitudes):
            w.writerow([s, _fmt(s * dt)] + [_fmt(x) for x in row])


def read_schedule_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = [i for i, h in enumerate(header) if h.startswith("omega_")]
    if not cols:
        raise ValueError(f"{path}: no omega_* columns")
    return np.array([[float(r[i]) for i in cols] for r in body])


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, (int, str)) else _fmt(x) for x in row])


# ---------------------------------------------------------------------------
# commands


def _versions():
    import scipy
    import torch

    return {"optomech_rl": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "torch": torch.__version__}


def cmd_train(cfg: ExperimentConfig, record_timing: bool = False):
    """Train one agent; write training log, best schedule, checkpoints and a manifest."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"status": "running", "seed": cfg.rl.seed, "versions": _versions(),
                "config": dump_config(cfg), "artifacts": {}}
    env = make_env(cfg)
    report = None
    try:
        report = train(env, cfg.rl, checkpoint_dir=out / "checkpoints")
    except Exception as exc:
        manifest.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        _write_manifest(out, manifest)
        raise
    write_rows(out / "training_log.csv",
               ["epoch", "episode_reward", "fidelity", "best_fidelity", "noise_sigma"],
               [(r["epoch"], r["episode_reward"], r["fidelity"], r["best_fidelity"], r["noise_sigma"])
                for r in report.epochs])
    write_schedule_csv(out / "best_schedule.csv", report.best_amplitudes, env.dt)
    manifest["artifacts"] = {"training_log": "training_log.csv", "best_schedule": "best_schedule.csv",
                             "checkpoints": [str(Path(p).relative_to(out)) for p in report.checkpoints]}
    if record_timing:
        write_rows(out / "timing.csv", ["epoch", "wall_clock"], list(enumerate(report.wall_clock)))
        manifest["artifacts"]["timing"] = "timing.csv"
    manifest.update(status="complete", best_fidelity=report.best_fidelity, best_epoch=report.best_epoch,
                    detunings=list(env.detunings.deltas))
    _write_manifest(out, manifest)
    return report


def _write_manifest(out: Path, manifest: dict):
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def schedule_from_checkpoint(path, cfg: ExperimentConfig) -> np.ndarray:
    """Noise-free greedy rollout of a saved actor."""
    env = make_env(cfg)
    actor = load_actor(path, expected_obs_size=env.obs_size, expected_actions=env.n_actions)
    obs = env.reset()
    done = False
    while not done:
        obs, _, done = env.step(actor_forward(actor, obs))
    return env.schedule().amplitudes


def cmd_evaluate(cfg: ExperimentConfig, *, schedule=None, checkpoint=None, out_dir=None):
    """Replay a schedule without noise and write fidelity trace, Wigner grid and Fock map."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if checkpoint is not None:
        amps = schedule_from_checkpoint(checkpoint, cfg)
    else:
        amps = read_schedule_csv(schedule) if not isinstance(schedule, np.ndarray) else schedule
    env = make_env(cfg)
    if amps.shape != (env.S, env.n_actions):
        raise ValueError(f"schedule shape {amps.shape} does not match config (S={env.S}, L={env.n_actions})")
    fids, states = env.rollout(amps)
    two_mode = cfg.system.kind == "double"
    header = ["step", "t", "trace_error", "fidelity", "purity"] + (["log_negativity"] if two_mode else [])
    rows = []
    for s, rho in enumerate(states):
        rb = mechanical_state(rho, cfg.system)
        row = [s, s * env.dt, abs(complex(np.trace(rho)) - 1.0), fids[s], purity(rho)]
        if two_mode:
            row.append(log_negativity(rb, cfg.system.nm))
        rows.append(row)
    write_rows(out / "fidelity_trace.csv", header, rows)
    write_schedule_csv(out / "evaluated_schedule.csv", amps, env.dt)
    rb = mechanical_state(states[-1], cfg.system)
    if two_mode:
        labels = [f"{i}{j}" for i in range(cfg.system.nm[0]) for j in range(cfg.system.nm[1])]
        write_matrix_map_csv(out / "fock_map.csv", fock_matrix_map(rb), labels)
    else:
        write_matrix_map_csv(out / "fock_map.csv", fock_matrix_map(rb))
        wigner(rb).to_csv(out / "wigner.csv")
    result = {"final_fidelity": float(fids[-1]), "fidelities": fids}
    if two_mode:
        result["log_negativity"] = np.array([r[-1] for r in rows])
    return result


def run_training_value(cfg: ExperimentConfig, parameter: str, value: float, seed: int) -> float:
    sys_cfg = cfg.system
    if parameter == "kappa":
        sys_cfg = replace(sys_cfg, kappa=float(value))
    elif parameter in ("gamma_M", "gamma_m"):
        sys_cfg = replace(sys_cfg, gamma_m=(float(value),) * sys_cfg.n_modes)
    elif parameter == "n_th":
        sys_cfg = replace(sys_cfg, n_th=(float(value),) * sys_cfg.n_modes)
    else:
        raise ConfigError(f"sweep parameter {parameter!r}: expected kappa, gamma_M or n_th")
    run = replace(cfg, system=sys_cfg, rl=replace(cfg.rl, seed=int(seed)))
    return train(make_env(run), run.rl).best_fidelity


def cmd_sweep(cfg: ExperimentConfig, parameter: str, values, seeds=None, out_path=None):
    """Best fidelity per parameter value (mean over ``seeds``, default the config seed)."""
    values = [float(v) for v in values]
    if len(values) < 2:
        raise ConfigError("sweep needs at least two values")
    seeds = list(seeds) if seeds else [cfg.rl.seed]
    rows = []
    for v in values:
        per_seed = [run_training_value(cfg, parameter, v, s) for s in seeds]
        rows.append([v, float(np.mean(per_seed))] + per_seed)
    out_path = Path(out_path or Path(cfg.out_dir) / f"sweep_{parameter}.csv")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    header = ["value", "best_fidelity"] + ([f"seed_{s}" for s in seeds] if len(seeds) > 1 else [])
    write_rows(out_path, header, [r if len(seeds) > 1 else r[:2] for r in rows])
    return rows


def cmd_validate(cfg: ExperimentConfig, schedule=None, margin=10.0):
    det = carrier_detunings(cfg.target, cfg.system)
    if schedule is None:
        peaks = cfg.omega_max
    else:
        amps = read_schedule_csv(schedule) if not isinstance(schedule, np.ndarray) else schedule
        peaks = np.max(np.abs(amps), axis=0)
    return validate_offresonance(peaks, cfg.system, det, margin=margin)


# ---------------------------------------------------------------------------
# argument handling


def _resolve_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset_config(args.preset)
    else:
        raise ConfigError("one of --config PATH or --preset NAME is required")
    return with_overrides(cfg, seed=args.seed, out_dir=args.out, steps=args.steps_override,
                          epochs=getattr(args, "epochs", None))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment INI file")
    common.add_argument("--preset", metavar="NAME", choices=PRESETS, help="built-in parameter set")
    common.add_argument("--seed", type=int, help="override the RNG seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--steps-override", type=int, metavar="N", help="override the number of control steps S")
    common.add_argument("--epochs", type=int, help="override the number of training epochs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="optomech-rl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", parents=[common], help="train a DDPG agent")
    t.add_argument("--record-timing", action="store_true", help="also write timing.csv (not reproducible)")
    e = sub.add_parser("evaluate", parents=[common], help="replay a schedule or checkpoint")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--schedule", metavar="CSV")
    src.add_argument("--checkpoint", metavar="FILE")
    s = sub.add_parser("sweep", parents=[common], help="best fidelity versus a dissipation parameter")
    s.add_argument("--parameter", required=True, choices=["kappa", "gamma_M", "n_th"])
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    w = sub.add_parser("wigner", parents=[common], help="Wigner grid of a replayed or ideal state")
    wsrc = w.add_mutually_exclusive_group(required=True)
    wsrc.add_argument("--schedule", metavar="CSV")
    wsrc.add_argument("--ideal", action="store_true", help="use the target state itself")
    w.add_argument("--extent", type=float, default=4.0)
    w.add_argument("--points", type=int, default=81)
    v = sub.add_parser("validate", parents=[common], help="off-resonance check of a schedule's peak amplitudes")
    v.add_argument("--schedule", metavar="CSV")
    v.add_argument("--margin", type=float, default=10.0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = _resolve_config(args)
        if args.command == "train":
            rep = cmd_train(cfg, record_timing=args.record_timing)
            print(f"best fidelity {rep.best_fidelity:.6f} at epoch {rep.best_epoch}; outputs in {cfg.out_dir}")
        elif args.command == "evaluate":
            res = cmd_evaluate(cfg, schedule=args.schedule, checkpoint=args.checkpoint)
            print(f"final fidelity {res['final_fidelity']:.6f}; outputs in {cfg.out_dir}")
        elif args.command == "sweep":
            seeds = [int(x) for x in args.seeds.split(",")] if args.seeds else None
            rows = cmd_sweep(cfg, args.parameter, args.values.split(","), seeds)
            for r in rows:
                print(f"{args.parameter}={r[0]:g}  best_fidelity={r[1]:.6f}")
        elif args.command == "wigner":
            ax = wigner_axes(args.extent, args.points)
            if cfg.system.kind != "single":
                raise ConfigError("wigner needs a single-resonator config")
            if args.ideal:
                psi = cfg.target.state_vector(cfg.system.nm)
                rb = np.outer(psi, psi.conj())
            else:
                env = make_env(cfg)
                _, states = env.rollout(read_schedule_csv(args.schedule))
                rb = mechanical_state(states[-1], cfg.system)
            Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
            wigner(rb, *ax).to_csv(Path(cfg.out_dir) / "wigner.csv")
            print(f"wrote {Path(cfg.out_dir) / 'wigner.csv'}")
        elif args.command == "validate":
            rep = cmd_validate(cfg, args.schedule, args.margin)
            print(rep)
            if not rep.passed:
                return EXIT_PHYSICS
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PhysicsInvariantError as exc:
        print(f"physics invariant violated: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
