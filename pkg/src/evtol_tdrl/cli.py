"""Command-line entry points.

Exit codes: 0 success, 2 usage error, 3 invalid input or contract violation,
4 numerical failure.  Every command writes a run manifest next to its main
output (``<out>.manifest.json``) unless ``--manifest`` names another path.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import atomic_write
from .env import EnvConfig, TakeoffEnv, write_log_csv
from .errors import ContractViolation, NumericalFailure, ThrustSolverError
from .vehicle import ControlInput, VehicleConfig

log = logging.getLogger("evtol_tdrl")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4


# ----------------------------------------------------------------------------
# config and manifest


def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - {"vehicle", "env", "optimizer", "transformer", "sac"}
    if unknown:
        raise ContractViolation(f"unknown config sections: {sorted(unknown)}")
    return cfg


def merged(section: dict | None, **flags) -> dict:
    """Config-file values overridden by every flag that was actually given."""
    out = dict(section or {})
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(args, config: dict, inputs: list, outputs: list, started: float, extra: dict | None = None) -> Path:
    target = Path(args.manifest) if args.manifest else Path(str(outputs[0]) + ".manifest.json")
    doc = {
        "command": args.command,
        "argv": sys.argv[1:],
        "version": __version__,
        "seed": args.seed,
        "config": config,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {str(p): file_digest(p) for p in outputs if Path(p).exists()},
        "wall_seconds": time.time() - started,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        doc["result"] = extra
    atomic_write(target, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
    return target


def vehicle_from(cfg: dict) -> VehicleConfig:
    return VehicleConfig.from_dict(cfg.get("vehicle", {}))


def env_from(cfg: dict) -> EnvConfig:
    return EnvConfig(**cfg.get("env", {}))


# ----------------------------------------------------------------------------
# commands


def read_controls(path) -> tuple[np.ndarray, np.ndarray]:
    """CSV with columns ``P`` (W) and ``theta`` (rad), one row per 0.1 s step."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"P", "theta"} <= set(rows[0]):
        raise ContractViolation(f"{path}: expected CSV columns P and theta")
    return np.array([float(r["P"]) for r in rows]), np.array([float(r["theta"]) for r in rows])


def cmd_simulate(args, cfg) -> dict:
    powers, thetas = read_controls(args.controls)
    env = TakeoffEnv(vehicle_from(cfg), env_from(cfg), guided=False, record=True)
    env.reset(seed=args.seed)
    res = None
    for i in range(env.config.max_steps):
        k = min(i, len(powers) - 1)
        res = env.step(ControlInput(powers[k], thetas[k]))
        if res.terminated:
            break
    write_log_csv(env.log, args.out)
    summary = {"termination_cause": res.termination_cause, "steps": env.steps, "energy_wh": env.energy_wh}
    print(json.dumps(summary))
    return summary


def _condition(args):
    from .reference import FlightCondition, verification_condition

    if args.verification:
        return verification_condition()
    return FlightCondition(args.alpha_max, args.a_max, args.k_w, args.eta, args.s_ref,
                           path_constraints=not args.no_path_constraints)


def cmd_optimize_ref(args, cfg) -> dict:
    from .reference import OptimizerSettings, optimize, rollout, sample_controls

    cond = _condition(args)
    settings = OptimizerSettings(**cfg.get("optimizer", {}))
    res = optimize(cond, vehicle_from(cfg), budget=args.budget, seed=args.seed, settings=settings, env=env_from(cfg))
    ro = rollout(res.control, cond, vehicle_from(cfg), env_from(cfg))
    doc = {
        "condition": cond.to_dict(),
        "control": res.control.to_dict(),
        "energy_wh": res.energy_wh,
        "feasible": res.feasible,
        "residuals": res.residuals,
        "evaluations": res.evaluations,
        "steps": len(ro.powers),
    }
    atomic_write(args.out, (json.dumps(doc, indent=2) + "\n").encode())
    if args.controls_out:
        p, th = sample_controls(res.control, env_from(cfg).dt)
        with open(args.controls_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "P", "theta"])
            for i, (a, b) in enumerate(zip(p[: len(ro.powers)], th[: len(ro.powers)])):
                w.writerow([format(i * 0.1, ".17g"), format(a, ".17g"), format(b, ".17g")])
    print(json.dumps({"energy_wh": res.energy_wh, "feasible": res.feasible, "evaluations": res.evaluations}))
    return {"energy_wh": res.energy_wh, "feasible": res.feasible}


def cmd_gen_dataset(args, cfg) -> dict:
    from .reference import build_dataset, save_dataset

    entries = build_dataset(args.n, args.seed, budget=args.budget, cfg=vehicle_from(cfg), workers=args.workers)
    save_dataset(entries, args.out)
    counts = {s: sum(e.split == s for e in entries) for s in ("train", "val", "test")}
    print(json.dumps({"entries": len(entries), **counts}))
    return {"entries": len(entries), **counts}


def _transformer_cfg(args, cfg):
    from .transformer import TransformerConfig, desk_config

    flags = merged(cfg.get("transformer"), epochs=args.epochs, lr=args.lr, batch_size=args.batch_size)
    return TransformerConfig(**flags) if args.full_scale else desk_config(**flags)


def cmd_train_transformer(args, cfg) -> dict:
    from .reference import load_dataset
    from .transformer import save_model, train

    entries = load_dataset(args.dataset)
    tr = [e.controls for e in entries if e.split == "train"]
    va = [e.controls for e in entries if e.split == "val"]
    tcfg = _transformer_cfg(args, cfg)
    res = train(tr, va, tcfg, seed=args.seed,
                progress=lambda ep, a, b: log.info("epoch %d train %.5f val %.5f", ep, a, b))
    save_model(args.out, res.model, args.seed, {"best_epoch": res.best_epoch, "best_val": res.best_val})
    if args.curve:
        with open(args.curve, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_nll", "val_nll"])
            for i, (a, b) in enumerate(zip(res.train_curve, res.val_curve)):
                w.writerow([i, repr(a), repr(b)])
    summary = {"best_epoch": res.best_epoch, "best_val": res.best_val, "first_val": res.val_curve[0],
               "aborted": res.aborted}
    print(json.dumps(summary))
    return summary


def _sac_cfg(args, cfg):
    from .sac import SacConfig, desk_config

    flags = merged(cfg.get("sac"), total_steps=args.steps, eval_interval=args.eval_interval)
    if args.full_scale:
        return SacConfig(**flags)
    return desk_config(**flags)


def cmd_train_sac(args, cfg) -> dict:
    from .guided import train_guided, train_vanilla
    from .transformer import load_model

    scfg = _sac_cfg(args, cfg)
    vehicle = vehicle_from(cfg)
    if args.mode == "guided":
        if not args.transformer:
            raise ContractViolation("--mode guided needs --transformer")
        model, _ = load_model(args.transformer)
        run = train_guided(model, scfg, args.seed, vehicle, args.stop_on_success, args.metrics)
        res = run.sac
        extra = {"envelope_violations": run.envelope_violations, "checked_actions": run.checked_actions,
                 "transformer_frozen": run.transformer_frozen}
    else:
        res = train_vanilla(scfg, args.seed, vehicle, args.stop_on_success, args.metrics)
        extra = {}
    res.agent.save(args.out, args.seed, {"mode": args.mode, "steps": res.steps, "best_return": res.best_return})
    summary = {"mode": args.mode, "steps": res.steps, "best_return": res.best_return, "best_step": res.best_step,
               "episodes": res.episodes, "successes": res.successes, "first_success_step": res.first_success_step,
               **extra}
    print(json.dumps(summary))
    return summary


def _read_energy(path) -> float:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ContractViolation(f"{path}: empty trajectory log")
    return float(rows[-1]["energy_Wh"])


def cmd_evaluate(args, cfg) -> dict:
    from .metrics import AccuracyReport, evaluate_generation

    if args.trajectory:
        if args.reference_energy is None and not args.reference:
            raise ContractViolation("--trajectory needs --reference or --reference-energy")
        e_ref = args.reference_energy if args.reference_energy is not None else _read_energy(args.reference)
        rep = AccuracyReport.of(_read_energy(args.trajectory), e_ref)
        out = rep.to_dict()
    elif args.agent:
        from .guided import GuidedTakeoff, VanillaTakeoff, run_episode
        from .sac import SacAgent
        from .transformer import load_model

        agent, meta = SacAgent.load(args.agent)
        if meta.get("mode") == "guided":
            if not args.transformer:
                raise ContractViolation("guided agent needs --transformer")
            env = GuidedTakeoff(load_model(args.transformer)[0], vehicle_from(cfg), env_from(cfg), record=True)
        else:
            env = VanillaTakeoff(vehicle_from(cfg), env_from(cfg), record=True)
        ep = run_episode(agent, env, args.log)
        out = dict(ep)
        if args.reference_energy is not None:
            out.update(AccuracyReport.of(ep["energy_wh"], args.reference_energy).to_dict())
    elif args.transformer and args.dataset:
        from .reference import load_dataset
        from .transformer import load_model

        model, _ = load_model(args.transformer)
        test = [e for e in load_dataset(args.dataset) if e.split == "test"]
        rep = evaluate_generation(model, test, vehicle_from(cfg), seed=args.seed)
        out = {"mean_ra": rep.mean_ra, "success_rate": rep.success_rate,
               "reports": [r.to_dict() for r in rep.reports], "causes": rep.causes}
    else:
        raise ContractViolation("evaluate needs --trajectory, --agent, or --transformer with --dataset")
    atomic_write(args.out, (json.dumps(out, indent=2) + "\n").encode())
    print(json.dumps({k: v for k, v in out.items() if k not in ("reports", "causes")}))
    return out


def svg_polyline(xs, ys, xlabel: str, ylabel: str, width: int = 480, height: int = 320) -> str:
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    pad = 40
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    sx = (width - 2 * pad) / (x1 - x0 if x1 > x0 else 1.0)
    sy = (height - 2 * pad) / (y1 - y0 if y1 > y0 else 1.0)
    pts = " ".join(f"{pad + (x - x0) * sx:.2f},{height - pad - (y - y0) * sy:.2f}" for x, y in zip(xs, ys))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">{xlabel} [{x0:.4g}, {x1:.4g}]</text>\n'
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" '
        f'text-anchor="middle">{ylabel} [{y0:.4g}, {y1:.4g}]</text>\n'
        f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{pts}"/>\n'
        "</svg>\n"
    )


def cmd_export_plots(args, cfg) -> dict:
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ContractViolation(f"{args.csv}: no rows")
    col = {k: [float(r[k]) for r in rows] for k in ("t", "x", "y", "v_x")}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    a, b = out / "trajectory_y_vs_x.svg", out / "speed_vx_vs_t.svg"
    atomic_write(a, svg_polyline(col["x"], col["y"], "x (m)", "y (m)").encode())
    atomic_write(b, svg_polyline(col["t"], col["v_x"], "t (s)", "V_x (m/s)").encode())
    print(json.dumps({"plots": [str(a), str(b)]}))
    return {"plots": [str(a), str(b)]}


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON file with vehicle/env/optimizer/transformer/sac sections")
    common.add_argument("--manifest", help="where to write the run manifest")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="evtol-tdrl", description="Tilt-wing takeoff: references, transformer, guided SAC.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="fly a control CSV through the environment")
    s.add_argument("--controls", required=True, help="CSV with P (W) and theta (rad) columns")
    s.add_argument("--out", required=True, help="trajectory log CSV")

    s = sub.add_parser("optimize-ref", parents=[common], help="minimum-energy reference for one flight condition")
    s.add_argument("--verification", action="store_true", help="k_w=1, eta=0.9, S_ref=1, takeoff constraints only")
    s.add_argument("--alpha-max", type=float, default=15.0, help="deg")
    s.add_argument("--a-max", type=float, default=0.4, help="g")
    s.add_argument("--k-w", type=float, default=1.0)
    s.add_argument("--eta", type=float, default=0.9)
    s.add_argument("--s-ref", type=float, default=1.0)
    s.add_argument("--no-path-constraints", action="store_true")
    s.add_argument("--budget", type=int, default=20000, help="rollouts")
    s.add_argument("--out", required=True, help="result JSON")
    s.add_argument("--controls-out", help="optional CSV of the sampled controls")

    s = sub.add_parser("gen-dataset", parents=[common], help="optimize LHS conditions into a JSON-lines dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--budget", type=int, default=8000, help="rollouts per condition")
    s.add_argument("--workers", type=int, help="process count (capped by EVTOL_THREADS)")

    s = sub.add_parser("train-transformer", parents=[common], help="fit the trajectory transformer")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--curve", help="optional CSV of per-epoch losses")
    s.add_argument("--full-scale", action="store_true", help="use the full hyperparameters instead of desk ones")

    s = sub.add_parser("train-sac", parents=[common], help="train a vanilla or transformer-guided SAC agent")
    s.add_argument("--mode", choices=("vanilla", "guided"), required=True)
    s.add_argument("--transformer", help="transformer checkpoint (guided mode)")
    s.add_argument("--steps", type=int, help="total environment steps")
    s.add_argument("--eval-interval", type=int)
    s.add_argument("--stop-on-success", action="store_true", help="stop at the first successful takeoff episode")
    s.add_argument("--full-scale", action="store_true", help="3x512 networks, batch 256, 5e6 steps")
    s.add_argument("--metrics", help="CSV of evaluation records")
    s.add_argument("--out", required=True, help="agent checkpoint path")

    s = sub.add_parser("evaluate", parents=[common], help="energy accuracy against a reference")
    s.add_argument("--trajectory", help="trajectory log CSV to score")
    s.add_argument("--reference", help="reference trajectory log CSV")
    s.add_argument("--reference-energy", type=float, help="reference energy in Wh")
    s.add_argument("--agent", help="SAC checkpoint to fly deterministically")
    s.add_argument("--transformer", help="transformer checkpoint")
    s.add_argument("--dataset", help="dataset whose test split is regenerated open loop")
    s.add_argument("--log", help="episode log CSV when flying an agent")
    s.add_argument("--out", required=True, help="report JSON")

    s = sub.add_parser("export-plots", parents=[common], help="SVG plots from a trajectory log")
    s.add_argument("--csv", required=True)
    s.add_argument("--out-dir", required=True)
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize-ref": cmd_optimize_ref,
    "gen-dataset": cmd_gen_dataset,
    "train-transformer": cmd_train_transformer,
    "train-sac": cmd_train_sac,
    "evaluate": cmd_evaluate,
    "export-plots": cmd_export_plots,
}

MAIN_OUTPUT = {"export-plots": "out_dir"}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        cfg = load_config(args.config)
        result = COMMANDS[args.command](args, cfg)
        inputs = [getattr(args, k) for k in ("controls", "dataset", "transformer", "agent", "trajectory", "reference",
                                             "csv", "config") if getattr(args, k, None)]
        out_attr = MAIN_OUTPUT.get(args.command, "out")
        main_out = getattr(args, out_attr)
        outputs = [main_out] + [getattr(args, k) for k in ("metrics", "curve", "log", "controls_out")
                                if getattr(args, k, None)]
        if args.command == "export-plots":
            outputs = [Path(main_out) / "trajectory_y_vs_x.svg", Path(main_out) / "speed_vx_vs_t.svg"]
        write_manifest(args, cfg, inputs, outputs, started, result)
    except (ContractViolation, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalFailure, ThrustSolverError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
