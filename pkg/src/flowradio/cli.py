"""Command-line entry point: ``flowradio {gen,train,reconstruct,active,report}``.

Exit codes: 0 success, 2 I/O failure, 3 invalid configuration, 4 training
diverged, 5 grid-shape mismatch, 6 malformed or missing run logs.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .activeloop import STRATEGIES, LoopConfig, RunLog, init_observations, run_strategy
from .artifacts import write_curve_csv, write_grayscale, write_json, write_trajectory_overlay
from .core import GridShape, nmse
from .flowmodel import TrainingDivergedError, VelocityField, fm_loss, zero_field_loss
from .planner import PlannerConfig
from .pnp import PnPConfig
from .scenegen import GeneratorConfig, build_dataset, default_data_root, generate_scenario, load_dataset, render_map
from .uncertainty import generate_ensemble, variance_map

EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED, EXIT_SHAPE, EXIT_LOGS = 2, 3, 4, 5, 6

logger = logging.getLogger("flowradio")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _add_pnp_args(p):
    g = p.add_argument_group("reconstruction")
    g.add_argument("--pnp-steps", type=int, default=50, help="outer PnP steps K")
    g.add_argument("--step-size", type=float, default=2.0, help="data-consistency step size")
    g.add_argument("--refine-low", type=int, default=1, help="inner iterations before the threshold")
    g.add_argument("--refine-high", type=int, default=10, help="inner iterations from the threshold on")
    g.add_argument("--refine-threshold", type=int, default=None,
                   help="first outer step using --refine-high (default: round(0.92*K), 46 for K=50)")
    g.add_argument("--fidelity", choices=("half", "full"), default="half",
                   help="data-fidelity constant: 1/2||Hz-y||^2 or ||Hz-y||^2")
    g.add_argument("--projection-noise", choices=("initial", "fresh"), default="initial",
                   help="anchor of each path projection: the run's initial noise map, or a fresh draw (variant)")
    g.add_argument("--ensemble-size", type=int, default=5, help="ensemble members M")


def _pnp_config(args) -> PnPConfig:
    return PnPConfig(args.pnp_steps, args.step_size, args.refine_low, args.refine_high,
                     args.refine_threshold, args.fidelity, args.projection_noise)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="flowradio", description=__doc__.splitlines()[0],
                                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="render synthetic train/test radio-map datasets", formatter_class=fmt)
    p.add_argument("--out", type=Path, default=None,
                   help="output directory (default: $FLOWRADIO_DATA or ./data)")
    p.add_argument("--count", type=int, default=800, help="training maps")
    p.add_argument("--test-count", type=int, default=30, help="held-out test maps (0 to skip)")
    p.add_argument("--size", type=int, default=32, help="grid side length")
    p.add_argument("--seed", type=int, default=0, help="global dataset seed")
    p.add_argument("--transmitters", type=int, default=7, help="transmitters per scene")
    p.add_argument("--buildings", type=int, default=6, help="buildings per scene")
    p.add_argument("--shadowing", type=float, default=2.0, help="shadowing std-dev in dB")

    p = sub.add_parser("train", help="fit the flow-matching velocity field", formatter_class=fmt)
    p.add_argument("--data", type=Path, default=None,
                   help="dataset root holding train/ (and optionally test/), or a single split directory")
    p.add_argument("--out", type=Path, required=True, help="model file to write")
    p.add_argument("--steps", type=int, default=8000, help="optimizer steps")
    p.add_argument("--batch-size", type=int, default=16, help="maps per step")
    p.add_argument("--lr", type=float, default=2e-3, help="peak learning rate")
    p.add_argument("--channels", type=int, default=32, help="hidden channels")
    p.add_argument("--hidden-layers", type=int, default=4, help="hidden convolution layers")
    p.add_argument("--dilations", type=str, default="1,2,4,8,1",
                   help="comma-separated dilation per convolution (hidden layers + 1)")
    p.add_argument("--seed", type=int, default=0, help="training seed")

    p = sub.add_parser("reconstruct", help="reconstruct one synthetic scene from sparse samples",
                       formatter_class=fmt)
    p.add_argument("--model", type=Path, required=True, help="trained model file")
    p.add_argument("--scenario-seed", type=int, default=0, help="seed of the ground-truth scene")
    p.add_argument("--fraction", type=float, default=0.1, help="fraction of cells observed")
    p.add_argument("--seed", type=int, default=0, help="sampling and noise seed")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_pnp_args(p)

    p = sub.add_parser("active", help="run one active-sampling mission", formatter_class=fmt)
    p.add_argument("--model", type=Path, required=True, help="trained model file")
    p.add_argument("--scenario-seed", type=int, default=0, help="seed of the ground-truth scene")
    p.add_argument("--budget", type=int, default=400, help="additional samples to collect")
    p.add_argument("--strategy", choices=STRATEGIES, default="proposed", help="sampling strategy")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="mission seed (initial samples, planner, ensembles)")
    p.add_argument("--init-fraction", type=float, default=0.02, help="initially observed fraction")
    p.add_argument("--slot-step-cap", type=int, default=None, help="flight steps per slot (default: 4 x grid side)")
    p.add_argument("--eval-every", type=int, default=50, help="random baseline: samples between evaluations")
    p.add_argument("--kappa", type=float, default=0.001, help="distance discount in candidate weights")
    p.add_argument("--beta", type=float, default=0.9, help="exploration incentive in step costs")
    p.add_argument("--candidates", type=int, default=10, help="candidates per slot N")
    p.add_argument("--start", type=str, default="0,0", help="take-off cell 'row,col'")
    p.add_argument("--size", type=int, default=None, help="scene grid side (default: the model's grid)")
    _add_pnp_args(p)

    p = sub.add_parser("report", help="compare NMSE curves across runs", formatter_class=fmt)
    p.add_argument("--runs", type=Path, nargs="+", required=True,
                   help="run directories (holding runlog.jsonl) or runlog files")
    p.add_argument("--out", type=Path, default=None, help="where to write comparison.csv")
    return parser


# subcommands ---------------------------------------------------------------


def cmd_gen(args) -> int:
    out = args.out or default_data_root()
    if args.count < 1 or args.test_count < 0 or args.size < 2:
        raise CliError(EXIT_CONFIG, "--count must be >= 1, --test-count >= 0 and --size >= 2")
    try:
        params = GeneratorConfig(n_transmitters=args.transmitters, n_buildings=args.buildings,
                                 shadowing_sigma=args.shadowing)
        shape = GridShape(args.size, args.size)
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "gen_config.json", {"command": "gen", "count": args.count,
                                             "test_count": args.test_count, "size": args.size,
                                             "seed": args.seed, "generator": params.to_dict()})
        m = build_dataset(args.count, shape, params, args.seed, out / "train", "train")
        print(f"train: {m.count} maps {args.size}x{args.size}, dB range [{m.db_min:.2f}, {m.db_max:.2f}]")
        if args.test_count:
            t = build_dataset(args.test_count, shape, params, args.seed, out / "test", "test")
            print(f"test: {t.count} maps, scenario seeds {t.scenario_seeds[0]}..{t.scenario_seeds[-1]}")
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    return 0


def _split_dirs(root: Path) -> tuple[Path, Path | None]:
    if (root / "train" / "manifest.json").exists():
        test = root / "test"
        return root / "train", test if (test / "manifest.json").exists() else None
    return root, None


def _heldout_batch(maps, transform, seed, n=16):
    rng = np.random.default_rng([seed, 99])
    idx = rng.choice(len(maps), size=min(n, len(maps)), replace=False)
    z1 = transform.apply(maps[idx])
    z0 = rng.standard_normal(z1.shape)
    t = rng.uniform(0.0, 1.0, size=len(idx))
    return list(zip(z0, z1, t))


def cmd_train(args) -> int:
    root = args.data or default_data_root()
    train_dir, test_dir = _split_dirs(root)
    try:
        dilations = tuple(int(x) for x in args.dilations.split(","))
        field = VelocityField(hidden_layers=args.hidden_layers, channels=args.channels,
                              dilations=dilations, n_steps=args.steps, batch_size=args.batch_size,
                              learning_rate=args.lr, random_state=args.seed)
        field._architecture()
        if args.steps < 1 or args.batch_size < 1 or not args.lr > 0:
            raise ValueError("--steps, --batch-size and --lr must be positive")
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    try:
        maps, manifest = load_dataset(train_dir)
        held_maps = load_dataset(test_dir)[0] if test_dir else maps
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    try:
        field.fit(maps, transform=manifest.transform)
    except TrainingDivergedError as exc:
        raise CliError(EXIT_DIVERGED, f"training diverged: {exc}") from exc
    field.metadata_ = {"generator": manifest.generator, "dataset_seed": manifest.seed,
                       "dataset_count": manifest.count}
    batch = _heldout_batch(held_maps, field.transform_, args.seed)
    trained, baseline = fm_loss(field, batch), zero_field_loss(batch)
    tail = float(np.mean(field.loss_history_[-50:]))
    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        field.save(args.out)
        write_json(args.out.with_name(args.out.name + ".config.json"), {
            "command": "train", "data": str(train_dir), "params": field.header()["params"],
            "heldout_loss": trained, "zero_field_loss": baseline, "final_train_loss": tail})
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}") from exc
    print(f"final training loss (last 50 steps): {tail:.4f}")
    print(f"held-out loss: {trained:.4f}  zero-field baseline: {baseline:.4f}")
    return 0


def _load_model(path: Path) -> VelocityField:
    try:
        return VelocityField.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(EXIT_IO, f"cannot load model {path}: {exc}") from exc


def _scene(field: VelocityField, seed: int):
    params = GeneratorConfig.from_dict(field.metadata_.get("generator", {}))
    return render_map(generate_scenario(field.shape_, params, seed))


def cmd_reconstruct(args) -> int:
    field = _load_model(args.model)
    try:
        pnp = _pnp_config(args)
        truth = _scene(field, args.scenario_seed)
        obs = init_observations(truth, args.fraction, np.random.default_rng([args.seed, 0]))
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    ens = generate_ensemble(field, obs, pnp, args.ensemble_size, args.seed)
    est = ens.mean()
    err = nmse(truth, est)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        write_grayscale(args.out / "truth.png", truth.values)
        write_grayscale(args.out / "reconstruction.png", est.values)
        write_grayscale(args.out / "uncertainty.png", variance_map(ens).values, units="dB^2")
        write_json(args.out / "result.json", {
            "command": "reconstruct", "model": str(args.model), "scenario_seed": args.scenario_seed,
            "fraction": args.fraction, "seed": args.seed, "observations": len(obs),
            "pnp": pnp.to_dict(), "ensemble_size": args.ensemble_size, "nmse": err})
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    print(f"observations: {len(obs)}  NMSE (linear power): {err:.6g}")
    return 0


def cmd_active(args) -> int:
    field = _load_model(args.model)
    try:
        start = tuple(int(v) for v in args.start.split(","))
        loop = LoopConfig(init_fraction=args.init_fraction, budget=args.budget,
                          slot_step_cap=args.slot_step_cap, ensemble_size=args.ensemble_size,
                          eval_every=args.eval_every, start=start, seed=args.seed)
        planner = PlannerConfig(kappa=args.kappa, beta=args.beta, n_candidates=args.candidates)
        pnp = _pnp_config(args)
        params = GeneratorConfig.from_dict(field.metadata_.get("generator", {}))
        shape = GridShape(args.size, args.size) if args.size else field.shape_
        scenario = generate_scenario(shape, params, args.scenario_seed)
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    truth = render_map(scenario)
    if not truth.shape.contains(loop.start):
        raise CliError(EXIT_CONFIG, f"--start {loop.start} outside the grid")
    if truth.shape != field.shape_:
        raise CliError(EXIT_SHAPE, f"scene grid {truth.shape} does not match model grid {field.shape_}")
    try:
        log = run_strategy(args.strategy, truth, field, loop, pnp, planner)
    except ValueError as exc:
        if "does not match model grid" in str(exc):
            raise CliError(EXIT_SHAPE, str(exc)) from exc
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    log.header["scenario_seed"] = args.scenario_seed
    log.header["model"] = args.model.name
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        log.write(out / "runlog.jsonl")
        write_curve_csv(out / "nmse_curve.csv", log.records)
        write_grayscale(out / "truth.png", truth.values)
        write_grayscale(out / "reconstruction.png", log.final_estimate.values)
        write_grayscale(out / "uncertainty.png", log.final_uncertainty, units="dB^2")
        write_trajectory_overlay(out / "trajectory.png", log.final_uncertainty, log.trajectories,
                                 log.observations.mask)
        write_json(out / "config.json", {"command": "active", **log.header,
                                         "stop_reason": log.stop_reason})
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    last = log.records[-1]
    print(f"{args.strategy}: {len(log.records)} evaluations, {last['steps']} flight steps, "
          f"{last['samples']} samples, final NMSE {last['nmse']:.6g} ({log.stop_reason})")
    return 0


def _read_runs(paths) -> list[tuple[str, RunLog]]:
    runs = []
    for p in paths:
        f = p / "runlog.jsonl" if p.is_dir() else p
        if not f.exists():
            raise CliError(EXIT_LOGS, f"missing runlog: {f}")
        try:
            runs.append((str(p), RunLog.read(f)))
        except ValueError as exc:
            raise CliError(EXIT_LOGS, str(exc)) from exc
    return runs


def comparison_table(runs: list[tuple[str, RunLog]]) -> tuple[list[str], list[list]]:
    """NMSE-vs-samples table; each run holds its last value until its next record."""
    samples = sorted({r["samples"] for _, log in runs for r in log.records})
    labels = [f"{log.strategy}:{name}" for name, log in runs]
    rows = []
    for s in samples:
        row = [s]
        for _, log in runs:
            prior = [r["nmse"] for r in log.records if r["samples"] <= s]
            row.append(repr(prior[-1]) if prior else "")
        rows.append(row)
    return ["samples"] + labels, rows


def cmd_report(args) -> int:
    runs = _read_runs(args.runs)
    header, rows = comparison_table(runs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if args.out is not None:
        try:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / "comparison.csv").write_text(buf.getvalue(), encoding="utf-8")
        except OSError as exc:
            raise CliError(EXIT_IO, str(exc)) from exc
    else:
        sys.stdout.write(buf.getvalue())
    finals: dict[str, list[float]] = {}
    for _, log in runs:
        finals.setdefault(log.strategy, []).append(log.final_nmse)
    for strategy, vals in sorted(finals.items()):
        print(f"{strategy}: {len(vals)} run(s), median final NMSE {np.median(vals):.6g}")
    if "proposed" in finals:
        prop = float(np.median(finals["proposed"]))
        for strategy, vals in sorted(finals.items()):
            if strategy == "proposed":
                continue
            base = float(np.median(vals))
            print(f"proposed vs {strategy}: {100.0 * (base - prop) / base:.1f}% NMSE reduction")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "reconstruct": cmd_reconstruct,
            "active": cmd_active, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
