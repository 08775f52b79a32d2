import os
import argparse
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from . import __version__
from .arl import VARIANTS, ADVERSARY_KINDS, predict_target, train_adversary, train_arl, write_metric_log
from .artifacts import collect_metric_files, copy_to_clipboard, save_to_file, staged_output
from .config import format_value, load_experiment, parse_sections, parse_value, write_config
from .datasets import export_csv, gen_mixture, load_tabular, parse_schema, split
from .dynamics import GAME_FORMS, analyze, grid_export, write_report, write_trajectory
from .errors import ArlLabError, CheckpointError, ConfigError
from .nn import load_checkpoint, save_checkpoint
from .tradeoff import TradeoffPoint, evaluate_front, metrics, read_metric_files, write_front_report, write_metric_file

CURRENT_VERSION = f"v{__version__}"

EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CHECKPOINT_FILE = "checkpoint.txt"
METRICS_FILE = "metrics.csv"
MANIFEST_FILE = "manifest.txt"

MIXTURE_SCHEMA = """\
# Schema of gen-data output
delimiter: comma
header: true
column: x0: feature
column: x1: feature
column: t: target: 0,1
column: s: sensitive: 0,1
column: split: drop
"""


def load_experiment_data(experiment):
    """(train, test) datasets described by the dataset.* keys."""
    if experiment["dataset.kind"] == "mixture":
        data = gen_mixture(experiment.mixture_config())
        return split(data, experiment["dataset.splitFraction"], experiment["arl.seed"])
    schema = parse_schema(experiment["dataset.schema"])
    return load_tabular(
        schema,
        experiment["dataset.train"],
        experiment["dataset.test"] or None,
        fraction=experiment["dataset.splitFraction"],
        seed=experiment["arl.seed"],
        unknown=experiment["dataset.unknownCategory"],
    )


def run_training(experiment, run_dir, progress=False):
    """One ARL run: checkpoint, per-epoch metrics and a manifest that reproduces it."""
    train, _ = load_experiment_data(experiment)
    config = experiment.arl_config(train.n_classes, train.m_classes)
    run = train_arl(config, train, experiment.architecture(), progress=progress)

    os.makedirs(run_dir, exist_ok=True)
    run.save(os.path.join(run_dir, CHECKPOINT_FILE), {"codeVersion": CURRENT_VERSION})
    write_metric_log(os.path.join(run_dir, METRICS_FILE), run.log)
    write_config(os.path.join(run_dir, MANIFEST_FILE), experiment.values,
                 header=f"arl-lab {CURRENT_VERSION} run manifest")
    return run.log[-1] if run.log else None


def _run_training_job(job):
    experiment, run_dir = job
    return run_training(experiment, run_dir)


def run_name(alpha, seed):
    return f"alpha-{format_value(alpha)}_seed-{seed}"


def _flag(key, text):
    return None if text is None else parse_value(key, text)


def _number_list(flag, text, kind):
    try:
        values = tuple(kind(v) for v in text.split(",") if v.strip())
    except ValueError as e:
        raise ConfigError(flag, f"cannot parse '{text}' ({e})") from e
    if not values:
        raise ConfigError(flag, "needs at least one value")
    return values


def cmd_train(args):
    experiment = load_experiment(args.config, {
        "arl.seed": args.seed,
        "arl.alpha": args.alpha,
        "arl.variant": args.variant,
        "output.dir": args.out,
    })
    seeds = _number_list("--seeds", args.seeds, int) if args.seeds else (experiment["arl.seed"],)
    alphas = _number_list("--alphas", args.alphas, float) if args.alphas else (experiment["arl.alpha"],)
    out = experiment["output.dir"]
    sweep = bool(args.seeds or args.alphas)

    print(f"Training {experiment['arl.variant']} into {out}...")
    with staged_output(out, args.force) as staging:
        if not sweep:
            last = run_training(experiment, staging, progress=not args.quiet)
            if last is not None:
                print(f"Final epoch: target_acc={last.target_acc:.2f}% disc_acc={last.disc_acc:.2f}% "
                      f"disc_entropy={last.disc_entropy_nats:.4f} nats")
        else:
            jobs = []
            for alpha in alphas:
                for seed in seeds:
                    values = {**experiment.values, "arl.alpha": alpha, "arl.seed": seed}
                    jobs.append((replace(experiment, values=values), os.path.join(staging, run_name(alpha, seed))))
            print(f"Running {len(jobs)} runs with {args.jobs} job(s)...")
            if args.jobs > 1:
                with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                    list(pool.map(_run_training_job, jobs))
            else:
                for job in jobs:
                    run_training(*job, progress=not args.quiet)
    print(f"Done! Run artifacts saved to {out}.")


def find_runs(path):
    """A run directory itself, or the run directories of a sweep."""
    if os.path.isfile(os.path.join(path, CHECKPOINT_FILE)):
        return [path]
    runs = sorted(
        os.path.join(path, name) for name in os.listdir(path) if os.path.isdir(os.path.join(path, name))
    ) if os.path.isdir(path) else []
    runs = [run for run in runs if os.path.isfile(os.path.join(run, CHECKPOINT_FILE))]
    if not runs:
        raise CheckpointError(f"no {CHECKPOINT_FILE} in {path} or its subdirectories")
    return runs


def evaluate_run(run_dir, config_path=None, adversary_kind=None, progress=False):
    """Post-hoc adversary against a trained run's frozen encoder."""
    # the manifest fixes data, split seed and labels; --config may only retune the attack
    overrides = parse_sections(config_path, ("adversary", "eval")) if config_path else {}
    if adversary_kind is not None:
        overrides["adversary.kind"] = adversary_kind
    experiment = load_experiment(os.path.join(run_dir, MANIFEST_FILE), overrides)
    models, _ = load_checkpoint(os.path.join(run_dir, CHECKPOINT_FILE))
    missing = {"encoder", "predictor"} - set(models)
    if missing:
        raise CheckpointError(f"{run_dir}: checkpoint lacks role(s) {', '.join(sorted(missing))}")
    encoder, predictor = models["encoder"], models["predictor"]
    encoder.frozen = True

    train, test = load_experiment_data(experiment)
    result = train_adversary(encoder, experiment.adversary_config(), train, test, progress=progress)
    point = TradeoffPoint(
        target_acc=metrics(predict_target(encoder, predictor, test.features), test.t),
        adv_acc=result.test_acc,
        adv_entropy=result.mean_entropy,
        variant=experiment["arl.variant"],
        alpha=experiment["arl.alpha"],
        seed=experiment["arl.seed"],
        source=run_dir,
    )
    return point, result


def cmd_adversary(args):
    runs = find_runs(args.run)
    out = args.out or os.path.join(args.run, "adversary")
    print(f"Training adversaries for {len(runs)} run(s) into {out}...")
    points = []
    with staged_output(out, args.force) as staging:
        for run_dir in runs:
            point, result = evaluate_run(run_dir, args.config, args.kind, progress=not args.quiet)
            points.append(point)
            name = os.path.basename(os.path.normpath(run_dir))
            save_checkpoint(os.path.join(staging, f"adversary-{name}.txt"), [result.adversary],
                            {"run": run_dir, "codeVersion": CURRENT_VERSION})
            print(f"{name}: target_acc={point.target_acc:.2f}% adv_acc={point.adv_acc:.2f}% "
                  f"adv_entropy={point.adv_entropy:.4f} nats ({result.epochs_run} epochs)")
        write_metric_file(os.path.join(staging, "tradeoff.csv"), points)
    print(f"Done! Trade-off rows saved to {os.path.join(out, 'tradeoff.csv')}.")


def cmd_dynamics(args):
    experiment = load_experiment(args.config, {
        "dynamics.variant": args.variant,
        "dynamics.alpha": args.alpha,
        "dynamics.gameForm": args.game_form,
        "dynamics.start": _flag("dynamics.start", args.start),
        "dynamics.slice": _flag("dynamics.slice", args.slice),
        "dynamics.dt": args.dt,
        "dynamics.steps": args.steps,
        "dynamics.gridSize": args.grid_size,
        "output.dir": args.out,
    })
    game = experiment.game()
    out = experiment["output.dir"]
    print(f"Analyzing {game.variant} {game.game_form} linear game into {out}...")
    with staged_output(out, args.force) as staging:
        report = analyze(
            game,
            start=experiment["dynamics.start"],
            dt=experiment["dynamics.dt"],
            steps=experiment["dynamics.steps"],
            frozen=experiment["dynamics.slice"],
            record_every=experiment["dynamics.recordEvery"],
            progress=not args.quiet,
        )
        grid_export(game, os.path.join(staging, "grid.csv"),
                    n=experiment["dynamics.gridSize"], extent=experiment["dynamics.gridRange"])
        write_trajectory(os.path.join(staging, "trajectory.csv"), report.trajectories[0])
        report.files = {"grid": "grid.csv", "trajectory": "trajectory.csv"}
        write_report(os.path.join(staging, "report.txt"), report)

    trajectory = report.trajectories[0]
    print(f"Origin verdict: {report.verdict}")
    print(f"Trajectory end: ({', '.join(f'{c:.3e}' for c in trajectory.end)}), "
          f"|f| = {trajectory.terminal_field_norm:.3e}{' (diverged)' if trajectory.diverged else ''}")
    print(f"Done! Dynamics report saved to {os.path.join(out, 'report.txt')}.")


def cmd_pareto(args):
    experiment = load_experiment(args.config, {
        "eval.objectives": args.objectives,
        "eval.sensitiveClasses": args.sensitive_classes,
        "output.dir": args.out,
    })
    files = list(args.files)
    if args.input_dir:
        files += collect_metric_files(args.input_dir, args.include, args.exclude)
    if not files:
        raise ConfigError("files", "no metric files given (pass paths or --input-dir)")

    objectives = experiment.objectives()
    m = experiment["eval.sensitiveClasses"]
    front, normalized = evaluate_front(read_metric_files(files), objectives, m)
    out = experiment["output.dir"]
    with staged_output(out, args.force) as staging:
        summary = write_front_report(os.path.join(staging, "front.csv"), objectives, front, normalized, m)
    print(summary, end="")
    if args.copy:
        copy_to_clipboard(summary)
    print(f"Done! Front saved to {os.path.join(out, 'front.csv')}.")


def cmd_gen_data(args):
    experiment = load_experiment(args.config, {
        "arl.seed": args.seed,
        "dataset.samplesPerComponent": args.samples_per_component,
        "dataset.sigma": args.sigma,
        "output.dir": args.out,
    })
    data = gen_mixture(experiment.mixture_config())
    train, test = split(data, experiment["dataset.splitFraction"], experiment["arl.seed"])
    out = experiment["output.dir"]
    with staged_output(out, args.force) as staging:
        export_csv(os.path.join(staging, "mixture.csv"), train, test)
        save_to_file(os.path.join(staging, "mixture.schema"), MIXTURE_SCHEMA)
    print(f"Done! {len(train)} train and {len(test)} test rows saved to {os.path.join(out, 'mixture.csv')}.")


COMMANDS = {
    "train": cmd_train,
    "adversary": cmd_adversary,
    "dynamics": cmd_dynamics,
    "pareto": cmd_pareto,
    "gen-data": cmd_gen_data,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Experiment config file (key: value lines)")
    common.add_argument("--out", help="Output directory (overrides output.dir)")
    common.add_argument("--force", action="store_true", help="Overwrite an existing output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="Log progress details")
    common.add_argument("-q", "--quiet", action="store_true", help="Hide progress bars")

    parser = argparse.ArgumentParser(
        prog="arl-lab",
        description="Train and compare maximum-likelihood and maximum-entropy adversarial representation "
                    "learning, analyze the linear three-player game, and evaluate trade-off fronts.",
    )
    parser.add_argument("--version", action="store_true", help="Returns the version of arl-lab")
    sub = parser.add_subparsers(dest="command")

    train = sub.add_parser("train", parents=[common], help="Train encoder, predictor and discriminator")
    train.add_argument("--seed", type=int, help="Seed (overrides arl.seed)")
    train.add_argument("--alpha", type=float, help="Trade-off weight (overrides arl.alpha)")
    train.add_argument("--variant", choices=VARIANTS, help="Formulation (overrides arl.variant)")
    train.add_argument("--seeds", help="Comma-separated seeds for a sweep")
    train.add_argument("--alphas", help="Comma-separated alphas for a sweep")
    train.add_argument("--jobs", type=int, default=1, help="Parallel processes for sweeps")

    adversary = sub.add_parser("adversary", parents=[common], help="Attack a trained encoder post hoc")
    adversary.add_argument("run", help="Run directory, or a sweep directory of runs")
    adversary.add_argument("--kind", choices=ADVERSARY_KINDS, help="Adversary model (overrides adversary.kind)")

    dynamics = sub.add_parser("dynamics", parents=[common], help="Analyze the linear three-player game")
    dynamics.add_argument("--variant", choices=VARIANTS, help="Formulation (overrides dynamics.variant)")
    dynamics.add_argument("--alpha", type=float, help="Trade-off weight (overrides dynamics.alpha)")
    dynamics.add_argument("--game-form", choices=GAME_FORMS, help="Discriminator logit form")
    dynamics.add_argument("--start", help="Trajectory start, e.g. 0.008,0.006,0")
    dynamics.add_argument("--slice", help="Frozen coordinates, e.g. w3")
    dynamics.add_argument("--dt", type=float, help="RK4 step size")
    dynamics.add_argument("--steps", type=int, help="RK4 steps")
    dynamics.add_argument("--grid-size", type=int, help="Grid points per axis")

    pareto = sub.add_parser("pareto", parents=[common], help="Non-dominated front and hypervolume")
    pareto.add_argument("files", nargs="*", help="Metric CSV files")
    pareto.add_argument("--input-dir", help="Directory searched for metric CSV files")
    pareto.add_argument("--include", help="Comma-separated glob patterns selecting files under --input-dir")
    pareto.add_argument("--exclude", help="Comma-separated glob patterns excluding files under --input-dir")
    pareto.add_argument("--objectives", help="Objective pair, e.g. target_acc:max,adv_entropy:max")
    pareto.add_argument("--sensitive-classes", type=int, help="m for entropy normalization")
    pareto.add_argument("-c", "--copy", action="store_true", help="Copy the summary to the clipboard")

    gen_data = sub.add_parser("gen-data", parents=[common], help="Write the Gaussian-mixture dataset")
    gen_data.add_argument("--seed", type=int, help="Sampling and split seed")
    gen_data.add_argument("--samples-per-component", type=int, help="Samples per mixture component")
    gen_data.add_argument("--sigma", type=float, help="Component standard deviation")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.version:
        print(f"{CURRENT_VERSION}")
        return

    if args.command is None:
        parser.print_help()
        raise SystemExit(EXIT_CONFIG)

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}")
        raise SystemExit(EXIT_CONFIG)
    except ArlLabError as e:
        print(f"error: {e}")
        raise SystemExit(EXIT_RUNTIME)
    except ValueError as e:
        print(f"error: {e}")
        raise SystemExit(EXIT_CONFIG)


if __name__ == "__main__":
    main()
