import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path

from constants import EPS_I, TOL_FEAS
from attackid.modules.dynamics import simulate
from attackid.modules.identify import RelaxationBudget, solve_l0_equality, solve_l0_relaxed
from attackid.modules.linalg import smallest_singular_value
from attackid.modules.network import load_network_config
from attackid.utils.errors import ConfigError, DimensionError, NumericalError
from attackid.utils.loader import create_pipeline, load_config
from attackid.utils.utils import dump_system, json_default, load_attack, load_schedule, load_state, load_system, \
    save_trajectory_csv, write_results

logging.basicConfig(level=logging.INFO, format="%(asctime)s: [%(levelname)s] %(message)s")
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with 1 like configuration errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        logger.error(message)
        raise SystemExit(EXIT_USAGE)


def _overrides(args, **flags):
    out = list(getattr(args, "overrides", None) or [])
    for key, value in flags.items():
        if value is not None:
            out.append(f"{key}={value}")
    return out


def run_simulate(args):
    config = load_config(args.config, _overrides(args, dt=args.dt, steps=args.steps))
    model = load_network_config(config.network)
    schedule = None if args.attack is None else load_schedule(args.attack, model)
    trajectory = simulate(model, schedule=schedule, dt=config.dt, steps=config.steps, gain=config.controller_gain)
    save_trajectory_csv(trajectory, args.out)
    logger.info(f"wrote {len(trajectory)} steps to {args.out}")


def run_experiment(args):
    flags = dict(series=args.series, seed=args.seed, steps=args.steps)
    if args.continuous:
        flags["reset_each_step"] = "false"
    config = load_config(args.config, _overrides(args, **flags))
    pipeline = create_pipeline(config)
    if args.series is None and len(config.experiments):
        # command-line --seed/--steps win over the per-series entries
        tasks = [(e.series,
                  config.seed if e.seed is None or args.seed is not None else e.seed,
                  config.steps if e.steps is None or args.steps is not None else e.steps)
                 for e in config.experiments]
    else:
        tasks = [(config.series, config.seed, config.steps)]

    for series, seed, steps in tasks:
        output = pipeline.run_series(series, seed, steps)
        out_dir = Path(args.out) if len(tasks) == 1 else Path(args.out) / f"{series}_seed{seed}"
        write_results(output.records, [output.superset, output.exact], out_dir,
                      series=series, seed=seed, summary=output.summary)


def run_check(args):
    config = load_config(args.config, _overrides(args))
    pipeline = create_pipeline(config)
    state = load_state(args.state, pipeline.model)
    delta_a = load_attack(args.attack, pipeline.model)
    result = pipeline.identify_step(state, delta_a)
    if args.dump is not None:
        if result.bundle is None:
            logger.warning("no alarm, there is no system to dump")
        else:
            bundle = result.bundle
            data = bundle.to_dict()
            dump_system(bundle.S, bundle.b, args.dump, bundle.blocks,
                        column_map=data["column_map"], scales=data["scales"], d_u=data["d_u"])
            logger.info(f"wrote the system of this step to {args.dump}")
    print(json.dumps(result.to_dict(), indent=2, default=json_default))


def run_identify(args):
    S, b, blocks = load_system(args.system)
    out = {"equality": solve_l0_equality(S, b, args.tol_feas, blocks, eps_i=args.eps_i).to_dict(), "relaxed": None}
    if args.epsilon is not None:
        sigma_min = smallest_singular_value(S)
        if sigma_min > 0:
            relaxed = solve_l0_relaxed(S, b, RelaxationBudget(args.epsilon, sigma_min), blocks,
                                       eps_i=args.eps_i, tol_feas=args.tol_feas)
            out["relaxed"] = relaxed.to_dict()
        else:
            logger.warning("S is rank deficient, skipping the relaxed problem")
    # solver-only entry: supports are column positions, not bus ids
    print(json.dumps(out, indent=2, default=json_default))


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(description="Hierarchical attack identification on coupled swing-equation networks")
    parser.add_argument("--log_file", type=str, default=None)
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    sim = commands.add_parser("simulate", help="closed-loop trajectory under an attack schedule")
    sim.add_argument("--config", type=str, default=None, help="run config (YAML) or network file (JSON)")
    sim.add_argument("--dt", type=float, default=None)
    sim.add_argument("--steps", type=int, default=None)
    sim.add_argument("--attack", type=str, default=None, help="attack schedule JSON")
    sim.add_argument("--out", type=str, default="outputs/trajectory.csv")
    sim.add_argument("overrides", nargs="*", help="key=value config overrides")
    sim.set_defaults(func=run_simulate)

    exp = commands.add_parser("experiment", help="random attack series with fourfold tables")
    exp.add_argument("--config", type=str, default=str(Path(__file__).resolve().parent / "configs" / "experiment.yaml"))
    exp.add_argument("--series", type=str, default=None, help="attack_1, attack_3, ... (overrides the config list)")
    exp.add_argument("--seed", type=int, default=None)
    exp.add_argument("--steps", type=int, default=None)
    exp.add_argument("--continuous", action="store_true", help="keep the loop running instead of resetting")
    exp.add_argument("--out", type=str, default="outputs/", help="path to output")
    exp.add_argument("overrides", nargs="*", help="key=value config overrides")
    exp.set_defaults(func=run_experiment)

    chk = commands.add_parser("check", help="one-shot identification from a state snapshot")
    chk.add_argument("--config", type=str, default=None, help="run config (YAML) or network file (JSON)")
    chk.add_argument("--state", type=str, required=True)
    chk.add_argument("--attack", type=str, required=True)
    chk.add_argument("--dump", type=str, default=None, help="write S, b, column map and scales for `identify`")
    chk.add_argument("overrides", nargs="*", help="key=value config overrides")
    chk.set_defaults(func=run_check)

    ide = commands.add_parser("identify", help="solve a dumped (S, b) system")
    ide.add_argument("--system", type=str, required=True)
    ide.add_argument("--tol_feas", type=float, default=TOL_FEAS)
    ide.add_argument("--eps_i", type=float, default=EPS_I)
    ide.add_argument("--epsilon", type=float, default=None, help="also solve the relaxed problem")
    ide.set_defaults(func=run_identify)
    return parser


def set_logger(log_file=None, log_level=logging.INFO):
    log_handler = logging.FileHandler(log_file, "w")
    log_handler.setFormatter(
        logging.Formatter("[%(asctime)s][%(name)s][%(levelname)s]: %(message)s")
    )
    log_handler.setLevel(log_level)
    logging.getLogger().addHandler(log_handler)
    return log_handler


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    level = logging.DEBUG if args.verbose else logging.INFO
    logging.getLogger().setLevel(level)
    handler = None
    log_file = args.log_file
    if log_file is None and args.command == "experiment":
        Path(args.out).mkdir(parents=True, exist_ok=True)
        log_file = f"{args.out}/{datetime.now().strftime('%Y%m%d%H%M%S')}.log"
    if log_file is not None:
        handler = set_logger(log_file, level)

    try:
        args.func(args)
    except (ConfigError, DimensionError, ValueError) as exc:
        logger.error(str(exc))
        return EXIT_USAGE
    except NumericalError as exc:
        logger.error(str(exc))
        return EXIT_NUMERICAL
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()
    logger.info(f"--- Finished ---")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
