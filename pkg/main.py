#!/usr/bin/env python3
"""
Axon growth control

Command line entry point: simulate a scenario, build the observer kernels,
print the steady profile, or run the verification suites.
"""
import os
import sys
import logging
import argparse
from dataclasses import replace

from config import OUT_DIR
from formatter import (trace_csv, profile_csv, plot_script, equilibrium_text, kernel_text, gain_text,
                       verify_text)
from kernels import solve_observer_kernel, solve_direct_kernel, save_kernel_table, cache_path
from scenario import ScenarioConfig, run_scenario, TRACE_COLUMNS
from utils import setup_logging, ConfigError, InvalidStateError, NumericalError, VerificationError
import verify

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY = 3


def build_parser():
    parser = argparse.ArgumentParser(prog="axon-growth", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=OUT_DIR, help="output directory")
    common.add_argument("--kernel-cache", default=None, help="kernel cache file (.npz)")
    common.add_argument("--strict-gains", action="store_true", help="treat gain condition violations as errors")

    for name, text in (("simulate", "run a scenario and write trace and profile CSVs"),
                       ("kernel", "build the kernel tables and a residual report"),
                       ("steady", "print the equilibrium profile")):
        cmd = sub.add_parser(name, parents=[common], help=text)
        cmd.add_argument("config_path", nargs="?", help="scenario file")
        cmd.add_argument("--config", dest="config_flag", help="scenario file")

    cmd = sub.add_parser("verify", parents=[common], help="run the verification suites")
    cmd.add_argument("--seed", type=int, default=0, help="seed for the randomized suites")
    return parser


def load_config(args):
    path = getattr(args, "config_flag", None) or getattr(args, "config_path", None)
    config = ScenarioConfig.from_file(path) if path else ScenarioConfig()
    if args.kernel_cache:
        config = replace(config, kernel_cache=args.kernel_cache)
    logging.info("Scenario loaded from %s", path or "defaults")
    report = config.gain_report()
    if args.strict_gains and not report.all_ok:
        raise ConfigError("gain conditions violated: " + ", ".join(report.violations()), field="gains")
    return config


def write_text(out_dir, name, text):
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    logging.info("Wrote %s", path)
    return path


def cmd_simulate(args):
    config = load_config(args)
    trace = run_scenario(config)
    os.makedirs(args.out, exist_ok=True)
    trace_path = write_text(args.out, "trace.csv", trace_csv(trace, TRACE_COLUMNS))
    profile_paths = [write_text(args.out, f"profile_{k:03d}.csv", profile_csv(p))
                     for k, p in enumerate(trace.profiles)]
    write_text(args.out, "plot_trace.py", plot_script("plot_trace.py", trace_path, profile_paths, config.l_s))
    meta = trace.metadata
    print(f"{meta['steps']} steps, final l = {trace.plant.l * 1e6:.6g} um, "
          f"speed bound violated on {meta['speed_violations']} steps, results in {args.out}")
    return EXIT_OK


def cmd_kernel(args):
    config = load_config(args)
    g = config.gains
    tables = [solve_observer_kernel(config.params, g.lambda_, g.gamma1, config.l_bar, config.kernel_grid_n,
                                    config.kernel_tol),
              solve_direct_kernel(config.params, g.lambda_, g.gamma1, config.l_bar, config.kernel_grid_n,
                                  config.kernel_tol)]
    os.makedirs(args.out, exist_ok=True)
    base = config.kernel_cache or os.path.join(args.out, "kernel.npz")
    for table in tables:
        save_kernel_table(table, cache_path(base, table.kind))
    text = "".join(kernel_text(t) + "\n" for t in tables) + gain_text(config.gain_report())
    write_text(args.out, "kernel_report.txt", text)
    print(text, end="")
    return EXIT_OK


def cmd_steady(args):
    config = load_config(args)
    eq = config.equilibrium()
    print(equilibrium_text(eq, config.params), end="")
    return EXIT_OK


def cmd_verify(args):
    results = verify.run_all(seed=args.seed)
    text = verify_text(results)
    os.makedirs(args.out, exist_ok=True)
    write_text(args.out, "verify_report.txt", text)
    print(text, end="")
    failed = [name for name, passed, _ in results if not passed]
    if failed:
        raise VerificationError(f"{len(failed)} of {len(results)} suites failed: {', '.join(failed)}", failed)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "kernel": cmd_kernel, "steady": cmd_steady, "verify": cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logging.error("Configuration error: %s", e)
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, InvalidStateError) as e:
        logging.error("%s: %s", type(e).__name__, e)
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except VerificationError as e:
        logging.error("Verification failed: %s", e)
        print(f"verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
