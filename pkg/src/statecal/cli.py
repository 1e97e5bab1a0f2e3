"""Command-line front end.

Every subcommand writes ``summary.json`` into ``--out``; its ``status``
field is ``"ok"`` exactly when the exit status is 0.  Failures print one
line ``error: <category>: <message>`` on standard error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


from . import __version__, io
from .config import ConfigError, RunConfig, parse_config, _check_keys, _parse_chains
from .diagnostics import bayes_pvalues
from .predict import predict
from .sampler import ChainConfig, InitializationError, run_chains
from .simulators import SimulatorError, SimulatorRequired

__all__ = ["main", "EXIT_CODES", "SEED_ENV"]

SEED_ENV = "STATECAL_SEED"
EXIT_CODES = {"ok": 0, "runtime": 1, "usage": 2, "config": 2, "data": 2, "traces": 3,
              "simulator": 4, "initialization": 5}
SUMMARY = "summary.json"
U64 = 2 ** 64


class CliError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _seed(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < U64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=_seed, help=f"RNG seed (overrides {SEED_ENV} and the config)")
    common.add_argument("--chains", type=_positive, help="number of chains")
    common.add_argument("--out", type=Path, default=Path("statecal-out"), help="output directory")
    common.add_argument("--quiet", action="store_true", help="no progress messages")
    parser = _Parser(prog="statecal", description="State-aware Bayesian calibration of computer models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("calibrate", parents=[common], help="run the MCMC chains and write traces")
    sub.add_parser("predict", parents=[common], help="posterior predictions from saved traces")
    sub.add_parser("diagnose", parents=[common], help="posterior predictive p-values")
    sub.add_parser("simstudy", parents=[common], help="run the full simulation study")
    sub.add_parser("version", help="print the package version")
    return parser


def resolve_seed(flag, config_seed):
    """Flag beats the environment variable, which beats the configuration."""
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            v = int(env, 0)
        except ValueError:
            raise CliError("usage", f"{SEED_ENV} is not an integer: {env!r}") from None
        if not 0 <= v < U64:
            raise CliError("usage", f"{SEED_ENV} must be an unsigned 64-bit integer")
        return v
    return config_seed


def _chain_config(args, base: ChainConfig) -> ChainConfig:
    changes = {"seed": resolve_seed(args.seed, base.seed)}
    if args.chains is not None:
        changes["n_chains"] = args.chains
    return base.with_(**changes)


def _log(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


def _load(args) -> RunConfig:
    if args.config is None:
        raise CliError("usage", f"{args.command} needs --config")
    return parse_config(args.config)


def _traces_dir(args, cfg: RunConfig, section: str) -> Path:
    return Path(getattr(cfg, section).get("traces", args.out))


def _load_traces(args, cfg, section, sim):
    problem = cfg.problem(sim)
    return io.read_traces(_traces_dir(args, cfg, section), problem)


# ------------------------------------------------------------ subcommands

def cmd_calibrate(args) -> dict:
    cfg = _load(args)
    config = _chain_config(args, cfg.chains)
    sim = cfg.build_simulator()
    try:
        problem = cfg.problem(sim)
        _log(args, f"running {config.n_chains} chains, {config.n_burn} + {config.n_post} sweeps")
        traces = run_chains(problem, config, cfg.workers)
    finally:
        sim.close()
    io.write_traces(traces, args.out)
    return {
        "outputs": sorted(p.name for p in args.out.iterdir() if p.name != SUMMARY),
        "seed": config.seed, "n_chains": config.n_chains, "recorded_per_chain": config.n_recorded,
        "rhat": traces.metadata.get("rhat", {}),
        "acceptance": [{"chain": c.chain_index, "final_burn_in_window": c.final_window,
                        "post_burn_in": c.post_accept} for c in traces.chains],
    }


def cmd_predict(args) -> dict:
    cfg = _load(args)
    sim = cfg.build_simulator()
    try:
        traces = _load_traces(args, cfg, "predict", sim)
        seed = resolve_seed(args.seed, traces.config.seed)
        grid = cfg.predict.get("grid", cfg.data.X)
        scaled = cfg.predict.get("scaled", False) and "grid" in cfg.predict
        pred = predict(traces, grid, seed=seed, scaled=scaled)
    finally:
        sim.close()
    args.out.mkdir(parents=True, exist_ok=True)
    draws = args.out / "prediction_draws.csv" if cfg.predict.get("draws") else None
    io.write_prediction(pred, args.out / "predictions.csv", list(cfg.data.input_names), draws)
    io.write_columns(args.out / "theta1_paths.csv",
                     {f"p{j}": pred.theta1_paths[:, j] for j in range(pred.m)})
    return {"outputs": ["predictions.csv", "theta1_paths.csv"] + (["prediction_draws.csv"] if draws else []),
            "seed": seed, "n_draws": int(pred.draws.shape[0]), **pred.metadata}


def cmd_diagnose(args) -> dict:
    cfg = _load(args)
    sim = cfg.build_simulator()
    try:
        traces = _load_traces(args, cfg, "diagnose", sim)
        seed = resolve_seed(args.seed, traces.config.seed)
        report = bayes_pvalues(traces, n_rep=cfg.diagnose["n_rep"], seed=seed)
    finally:
        sim.close()
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_json(args.out / "check_report.json", report.to_dict())
    io.write_columns(args.out / "replicate_statistics.csv",
                     {f"T{k + 1}": report.T_replicates[:, k] for k in range(3)})
    return {"outputs": ["check_report.json", "replicate_statistics.csv"], **report.to_dict()}


def _study_chain_config(args) -> ChainConfig:
    base = ChainConfig()
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: parse error at line {exc.lineno}, column "
                              f"{exc.colno}: {exc.msg}") from None
        _check_keys(raw, {"chains": None}, "")
        base, _ = _parse_chains(raw.get("chains", {}))
    return _chain_config(args, base)


def cmd_simstudy(args) -> dict:
    from .experiments import run_study

    config = _study_chain_config(args)
    _log(args, f"simulation study, seed {config.seed}")
    study = run_study(config.seed, config, args.out)
    failed = {k: r.error for k, r in study.scenarios.items() if r.status != "ok"}
    if failed:
        raise CliError("runtime", "scenarios failed: " + "; ".join(f"{k}: {v}" for k, v in failed.items()))
    return {"outputs": ["study_summary.json", "table1_rmspe.csv", "table2_rmspe.csv", "timing.json"],
            "seed": config.seed, "table1_rmspe": study.table1(), "table2_rmspe": study.table2()}


COMMANDS = {"calibrate": cmd_calibrate, "predict": cmd_predict, "diagnose": cmd_diagnose,
            "simstudy": cmd_simstudy}


def _categorize(exc) -> str:
    if isinstance(exc, CliError):
        return exc.category
    if isinstance(exc, io.TracesNotFound):
        return "traces"
    if isinstance(exc, (SimulatorError, SimulatorRequired)):
        return "simulator"
    if isinstance(exc, InitializationError):
        return "initialization"
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, ValueError):
        return "data"
    return "runtime"


def _write_summary(out: Path, summary: dict):
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / SUMMARY, summary)


def dispatch(argv=None) -> int:
    """Run one subcommand and return its exit status."""
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_CODES["usage"]
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command == "version":
        print(f"statecal {__version__}")
        return 0
    try:
        result = COMMANDS[args.command](args)
    except Exception as exc:
        category = _categorize(exc)
        message = str(exc).replace("\n", " ")
        code = EXIT_CODES[category]
        print(f"error: {category}: {message}", file=sys.stderr)
        try:
            _write_summary(args.out, {"command": args.command, "status": "error",
                                      "category": category, "message": message,
                                      "exit_code": code})
        except OSError:
            pass
        return code
    _write_summary(args.out, {"command": args.command, "status": "ok", "exit_code": 0, **result})
    _log(args, f"wrote {args.out / SUMMARY}")
    return 0


def main(argv=None):
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
