"""Command-line entry point.

``msmissing simulate`` runs the scenario by method grid and writes the
summary (and raw) tables; ``msmissing analyze`` fits one method to a CSV
file and prints bootstrap intervals; ``msmissing generate`` writes one
simulated dataset per scenario.

Exit codes: 0 success, 1 estimation-level failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import dgp
from . import rng as rngs
from .config import RunConfig, help_text, load_config
from .data import load_panel_csv, write_panel_csv
from .errors import ConfigError, MSMError, ParseError, SchemaError, ValidationError
from .harness import METHOD_ORDER, bootstrap_ci, default_threads, emit_report, run_scenario
from .missing import METHODS, analyze

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

MPA_EXPOSURE_MESSAGE = "MPA is not a suitable method for this analysis because of missing data on the exposure"
MPA_OUTCOME_MESSAGE = "MPA is not a suitable method for this analysis because of missing data on the outcome"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors already; keep it but route the
    # message through our stderr handling
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="msmissing", description=__doc__, formatter_class=fmt, epilog=help_text())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", type=Path, help="TOML configuration file (see the key list below)")
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides grid.seed)")

    p = sub.add_parser("simulate", help="run the simulation grid", formatter_class=fmt, epilog=help_text())
    common(p)
    p.add_argument("--threads", type=int, help="worker processes (overrides grid.threads; 0 = all cores)")
    p.add_argument(
        "--method", action="append", choices=METHOD_ORDER,
        help="restrict to these methods (repeatable; overrides grid.methods)",
    )

    p = sub.add_parser("analyze", help="analyse a CSV dataset", formatter_class=fmt, epilog=help_text())
    p.add_argument("data", type=Path, help="wide-format CSV (id, V, L1_k, L2_k, A_k, Y)")
    common(p)
    p.add_argument("--method", required=True, choices=METHODS, help="missing-data method")
    p.add_argument("--bootstrap-B", type=int, dest="bootstrap_B", help="bootstrap resamples (overrides analyze.bootstrap_B)")
    p.add_argument("--threads", type=int, help="accepted for symmetry; analyze runs serially")

    p = sub.add_parser("generate", help="write simulated datasets", formatter_class=fmt, epilog=help_text())
    common(p)
    p.add_argument("--latent", action="store_true", help="also write the latent (pre-masking) dataset")
    return parser


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config is not None else load_config()
    changes = {}
    if args.out is not None:
        changes["out"] = args.out
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        if args.threads < 0:
            raise ConfigError("must be at least 0", key="--threads")
        changes["threads"] = args.threads
    if getattr(args, "bootstrap_B", None) is not None:
        if args.bootstrap_B != 0 and args.bootstrap_B < 100:
            raise ConfigError("must be 0 or at least 100", key="--bootstrap-B")
        changes["bootstrap_B"] = args.bootstrap_B
    if args.command == "simulate" and args.method:
        changes["methods"] = tuple(args.method)
    return dataclasses.replace(cfg, **changes)


def _out_dir(cfg: RunConfig) -> Path:
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory: {exc}", key="output.dir", path=cfg.source) from exc
    return cfg.out


def _scenario(cfg: RunConfig, mechanism: str) -> dgp.ScenarioConfig:
    return dgp.ScenarioConfig(
        mechanism, n=cfg.n, seed=cfg.seed, dgp=cfg.dgp, target_missing_rate=cfg.target_missing_rate
    )


def cmd_simulate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    threads = cfg.threads or default_threads()
    reports = []
    for mech in cfg.scenarios:
        reports.append(
            run_scenario(
                _scenario(cfg, mech), cfg.all_methods, S=cfg.replications, threads=threads,
                options=cfg.options, n_oracle=cfg.n_oracle,
            )
        )
    for path in emit_report(reports, out, fmt=cfg.format, include_raw=cfg.raw):
        print(path)
    flags = [f"{r.scenario} {f}" for r in reports for f in r.flags]
    for f in flags:
        print(f"flagged: {f}", file=sys.stderr)
    return EXIT_FAILURE if flags else EXIT_OK


def cmd_generate(cfg: RunConfig, latent: bool) -> int:
    out = _out_dir(cfg)
    for mech in cfg.scenarios:
        full, masked = dgp.simulate_replication(_scenario(cfg, mech), 0)
        targets = [(masked, out / f"{mech}.csv")]
        if latent:
            targets.append((full, out / f"{mech}_latent.csv"))
        for data, path in targets:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                write_panel_csv(data, fh)
            print(path)
    return EXIT_OK


def _format_table(method, theta, se, lower, upper, label) -> str:
    lines = [f"method: {method}", f"{'k':>2} {'estimate':>12} {'se':>12} {label + ' lower':>16} {label + ' upper':>16}"]
    for k in range(3):
        lines.append(f"{k:>2} {theta[k]:>12.6f} {se[k]:>12.6f} {lower[k]:>16.6f} {upper[k]:>16.6f}")
    return "\n".join(lines)


def cmd_analyze(cfg: RunConfig, path: Path, method: str) -> int:
    try:
        data = load_panel_csv(path)
    except OSError as exc:
        raise ConfigError(f"cannot read data: {exc}", key="data", path=str(path)) from exc
    if method == "MPA":
        if not data.obs_A.all():
            print(MPA_EXPOSURE_MESSAGE, file=sys.stderr)
            return EXIT_USAGE
        if not data.obs_Y.all():
            print(MPA_OUTCOME_MESSAGE, file=sys.stderr)
            return EXIT_USAGE
    o = cfg.options
    point_rng = rngs.stream(cfg.seed, 0, rngs.METHOD, METHOD_ORDER.index(method))
    est = analyze(
        data, method, rng=point_rng, M=o.M, cycles=o.cycles, truncate=o.truncate,
        ipmw_stabilized=o.ipmw_stabilized, ipmw_treatment_fit=o.ipmw_treatment_fit,
    )
    if cfg.bootstrap_B:
        boot = bootstrap_ci(data, method, B=cfg.bootstrap_B, rng=rngs.stream(cfg.seed, 0, rngs.BOOTSTRAP), options=o)
        lower, upper, label = boot.lower, boot.upper, "boot"
        note = f"bootstrap: B={boot.B} failed={boot.n_failed}; percentile 95% intervals"
    else:
        lower, upper, label = est.ci_lower, est.ci_upper, "wald"
        note = "model-based 95% intervals"
    print(f"n={data.n} used={est.n_used}")
    print(_format_table(method, np.asarray(est.theta), np.asarray(est.se), lower, upper, label))
    print(note)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    pkg_log = logging.getLogger("msmissing")
    pkg_log.addHandler(handler)
    if pkg_log.level == logging.NOTSET:
        pkg_log.setLevel(logging.WARNING)
    try:
        cfg = _resolve(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "generate":
            return cmd_generate(cfg, args.latent)
        return cmd_analyze(cfg, args.data, args.method)
    except (ConfigError, ParseError, SchemaError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MSMError as exc:
        print(f"estimation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    finally:
        pkg_log.removeHandler(handler)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
