"""Command-line entry point: ``wiretap-dp {train,eval,sweep,baseline}``.

Every config key is also a ``--kebab-case`` flag. Failures print a single
JSON line on stderr and exit with 2 (config), 3 (missing artifact),
4 (numerical failure) or 1 (anything else).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from wiretap_dp.config import config_keys, field_help, parse_config
from wiretap_dp.errors import ConfigError, MissingArtifactError, WiretapDPError
from wiretap_dp.pipeline import (
    BatchEvaluation,
    Experiment,
    SweepReport,
    eps_label,
    row_from_evaluation,
    run_baseline,
    run_sweep,
)

SUBCOMMANDS = ("train", "eval", "sweep", "baseline")


class _Parser(argparse.ArgumentParser):
    """Usage errors become the same one-line JSON as runtime errors (exit 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        payload = {"command": None, "error": "usage", "message": message}
        self.exit(2, json.dumps(payload, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wiretap-dp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "train": "train one protection/deprotection pair per epsilon",
        "eval": "evaluate trained pairs on the test set (per-image metrics)",
        "sweep": "train and evaluate every epsilon, then the baseline; writes report.csv",
        "baseline": "evaluate direct transmission without protection",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", metavar="PATH", help="key = value config file")
        p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
        if name in ("eval", "sweep"):
            p.add_argument("--no-train", action="store_true", help="load checkpoints instead of training")
        group = p.add_argument_group("config overrides")
        for key in config_keys():
            group.add_argument(
                f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="VALUE",
                default=argparse.SUPPRESS, help=field_help(key) or None,
            )
    return parser


def _write_run_files(exp: Experiment) -> None:
    out = exp.out()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(exp.config.resolved_text(), encoding="utf-8")
    seeds = "".join(f"{k} = {v}\n" for k, v in exp.seed_manifest().items())
    (out / "seeds.used").write_text(seeds, encoding="utf-8")


def _write_image_metrics(path: Path, ev: BatchEvaluation) -> None:
    lines = ["index,mse_bob,mse_eve,psnr_bob,psnr_eve,similarity_bob,similarity_eve,match_bob,match_eve"]
    mb, me = ev.matches("bob"), ev.matches("eve")
    for i in range(len(ev.mse_bob)):
        vals = (ev.mse_bob[i], ev.mse_eve[i], ev.psnr_bob[i], ev.psnr_eve[i], ev.sim_bob[i], ev.sim_eve[i])
        lines.append(f"{i}," + ",".join(f"{v:.6f}" for v in vals) + f",{int(mb[i])},{int(me[i])}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_train(exp: Experiment, args) -> int:
    for eps in exp.config.epsilons:
        exp.train_and_save(eps)
        print(exp.checkpoint_path(eps))
    return 0


def cmd_eval(exp: Experiment, args) -> int:
    epsilons = exp.config.epsilons
    if args.no_train:
        exp.require_checkpoints(epsilons)
    report = SweepReport(threshold=exp.identity_threshold())
    for eps in epsilons:
        if exp.checkpoint_path(eps).exists():
            nets = exp.load_nets(eps)
        else:
            nets = exp.train_and_save(eps)
        ev = exp.evaluate_test(nets, eps)
        _write_image_metrics(exp.out() / "eval" / f"eps_{eps_label(eps)}.csv", ev)
        report.rows.append(row_from_evaluation(eps, ev))
    path = exp.out() / "eval" / "summary.csv"
    path.write_text(report.to_csv(), encoding="utf-8")
    sys.stdout.write(report.to_csv())
    return 0


def cmd_sweep(exp: Experiment, args) -> int:
    report = run_sweep(exp, train=not args.no_train)
    (exp.out() / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    sys.stdout.write(report.to_csv())
    return 0


def cmd_baseline(exp: Experiment, args) -> int:
    report = SweepReport([run_baseline(exp)])
    (exp.out() / "baseline.csv").write_text(report.to_csv(), encoding="utf-8")
    sys.stdout.write(report.to_csv())
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "baseline": cmd_baseline}


def _error_line(command: str | None, exc: BaseException) -> str:
    payload = {"command": command, "error": getattr(exc, "kind", type(exc).__name__), "message": str(exc)}
    if isinstance(exc, ConfigError):
        payload.update(key=exc.key, line=exc.line)
    if isinstance(exc, MissingArtifactError):
        payload["missing"] = [e if math.isfinite(e) else str(e) for e in exc.missing]
    return json.dumps(payload, sort_keys=True)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    try:
        config = parse_config(args.config, flags)
        exp = Experiment(config)
        _write_run_files(exp)
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            return COMMANDS[args.command](exp, args)
    except WiretapDPError as exc:
        print(_error_line(args.command, exc), file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(_error_line(args.command, exc), file=sys.stderr)
        return 4
    except (OSError, ValueError) as exc:
        print(_error_line(args.command, exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
