"""Command-line entry point ``rm-lab``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any

from .const import ENV_LOG_LEVEL, EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUN_FAILURE, LOGGER, VERSION
from .core.error import ConfigurationError, RmLabError
from .core.utils import format_float, setup_logging, write_csv
from .data import OptimConfig
from .estimators import bernstein_probe
from .experiments import (
    convergence_rows,
    mc_table,
    probe_constants,
    probe_rows,
    rademacher_table,
    run,
    scenario_convergence,
    scenario_counterexample,
    scenario_hp_vs_strong,
)
from .presets import PRESETS, get_preset

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

_LOGGER = logging.getLogger(__name__)

HP_HEADER = ("basis", "K", "N", "status", "error_hp", "error_strong", "loss_hp", "deficit", "hp_bound")


def parse_int_list(text: str) -> list[int]:
    """``4,16,64`` or a doubling range ``16..4096``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = (int(t) for t in text.split("..", 1))
            if lo < 1 or hi < lo:
                raise ValueError(text)
            out = []
            while lo <= hi:
                out.append(lo)
                lo *= 2
            return out
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a list like 4,16,64 or 16..4096, got {text!r}") from exc


def _emit(header: Sequence[str], rows: Iterable[Sequence[Any]], out: Path | None) -> None:
    rows = list(rows)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(c) if isinstance(c, float) else c for c in row])
    if out is not None:
        write_csv(out, header, rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rm-lab", description="Residual minimization experiments for linear PDEs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument(
        "--log-level",
        default=os.environ.get(ENV_LOG_LEVEL, "INFO"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        type=str.upper,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a TOML experiment sweep")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--out", type=Path, default=None, help="output directory (overrides [output].directory)")

    p_ce = sub.add_parser("counterexample", help="grid-aliased adversary loss table")
    p_ce.add_argument("--mr", type=parse_int_list, default=[4, 8, 16, 64])
    p_ce.add_argument("--out", type=Path, default=None)

    p_rad = sub.add_parser("rademacher", help="Rademacher complexity of a unit path-norm network family")
    p_rad.add_argument("--preset", choices=sorted(PRESETS), default="poisson1d_sin")
    p_rad.add_argument("--m-grid", type=parse_int_list, default=parse_int_list("16..1024"))
    p_rad.add_argument("--family", type=int, default=20)
    p_rad.add_argument("--width", type=int, default=8)
    p_rad.add_argument("--sign-trials", type=int, default=64)
    p_rad.add_argument("--seed", type=int, default=0)
    p_rad.add_argument("--out", type=Path, default=None)

    p_probe = sub.add_parser("probe-constants", help="empirical stability constants of a preset")
    p_probe.add_argument("--preset", choices=sorted(PRESETS), required=True)
    p_probe.add_argument("--family", type=int, default=16)
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.add_argument("--out", type=Path, default=None)

    p_bern = sub.add_parser("bernstein", help="Bernstein ratios of Gaussian RBF networks")
    p_bern.add_argument("--m", type=parse_int_list, default=[2, 4, 8])
    p_bern.add_argument("--samples", type=int, default=200)
    p_bern.add_argument("--seed", type=int, default=0)
    p_bern.add_argument("--out", type=Path, default=None)

    p_mc = sub.add_parser("mc", help="Monte-Carlo error of the source integral per sample count")
    p_mc.add_argument("--preset", choices=sorted(PRESETS), default="poisson1d_sin")
    p_mc.add_argument("--m-grid", type=parse_int_list, default=parse_int_list("16..1024"))
    p_mc.add_argument("--trials", type=int, default=64)
    p_mc.add_argument("--seed", type=int, default=0)
    p_mc.add_argument("--out", type=Path, default=None)

    p_conv = sub.add_parser("convergence", help="median error over a width × sample-count grid")
    p_conv.add_argument("--preset", choices=sorted(PRESETS), default="poisson1d_sin")
    p_conv.add_argument("--n", type=parse_int_list, default=[8, 16, 32])
    p_conv.add_argument("--m-grid", type=parse_int_list, default=[64, 256, 1024])
    p_conv.add_argument("--continuous", action="store_true", help="add the Gauss–Legendre loss as M = inf")
    p_conv.add_argument("--seeds", type=parse_int_list, default=[0, 1, 2])
    p_conv.add_argument("--max-iter", type=int, default=500)
    p_conv.add_argument("--out", type=Path, default=None)

    p_hp = sub.add_parser("hp-compare", help="strong-form loss against hp-VRM on a K × N grid")
    p_hp.add_argument("--preset", choices=sorted(PRESETS), default="poisson1d_sin")
    p_hp.add_argument("--k", type=parse_int_list, default=[1, 2, 4])
    p_hp.add_argument("--n", type=parse_int_list, default=[2, 4, 8])
    p_hp.add_argument("--seed", type=int, default=0)
    p_hp.add_argument("--max-iter", type=int, default=500)
    p_hp.add_argument("--out", type=Path, default=None)
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "run":
        return run(args.config, jobs=args.jobs, out=args.out)
    if args.command == "counterexample":
        rows = scenario_counterexample(args.mr)
        header = ("m_r", "discrete_loss", "continuous_loss", "gap", "l2_error", "l2_closed_form")
        table = ((r.m_r, r.discrete_loss, r.continuous_loss, r.gap, r.l2_error, r.l2_closed_form) for r in rows)
        _emit(header, table, args.out)
        return EXIT_OK
    if args.command == "rademacher":
        rows, slope = rademacher_table(
            args.preset,
            args.m_grid,
            family_size=args.family,
            width=args.width,
            n_sign_trials=args.sign_trials,
            seed=args.seed,
        )
        _emit(("m", "estimate", "stderr"), rows, args.out)
        _LOGGER.info("Fitted log-log slope: %.4f", slope)
        return EXIT_OK
    if args.command == "probe-constants":
        probe = probe_constants(get_preset(args.preset), args.family, args.seed)
        _emit(("quantity", "value"), probe_rows(probe), args.out)
        return EXIT_OK
    if args.command == "bernstein":
        rows = bernstein_probe(args.m, args.samples, args.seed)
        header = ("m", "max_ratio", "ratio_over_m", "m_r", "equivalence_pass")
        _emit(header, ((r.m, r.max_ratio, r.ratio_over_m, r.m_r, r.equivalence_pass) for r in rows), args.out)
        return EXIT_OK
    if args.command == "mc":
        rows, slope = mc_table(args.preset, args.m_grid, args.trials, args.seed)
        header = ("m", "mean_abs_error", "stddev", "stderr")
        _emit(header, ((r["m"], r["mean_abs_error"], r["stddev"], r["stderr"]) for r in rows), args.out)
        _LOGGER.info("Fitted log-log slope: %.4f", slope)
        return EXIT_OK
    if args.command == "convergence":
        m_list: list[int | None] = list(args.m_grid)
        if args.continuous:
            m_list.append(None)
        summary = scenario_convergence(
            args.preset, args.n, m_list, args.seeds, optim=OptimConfig(max_iter=args.max_iter)
        )
        _emit(*convergence_rows(summary), args.out)
        for name, holds in summary.trends.items():
            _LOGGER.info("Trend %s: %s", name, "holds" if holds else "violated")
        return EXIT_OK
    if args.command == "hp-compare":
        rows = scenario_hp_vs_strong(
            args.preset, args.k, args.n, optim=OptimConfig(max_iter=args.max_iter, seed=args.seed), seed=args.seed
        )
        _emit(HP_HEADER, ([r.get(k) for k in HP_HEADER] for r in rows), args.out)
        return EXIT_OK
    raise ConfigurationError(f"unknown command {args.command!r}")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(LOGGER.name, args.log_level)
    try:
        return _dispatch(args)
    except ConfigurationError as exc:
        LOGGER.error("Configuration error: %s", exc)
        return EXIT_CONFIG_ERROR
    except RmLabError as exc:
        LOGGER.exception("Run failed [%s]: %s", exc.error_code, exc)
        return EXIT_RUN_FAILURE


if __name__ == "__main__":
    sys.exit(main())
