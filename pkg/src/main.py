#!/usr/bin/env python3
"""cpcscan - PSC / CPC coefficient estimation, simulation and scanning.

Key design goals for this file:
 - No side-effects on import (so pytest can import it)
 - Every subcommand writes its outputs plus a manifest.json into --out
 - Library errors map to exit codes: 1 usage/config, 2 data, 3 numerical
"""

from __future__ import annotations

import argparse
import builtins
import logging
import math
import os
import re
import sys
from dataclasses import asdict
from datetime import datetime
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

import csvio
import plotting
from config import load_config
from errors import ConfigError, CpcScanError, DataError, DimensionMismatch
from estimators import BasisCache, Method, fit
from inference import (
    DOF_CONVENTIONS,
    compute_ND,
    estimate_sigma,
    test_h0 as run_h0_test,
    truth_gamma_tail_l1,
)
from linalg import center_normalize, kinship, thin_svd
from manifest import RunManifest, get_version, write_manifest
from scan import DEFAULT_BINS, scan_all, summarize_scan
from simulation import SimulationConfig, monte_carlo_run

# ---------------------------------------------------------------------------
# Pretty logging
# ---------------------------------------------------------------------------

c_cyan = "\033[1;36m"
c_magenta = "\033[1;35m"
c_blue = "\033[1;34m"
c_green = "\033[1;32m"
c_yellow = "\033[1;33m"
c_red = "\033[1;31m"
c_white = "\033[1;37m"
c_dim = "\033[37m"
c_reset = "\033[0m"

LOG_LEVELS = ("debug", "info", "warning", "error")


def _get_source_color(clean_text: str) -> str:
    clean = clean_text.lower()
    if "simul" in clean:
        return c_cyan
    if "scan" in clean:
        return c_magenta
    if "csv" in clean or "config" in clean:
        return c_yellow
    return c_green


def _make_timestamped_print(original_print):
    def timestamped_print(*args, **kwargs):
        now = datetime.now().strftime("%H:%M:%S")
        time_prefix = f"{c_dim}[{now}]{c_reset}"
        msg = " ".join(map(str, args))
        lower_msg = msg.lower()

        header = f"{c_green}INFO{c_reset}{c_white}:{c_reset}"
        if any(x in lower_msg for x in ["error", "critical", "failed", "exception"]):
            header = f"{c_red}ERROR{c_reset}{c_white}:{c_reset}"
        elif "warning" in lower_msg or "warn" in lower_msg:
            header = f"{c_yellow}WARN{c_reset}{c_white}:{c_reset}"
        elif "reject" in lower_msg:
            header = f"{c_cyan}TEST{c_reset}{c_white}:{c_reset}"

        match = re.match(r"^\[(.*?)\]\s*(.*)", msg)
        if match:
            src_text = match.group(1)
            rest_of_msg = match.group(2)
            s_color = _get_source_color(src_text)
            msg = f"{c_white}[{c_reset}{s_color}{src_text}{c_reset}{c_white}]:{c_reset} {rest_of_msg}"

        if "flush" not in kwargs:
            kwargs["flush"] = True
        original_print(f"{time_prefix} {header} {msg}", **kwargs)

    return timestamped_print


def install_pretty_print() -> None:
    """Install timestamped, colored print. Safe to call multiple times."""
    if getattr(install_pretty_print, "_installed", False):
        return
    original_print = builtins.print
    builtins.print = _make_timestamped_print(original_print)
    install_pretty_print._installed = True  # type: ignore[attr-defined]


class PrintHandler(logging.Handler):
    """Route library log records through print() as '[Logger] message'."""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            msg = record.getMessage()
            if record.levelno >= logging.ERROR:
                msg = f"ERROR: {msg}"
            elif record.levelno >= logging.WARNING:
                msg = f"WARNING: {msg}"
            print(f"[{record.name}] {msg}")
        except Exception:
            self.handleError(record)


def setup_logging(level: str = "info") -> None:
    root = logging.getLogger()
    if not any(isinstance(h, PrintHandler) for h in root.handlers):
        root.addHandler(PrintHandler())
    root.setLevel(getattr(logging, level.upper()))


# ---------------------------------------------------------------------------
# ASCII logo (shown on direct execution only)
# ---------------------------------------------------------------------------

def _colorize_border(line: str) -> str:
    """Color border characters blue, everything else white."""
    out = []
    for ch in line:
        if ch in "+-|":
            out.append(f"{c_blue}{ch}{c_reset}")
        else:
            out.append(f"{c_white}{ch}{c_reset}")
    return "".join(out)


def show_logo(version: str) -> None:
    text_lines = ["CPCSCAN", "PC CORRECTION SCAN"]
    ver_token = f"[{version}]"
    inner_width = max(max(len(s) for s in text_lines), len(ver_token)) + 6
    inside_len = inner_width + 2

    pad_total = inside_len - len(ver_token)
    left = pad_total // 2
    bottom = "+" + ("-" * left) + ver_token + ("-" * (pad_total - left)) + "+"

    print(_colorize_border("+" + "-" * inside_len + "+"))
    for s in text_lines:
        print(_colorize_border("| " + s.center(inner_width) + " |"))
    print(_colorize_border(bottom))
    print()


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _float_list(text: str) -> List[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument(
        "--log-level",
        choices=LOG_LEVELS,
        default=(os.getenv("CPCSCAN_LOG_LEVEL") or "info").lower(),
    )
    common.add_argument("--threads", type=_positive_int, default=None, help="worker threads (CPCSCAN_THREADS)")

    configured = argparse.ArgumentParser(add_help=False)
    configured.add_argument("--config", default=None, help="key = value config file")
    configured.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")

    matrix = argparse.ArgumentParser(add_help=False)
    matrix.add_argument("--matrix", required=True, help="n x p CSV, rows are samples")
    matrix.add_argument("--header", action="store_true", help="input CSVs start with a header row")

    parser = _Parser(prog="cpcscan", description="PSC / CPC estimation of a single regression coefficient")
    parser.add_argument("--version", action="version", version=get_version())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common, configured], help="Monte Carlo over scenarios, methods and k")
    p.add_argument("--svg", action="store_true", help="also render plot_<scenario>.svg")

    p = sub.add_parser("scan", parents=[common, matrix], help="CPC vs PSC for every covariate")
    p.add_argument("--response", required=True)
    p.add_argument("-k", type=_nonneg_int, default=10)
    p.add_argument("--thresholds", type=_float_list, default=[0.5, 1.0])
    p.add_argument("--bins", type=_positive_int, default=DEFAULT_BINS)

    p = sub.add_parser("test", parents=[common, configured, matrix], help="bias-aware test of H0: alpha = 0")
    p.add_argument("--response", required=True)
    p.add_argument("-j", type=int, default=1, help="target covariate (1-based)")
    p.add_argument("-k", type=_nonneg_int, default=10)
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--dof-convention", choices=DOF_CONVENTIONS, default=None, help="overrides the config key")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--bound", type=float, help="user bound B on the omitted-component l1 mass")
    source.add_argument("--truth-beta", help="CSV of the true coefficients (one column)")
    noise = p.add_mutually_exclusive_group(required=True)
    noise.add_argument("--sigma", type=float)
    noise.add_argument("--estimate-sigma", action="store_true")

    p = sub.add_parser("decompose", parents=[common, matrix], help="spectrum and alignments")
    p.add_argument("--exclude", type=int, default=None, help="drop this column (1-based) before decomposing")
    p.add_argument("--target", type=int, default=None, help="column whose alignments are reported")

    return parser


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _load_design(path: str, header: bool):
    raw = csvio.load_matrix_csv(path, has_header=header)
    print(f"[CSV] Loaded {raw.shape[0]}x{raw.shape[1]} matrix from {os.path.basename(path)}")
    return center_normalize(raw)


def _load_response(path: str, header: bool, n: int) -> np.ndarray:
    y = csvio.load_response_csv(path, has_header=header)
    if y.shape[0] != n:
        raise DimensionMismatch(f"response has {y.shape[0]} rows, matrix has {n}")
    return y


def _out(args, name: str, manifest: RunManifest) -> str:
    path = os.path.join(args.out, name)
    manifest.add_output(path)
    return path


def run_simulate(args) -> int:
    cfg = load_config(args.config, args.set)
    sim = SimulationConfig.from_config(cfg)
    print(f"[Config] scenarios={','.join(sim.scenarios)} n={sim.n} p={sim.p} M={sim.replicates} seed={sim.seed}")

    report = monte_carlo_run(sim, workers=args.threads)

    snapshot = asdict(sim)
    snapshot["scenarios"] = list(sim.scenarios)
    manifest = RunManifest(command="simulate", config=snapshot, seed=sim.seed)
    if args.config:
        manifest.add_input(args.config)

    csvio.write_frame(csvio.estimates_frame(report.estimates), _out(args, "estimates.csv", manifest))
    csvio.write_frame(csvio.summary_frame(report.cells), _out(args, "summary.csv", manifest))
    for scenario in sim.scenarios:
        frame = plotting.band_frame(report, scenario)
        csvio.write_frame(frame, _out(args, f"plot_{scenario}.csv", manifest))
        if args.svg:
            plotting.render_svg(frame, _out(args, f"plot_{scenario}.svg", manifest), scenario)

    for cell in report.cells:
        if cell.k in (sim.k_min, sim.k_max):
            print(
                f"[Simulate] {cell.scenario} {cell.method} k={cell.k}: "
                f"mean={cell.mean:.4f} sd={cell.sd:.4f} theo_bias={cell.theo_bias:.4f} fail={cell.n_fail}"
            )

    write_manifest(manifest, args.out)
    print(f"[Simulate] Wrote {len(report.estimates)} estimates and {len(report.cells)} summary rows to {args.out}")
    return 0


def run_scan(args) -> int:
    X = _load_design(args.matrix, args.header)
    y = _load_response(args.response, args.header, X.n)

    cache = BasisCache()
    records = scan_all(X, y, args.k, cache=cache, workers=args.threads)
    summary = summarize_scan(records, args.thresholds, args.bins)

    manifest = RunManifest(
        command="scan",
        config={"k": args.k, "thresholds": list(args.thresholds), "bins": args.bins, "header": args.header},
    )
    manifest.add_input(args.matrix)
    manifest.add_input(args.response)
    csvio.write_frame(csvio.scan_frame(records), _out(args, "scan.csv", manifest))
    csvio.write_frame(csvio.histogram_frame(summary.histogram), _out(args, "histogram.csv", manifest))
    write_manifest(manifest, args.out)

    print(f"[Scan] {summary.n_records} covariates, decompositions psc={cache.counts['psc']} cpc={cache.counts['cpc']}")
    for t, count in summary.exceedances.items():
        print(f"[Scan] rel_err > {t:g}: {count}")
    if summary.n_undefined:
        print(f"[Scan] WARNING: {summary.n_undefined} covariate(s) with undefined rel_err")
    return 0


TEST_COLUMNS = [
    "j", "k", "alpha_hat", "N", "N_source", "D", "sigma", "sigma_estimated",
    "level", "quantile_family", "quantile", "lo", "hi", "reject",
]


def run_test(args) -> int:
    cfg = load_config(args.config, args.set)
    dof_convention = args.dof_convention or cfg["dof_convention"]
    if dof_convention not in DOF_CONVENTIONS:
        raise ConfigError("dof_convention", f"must be one of {', '.join(DOF_CONVENTIONS)}, got {dof_convention!r}")

    X = _load_design(args.matrix, args.header)
    y = _load_response(args.response, args.header, X.n)
    if not 1 <= args.j <= X.p:
        raise DataError(f"target column j={args.j} outside [1, {X.p}]")
    y = y - y.mean()

    cache = BasisCache()
    result = fit(X, y, Method.CPC, args.j, args.k, cache)

    manifest = RunManifest(
        command="test",
        config={"j": args.j, "k": args.k, "level": args.level, "dof_convention": dof_convention},
    )
    manifest.add_input(args.matrix)
    manifest.add_input(args.response)
    if args.config:
        manifest.add_input(args.config)

    if args.truth_beta is not None:
        beta = csvio.load_response_csv(args.truth_beta, has_header=args.header)
        if beta.shape[0] != X.p:
            raise DimensionMismatch(f"truth beta has {beta.shape[0]} entries, matrix has {X.p} columns")
        manifest.add_input(args.truth_beta)
        gamma_tail, n_source = truth_gamma_tail_l1(X, beta, args.j, args.k, cache), "truth"
    else:
        if args.bound < 0:
            raise DataError(f"bound B must be >= 0, got {args.bound}")
        gamma_tail, n_source = args.bound, "bound"

    N, D = compute_ND(X, args.j, args.k, gamma_tail, cache)
    sigma = estimate_sigma(result.residuals, args.k) if args.estimate_sigma else args.sigma
    if not sigma > 0:
        raise DataError(f"sigma must be > 0, got {sigma}")

    outcome = run_h0_test(
        result.alpha_hat, N, D, sigma, bool(args.estimate_sigma), X.n, args.level,
        k=args.k, dof_convention=dof_convention,
    )

    lo, hi = outcome.interval
    print(f"[Test] alpha_hat={outcome.alpha_hat:.6g} N={N:.6g} ({n_source}) D={D:.6g} sigma={sigma:.6g}")
    print(f"[Test] interval=[{lo:.6g}, {hi:.6g}] quantile={outcome.quantile:.6g} ({outcome.quantile_family})")
    print(f"[Test] {'reject' if outcome.reject else 'accept'} H0 at level {args.level:g}")

    row = {
        "j": args.j, "k": args.k, "alpha_hat": outcome.alpha_hat, "N": N, "N_source": n_source, "D": D,
        "sigma": sigma, "sigma_estimated": outcome.sigma_estimated, "level": outcome.level,
        "quantile_family": outcome.quantile_family, "quantile": outcome.quantile,
        "lo": lo, "hi": hi, "reject": outcome.reject,
    }
    csvio.write_frame(csvio.single_row_frame(row, TEST_COLUMNS), _out(args, "test.csv", manifest))
    write_manifest(manifest, args.out)
    return 0


def run_decompose(args, parser: argparse.ArgumentParser) -> int:
    X = _load_design(args.matrix, args.header)
    if args.exclude is not None and not 1 <= args.exclude <= X.p:
        parser.error(f"--exclude {args.exclude} outside [1, {X.p}]")
    target = args.target if args.target is not None else (args.exclude or 1)
    if not 1 <= target <= X.p:
        parser.error(f"--target {target} outside [1, {X.p}]")

    K = kinship(X)
    diag_gap = float(np.max(np.abs(np.diag(K) - 1.0)))
    print(f"[Decompose] kinship diagonal max |K_ii - 1| = {diag_gap:.3e}")

    source = X.values if args.exclude is None else X.without(args.exclude)
    basis = thin_svd(source)
    alignment = basis.left_vectors.T @ X.column(target)
    explained = np.cumsum(basis.singular_values ** 2) / X.p

    frame = pd.DataFrame(
        {
            "index": np.arange(1, basis.rank + 1),
            "singular_value": basis.singular_values,
            "alignment": alignment,
            "cumulative_explained": explained,
        }
    )

    manifest = RunManifest(command="decompose", config={"exclude": args.exclude, "target": target})
    manifest.add_input(args.matrix)
    csvio.write_frame(frame, _out(args, "spectrum.csv", manifest))
    write_manifest(manifest, args.out)

    top2 = float(np.max(np.abs(alignment[:2]))) if basis.rank else math.nan
    print(f"[Decompose] rank={basis.rank} top-2 alignment of column {target}: {top2:.4f}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    commands = {
        "simulate": run_simulate,
        "scan": run_scan,
        "test": run_test,
        "decompose": lambda a: run_decompose(a, parser),
    }
    tag = args.command.capitalize()
    try:
        return commands[args.command](args)
    except CpcScanError as e:
        print(f"[{tag}] ERROR: {e}")
        return e.exit_code
    except OSError as e:
        print(f"[{tag}] ERROR: {e}")
        return 2


if __name__ == "__main__":
    os.environ.setdefault("TERM", "xterm-256color")
    install_pretty_print()
    show_logo(get_version())
    sys.exit(main())
