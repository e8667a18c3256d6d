"""Command-line entry point.

Subcommands: ``fit`` (run the sampler, optionally pinned to a fixed
partition), ``simulate`` (write a synthetic dataset), ``summarize``
(partition point estimate from stored draws), ``metrics`` (WAIC and
out-of-sample comparison), and ``explore`` (spatial autocorrelation
statistics).  Every run that writes outputs also writes a JSON manifest with
the resolved configuration, SHA-256 digests of the inputs, the seed, and the
wall-clock duration, so results can be reproduced exactly.

Exit codes: 0 success, 1 validation error (bad flags, unreadable files,
invalid configuration), 2 numerical failure inside the sampler.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .metrics import evaluate_model, format_metric_table, write_metrics_csv
from .panel import gearys_c, load_adjacency, load_panel, morans_i, standardize
from .partition import (
    Partition,
    load_partition_draws,
    minimize_binder,
    minimize_gvi,
    posterior_similarity_matrix,
    read_partition_csv,
    write_partition_csv,
)
from .sampler import (
    ChainConfig,
    NumericalError,
    merge_chain_outputs,
    run_chain,
    run_chains,
)
from .simulate import default_simulation_spec, save_simulation, simulate_dataset

_CONFIG_FIELDS = {
    "iterations": int, "burn_in": int, "thin": int, "seed": int, "n_aux": int,
    "a_sigma2": float, "b_sigma2": float, "a_tau2": float, "b_tau2": float,
    "alpha_rho": float, "beta_rho": float, "a_alpha": float, "b_alpha": float,
    "a_xi": float, "b_xi": float, "mh_step_xi": float, "mh_step_rho": float,
    "adapt": bool, "n_chains": int, "init": str,
}


def read_config_file(path) -> dict:
    """Parse a plain-text ``key = value`` configuration file."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_FIELDS:
                raise ValueError(f"{path}:{lineno}: unknown config key '{key}'")
            typ = _CONFIG_FIELDS[key]
            try:
                if typ is bool:
                    if raw.lower() not in ("true", "false", "0", "1"):
                        raise ValueError(raw)
                    values[key] = raw.lower() in ("true", "1")
                else:
                    values[key] = typ(raw)
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: invalid value '{raw}' for key '{key}'"
                ) from None
    return values


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, command, config_dict, inputs, seed, started) -> None:
    """Write run_manifest.json atomically (write to a temp name, then rename)."""
    manifest = {
        "command": command,
        "version": __version__,
        "config": config_dict,
        "input_digests": {str(p): _sha256(p) for p in inputs},
        "seed": seed,
        "duration_seconds": round(time.monotonic() - started, 3),
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "run_manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    os.replace(tmp, path)


def _config_from_args(args) -> ChainConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in ("iterations", "burn_in", "thin", "seed", "chains", "init"):
        flag = getattr(args, key, None)
        if flag is not None:
            values["n_chains" if key == "chains" else key] = flag
    return ChainConfig(**values)


def _config_echo(config: ChainConfig) -> dict:
    return {key: getattr(config, key) for key in _CONFIG_FIELDS}


def _cmd_fit(args) -> int:
    started = time.monotonic()
    config = _config_from_args(args)
    data = load_panel(args.panel)
    graph = load_adjacency(args.adj, data.unit_ids)
    inputs = [args.panel, args.adj] + ([args.config] if args.config else [])
    if args.standardize:
        data, scales = standardize(data)
    if args.fixed_partition:
        inputs.append(args.fixed_partition)
        pinned = read_partition_csv(args.fixed_partition, data.unit_ids)
        config = replace(config, fixed_partition=pinned.as_array())

    if config.n_chains > 1:
        outputs = run_chains(data, graph, config)
        for out in outputs:
            out.save(os.path.join(args.out, f"chain_{out.chain_index:02d}"))
        merge_chain_outputs(outputs).save(os.path.join(args.out, "pooled"))
    else:
        run_chain(data, graph, config).save(args.out)
    if args.standardize:
        with open(os.path.join(args.out, "standardization.csv"), "w",
                  encoding="utf-8") as fh:
            fh.write("name,value\n")
            fh.write(f"y_mean,{scales.y_mean!r}\ny_sd,{scales.y_sd!r}\n")
            for k in range(len(scales.x_means)):
                fh.write(f"x{k + 1}_mean,{scales.x_means[k]!r}\n")
                fh.write(f"x{k + 1}_sd,{scales.x_sds[k]!r}\n")
    write_manifest(args.out, "fit", _config_echo(config), inputs, config.seed,
                   started)
    return 0


def _cmd_simulate(args) -> int:
    started = time.monotonic()
    if args.preset != "appendix-e":
        raise ValueError(f"unknown preset '{args.preset}'")
    spec = default_simulation_spec(seed=args.seed)
    panel, graph, truth = simulate_dataset(spec, n_times=args.times)
    save_simulation(args.out, panel, graph, truth)
    config = {"preset": args.preset, "times": args.times,
              "grid": f"{spec.grid_rows}x{spec.grid_cols}",
              "clusters": spec.true_partition.k, "p": spec.p,
              "rho": spec.rho, "sigma2": spec.sigma2, "tau2": spec.tau2}
    write_manifest(args.out, "simulate", config, [], args.seed, started)
    return 0


def _cmd_summarize(args) -> int:
    started = time.monotonic()
    draws = load_partition_draws(args.draws)
    if args.loss == "binder":
        estimate = minimize_binder(posterior_similarity_matrix(draws), draws,
                                   a=args.a, b=args.b)
    else:
        estimate = minimize_gvi(draws, a=args.a, b=args.b,
                                joint_scale=args.joint_scale)
    unit_ids = _units_from_draws_dir(args.draws)
    write_partition_csv(estimate, unit_ids, args.out)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    config = {"loss": args.loss, "a": args.a, "b": args.b,
              "joint_scale": args.joint_scale, "draws_dir": args.draws,
              "n_clusters": estimate.k, "out": args.out}
    write_manifest(out_dir, "summarize", config,
                   [os.path.join(args.draws, "allocations.csv")], None, started)
    return 0


def _units_from_draws_dir(run_dir) -> list:
    with open(os.path.join(run_dir, "allocations.csv"), encoding="utf-8") as fh:
        return fh.readline().strip().split(",")


def _cmd_metrics(args) -> int:
    started = time.monotonic()
    config = _config_from_args(args)
    data = load_panel(args.panel)
    graph = load_adjacency(args.adj, data.unit_ids)
    if args.standardize:
        data, _ = standardize(data)
    report = evaluate_model(data, graph, config, t0=args.t0)
    os.makedirs(args.out, exist_ok=True)
    write_metrics_csv(report, os.path.join(args.out, "metrics.csv"))
    table = format_metric_table(report)
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    inputs = [args.panel, args.adj] + ([args.config] if args.config else [])
    echo = _config_echo(config)
    echo["t0"] = args.t0
    write_manifest(args.out, "metrics", echo, inputs, config.seed, started)
    return 0


def _cmd_explore(args) -> int:
    started = time.monotonic()
    data = load_panel(args.panel)
    graph = load_adjacency(args.adj, data.unit_ids)
    rows = []
    for t, year in enumerate(data.times):
        rows.append((year, morans_i(data.y[:, t], graph),
                     gearys_c(data.y[:, t], graph)))
    avg_mi = float(np.mean([r[1] for r in rows]))
    avg_gc = float(np.mean([r[2] for r in rows]))
    print(f"{'year':>8}  {'morans_i':>9}  {'gearys_c':>9}")
    for year, mi, gc in rows:
        print(f"{year!s:>8}  {mi:9.4f}  {gc:9.4f}")
    print(f"{'average':>8}  {avg_mi:9.4f}  {avg_gc:9.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "exploratory.csv"), "w",
                  encoding="utf-8") as fh:
            fh.write("year,morans_i,gearys_c\n")
            for year, mi, gc in rows:
                fh.write(f"{year},{mi!r},{gc!r}\n")
            fh.write(f"average,{avg_mi!r},{avg_gc!r}\n")
        write_manifest(args.out, "explore", {}, [args.panel, args.adj], None,
                       started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stclust",
        description="Bayesian clustering of areal time series with CAR "
                    "spatio-temporal random effects.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run the MCMC sampler")
    fit.add_argument("--panel", required=True)
    fit.add_argument("--adj", required=True)
    fit.add_argument("--config")
    fit.add_argument("--out", required=True)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--iterations", type=int)
    fit.add_argument("--burn-in", dest="burn_in", type=int)
    fit.add_argument("--thin", type=int)
    fit.add_argument("--chains", type=int)
    fit.add_argument("--init", choices=("default", "prior"))
    fit.add_argument("--fixed-partition", dest="fixed_partition",
                     help="unit,cluster CSV pinning the allocation labels")
    fit.add_argument("--standardize", action="store_true")
    fit.set_defaults(func=_cmd_fit)

    sim = sub.add_parser("simulate", help="write a synthetic dataset")
    sim.add_argument("--preset", default="appendix-e")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--times", type=int, default=24)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_simulate)

    summ = sub.add_parser("summarize", help="partition point estimate from draws")
    summ.add_argument("--draws", required=True)
    summ.add_argument("--loss", choices=("binder", "gvi"), default="binder")
    summ.add_argument("--a", type=float, default=1.0)
    summ.add_argument("--b", type=float, default=1.0)
    summ.add_argument("--joint-scale", dest="joint_scale",
                      choices=("sum", "mean"), default="sum")
    summ.add_argument("--out", required=True)
    summ.set_defaults(func=_cmd_summarize)

    met = sub.add_parser("metrics", help="WAIC and out-of-sample comparison")
    met.add_argument("--panel", required=True)
    met.add_argument("--adj", required=True)
    met.add_argument("--config")
    met.add_argument("--out", required=True)
    met.add_argument("--t0", type=int, default=5,
                     help="first evaluation year (1-based index)")
    met.add_argument("--seed", type=int)
    met.add_argument("--iterations", type=int)
    met.add_argument("--burn-in", dest="burn_in", type=int)
    met.add_argument("--thin", type=int)
    met.add_argument("--standardize", action="store_true")
    met.set_defaults(func=_cmd_metrics)

    exp = sub.add_parser("explore", help="spatial autocorrelation statistics")
    exp.add_argument("--panel", required=True)
    exp.add_argument("--adj", required=True)
    exp.add_argument("--out")
    exp.set_defaults(func=_cmd_explore)
    return parser


def dispatch(argv) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
