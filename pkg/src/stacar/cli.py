"""Command-line entry points chaining the library into complete workflows.

Subcommands
-----------
check           proportionality diagnostic for a dataset
fit             fit one model specification
search          fit many specifications and rank them
simulate        generate a synthetic dataset with known truth
dump-structure  print any prior structure matrix in coordinate format

Every command accepts ``--config FILE`` with a JSON document supplying
defaults; explicit flags override config values.  All commands are
deterministic given ``--seed``.  Exit codes: 0 success, 1 input error,
2 proportionality violations found (check), 3 non-convergence (fit).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .adjacency import icar_structure, lattice_graph, read_adjacency_file
from .data import read_dataset_csv, write_dataset_csv
from .errors import InputError
from .laplace import FitOptions, fit_laplace, write_effect_tables, write_fit_json
from .mcmc import McmcOptions, fit_mcmc
from .model import Hyperparameters
from .modelspec import enumerate_models, parse_spec
from .search import run_search, write_family_csv, write_results_csv
from .simulate import simulate_dataset, write_truth_json
from .standardize import (expected_for_model, proportionality_check,
                          stratum_rates, write_points_csv, write_report_csv)
from .structures import (StructureMatrix, identity_structure, leroux_precision,
                         rw1_structure, structure_to_coordinate_text)
from .validation import check_graph_alignment

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FLAGGED = 2
EXIT_NOT_CONVERGED = 3


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise InputError("config document must be a JSON object")
    return config


def _merged(args, config: dict, key: str, default):
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    return config.get(key, default)


def _read_rates_file(path, age_labels) -> np.ndarray:
    import csv as _csv

    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["age_group", "q"]:
            raise InputError(f"{path}: expected header 'age_group,q'")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise InputError(f"{path} line {lineno}: expected 2 columns")
            table[row[0].strip()] = float(row[1])
    missing = [a for a in age_labels if a not in table]
    if missing:
        raise InputError(f"{path}: missing rates for age groups {missing}")
    return np.array([table[a] for a in age_labels])


def _load_inputs(args):
    graph = read_adjacency_file(args.adjacency)
    d = check_graph_alignment(read_dataset_csv(args.data), graph)
    return d, graph


# --- commands -----------------------------------------------------------


def cmd_check(args) -> int:
    config = _load_config(args.config)
    d, _ = _load_inputs(args)
    min_points = int(_merged(args, config, "min-points", 3))
    r2_threshold = float(_merged(args, config, "r2-threshold", 0.5))
    rates_file = _merged(args, config, "rates-file", None)
    rates = (_read_rates_file(rates_file, d.age_labels) if rates_file
             else stratum_rates(d))
    report = proportionality_check(d, rates, min_points=min_points,
                                   r2_threshold=r2_threshold)
    prefix = _merged(args, config, "out", "check")
    write_report_csv(report, f"{prefix}_report.csv")
    write_points_csv(report, f"{prefix}_points.csv")
    print(f"assessed {report.n_assessed} cells, flagged {report.n_flagged} "
          f"(threshold r2 < {r2_threshold}); wrote {prefix}_report.csv "
          f"and {prefix}_points.csv")
    return EXIT_FLAGGED if report.n_flagged else EXIT_OK


def _expected_from_args(args, config, d):
    rates_file = _merged(args, config, "rates-file", None)
    if rates_file:
        return expected_for_model(d, rates=_read_rates_file(rates_file, d.age_labels))
    policy = _merged(args, config, "expected", "internal")
    return expected_for_model(d, policy=policy)


def cmd_fit(args) -> int:
    config = _load_config(args.config)
    d, graph = _load_inputs(args)
    spec = parse_spec(_merged(args, config, "spec",
                              "delta=iid;gamma=-;z1=-;z2=-;z3=-"))
    prior = _merged(args, config, "prior", "pc")
    seed = int(_merged(args, config, "seed", 0))
    expected = _expected_from_args(args, config, d)
    opts = FitOptions(seed=seed,
                      n_draws=int(_merged(args, config, "draws", 1000)),
                      ccd=bool(_merged(args, config, "ccd", False)))
    fit = fit_laplace(d, expected, spec, graph, prior, opts)
    prefix = _merged(args, config, "out", "fit")
    write_fit_json(fit, f"{prefix}.json")
    tables = write_effect_tables(fit, prefix)
    print(f"spec {spec.to_string()}: waic {fit.waic:.4f} "
          f"(p_eff {fit.p_eff:.2f}), converged={fit.converged}")
    print(f"wrote {prefix}.json and {len(tables)} effect tables")
    if _merged(args, config, "mcmc-check", False):
        iterations = int(_merged(args, config, "mcmc-iterations", 5000))
        oracle = fit_mcmc(d, expected, spec, graph, prior,
                          iterations=iterations, seed=seed + 1,
                          opts=McmcOptions())
        write_fit_json(oracle, f"{prefix}_mcmc.json")
        gap = abs(oracle.intercept.mean - fit.intercept.mean)
        print(f"sampling cross-check: intercept gap {gap:.4f} "
              f"(wrote {prefix}_mcmc.json)")
    if not fit.converged:
        print("fit did not converge; diagnostics:", fit.diagnostics,
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_search(args) -> int:
    config = _load_config(args.config)
    d, graph = _load_inputs(args)
    if args.full and args.specs_file:
        raise InputError("choose one of --full or --specs-file")
    if args.full or _merged(args, config, "full", False):
        specs = enumerate_models()
    else:
        specs_file = _merged(args, config, "specs-file", None)
        if not specs_file:
            raise InputError("search needs --full or --specs-file")
        with open(specs_file, encoding="utf-8") as fh:
            lines = [line.strip() for line in fh
                     if line.strip() and not line.startswith("#")]
        specs = [parse_spec(line) for line in lines]
    prior = _merged(args, config, "prior", "pc")
    seed = int(_merged(args, config, "seed", 0))
    jobs = int(_merged(args, config, "jobs", 1))
    prefix = _merged(args, config, "out", "search")
    expected = _expected_from_args(args, config, d)
    report = run_search(d, expected, graph, specs, prior_family=prior,
                        jobs=jobs, seed=seed,
                        results_path=f"{prefix}_results.csv",
                        resume=bool(args.resume))
    write_results_csv(report, f"{prefix}_results.csv")
    write_family_csv(report, f"{prefix}_summary.csv")
    print(f"searched {len(report.rows)} specs; best {report.overall_best}")
    print(f"wrote {prefix}_results.csv and {prefix}_summary.csv")
    return EXIT_OK


def _hyper_from_config(spec, config: dict) -> Hyperparameters:
    values = {"tau_spatial": 1.0, "lambda_spatial": 0.5}
    for block in ("time", "age", "space_time", "space_age", "time_age"):
        if getattr(spec, block) is not None:
            values[f"tau_{block}"] = 1.0
    for key, value in config.get("hyperparameters", {}).items():
        values[key] = float(value)
    return Hyperparameters(**values)


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    if "adjacency" in config:
        graph = read_adjacency_file(config["adjacency"])
    else:
        grid = config.get("grid", [4, 4])
        graph = lattice_graph(int(grid[0]), int(grid[1]))
    T = int(_merged(args, config, "periods", 4))
    K = int(_merged(args, config, "age-groups", 4))
    spec = parse_spec(_merged(args, config, "spec",
                              "delta=rw1;gamma=rw1;z1=-;z2=-;z3=-"))
    alpha = float(_merged(args, config, "alpha", 0.0))
    seed = int(_merged(args, config, "seed", 0))
    hyper = _hyper_from_config(spec, config)
    population = config.get("population", 1000.0)
    rates = config.get("rates", 0.01)
    d, truth = simulate_dataset(graph, T, K, spec, hyper, alpha,
                                population=population, reference_rates=rates,
                                seed=seed)
    prefix = _merged(args, config, "out", "simulated")
    write_dataset_csv(d, f"{prefix}_data.csv")
    write_truth_json(truth, f"{prefix}_truth.json")
    with open(f"{prefix}_adjacency.txt", "w", encoding="utf-8") as fh:
        for i, area in enumerate(graph.area_ids):
            neighbours = " ".join(graph.area_ids[j] for j in graph.neighbours(i))
            fh.write(f"{area}: {neighbours}\n")
    print(f"simulated {d.n_cells} cells ({len(graph.area_ids)} areas x "
          f"{T} periods x {K} age groups); wrote {prefix}_data.csv, "
          f"{prefix}_truth.json, {prefix}_adjacency.txt")
    return EXIT_OK


def cmd_dump_structure(args) -> int:
    kind = args.kind
    if kind == "rw1":
        sm = rw1_structure(args.n)
    elif kind == "identity":
        sm = identity_structure(args.n)
    elif kind == "icar":
        if not args.adjacency:
            raise InputError("icar structure needs --adjacency")
        sm = icar_structure(read_adjacency_file(args.adjacency))
    elif kind == "leroux":
        if not args.adjacency:
            raise InputError("leroux precision needs --adjacency")
        base = icar_structure(read_adjacency_file(args.adjacency))
        sm = StructureMatrix(matrix=leroux_precision(base, args.mixing,
                                                     args.precision),
                             rank_deficiency=0)
    else:
        raise InputError(f"unknown structure kind {kind!r}")
    text = structure_to_coordinate_text(sm)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- argument parsing -----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stacar",
        description="age-structured spatio-temporal count models and the "
                    "standardization diagnostic they replace")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config document; flags override")
        p.add_argument("--out", help="output path prefix")

    p_check = sub.add_parser("check", help="proportionality diagnostic")
    p_check.add_argument("data", help="dataset CSV")
    p_check.add_argument("adjacency", help="adjacency list file")
    p_check.add_argument("--min-points", type=int)
    p_check.add_argument("--r2-threshold", type=float)
    p_check.add_argument("--rates-file", help="external rates CSV (age_group,q)")
    add_common(p_check)
    p_check.set_defaults(func=cmd_check)

    p_fit = sub.add_parser("fit", help="fit one model specification")
    p_fit.add_argument("data")
    p_fit.add_argument("adjacency")
    p_fit.add_argument("--spec", help="delta=..;gamma=..;z1=..;z2=..;z3=..")
    p_fit.add_argument("--prior", choices=["pc", "noninformative"])
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument("--draws", type=int)
    p_fit.add_argument("--expected", choices=["internal", "global"])
    p_fit.add_argument("--rates-file")
    p_fit.add_argument("--ccd", action="store_const", const=True)
    p_fit.add_argument("--mcmc-check", action="store_const", const=True)
    p_fit.add_argument("--mcmc-iterations", type=int)
    add_common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_search = sub.add_parser("search", help="fit many specifications")
    p_search.add_argument("data")
    p_search.add_argument("adjacency")
    p_search.add_argument("--full", action="store_const", const=True,
                          help="search the whole 520-model space")
    p_search.add_argument("--specs-file", help="one spec string per line")
    p_search.add_argument("--jobs", type=int)
    p_search.add_argument("--seed", type=int)
    p_search.add_argument("--prior", choices=["pc", "noninformative"])
    p_search.add_argument("--expected", choices=["internal", "global"])
    p_search.add_argument("--rates-file")
    p_search.add_argument("--resume", action="store_true",
                          help="skip specs already in the results file")
    add_common(p_search)
    p_search.set_defaults(func=cmd_search)

    p_sim = sub.add_parser("simulate", help="generate synthetic data")
    p_sim.add_argument("--periods", type=int)
    p_sim.add_argument("--age-groups", type=int)
    p_sim.add_argument("--spec")
    p_sim.add_argument("--alpha", type=float)
    p_sim.add_argument("--seed", type=int)
    add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_dump = sub.add_parser("dump-structure",
                            help="print a structure matrix as 'row col value'")
    p_dump.add_argument("--kind", required=True,
                        choices=["rw1", "identity", "icar", "leroux"])
    p_dump.add_argument("--n", type=int, default=2, help="dimension (rw1/identity)")
    p_dump.add_argument("--adjacency", help="adjacency file (icar/leroux)")
    p_dump.add_argument("--mixing", type=float, default=0.5,
                        help="leroux mixing parameter")
    p_dump.add_argument("--precision", type=float, default=1.0,
                        help="leroux precision parameter")
    p_dump.add_argument("--out")
    p_dump.set_defaults(func=cmd_dump_structure)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
