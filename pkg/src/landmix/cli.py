"""Command-line interface: fit, simulate, export, sbc, summarize.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  Every fit writes a reproducibility manifest; re-running
``fit --from-manifest`` reproduces byte-identical draw files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import DEFAULT_SPAN, _parse_rows, load_landings, simulate_dataset, write_landings
from .diagnostics import (
    compute_convergence,
    pool_chains,
    render_summary_table,
    summarize,
    summary_csv_rows,
    table_param_order,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateCovarianceError,
    DegenerateDataError,
    LandmixError,
)
from .model import JointParams, Sector, TotalParams, params_from_dict, params_to_dict
from .oracle import SBCConfig, sbc_run
from .sampler import ChainConfig, ChainDraws, run_chains

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_DEFAULT_TRUTH = {
    "total": {"beta0": 8.0, "sigma": 0.5, "sigma0": 4.0, "sigma1": 0.05},
    "joint": {
        "beta0_I": 8.5,
        "beta0_A": 5.5,
        "sigma": 0.55,
        "sigma0_I": 2.5,
        "sigma0_A": 4.0,
        "sigma1_I": 0.05,
        "sigma1_A": 0.05,
        "rho0": 0.7,
        "rho1": 0.9,
    },
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_draws_csv(path: Path, draws: ChainDraws) -> None:
    names = draws.names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        cols = [draws.draws[n] for n in names]
        for row in zip(*cols):
            writer.writerow([repr(float(v)) for v in row])


def read_draws_csv(path, chain_index: int = 0) -> ChainDraws:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.asarray(rows)
    return ChainDraws(
        {name: arr[:, k] for k, name in enumerate(names)}, {}, chain_index
    )


def _read_fit_dir(fit_dir: Path):
    manifest = json.loads((fit_dir / "manifest.json").read_text(encoding="utf-8"))
    chains = []
    for k in range(manifest["chains"]):
        chains.append(read_draws_csv(fit_dir / f"draws_chain{k}.csv", k))
    return manifest, chains


def _config_file_values(path: Path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


_FIT_KEYS = {
    "model": str,
    "data": str,
    "chains": int,
    "iters": int,
    "burnin": int,
    "thin": int,
    "seed": int,
    "step_size": float,
}

_FIT_DEFAULTS = {"chains": 4, "iters": 20000, "burnin": 10000, "thin": 5, "seed": 0, "step_size": 0.5}


def _resolve_fit_settings(args) -> dict:
    settings = dict(_FIT_DEFAULTS)
    if args.from_manifest:
        manifest = json.loads(Path(args.from_manifest).read_text(encoding="utf-8"))
        settings.update(
            model=manifest["model"],
            data=manifest["data"],
            chains=manifest["chains"],
            iters=manifest["iterations"],
            burnin=manifest["burnin"],
            thin=manifest["thin"],
            seed=manifest["seed"],
            step_size=manifest.get("step_size", 0.5),
        )
        settings["_expected_sha"] = manifest.get("data_sha256")
    if args.config:
        values = _config_file_values(Path(args.config))
        for key, raw in values.items():
            if key not in _FIT_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                settings[key] = _FIT_KEYS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
    for key in _FIT_KEYS:
        flag = getattr(args, "iters" if key == "iters" else key, None)
        if flag is not None:
            settings[key] = flag
    if settings.get("model") not in ("total", "joint"):
        raise ConfigError("--model must be 'total' or 'joint'")
    if not settings.get("data"):
        raise ConfigError("no data path given (flag, config file, or manifest)")
    return settings


def cmd_fit(args) -> int:
    settings = _resolve_fit_settings(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_path = Path(settings["data"])
    if not data_path.exists():
        raise DataFormatError(f"data file not found: {data_path}")
    sha = _sha256(data_path)
    expected = settings.pop("_expected_sha", None)
    if expected and expected != sha:
        raise DataFormatError("data checksum does not match manifest")
    data = load_landings(data_path, settings["model"])
    config = ChainConfig(
        iterations=settings["iters"],
        burnin=settings["burnin"],
        thin=settings["thin"],
        chains=settings["chains"],
        seed=settings["seed"],
        step_size=settings["step_size"],
    )
    chains = run_chains(settings["model"], data, config, parallel=args.parallel)
    for ch in chains:
        _write_draws_csv(out_dir / f"draws_chain{ch.chain_index}.csv", ch)
    pooled = pool_chains(chains)
    summary = summarize(pooled)
    (out_dir / "summary.txt").write_text(
        render_summary_table(summary, settings["model"]) + "\n", encoding="utf-8"
    )
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(summary_csv_rows(summary, settings["model"]))
    if config.chains >= 2:
        report = compute_convergence(chains, table_param_order(settings["model"]))
        with open(out_dir / "convergence.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["parameter", "split_rhat", "ess", "flagged"])
            for name, entry in report.items():
                writer.writerow([name, repr(entry.rhat), repr(entry.ess), str(entry.flagged).lower()])
    manifest = {
        "command": "fit",
        "version": __version__,
        "model": settings["model"],
        "data": str(data_path),
        "data_sha256": sha,
        "iterations": config.iterations,
        "burnin": config.burnin,
        "thin": config.thin,
        "chains": config.chains,
        "seed": config.seed,
        "step_size": config.step_size,
    }
    _write_json(out_dir / "manifest.json", manifest)
    print(render_summary_table(summary, settings["model"]))
    return EXIT_OK


def cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth_values = dict(_DEFAULT_TRUTH[args.model])
    if args.truth:
        truth_values.update(json.loads(Path(args.truth).read_text(encoding="utf-8")))
    params = params_from_dict(args.model, truth_values)
    data, effects = simulate_dataset(
        args.model, params, args.countries, args.years, seed=args.seed
    )
    write_landings(data, out_dir / "data.csv", span_start=args.span_start)
    truth = {"model": args.model, "params": params_to_dict(params), "effects": {}}
    for i, label in enumerate(data.labels):
        if args.model == "total":
            truth["effects"][label] = {
                "b0": float(effects.b0[i]),
                "b1": float(effects.b1[i]),
            }
        else:
            truth["effects"][label] = {
                "b0_I": float(effects.b0_ind[i]),
                "b0_A": float(effects.b0_art[i]),
                "b1_I": float(effects.b1_ind[i]),
                "b1_A": float(effects.b1_art[i]),
            }
    _write_json(out_dir / "truth.json", truth)
    _write_json(
        out_dir / "manifest.json",
        {
            "command": "simulate",
            "version": __version__,
            "model": args.model,
            "countries": args.countries,
            "years": args.years,
            "seed": args.seed,
            "span_start": args.span_start,
            "truth": truth["params"],
        },
    )
    print(f"wrote {out_dir / 'data.csv'}")
    return EXIT_OK


def _export_figure1(args) -> list[list]:
    if not args.data:
        raise ConfigError("--figure 1 requires --data")
    with open(args.data, newline="", encoding="utf-8") as fh:
        rows = _parse_rows(fh, (args.span_start, args.span_start + 200))
    out = [["country", "year", "log_tonnes", "sector"]]
    for country, year, sector, tonnes in rows:
        out.append([country, year, repr(math.log(tonnes)), sector.value])
    return out


def _export_figure2(fit_dir: Path) -> list[list]:
    manifest, chains = _read_fit_dir(fit_dir)
    if manifest["model"] != "total":
        raise ConfigError("--figure 2 requires a total-model fit")
    pooled = pool_chains(chains)
    summary = summarize(pooled)
    out = [["country", "effect", "q0.025", "mean", "q0.975"]]
    labels = sorted(
        {n[3:-1] for n in pooled if n.startswith("b0[")},
        key=lambda lbl: list(pooled).index(f"b0[{lbl}]"),
    )
    for effect in ("b0", "b1"):
        for label in labels:
            s = summary[f"{effect}[{label}]"]
            out.append([label, effect, repr(s.q025), repr(s.mean), repr(s.q975)])
    return out


def _export_figure3(fit_dir: Path) -> list[list]:
    manifest, chains = _read_fit_dir(fit_dir)
    if manifest["model"] != "joint":
        raise ConfigError("--figure 3 requires a joint-model fit")
    data = load_landings(Path(manifest["data"]), "joint")
    avail = data.availability
    dual = [
        data.labels[c]
        for c in range(data.n_countries)
        if {Sector.INDUSTRIAL, Sector.ARTISANAL} <= set(avail[c])
    ]
    pooled = pool_chains(chains)
    out = [["country", "effect", "industrial_mean", "artisanal_mean"]]
    for effect in ("intercept", "slope"):
        tag = "b0" if effect == "intercept" else "b1"
        for label in dual:
            mi = float(np.mean(pooled[f"{tag}_I[{label}]"]))
            ma = float(np.mean(pooled[f"{tag}_A[{label}]"]))
            out.append([label, effect, repr(mi), repr(ma)])
    return out


def cmd_export(args) -> int:
    if args.figure == 1:
        rows = _export_figure1(args)
    elif args.figure == 2:
        if not args.fit:
            raise ConfigError("--figure 2 requires --fit")
        rows = _export_figure2(Path(args.fit))
    else:
        if not args.fit:
            raise ConfigError("--figure 3 requires --fit")
        rows = _export_figure3(Path(args.fit))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_sbc(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    skip = ("obs_variance",) if args.skip_variance_update else ()
    chain = ChainConfig(
        iterations=args.iters,
        burnin=args.burnin,
        thin=1,
        chains=args.chains,
        seed=0,
        skip_updates=skip,
    )
    config = SBCConfig(n_countries=args.countries, horizon=args.years, chain=chain)
    result = sbc_run("total", config, args.replicates, args.seed)
    with open(out_dir / "ranks.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "replicate", "rank"])
        for name, ranks in result.ranks.items():
            for rep, rank in enumerate(ranks):
                writer.writerow([name, rep, int(rank)])
    _write_json(
        out_dir / "summary.json",
        {
            "pvalues": result.pvalues,
            "replicates": result.replicates,
            "excluded": result.excluded,
            "rank_max": result.rank_max,
            "failed": result.failed,
        },
    )
    for name, p in result.pvalues.items():
        print(f"{name}: p = {p:.4f}")
    if result.failed:
        raise DegenerateDataError(
            f"{result.excluded}/{result.replicates} replicates excluded by the R-hat gate"
        )
    return EXIT_OK


def cmd_summarize(args) -> int:
    manifest, chains = _read_fit_dir(Path(args.fit))
    pooled = pool_chains(chains)
    print(render_summary_table(summarize(pooled), manifest["model"]))
    if len(chains) >= 2:
        report = compute_convergence(chains, table_param_order(manifest["model"]))
        print()
        print(f"{'parameter':<12}{'split_rhat':>12}{'ess':>10}")
        for name, entry in report.items():
            print(f"{name:<12}{entry.rhat:>12.4f}{entry.ess:>10.1f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="landmix",
        description="Bayesian longitudinal mixed models for landings panels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model and write draws + summaries")
    fit.add_argument("--model", choices=["total", "joint"])
    fit.add_argument("--data")
    fit.add_argument("--chains", type=int)
    fit.add_argument("--iters", type=int)
    fit.add_argument("--burnin", type=int)
    fit.add_argument("--thin", type=int)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--step-size", dest="step_size", type=float)
    fit.add_argument("--config", help="key=value config file (flags win)")
    fit.add_argument("--from-manifest", help="rerun a previous fit from its manifest")
    fit.add_argument("--parallel", type=int, default=1)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="simulate a synthetic landings panel")
    sim.add_argument("--model", choices=["total", "joint"], required=True)
    sim.add_argument("--countries", type=int, default=12)
    sim.add_argument("--years", type=int, default=45)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--truth", help="JSON file of true parameter values")
    sim.add_argument("--span-start", dest="span_start", type=int, default=DEFAULT_SPAN[0])
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    exp = sub.add_parser("export", help="export figure data as CSV")
    exp.add_argument("--figure", type=int, choices=[1, 2, 3], required=True)
    exp.add_argument("--data", help="landings CSV (figure 1)")
    exp.add_argument("--fit", help="fit output directory (figures 2-3)")
    exp.add_argument("--span-start", dest="span_start", type=int, default=DEFAULT_SPAN[0])
    exp.add_argument("--out", required=True)
    exp.set_defaults(func=cmd_export)

    sbc = sub.add_parser("sbc", help="simulation-based calibration of the sampler")
    sbc.add_argument("--replicates", type=int, default=200)
    sbc.add_argument("--countries", type=int, default=4)
    sbc.add_argument("--years", type=int, default=10)
    sbc.add_argument("--iters", type=int, default=2500)
    sbc.add_argument("--burnin", type=int, default=1000)
    sbc.add_argument("--chains", type=int, default=2)
    sbc.add_argument("--seed", type=int, default=0)
    sbc.add_argument("--skip-variance-update", action="store_true")
    sbc.add_argument("--out", required=True)
    sbc.set_defaults(func=cmd_sbc)

    summ = sub.add_parser("summarize", help="re-render summaries from a fit directory")
    summ.add_argument("--fit", required=True)
    summ.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DegenerateDataError, DegenerateCovarianceError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LandmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
