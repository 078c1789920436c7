"""Command-line driver: simulate, run, plot-data and bench.

Exit codes: 0 success, 1 configuration or I/O error, 2 training diverged.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import solve_multi, solve_single
from .config import ExperimentConfig, default_config_path, load_config
from .dual import train_dual
from .errors import ConfigError, Diverged, MissingArtifact, ParseError, SysRiskError
from .evaluation import (abs_diff, build_report, fair_estimate, monotone_violations, ord,
                         report_from_json, report_to_json)
from .network import forward
from .primal import train_primal
from .scenario import (RNG_NAME, GroupPartition, RiskFactorModel, group_sums, load_scenarios,
                       sample, save_scenarios)
from .utility import UtilityParams, aggregate

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2
# relative slack allowed when comparing the nonneg run to its unconstrained twin
MONOTONE_TOL = 0.02


class _Log:
    def __init__(self, quiet: bool):
        self.quiet = quiet
        self.t0 = time.perf_counter()

    def __call__(self, msg: str):
        if not self.quiet:
            print(f"[{time.perf_counter() - self.t0:7.1f}s] {msg}", file=sys.stderr, flush=True)


def _thread_limit():
    """Honour SYSRISK_THREADS by capping the BLAS pools for the duration of a command."""
    value = os.environ.get("SYSRISK_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"SYSRISK_THREADS must be a positive integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


# -- pipeline ---------------------------------------------------------------

def load_batches(cfg: ExperimentConfig):
    if cfg.model is not None:
        return sample(cfg.model, cfg.m_train, cfg.seed_train), sample(cfg.model, cfg.m_test, cfg.seed_test)
    train, test = load_scenarios(cfg.train_file), load_scenarios(cfg.test_file)
    for b, name in ((train, cfg.train_file), (test, cfg.test_file)):
        if b.n != cfg.n:
            raise ConfigError(f"{name}: {b.n} columns but {cfg.n} alphas configured")
    return train, test


def _analytic(cfg, test):
    if cfg.partition.h == 1:
        return solve_single(test, cfg.utilities, cfg.level)
    return solve_multi(test, cfg.utilities, cfg.partition, cfg.level)


def _primal_section(res, test, cfg, timing):
    y = forward(res.net, test)
    u = aggregate(test.data + y, cfg.utilities)
    sums = group_sums(y, cfg.partition)
    out = {
        "rho_hat": res.rho_hat,
        "objective": res.objective,
        "components": res.components,
        "group_cash": sums.mean(axis=0),
        "group_sum_relstd": sums.std(axis=0) / np.abs(sums.mean(axis=0)),
        "variance_residual": res.variance_residual,
        "acceptance_residual": res.acceptance_residual,
        "acceptance_mc_se": float(u.std() / np.sqrt(u.size)),
        "acceptance_slack": float(u.mean() - cfg.level.b),
        "min_allocation": float(y.min()),
        "loss_trace": res.loss_trace,
    }
    if timing:
        out["runtime_seconds"] = res.runtime_seconds
    return out, y


def _dual_section(res, test, cfg, timing):
    out = {
        "rho_hat": res.rho_hat,
        "alpha_hat": res.alpha_hat,
        "penalty_gap": res.penalty_gap,
        "zx_constraint": res.zx_constraint,
        "density_min": res.densities.min(axis=0),
        "density_mean": res.densities.mean(axis=0),
        "objective_trace": res.objective_trace,
    }
    if res.zx_constraint:
        z = forward(res.psi_net, test, reference=test.data)
        out["min_psi_minus_x"] = float(np.min(z - test.data))
    if timing:
        out["runtime_seconds"] = res.runtime_seconds
    return out


def run_experiment(cfg: ExperimentConfig, log=None, timing: bool = True):
    """Full pipeline. Returns ``(report, artifacts)``; artifacts hold arrays
    and networks for the optional dumps."""
    log = log or (lambda msg: None)
    t0 = time.perf_counter()
    train, test = load_batches(cfg)
    log(f"scenarios: train {train.m}x{train.n} (seed {cfg.seed_train}), test {test.m}x{test.n} "
        f"(seed {cfg.seed_test})")
    partition = cfg.partition
    metrics: dict = {}
    art: dict = {"test": test, "partition": partition}

    sol = None
    analytic = None
    if not cfg.nonneg:
        sol = _analytic(cfg, test)
        analytic = sol.summary()
        analytic["measure"] = "test"
        if partition.h > 1:
            single = solve_single(test, cfg.utilities, cfg.level)
            analytic["rho_single"] = single.rho
            metrics["analytic_multi_ge_single"] = bool(sol.rho >= single.rho)
        log(f"analytic: rho {sol.rho:.6g}, alpha_B {sol.alpha_penalty:.6g}")
    art["analytic"] = sol

    primal = None
    y = None
    if "primal" in cfg.solvers:
        log("primal: training")
        pres = train_primal(train, cfg.utilities, cfg.level, cfg.primal_config(), eval_batch=test)
        primal, y = _primal_section(pres, test, cfg, timing)
        primal["measure"] = "test"
        art["primal_net"] = pres.net
        log(f"primal: rho_hat {pres.rho_hat:.6g}")
        if sol is not None:
            metrics["primal_rho_rel_err"] = abs_diff(pres.rho_hat, sol.rho) / abs(sol.rho)
            metrics["primal_rho_abs_diff"] = abs_diff(pres.rho_hat, sol.rho)
            metrics["primal_allocation_ord"] = ord(y, sol.allocations)
        metrics["primal_acceptance_within_3se"] = bool(
            primal["acceptance_residual"] <= 3 * primal["acceptance_mc_se"])
        metrics["primal_group_sum_relstd_max"] = float(np.max(primal["group_sum_relstd"]))
        if cfg.nonneg:
            log("primal: paired unconstrained run")
            twin = train_primal(train, cfg.utilities, cfg.level, cfg.primal_config(nonneg=False),
                                eval_batch=test)
            primal["paired_unconstrained_rho_hat"] = twin.rho_hat
            metrics["nonneg_min_allocation"] = primal["min_allocation"]
            metrics["nonneg_rho_ge_unconstrained"] = bool(
                pres.rho_hat >= twin.rho_hat - MONOTONE_TOL * abs(twin.rho_hat))

    dual = None
    if "dual" in cfg.solvers:
        log("dual: training")
        dres = train_dual(train, cfg.utilities, cfg.level, cfg.dual_config(), eval_batch=test)
        dual = _dual_section(dres, test, cfg, timing)
        dual["measure"] = "test"
        art["theta_nets"] = dres.theta_nets
        art["psi_net"] = dres.psi_net
        art["densities"] = dres.densities
        log(f"dual: rho_hat {dres.rho_hat:.6g}, alpha_hat {dres.alpha_hat:.6g}")
        sums = group_sums(test, partition)
        metrics["dual_density_monotone_violations"] = [
            monotone_violations(sums[:, k], dres.densities[:, k]) for k in range(partition.h)]
        if sol is not None:
            metrics["dual_rho_rel_err"] = abs_diff(dres.rho_hat, sol.rho) / abs(sol.rho)
            metrics["dual_rho_abs_diff"] = abs_diff(dres.rho_hat, sol.rho)
            metrics["dual_alpha_rel_err"] = abs_diff(dres.alpha_hat, sol.alpha_penalty) / abs(sol.alpha_penalty)
            metrics["dual_alpha_abs_diff"] = abs_diff(dres.alpha_hat, sol.alpha_penalty)
            metrics["dual_density_ord"] = [ord(dres.densities[:, k], sol.densities[:, k])
                                           for k in range(partition.h)]
        if primal is not None:
            metrics["dual_minus_primal_rel"] = (dres.rho_hat - primal["rho_hat"]) / abs(primal["rho_hat"])

    fair = None
    if primal is not None and dual is not None:
        est = fair_estimate(y, [art["densities"][:, k] for k in range(partition.h)], test, partition)
        fair = {"estimated": est.per_institution, "estimated_total": est.total, "measure": "test"}
        metrics["fair_full_allocation_residual_rel"] = abs(est.total - primal["rho_hat"]) / abs(primal["rho_hat"])
        if sol is not None:
            fair["analytic"] = sol.fair
            fair["analytic_total"] = float(np.sum(sol.fair))
            metrics["fair_ord"] = ord(est.per_institution, sol.fair)
        art["fair"] = est

    seeds = {"train": cfg.seed_train, "test": cfg.seed_test, "init": cfg.seed, "rng": RNG_NAME}
    echo = cfg.echo()
    echo["version"] = __version__
    report = build_report(echo, seeds, analytic, primal, dual, fair, metrics,
                          time.perf_counter() - t0 if timing else 0.0)
    return report, art


def write_artifacts(report, art, out: Path, dump_csv: bool = True):
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_to_json(report))
    if not dump_csv:
        return
    test, partition = art["test"], art["partition"]
    sums = group_sums(test, partition)
    if "densities" in art:
        for k in range(partition.h):
            with open(out / f"density_group{k + 1}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["scenario", "s", "density"])
                for i in range(test.m):
                    w.writerow([i, repr(float(sums[i, k])), repr(float(art["densities"][i, k]))])
    nets = {"primal_net.json": art.get("primal_net"), "psi_net.json": art.get("psi_net")}
    for k, t in enumerate(art.get("theta_nets", [])):
        nets[f"theta_net{k + 1}.json"] = t
    for name, net in nets.items():
        if net is not None:
            (out / name).write_text(net.to_json() + "\n")


# -- plot data ----------------------------------------------------------------

def plot_data(report_path: Path, density_dir: Path, out: Path) -> list:
    """One CSV per group: scenario, S_m, estimated density, analytic density,
    sorted ascending by S_m. The analytic column is omitted when the report
    has no analytic section."""
    if not report_path.is_file():
        raise MissingArtifact(f"report not found: {report_path}")
    report = report_from_json(report_path.read_text())
    groups = report["config"]["partition"]["groups"]
    alphas = np.asarray(report["config"]["utilities"]["alphas"], dtype=float)
    with_analytic = report["analytic"] is not None
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for k, g in enumerate(groups):
        src = density_dir / f"density_group{k + 1}.csv"
        if not src.is_file():
            raise MissingArtifact(f"density dump not found: {src}")
        with open(src, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        idx = np.array([int(r[0]) for r in rows])
        s = np.array([float(r[1]) for r in rows])
        d = np.array([float(r[2]) for r in rows])
        order = np.argsort(s, kind="stable")
        header = ["scenario", "s", "estimated"]
        cols = [idx[order], s[order], d[order]]
        if with_analytic:
            bm = float(np.sum(1.0 / alphas[g]))
            w = np.exp(-(s - s.min()) / bm)
            header.append("analytic")
            cols.append((w / w.mean())[order])
        path = out / f"plot_group{k + 1}.csv"
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for row in zip(*cols):
                wr.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
        written.append(path)
    return written


# -- bench ------------------------------------------------------------------

def bench_model(n: int, corr: float = 0.3):
    """Scaled-up version of the default model used for timing cells."""
    alphas = np.linspace(0.5, 1.4, n)
    mean = np.linspace(2.8, 0.3, n)
    return RiskFactorModel.equicorrelated(mean, 1.0, corr), UtilityParams(alphas)


def parse_cells(text: str):
    cells = []
    for part in text.split(","):
        try:
            n, h = part.lower().split("x")
            cells.append((int(n), int(h)))
        except ValueError:
            raise ConfigError(f"bad bench cell {part!r}; expected NxH, e.g. 10x3") from None
        if cells[-1][0] < cells[-1][1] or cells[-1][1] < 1:
            raise ConfigError(f"bench cell {part!r} needs N >= H >= 1")
    return cells


def bench(cfg: ExperimentConfig, cells, epochs=None, m=None, log=None):
    import dataclasses

    log = log or (lambda msg: None)
    rows = []
    for n, h in cells:
        model, params = bench_model(n)
        sizes = [n // h + (1 if k < n % h else 0) for k in range(h)]
        partition = GroupPartition.from_sizes(sizes)
        mm = m or cfg.m_train
        train, test = sample(model, mm, cfg.seed_train), sample(model, mm, cfg.seed_test)
        pcfg = dataclasses.replace(cfg.primal_config(nonneg=False), partition=partition)
        dcfg = dataclasses.replace(cfg.dual_config(), partition=partition, zx_constraint=False)
        if epochs is not None:
            pcfg = dataclasses.replace(pcfg, epochs=epochs, hold_epochs=min(pcfg.hold_epochs, epochs))
            dcfg = dataclasses.replace(dcfg, epochs=epochs, hold_epochs=min(dcfg.hold_epochs, epochs))
        row = {"n": n, "h": h, "m": mm, "primal_epochs": pcfg.epochs, "dual_epochs": dcfg.epochs}
        row["analytic_rho"] = solve_multi(test, params, partition, cfg.level).rho
        # a diverged cell still gets its wall-clock time; the table is always written
        for name, train_fn, c in (("primal", train_primal, pcfg), ("dual", train_dual, dcfg)):
            t = time.perf_counter()
            try:
                res = train_fn(train, params, cfg.level, c, eval_batch=test)
                row[f"{name}_rho_hat"] = res.rho_hat
                row[f"{name}_diverged"] = False
            except Diverged as exc:
                log(f"bench N={n} h={h}: {name} diverged ({exc})")
                row[f"{name}_rho_hat"] = None
                row[f"{name}_diverged"] = True
            row[f"{name}_seconds"] = time.perf_counter() - t
        log(f"bench N={n} h={h}: primal {row['primal_seconds']:.1f}s, dual {row['dual_seconds']:.1f}s")
        rows.append(row)
    return {"note": "wall-clock seconds on this machine (CPU); not comparable to GPU timings",
            "provenance": cfg.PROVENANCE,
            "cells": rows}


# -- entry point ------------------------------------------------------------

def _resolve_config(arg):
    if arg is None:
        return default_config_path()
    path = Path(arg)
    bundled = default_config_path(arg)
    if not path.exists() and os.sep not in arg and bundled.exists():
        return bundled
    return path


def _parser():
    p = argparse.ArgumentParser(prog="sysrisk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", default=None,
                        help="experiment YAML, or the name of a bundled config "
                             "(default, multigroup, nonneg); default: default")
        sp.add_argument("--out", type=Path, required=out_required, help="output directory")
        sp.add_argument("--seed-train", type=int, default=None)
        sp.add_argument("--seed-test", type=int, default=None)
        sp.add_argument("--quiet", action="store_true")

    common(sub.add_parser("simulate", help="write train/test scenario CSVs"))
    sp = sub.add_parser("run", help="analytic, primal, dual and evaluation; writes report.json")
    common(sp)
    sp.add_argument("--no-timing", action="store_true",
                    help="omit wall-clock figures so reruns produce identical reports")
    sp = sub.add_parser("plot-data", help="per-group density-vs-S CSVs from a finished run")
    sp.add_argument("--report", type=Path, required=True)
    sp.add_argument("--densities", type=Path, default=None,
                    help="directory holding density_group*.csv (default: the report's directory)")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--quiet", action="store_true")
    sp = sub.add_parser("bench", help="training-time table over (N, h) cells")
    common(sp)
    sp.add_argument("--cells", default="10x1,10x3", help="comma-separated NxH cells")
    sp.add_argument("--epochs", type=int, default=None, help="override epochs for every cell")
    sp.add_argument("--m", type=int, default=None, help="scenarios per batch (default: config m_train)")
    return p


def _load(args):
    cfg = load_config(_resolve_config(args.config))
    return cfg.with_seeds(args.seed_train, args.seed_test)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    log = _Log(args.quiet)
    try:
        with _thread_limit():
            if args.command == "simulate":
                cfg = _load(args)
                if cfg.model is None:
                    raise ConfigError("simulate needs a Gaussian model block, not scenario files")
                args.out.mkdir(parents=True, exist_ok=True)
                if not args.quiet:
                    print(f"note: {cfg.PROVENANCE}")
                for name, m, seed in (("train", cfg.m_train, cfg.seed_train), ("test", cfg.m_test, cfg.seed_test)):
                    batch = sample(cfg.model, m, seed)
                    save_scenarios(batch, args.out / f"{name}.csv")
                    if not args.quiet:
                        s = batch.data.sum(axis=1)
                        print(f"{name}: {m}x{batch.n} seed {seed}  mean(S) {s.mean():.4f}  std(S) {s.std():.4f}")
            elif args.command == "run":
                cfg = _load(args)
                report, art = run_experiment(cfg, log, timing=not args.no_timing)
                write_artifacts(report, art, args.out, cfg.dump_csv)
                if not args.quiet:
                    print(args.out / "report.json")
            elif args.command == "plot-data":
                for path in plot_data(args.report, args.densities or args.report.parent, args.out):
                    if not args.quiet:
                        print(path)
            elif args.command == "bench":
                cfg = _load(args)
                table = bench(cfg, parse_cells(args.cells), args.epochs, args.m, log)
                args.out.mkdir(parents=True, exist_ok=True)
                from .jsonfmt import dumps
                (args.out / "bench.json").write_text(dumps(table, indent=2) + "\n")
                if not args.quiet:
                    print(f"{'N':>5} {'h':>3} {'primal s':>10} {'dual s':>10}   ({table['note']})")
                    for r in table["cells"]:
                        print(f"{r['n']:>5} {r['h']:>3} {r['primal_seconds']:>10.1f} {r['dual_seconds']:>10.1f}")
    except Diverged as exc:
        print(f"sysrisk: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ParseError, MissingArtifact, OSError) as exc:
        print(f"sysrisk: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SysRiskError as exc:
        print(f"sysrisk: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
