"""Command-line driver: configuration, orchestration, and reporting.

Subcommands
-----------
check        audit the structural hypotheses of the configured system
normal-form  emit the quadratic transform, manifold, and reduced field
simulate     write amplified-system trajectory CSVs, one per eps
converge     distances between amplified and limit radial marginals
reduce       coupled center-manifold and planar error diagnostics
report       human-readable summary of both studies

Every run writes a ``manifest.json`` recording the config hash, seed,
resolved worker count, backend, and package versions; with a fixed
config and seed all data artifacts are byte-identical across reruns and
worker counts.  Exit status is 0 on success (``check`` reports failed
verdicts in its output, not its status), 1 on configuration or flag
validation errors, and 2 on runtime failures, which are printed as
``error: CODE: message`` with an upper-snake code derived from the
exception type.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import platform
import re
import sys

import numpy as np

from ._kernels import active_backend
from .config import ConfigError, load_config
from .spectral import check_hypotheses, freeze_parameter
from . import sde, stats

_SUBCOMMANDS = ("check", "normal-form", "simulate", "converge", "reduce",
                "report")


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"error: CONFIG: {message}\n")


def _add_common(sub):
    sub.add_argument("--config", required=True, help="path to a config file")
    sub.add_argument("--out", default=None, help="output directory override")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--paths", type=int, default=None)
    sub.add_argument("--dt", type=float, default=None)
    sub.add_argument("--T", type=float, default=None)
    sub.add_argument("--epsilon", type=float, nargs="+", default=None)
    sub.add_argument("--checkpoints", type=float, nargs="+", default=None)
    sub.add_argument("--rho0", type=float, default=None)
    sub.add_argument("--delta", type=float, default=None)
    sub.add_argument("--N", dest="nmax", type=float, default=None)
    sub.add_argument("--Delta", dest="big_delta", type=float, default=None)
    sub.add_argument("--beta", type=float, default=None)
    sub.add_argument("--workers", type=int, default=None)
    sub.add_argument("--plot", action="store_true", default=False)


def build_parser():
    parser = _Parser(prog="hopf-critic",
                     description="Critical-fluctuation simulator and "
                                 "verifier for noisy oscillatory systems")
    subs = parser.add_subparsers(dest="command", required=True,
                                 metavar="subcommand")
    for name in _SUBCOMMANDS:
        sub = subs.add_parser(name)
        _add_common(sub)
        if name in ("converge", "report"):
            sub.add_argument("--refine", action="store_true", default=False,
                             help="repeat at half the step on the same "
                                  "Brownian paths")
    return parser


_OVERRIDES = (
    ("seed", "seed"), ("paths", "paths"), ("dt", "dt"), ("T", "T"),
    ("rho0", "rho0"), ("delta", "delta"), ("nmax", "nmax"),
    ("big_delta", "big_delta"), ("beta", "beta"), ("workers", "workers"),
    ("out", "out_dir"),
)


def _apply_overrides(cfg, args):
    updates = {}
    for flag, field in _OVERRIDES:
        value = getattr(args, flag)
        if value is not None:
            updates[field] = value
    if args.epsilon is not None:
        updates["epsilons"] = tuple(args.epsilon)
    if args.checkpoints is not None:
        updates["checkpoints"] = tuple(args.checkpoints)
    if args.plot:
        updates["plot"] = True
    return dataclasses.replace(cfg, **updates)


def _range_errors(cfg):
    errors = []
    if cfg.T <= 0.0:
        errors.append("T must be positive")
    if cfg.dt <= 0.0 or cfg.dt > cfg.T:
        errors.append("dt must lie in (0, T]")
    if cfg.paths < 1:
        errors.append("paths must be at least 1")
    if cfg.seed < 0:
        errors.append("seed must be nonnegative")
    for e in cfg.epsilons:
        if not 0.0 < e < 1.0:
            errors.append(f"epsilon {e} outside (0, 1)")
            break
    for c in cfg.checkpoints:
        if not 0.0 < c <= cfg.T * (1.0 + 1e-12):
            errors.append(f"checkpoint {c} outside (0, T]")
            break
    if not 0.0 < cfg.beta < 0.5:
        errors.append("beta must lie in (0, 0.5)")
    if cfg.big_delta <= 0.0:
        errors.append("Delta must be positive")
    if not 0.0 < cfg.delta < cfg.rho0 < cfg.nmax:
        errors.append("need 0 < delta < rho0 < N")
    if cfg.workers is not None and cfg.workers < 1:
        errors.append("workers must be at least 1")
    return errors


def _code_for(exc):
    return re.sub(r"(?<!^)(?=[A-Z])", "_", type(exc).__name__).upper()


def _prepare(cfg):
    drift = freeze_parameter(cfg.drift) if cfg.includes_mu else cfg.drift
    return stats.prepare_system(drift, cfg.sigma)


def _out_dir(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _write_json(path, record):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(record, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _numba_version():
    try:
        import numba
    except ImportError:
        return None
    return numba.__version__


def _write_manifest(cfg, command, outputs):
    import scipy

    from . import __version__
    record = {
        "subcommand": command,
        "config_sha256": hashlib.sha256(cfg.text.encode()).hexdigest(),
        "seed": cfg.seed,
        "epsilons": list(cfg.epsilons),
        "checkpoints": list(cfg.checkpoints),
        "dt": cfg.dt,
        "T": cfg.T,
        "paths": cfg.paths,
        "workers": sde._resolve_workers(cfg.workers),
        "backend": active_backend(),
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": _numba_version(),
        },
        "outputs": sorted(outputs),
    }
    _write_json(os.path.join(cfg.out_dir, "manifest.json"), record)


def _verdict_word(value):
    return {True: "true", False: "false"}.get(value, "unknown")


def _cmd_check(cfg, args):
    report = check_hypotheses(cfg.drift, cfg.sigma)
    out = _out_dir(cfg)
    _write_json(os.path.join(out, "hypotheses.json"), report.as_record())
    print(f"n: {report.n}")
    print(f"critical_point_residual: {report.critical_point_residual:.3e}")
    lam = "unknown" if report.lam0 is None else f"{report.lam0:.17g}"
    print(f"lam0: {lam}")
    radial = report.radial_cubic_coefficient
    print("radial_cubic_coefficient: "
          + ("unknown" if radial is None else f"{radial:.17g}"))
    for key, value in report.verdicts.items():
        print(f"{key}: {_verdict_word(value)}")
    _write_manifest(cfg, "check", ["hypotheses.json"])
    return 0


def _complex_pair(z):
    return [float(z.real), float(z.imag)]


def _cmd_normal_form(cfg, args):
    system = _prepare(cfg)
    out = _out_dir(cfg)
    transform = system.transform
    record = {
        "lam0": system.split.lam0,
        "stable_block": system.split.P.tolist(),
        "change_of_basis": system.split.C.tolist(),
        "transform": {
            "beta1": _complex_pair(transform.beta1),
            "beta2": _complex_pair(transform.beta2),
            "beta12": _complex_pair(transform.beta12),
            "alpha1": [_complex_pair(z) for z in transform.alpha1],
            "alpha2": [_complex_pair(z) for z in transform.alpha2],
            "shift_terms": transform.p_real.term_lines(),
        },
        "manifold_terms": system.manifold.h2.term_lines(),
        "reduced_terms": system.reduced.term_lines(),
        "radial_cubic_coefficient": system.radial_coefficient,
        "limit": {
            "sigma1_sq": system.limit.sigma1_sq,
            "sigma2_sq": system.limit.sigma2_sq,
            "sigma12": system.limit.sigma12,
            "s": system.limit.s,
        },
    }
    _write_json(os.path.join(out, "normal_form.json"), record)
    print(f"lam0: {system.split.lam0:.17g}")
    print(f"radial_cubic_coefficient: {system.radial_coefficient:.17g}")
    print(f"limit_s: {system.limit.s:.17g}")
    print(f"wrote {os.path.join(out, 'normal_form.json')}")
    _write_manifest(cfg, "normal-form", ["normal_form.json"])
    return 0


def _cmd_simulate(cfg, args):
    system = _prepare(cfg)
    out = _out_dir(cfg)
    split = system.split
    k = split.P.shape[0]
    columns = ["z1", "z2"] + [f"y{j + 1}" for j in range(k)]
    outputs = []
    for eps in cfg.epsilons:
        task = sde.rescaled_task(
            system.f, system.g, system.sigma_q, system.sigma_p,
            split.Q, split.P, eps, (cfg.rho0, 0.0), np.zeros(k),
            cfg.dt, cfg.T)
        ensemble = sde.run_ensemble(task, cfg.paths, cfg.seed, cfg.workers)
        name = f"trajectory_eps{eps:g}.csv"
        stats.write_trajectory_csv(ensemble, os.path.join(out, name),
                                   columns)
        outputs.append(name)
        print(f"wrote {name} ({cfg.paths} paths, {task.n_steps} steps)")
    _write_manifest(cfg, "simulate", outputs)
    return 0


def _maybe_log(values):
    return all(v > 0.0 for v in values)


def _cmd_converge(cfg, args):
    system = _prepare(cfg)
    out = _out_dir(cfg)
    report = stats.convergence_study(
        system, cfg.epsilons, cfg.checkpoints, cfg.paths, cfg.dt,
        delta=cfg.delta, nmax=cfg.nmax, rho0=cfg.rho0,
        master_seed=cfg.seed, workers=cfg.workers,
        refine=getattr(args, "refine", False))
    outputs = []
    if "csv" in cfg.formats:
        stats.write_convergence_csv(report, os.path.join(out,
                                                         "convergence.csv"))
        outputs.append("convergence.csv")
    if "json" in cfg.formats:
        _write_json(os.path.join(out, "convergence.json"),
                    report.as_record())
        outputs.append("convergence.json")
    if cfg.plot:
        series = []
        for j, c in enumerate(report.checkpoints):
            ks = [row.cells[j].ks for row in report.rows]
            series.append((f"t={c:g}", list(report.epsilons), ks))
        logy = all(_maybe_log(ys) for _, _, ys in series)
        stats.svg_line_plot(os.path.join(out, "convergence.svg"), series,
                            title="distance to the limit law",
                            xlabel="eps", ylabel="KS",
                            logx=True, logy=logy)
        outputs.append("convergence.svg")
    for row in report.rows:
        cells = "  ".join(
            f"ks(t={c.checkpoint:g})={c.ks:.4f} w1={c.w1:.4f}"
            for c in row.cells)
        print(f"eps={row.epsilon:g} stopped={row.stopped_fraction:.3f} "
              f"{cells}")
    print(f"verdicts: {report.verdicts}")
    _write_manifest(cfg, "converge", outputs)
    return 0


def _cmd_reduce(cfg, args):
    system = _prepare(cfg)
    out = _out_dir(cfg)
    report = stats.reduction_diagnostics(
        system, cfg.epsilons, cfg.big_delta, cfg.beta, cfg.paths, cfg.dt,
        horizon=cfg.T, z0=(cfg.rho0, 0.0), master_seed=cfg.seed,
        workers=cfg.workers)
    outputs = []
    if "csv" in cfg.formats:
        stats.write_reduction_csv(report, os.path.join(out,
                                                       "reduction.csv"))
        outputs.append("reduction.csv")
    if "json" in cfg.formats:
        _write_json(os.path.join(out, "reduction.json"), report.as_record())
        outputs.append("reduction.json")
    if cfg.plot:
        eps = list(report.epsilons)
        u = [row.u_median for row in report.rows]
        phi = [row.phi_median for row in report.rows]
        series = [("sup |U|", eps, u), ("sup |Phi|", eps, phi)]
        usable = [(l, x, y) for l, x, y in series if _maybe_log(y)]
        if usable:
            stats.svg_line_plot(os.path.join(out, "reduction.svg"), usable,
                                title="reduction errors",
                                xlabel="eps", ylabel="median sup norm",
                                logx=True, logy=True)
            outputs.append("reduction.svg")
    for row in report.rows:
        print(f"eps={row.epsilon:g} u_median={row.u_median:.6g} "
              f"phi_median={row.phi_median:.6g} "
              f"excluded={row.excluded_fraction:.3f}")
    print(f"fits: q={report.q_fit:.4f} gamma={report.gamma_fit:.4f}")
    _write_manifest(cfg, "reduce", outputs)
    return 0


def _cmd_report(cfg, args):
    system = _prepare(cfg)
    out = _out_dir(cfg)
    conv = stats.convergence_study(
        system, cfg.epsilons, cfg.checkpoints, cfg.paths, cfg.dt,
        delta=cfg.delta, nmax=cfg.nmax, rho0=cfg.rho0,
        master_seed=cfg.seed, workers=cfg.workers,
        refine=getattr(args, "refine", False))
    lines = [
        "critical fluctuation study",
        "==========================",
        "",
        f"state dimension        {cfg.n}",
        f"noise channels         {cfg.m}",
        f"rotation rate lam0     {system.split.lam0:.6g}",
        f"radial cubic coeff.    {system.radial_coefficient:.6g}",
        f"limit diffusion s      {system.limit.s:.6g}",
        f"paths per ensemble     {cfg.paths}",
        f"step size              {cfg.dt:g}",
        "",
        "convergence to the limit law",
        "----------------------------",
    ]
    for row in conv.rows:
        for cell in row.cells:
            lines.append(
                f"eps={row.epsilon:<8g} t={cell.checkpoint:<6g} "
                f"ks={cell.ks:.5f} w1={cell.w1:.5f} "
                f"stopped={row.stopped_fraction:.3f}")
    lines.append("")
    for name, value in conv.verdicts.items():
        lines.append(f"verdict {name}: {value}")
    outputs = ["report.txt"]
    try:
        red = stats.reduction_diagnostics(
            system, cfg.epsilons, cfg.big_delta, cfg.beta, cfg.paths,
            cfg.dt, horizon=cfg.T, z0=(cfg.rho0, 0.0),
            master_seed=cfg.seed, workers=cfg.workers)
    except stats.NonTrivialQuadratic:
        red = None
        lines += ["", "reduction diagnostics skipped: drift has mixed "
                      "quadratic terms (supply normal-form coordinates)"]
    if red is not None:
        lines += ["", "reduction errors", "----------------"]
        for row in red.rows:
            lines.append(
                f"eps={row.epsilon:<8g} u_median={row.u_median:.6g} "
                f"phi_median={row.phi_median:.6g} "
                f"excluded={row.excluded_fraction:.3f}")
        lines.append(f"fitted slopes: q={red.q_fit:.4f} "
                     f"gamma={red.gamma_fit:.4f}")
    if cfg.plot:
        series = []
        for j, c in enumerate(conv.checkpoints):
            ks = [row.cells[j].ks for row in conv.rows]
            series.append((f"t={c:g}", list(conv.epsilons), ks))
        logy = all(_maybe_log(ys) for _, _, ys in series)
        stats.svg_line_plot(os.path.join(out, "convergence.svg"), series,
                            title="distance to the limit law",
                            xlabel="eps", ylabel="KS",
                            logx=True, logy=logy)
        outputs.append("convergence.svg")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, "report.txt"), "w",
              encoding="utf-8") as handle:
        handle.write(text)
    sys.stdout.write(text)
    _write_manifest(cfg, "report", outputs)
    return 0


_DISPATCH = {
    "check": _cmd_check,
    "normal-form": _cmd_normal_form,
    "simulate": _cmd_simulate,
    "converge": _cmd_converge,
    "reduce": _cmd_reduce,
    "report": _cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"error: CONFIG: {line}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: CONFIG: {exc}", file=sys.stderr)
        return 1
    cfg = _apply_overrides(cfg, args)
    errors = _range_errors(cfg)
    if errors:
        for line in errors:
            print(f"error: CONFIG: {line}", file=sys.stderr)
        return 1
    try:
        return _DISPATCH[args.command](cfg, args)
    except Exception as exc:
        print(f"error: {_code_for(exc)}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
