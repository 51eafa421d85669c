"""Command-line driver: ``nsalpha {simulate,ensemble,converge,stationary,verify}``.

Flags override environment variables (``NSALPHA_CONFIG``, ``NSALPHA_OUT``,
``NSALPHA_SEED``, ``NSALPHA_THREADS``, ``NSALPHA_TOLERANCE_SCALE``), which
override the config file.

Exit codes: 0 all contracts pass, 1 a contract failed, 2 usage or
configuration error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import fileio as fio
from .config import RunConfig
from .dynamics import (
    FROZEN_M,
    AprioriEnvelope,
    Trajectory,
    apriori_check,
    energy_equality_residual,
    energy_scale,
    solve,
    strengthened_energy_check,
)
from .errors import ConfigurationError, DivergedError, ExperimentError
from .functionals import DEFAULT_PSIS
from .measures import EnsembleMeasure, push_initial, time_project
from .spectral import norm_H
from .verifier import (
    SATURATION_NOTE,
    convergence_experiment,
    mean_strengthened_energy_residual,
    stationary_experiment,
    vf_diagnostics,
)

log = logging.getLogger("nsalpha")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
ENV_PREFIX = "NSALPHA_"

# base tolerances, multiplied by --tolerance-scale
TOL_APRIORI = 1e-8
TOL_STRENGTHENED = 1e-8
TOL_ENERGY = 1e-4  # cumulative energy-balance residual relative to its scale
TOL_DEFECT = 1e-10
TOL_MEAN_STRENGTHENED = 1e-6


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


class Outputs:
    """Writes every artifact atomically, stamped with config hash and version."""

    def __init__(self, cfg: RunConfig, command: str):
        self.dir = cfg.output
        self.stamp = {"config_hash": cfg.hash(), "code_version": __version__, "command": command}
        self.written = []

    def path(self, name):
        return self.dir / name

    def json(self, name, doc):
        fio.atomic_write(self.path(name), fio.dumps_json(_clean({"provenance": self.stamp, **doc})))
        self.written.append(name)

    def csv(self, name, text):
        head = f"# nsalpha {__version__} config_hash={self.stamp['config_hash']}\n"
        fio.atomic_write(self.path(name), head + text)
        self.written.append(name)

    def trajectory(self, name, traj):
        fio.write_trajectory(self.path(name), traj, extra={"provenance": self.stamp})
        self.written.append(name)


def _trajectory_checks(traj: Trajectory, tol_scale: float, R=None):
    p = traj.params
    R = max(p.R0, math.sqrt(traj.energy[0])) if R is None else R
    rep = apriori_check(traj, AprioriEnvelope(R))
    res = energy_equality_residual(traj)
    cum = np.cumsum(res)
    esc = energy_scale(traj)
    cum_max = float(np.abs(cum).max()) if len(cum) else 0.0
    stren = {}
    for psi in DEFAULT_PSIS:
        v, s = strengthened_energy_check(traj, psi)
        stren[psi.name] = {"violation": v, "scale": s, "passed": v <= TOL_STRENGTHENED * tol_scale * s}
    checks = {
        "apriori": {**rep.to_dict(), "passed": rep.passed(TOL_APRIORI * tol_scale), "M": FROZEN_M},
        "energy_residual": {
            "max_abs_interval": float(np.abs(res).max()) if len(res) else 0.0,
            "max_abs_cumulative": cum_max,
            "scale": esc,
            "passed": cum_max <= TOL_ENERGY * tol_scale * esc,
        },
        "strengthened_energy": stren,
    }
    ok = checks["apriori"]["passed"] and checks["energy_residual"]["passed"] and all(s["passed"] for s in stren.values())
    return ok, checks


def cmd_simulate(cfg: RunConfig) -> int:
    out = Outputs(cfg, "simulate")
    traj = solve(cfg.initial, cfg.params, cfg.solver)
    ok, checks = _trajectory_checks(traj, cfg.tolerance_scale)
    out.trajectory("trajectory.nst", traj)
    out.csv("energy.csv", fio.trajectory_csv(traj))
    out.json("report.json", {"passed": ok, "n_snapshots": len(traj), "checks": checks})
    return EXIT_OK if ok else EXIT_FAIL


def _frozen_member(traj: Trajectory) -> Trajectory:
    """A non-solution: the initial state held constant in time."""
    c = np.broadcast_to(traj.coeffs[:1], traj.coeffs.shape).copy()
    return Trajectory(traj.times, c, traj.params, traj.config)


def _moment_rows(rho: EnsembleMeasure, functionals):
    rows = []
    for t in rho.times:
        proj = time_project(rho, float(t))
        for Phi in functionals:
            rows.append((float(t), Phi.name, proj.integrate(Phi)))
    return rows


def cmd_ensemble(cfg: RunConfig) -> int:
    out = Outputs(cfg, "ensemble")
    n = int(cfg.raw["ensemble_size"])
    rho = push_initial(cfg.sampler, n, cfg.params, cfg.solver, cfg.seed, threads=cfg.threads)
    planted = bool(cfg.raw["planted_defect"])
    if planted:
        members = list(rho.members)
        members[-1] = _frozen_member(members[-1])
        rho = EnsembleMeasure(tuple(members))
    names = [f"members/member_{i:05d}.nst" for i in range(len(rho))]
    for name, m in zip(names, rho.members):
        out.trajectory(name, m)
    fio.write_manifest(
        out.path("manifest.json"),
        names,
        rho.weights,
        cfg.sampler.to_dict(),
        cfg.seed,
        extra={"provenance": out.stamp, "planted_defect": planted},
    )
    ts = cfg.tolerance_scale
    vf = vf_diagnostics(rho, tol=TOL_DEFECT * ts)
    stren = {}
    if len(rho.times) > 1:
        for psi in DEFAULT_PSIS:
            r = mean_strengthened_energy_residual(rho, psi)
            stren[psi.name] = {**r.__dict__, "passed": r.passed(TOL_MEAN_STRENGTHENED * ts)}
    ok = vf.passed and all(s["passed"] for s in stren.values())
    out.json(
        "vf_report.json",
        {"passed": ok, "vf": vf.to_dict(), "mean_strengthened_energy": stren, "note": SATURATION_NOTE},
    )
    out.csv("moments.csv", fio.moment_csv(_moment_rows(rho, cfg.functionals)))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_converge(cfg: RunConfig) -> int:
    alphas = cfg.alphas  # validates the trailing alpha = 0 reference
    out = Outputs(cfg, "converge")
    rep = convergence_experiment(
        alphas,
        cfg.sampler,
        int(cfg.raw["ensemble_size"]),
        cfg.functionals,
        cfg.times,
        cfg.params,
        cfg.solver,
        cfg.seed,
        cfg.metric,
        threads=cfg.threads,
    )
    out.json("convergence.json", rep.to_dict())
    out.csv("convergence.csv", fio.csv_text(["alpha", "t", "functional", "moment", "gap"], rep.rows()))
    return EXIT_OK if rep.passed() else EXIT_FAIL


def cmd_stationary(cfg: RunConfig) -> int:
    st = cfg.raw["stationary"]
    windows = [float(w) for w in st["windows"]]
    taus = [float(t) for t in st["taus"]]
    if not windows or any(w <= 0 for w in windows) or any(t < 0 for t in taus):
        raise ConfigurationError("stationary windows must be positive and shifts nonnegative")
    p = cfg.params
    if p.forcing_norm == 0:
        raise ConfigurationError("stationary experiment requires nonzero forcing")
    out = Outputs(cfg, "stationary")
    w0 = cfg.initial
    rep = stationary_experiment(
        p,
        cfg.solver,
        float(st["spinup"]),
        windows,
        taus,
        cfg.functionals,
        w0=None if norm_H(w0) == 0 else w0,
    )
    out.json("stationary.json", rep.to_dict())
    out.csv("stationary.csv", fio.csv_text(["window", "invariance_residual"], zip(rep.windows, rep.residuals)))
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_verify(cfg: RunConfig, inputs=()) -> int:
    """Re-check stored trajectories or manifests; with no inputs, run the
    built-in envelope suite."""
    out = Outputs(cfg, "verify")
    ts = cfg.tolerance_scale
    results = {}
    if inputs:
        for path in inputs:
            path = Path(path)
            if path.suffix == ".json":
                rho, _ = fio.read_manifest(path)
                vf = vf_diagnostics(rho, tol=TOL_DEFECT * ts)
                results[str(path)] = {"passed": vf.passed, "vf": vf.to_dict()}
            else:
                ok, checks = _trajectory_checks(fio.read_trajectory(path), ts)
                results[str(path)] = {"passed": ok, "checks": checks}
    else:
        from .suite import envelope_suite

        for run in envelope_suite():
            ok, checks = _trajectory_checks(run.solve(), ts, R=run.envelope().R)
            results[run.name] = {"passed": ok, "checks": checks}
    ok = all(r["passed"] for r in results.values())
    out.json("verify.json", {"passed": ok, "results": results})
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "converge": cmd_converge,
    "stationary": cmd_stationary,
    "verify": cmd_verify,
}


def _env(name):
    return os.environ.get(ENV_PREFIX + name)


def build_parser():
    ap = argparse.ArgumentParser(prog="nsalpha", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"nsalpha {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=_env("CONFIG"), help="JSON run configuration")
        p.add_argument("--out", default=_env("OUT"), help="output directory")
        p.add_argument("--seed", default=_env("SEED"), help="unsigned 64-bit master seed")
        p.add_argument("--threads", default=_env("THREADS"), help="worker threads")
        p.add_argument("--tolerance-scale", default=_env("TOLERANCE_SCALE"), help="multiply all contract tolerances")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            p.add_argument("inputs", nargs="*", help="trajectory (.nst) files or ensemble manifests")
    return ap


def _int(text, what):
    try:
        return int(text, 0) if isinstance(text, str) else int(text)
    except ValueError:
        raise ConfigurationError(f"{what} must be an integer, got {text!r}") from None


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict({})
    d = cfg.to_dict()
    if args.out is not None:
        d["output"] = args.out
    if args.seed is not None:
        d["seed"] = _int(args.seed, "seed")
    if args.threads is not None:
        d["threads"] = _int(args.threads, "threads")
    if args.tolerance_scale is not None:
        try:
            d["tolerance_scale"] = float(args.tolerance_scale)
        except ValueError:
            raise ConfigurationError(f"tolerance scale must be a number, got {args.tolerance_scale!r}") from None
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        log.info("config hash %s", cfg.hash())
        if args.command == "verify":
            code = cmd_verify(cfg, args.inputs)
        else:
            code = COMMANDS[args.command](cfg)
    except ConfigurationError as e:
        print(f"nsalpha: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedError as e:
        print(f"nsalpha: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except ExperimentError as e:
        print(f"nsalpha: {e}", file=sys.stderr)
        return EXIT_DIVERGED if isinstance(e.__cause__, DivergedError) else EXIT_FAIL
    except (OSError, fio.FormatError) as e:
        print(f"nsalpha: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(f"nsalpha {args.command}: {'pass' if code == EXIT_OK else 'FAIL'}")
    return code


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
