"""Residual checks for empirical statistical solutions and the alpha -> 0
and stationarity experiments built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import spectral as sp
from .dynamics import SolverConfig, Trajectory, _Stepper, effective_params, integrate_batch, solve
from .errors import ConfigurationError, DivergedError, ExperimentError, TimeRangeError
from .functionals import DEFAULT_PSIS, CylindricalFunctional, PsiFunction
from .measures import (
    EnsembleMeasure,
    TrajectoryMetric,
    _ordered_sum,
    draw_initial,
    ensemble_semidistance,
    restrict,
    shift,
    solve_many,
    time_project,
)
from .spectral import PhysParams, SpectralField

SATURATION_NOTE = (
    "cylindrical test functions use tanh-saturated phi (bounded, bounded gradient) "
    "in place of compactly supported phi"
)


def _window(traj: Trajectory, t_a, t_b):
    i, _ = traj.index_of(t_a if t_a is not None else traj.times[0])
    j, _ = traj.index_of(t_b if t_b is not None else traj.times[-1])
    if j <= i:
        raise TimeRangeError(f"interval [{t_a}, {t_b}] contains fewer than two grid points")
    return i, j + 1


def phase_tendency(traj: Trajectory, coeffs):
    """The phase-space vector field F(u) evaluated on stored states.

    NSE runs use f - nu A u - B(u, u) with the advective B; NS-alpha runs use
    the right-hand side of the w-equation.
    """
    st = _Stepper(traj.params, traj.config)
    if traj.model == "nse":
        out = st.g - traj.params.nu * traj.box.lam * coeffs
        if traj.config.nonlinear:
            out = out - sp.advect_arr(coeffs, coeffs, traj.box)
        return out
    return st.rhs(coeffs)


def liouville_terms(rho: EnsembleMeasure, Phi: CylindricalFunctional, t_a=None, t_b=None):
    """Grid times, ``int Phi d mu_t`` and ``int <F(u), Phi'(u)> d mu_t``."""
    if Phi.box != rho.box:
        raise sp.BoxMismatchError(f"functional box {Phi.box} vs ensemble box {rho.box}")
    i, j = _window(rho.members[0], t_a, t_b)
    nt = j - i
    lhs = np.zeros(nt)
    rhs = np.zeros(nt)
    for w, m in zip(rho.weights, rho.members):
        c = m.coeffs[i:j]
        lhs += w * Phi(c)
        rhs += w * Phi.directional(c, phase_tendency(m, c))
    return rho.times[i:j], lhs, rhs


def liouville_residual(rho, Phi, t_a=None, t_b=None) -> float:
    """max over grid intervals of |finite difference of int Phi - trapezoid of int <F, Phi'>|."""
    t, lhs, rhs = liouville_terms(rho, Phi, t_a, t_b)
    return float(np.max(np.abs(np.diff(lhs) / np.diff(t) - 0.5 * (rhs[1:] + rhs[:-1]))))


@dataclass(frozen=True)
class StrengthenedResult:
    signed: float
    absolute: float
    scale: float

    def passed(self, rtol=1e-6):
        return self.signed <= rtol * self.scale


def mean_strengthened_energy_residual(rho, psi: PsiFunction, t_a=None, t_b=None) -> StrengthenedResult:
    """1/2 d/dt int psi(|u|^2) + nu int psi'(|u|^2)||u||^2 - int psi'(|u|^2)(f, u).

    The derivative is a forward difference on the grid and the two integrals
    are averaged over each interval with a not-a-knot cubic spline (trapezoid
    below four samples), so the quadrature error stays below the time
    integrator's; ``signed`` is the largest
    value (must be <= 0 up to tolerance) and ``absolute`` the largest
    magnitude (the Galerkin balance is an equality).
    """
    i, j = _window(rho.members[0], t_a, t_b)
    emax = max(float(m.energy[i:j].max()) for m in rho.members)
    psi.validate(emax * 1.01)
    nt = j - i
    mpsi, diss, work, mag = (np.zeros(nt) for _ in range(4))
    for w, m in zip(rho.weights, rho.members):
        E = m.energy[i:j]
        d = psi.deriv(E)
        mpsi += w * psi(E)
        diss += w * m.params.nu * d * m.enstrophy[i:j]
        work += w * d * m.forcing_work[i:j]
        mag += w * d * (m.params.nu * m.enstrophy[i:j] + np.abs(m.forcing_work[i:j]))
    t = rho.times[i:j]
    src = diss - work
    if nt >= 4:
        q = np.diff(CubicSpline(t, src).antiderivative()(t)) / np.diff(t)
    else:
        q = 0.5 * (src[1:] + src[:-1])
    r = 0.5 * np.diff(mpsi) / np.diff(t) + q
    return StrengthenedResult(float(r.max()), float(np.abs(r).max()), float(max(mag.max(), 1e-300)))


# ---------------------------------------------------------------------------


@dataclass
class VFReport:
    carried: bool
    member_defects: list
    energy_sup: float
    energy_finite: bool
    continuity: dict
    continuity_ok: bool
    mean_energy_slack: float
    tolerance: float

    @property
    def passed(self):
        return self.carried and self.energy_finite and self.continuity_ok

    def failing_members(self):
        return [i for i, d in enumerate(self.member_defects) if not d <= self.tolerance]

    def to_dict(self):
        return {
            "passed": self.passed,
            "item_i_carried_by_solutions": self.carried,
            "failing_members": self.failing_members(),
            "member_defects": self.member_defects,
            "item_ii_energy_sup": self.energy_sup,
            "item_ii_energy_finite": self.energy_finite,
            "item_iii_right_continuity": self.continuity,
            "item_iii_ok": self.continuity_ok,
            "mean_energy_bound_slack": self.mean_energy_slack,
            "tolerance": self.tolerance,
        }


def member_defect(traj: Trajectory) -> float:
    """Relative mismatch between each saved state and one re-integrated save
    interval from its predecessor; zero (to round-off) for solver output."""
    if len(traj) < 2:
        return 0.0
    cfg = traj.config
    sub = replace(cfg, t_end=cfg.save_dt, save_stride=cfg.save_stride)
    try:
        _, c = integrate_batch(traj.coeffs[:-1], traj.params, sub)
    except DivergedError:
        return math.inf
    pred = c[:, -1]
    err = np.sqrt(sp.hnorm2_arr(pred - traj.coeffs[1:], traj.box))
    ref = np.sqrt(np.maximum(sp.hnorm2_arr(traj.coeffs[1:], traj.box), sp.hnorm2_arr(pred, traj.box)))
    rel = np.where(ref > 0, err / np.where(ref > 0, ref, 1.0), err)
    return float(rel.max())


def vf_diagnostics(rho: EnsembleMeasure, psis: Sequence[PsiFunction] = DEFAULT_PSIS, tol=1e-10, probe=4) -> VFReport:
    """Empirical Vishik-Fursikov conditions for an ensemble.

    (i) every member reproduces the solver's own step map to ``tol``;
    (ii) the mean energy is finite on the grid (its sup is reported);
    (iii) t -> int psi(|u(t)|^2) approaches its t0 value at the Lipschitz
    rate implied by the energy balance, for each psi.
    """
    defects = [member_defect(m) for m in rho.members]
    carried = all(d <= tol for d in defects)
    me = rho.mean_energy()
    finite = bool(np.all(np.isfinite(me)))
    from .measures import mean_energy_bound_slack

    slack, _ = mean_energy_bound_slack(rho)
    cont = {}
    ok = True
    t = rho.times
    k = min(probe, len(t) - 1)
    for psi in psis:
        psi.validate(max(float(m.energy.max()) for m in rho.members) * 1.01 + 1e-12)
        vals = np.array([_ordered_sum([w * float(psi(m.energy[i])) for w, m in zip(rho.weights, rho.members)]) for i in range(k + 1)])
        rate = 0.0
        for w, m in zip(rho.weights, rho.members):
            g = float(np.sqrt(sp.hnorm2_arr(_Stepper(m.params, m.config).g, m.box)))
            dE = 2 * m.params.nu * m.box.lambda_max * m.energy[: k + 1] + 2 * g * np.sqrt(m.energy[: k + 1])
            rate += w * psi.sup_deriv * float(dE.max())
        gaps = np.abs(vals[1:] - vals[0])
        allowed = 1.1 * rate * (t[1 : k + 1] - t[0]) + 1e-12 * max(abs(vals[0]), 1.0)
        good = bool(np.all(gaps <= allowed)) if k > 0 else True
        cont[psi.name] = {"gaps": gaps.tolist(), "allowed": allowed.tolist(), "ok": good}
        ok &= good
    return VFReport(carried, defects, float(me.max()), finite, cont, ok, slack, tol)


# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    alphas: list
    functional_ids: list
    times: list
    moments: np.ndarray  # (n_alpha, n_functional, n_time)
    reference: np.ndarray  # (n_functional, n_time), alpha = 0
    semidistance: list
    n_members: int
    seed: int
    metadata: dict = field(default_factory=dict)

    @property
    def successive_differences(self):
        d = np.abs(np.diff(self.moments, axis=0))
        return [float(x) for x in d.reshape(len(d), -1).max(axis=1)] if len(d) else []

    @property
    def reference_gaps(self):
        return np.abs(self.moments - self.reference[None])

    def _distinct(self):
        keep = [0]
        for i in range(1, len(self.alphas)):
            if self.alphas[i] != self.alphas[keep[-1]]:
                keep.append(i)
        return keep

    def monotone_fraction(self):
        """Share of (functional, time) cells whose reference gap strictly
        decreases along the distinct alpha values."""
        idx = self._distinct()
        if len(idx) < 2:
            return 1.0
        g = self.reference_gaps[idx]
        dec = np.all(np.diff(g, axis=0) < 0, axis=0)
        return float(dec.mean())

    def semidistance_nonincreasing(self):
        s = [self.semidistance[i] for i in self._distinct()]
        return all(b <= a for a, b in zip(s, s[1:]))

    def passed(self, min_fraction=0.8):
        return self.monotone_fraction() >= min_fraction and self.semidistance_nonincreasing()

    def to_dict(self):
        return {
            "alphas": self.alphas,
            "functional_ids": self.functional_ids,
            "times": self.times,
            "n_members": self.n_members,
            "seed": self.seed,
            "moments": self.moments.tolist(),
            "reference_moments": self.reference.tolist(),
            "reference_gaps": self.reference_gaps.tolist(),
            "successive_differences": self.successive_differences,
            "semidistance_to_reference": self.semidistance,
            "monotone_fraction": self.monotone_fraction(),
            "semidistance_nonincreasing": self.semidistance_nonincreasing(),
            "passed": self.passed(),
            "metadata": self.metadata,
        }

    def rows(self):
        """CSV rows (alpha, t, functional, moment, gap); alpha = 0 is the reference."""
        out = []
        gaps = self.reference_gaps
        for a, alpha in enumerate(self.alphas):
            for f, fid in enumerate(self.functional_ids):
                for k, t in enumerate(self.times):
                    out.append((alpha, t, fid, float(self.moments[a, f, k]), float(gaps[a, f, k])))
        for f, fid in enumerate(self.functional_ids):
            for k, t in enumerate(self.times):
                out.append((0.0, t, fid, float(self.reference[f, k]), 0.0))
        return out


def _moment_table(rho, functionals, times):
    out = np.empty((len(functionals), len(times)))
    for k, t in enumerate(times):
        proj = time_project(rho, t)
        for f, Phi in enumerate(functionals):
            out[f, k] = proj.integrate(Phi)
    return out


def convergence_experiment(
    alphas,
    sampler,
    n,
    functionals,
    times,
    p: PhysParams,
    cfg: SolverConfig,
    seed,
    metric: TrajectoryMetric | None = None,
    threads=1,
) -> ConvergenceReport:
    """Moments of alpha-ensembles from one matched initial sample, compared
    with the alpha = 0 (Galerkin NSE) reference ensemble."""
    alphas = [float(a) for a in alphas]
    if not alphas or any(a <= 0 for a in alphas):
        raise ConfigurationError("alpha list must be nonempty and positive; the alpha = 0 reference is implicit")
    if any(b > a for a, b in zip(alphas, alphas[1:])):
        raise ConfigurationError("alpha list must be nonincreasing")
    metric = metric or TrajectoryMetric()
    init = draw_initial(sampler, p.box, n, seed)

    def run(alpha, model):
        c = replace(cfg, model=model)
        try:
            return EnsembleMeasure(tuple(solve_many(init, p.with_alpha(alpha), c, threads=threads)))
        except DivergedError as e:
            raise ExperimentError(f"member {e.member} diverged at t={e.time:g} for alpha={alpha}") from e

    ref = run(0.0, "nse")
    reference = _moment_table(ref, functionals, times)
    moments, semid = [], []
    cache = {}
    for a in alphas:
        if a not in cache:
            rho = run(a, "ns-alpha")
            cache[a] = (_moment_table(rho, functionals, times), ensemble_semidistance(rho, ref, metric))
        moments.append(cache[a][0])
        semid.append(cache[a][1])
    return ConvergenceReport(
        alphas,
        [Phi.name for Phi in functionals],
        [float(t) for t in times],
        np.array(moments),
        reference,
        [float(s) for s in semid],
        int(n),
        int(seed),
        {
            "sampler": sampler.to_dict(),
            "metric_truncation": metric.m,
            "note": SATURATION_NOTE,
        },
    )


# ---------------------------------------------------------------------------


def window_ensemble(traj: Trajectory, start: float, W: float, horizon: float) -> EnsembleMeasure:
    """Uniform measure on the translates sigma_{j h} u, 0 <= j h <= W, after
    ``start``; each member is kept on ``[t0, t0 + horizon]``."""
    h = traj.spacing
    nwin = int(round(W / h))
    i0, _ = traj.index_of(traj.times[0] + start)
    nh = int(round(horizon / h))
    if i0 + nwin + nh >= len(traj):
        raise TimeRangeError(f"window {W} plus horizon {horizon} exceeds the trajectory span")
    members = tuple(traj.slice(i0 + j, i0 + j + nh + 1).relabel(traj.times[: nh + 1]) for j in range(nwin + 1))
    return EnsembleMeasure(members)


def invariance_residual(rho: EnsembleMeasure, taus, functionals) -> float:
    """max over (phi, tau) of |int phi o sigma_tau d rho - int phi d rho| at the first grid time."""
    t0 = float(rho.times[0])
    base = time_project(rho, t0)
    worst = 0.0
    for tau in taus:
        moved = time_project(shift(rho, tau), t0)
        for Phi in functionals:
            worst = max(worst, abs(moved.integrate(Phi) - base.integrate(Phi)))
    return worst


@dataclass
class StationaryReport:
    windows: list
    taus: list
    residuals: list
    mean_energy: dict
    spinup: float
    metadata: dict = field(default_factory=dict)

    def nonincreasing(self):
        r = self.residuals
        return all(b <= a for a, b in zip(r, r[1:]))

    @property
    def passed(self):
        return self.nonincreasing()

    def to_dict(self):
        return {
            "windows": self.windows,
            "taus": self.taus,
            "invariance_residual": self.residuals,
            "nonincreasing": self.nonincreasing(),
            "mean_energy_by_projection_time": self.mean_energy,
            "spinup": self.spinup,
            "passed": self.passed,
            "metadata": self.metadata,
        }


def stationary_experiment(
    p: PhysParams,
    cfg: SolverConfig,
    spinup: float,
    windows: Sequence[float],
    taus: Sequence[float],
    functionals,
    w0: SpectralField | None = None,
    trajectory: Trajectory | None = None,
) -> StationaryReport:
    """Time-average surrogate of an invariant measure from one long orbit.

    The orbit is run for ``spinup + max(windows) + max(taus)``; for each
    window W the measure is uniform on the translates of the orbit inside
    ``[spinup, spinup + W]`` and its shift-invariance residual is reported.
    """
    if p.forcing_norm == 0:
        raise ConfigurationError("stationary experiment requires nonzero forcing")
    horizon = max(taus) if taus else 0.0
    if trajectory is None:
        total = spinup + max(windows) + horizon + cfg.save_dt
        steps = math.ceil(total / cfg.dt - 1e-9)
        steps = math.ceil(steps / cfg.save_stride) * cfg.save_stride
        run_cfg = replace(cfg, t_end=steps * cfg.dt)
        if w0 is None:
            w0 = sp.random_field(p.box, np.random.default_rng(0), 12, 0.1 * max(p.R0, 1.0))
        trajectory = solve(w0, p, run_cfg)
    residuals, energies = [], {}
    for W in windows:
        rho = window_ensemble(trajectory, spinup, W, horizon)
        residuals.append(invariance_residual(rho, taus, functionals))
        energies[str(W)] = [time_project(rho, rho.times[0] + tau).mean_energy() for tau in [0.0, *taus]]
    return StationaryReport(
        [float(W) for W in windows],
        [float(t) for t in taus],
        [float(r) for r in residuals],
        energies,
        float(spinup),
        {"note": "time averages of one orbit stand in for an exactly invariant measure"},
    )
