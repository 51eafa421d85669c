"""Empirical measures on trajectory space.

An :class:`EnsembleMeasure` is a weighted finite set of trajectories on a
common time grid; integrals against it are finite weighted sums taken in
ascending member order, so results do not depend on how the members were
computed. Push-forward through time evaluation, restriction and shift is
exact for such measures.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import spectral as sp
from .dynamics import (
    AprioriEnvelope,
    SolverConfig,
    Trajectory,
    _cumtrapz,
    effective_params,
    integrate_batch,
)
from .errors import BoxMismatchError, ConfigurationError, TimeRangeError
from .functionals import (  # noqa: F401  re-exported
    DEFAULT_PSIS,
    PSI_IDENTITY,
    PSI_SATURATING,
    PSI_TANH,
    CylindricalFunctional,
    PsiFunction,
    default_dictionary,
    psi_constant,
)
from .spectral import BoxSpec, PhysParams, SpectralField


def _check_grid(a: Trajectory, b: Trajectory):
    if a.box != b.box:
        raise BoxMismatchError(f"{a.box} vs {b.box}")
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise TimeRangeError("trajectories do not share a time grid")


@dataclass(frozen=True, eq=False)
class ProjectedMeasure:
    """Weighted list of states: the time projection of an ensemble."""

    box: BoxSpec
    coeffs: np.ndarray = field(repr=False)  # (n, 3, N, N, N/2+1)
    weights: np.ndarray
    time: float
    rounding: float = 0.0

    def states(self):
        return [SpectralField(self.box, c) for c in self.coeffs]

    def integrate(self, func: Callable) -> float:
        """sum_i weight_i * func(state_i); ``func`` maps a coefficient stack
        (or a CylindricalFunctional) to per-state values."""
        vals = np.asarray(func(self.coeffs), dtype=float)
        return _ordered_sum(self.weights * vals)

    def mean_energy(self):
        return _ordered_sum(self.weights * sp.hnorm2_arr(self.coeffs, self.box))


def _ordered_sum(x):
    s = 0.0
    for v in np.asarray(x, dtype=float).ravel():
        s += float(v)
    return s


@dataclass(frozen=True, eq=False)
class EnsembleMeasure:
    """Empirical trajectory measure ``sum_i weight_i delta_{traj_i}``."""

    members: tuple
    weights: np.ndarray = None

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("an ensemble needs at least one member")
        for m in members[1:]:
            _check_grid(members[0], m)
        w = np.full(len(members), 1.0 / len(members)) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (len(members),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative, one per member, summing to 1")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.members)

    @property
    def times(self):
        return self.members[0].times

    @property
    def box(self):
        return self.members[0].box

    def integrate(self, F: Callable[[Trajectory], float]) -> float:
        """Integral of a trajectory functional."""
        return _ordered_sum([w * F(m) for w, m in zip(self.weights, self.members)])

    def mean_energy(self):
        """t -> int |u(t)|^2 d rho on the common grid."""
        out = np.zeros(len(self.times))
        for w, m in zip(self.weights, self.members):
            out += w * m.energy
        return out


def time_project(rho: EnsembleMeasure, t: float) -> ProjectedMeasure:
    """Pi_t rho, with nearest-grid-point rounding reported."""
    i, dist = rho.members[0].index_of(t)
    c = np.stack([m.coeffs[i] for m in rho.members])
    return ProjectedMeasure(rho.box, c, rho.weights, float(rho.times[i]), dist)


def _shift_traj(x: Trajectory, tau: float) -> Trajectory:
    if tau < 0:
        raise TimeRangeError("shift must be nonnegative")
    if len(x) == 1:
        if tau > 1e-12:
            raise TimeRangeError("cannot shift a single-point trajectory")
        return x
    j = int(round(tau / x.spacing))
    if j >= len(x):
        raise TimeRangeError(f"shift {tau} leaves no samples in span {x.span}")
    return x.slice(j).relabel(x.times[: len(x) - j])


def shift(x, tau: float):
    """sigma_tau: (sigma_tau u)(t) = u(t + tau); ``tau`` rounds to the grid."""
    if isinstance(x, EnsembleMeasure):
        return EnsembleMeasure(tuple(_shift_traj(m, tau) for m in x.members), x.weights)
    return _shift_traj(x, tau)


def _restrict_traj(x: Trajectory, a: float, b: float) -> Trajectory:
    i, _ = x.index_of(a)
    j, _ = x.index_of(b)
    if j < i:
        raise TimeRangeError(f"empty interval [{a}, {b}]")
    return x.slice(i, j + 1)


def restrict(x, J):
    """Pi_J: restriction to the grid points of ``J = (a, b)``."""
    a, b = J
    if isinstance(x, EnsembleMeasure):
        return EnsembleMeasure(tuple(_restrict_traj(m, a, b) for m in x.members), x.weights)
    return _restrict_traj(x, a, b)


@dataclass(frozen=True)
class MembershipReport:
    member: bool
    worst_slack: float
    slack_norm: float
    slack_dissipation: float
    slack_tendency: float


def envelope_membership(traj: Trajectory, env: AprioriEnvelope, J=None) -> MembershipReport:
    """Check the three Y_J(R) bounds on the grid points of ``J``.

    ``dt u`` is the model right-hand side. The minimum slack is taken over
    the three bounds and all pairs ``s < t`` in J.
    """
    x = traj if J is None else restrict(traj, J)
    p = x.params
    R, M, c = env.R, env.M, env.c
    nu, l1 = p.nu, p.lambda1
    s_norm = float(R - np.sqrt(x.energy).max())
    if len(x) < 2:
        return MembershipReport(s_norm >= 0, s_norm, s_norm, math.inf, math.inf)
    i, j = np.triu_indices(len(x), k=1)
    tau = x.times[j] - x.times[i]
    CV = _cumtrapz(x.enstrophy, x.times)
    CD = _cumtrapz(x.tendency_dadual2, x.times)
    lv = np.sqrt(np.maximum(CV[j] - CV[i], 0.0))
    ld = np.sqrt(np.maximum(CD[j] - CD[i], 0.0))
    bv = R / math.sqrt(nu) + l1**0.25 * nu * M * np.sqrt(tau)
    bd = c * R**2 / (l1**0.25 * math.sqrt(nu)) + nu**1.5 / l1**0.75 * M + nu**2.5 * l1**0.25 * M * tau
    s_v = float(np.min(bv - lv))
    s_d = float(np.min(bd - ld))
    worst = min(s_norm, s_v, s_d)
    return MembershipReport(worst >= 0, worst, s_norm, s_v, s_d)


@dataclass(frozen=True)
class TrajectoryMetric:
    """d(u, v) = sum_{i<=m} 2^-i min(1, sup_{t in J} |(u(t) - v(t), w_i)|)."""

    m: int = 32
    J: tuple = None

    def __post_init__(self):
        if self.m < 1:
            raise ConfigurationError("metric truncation m must be >= 1")

    def coordinates(self, traj: Trajectory):
        x = traj if self.J is None else restrict(traj, self.J)
        m = min(self.m, x.box.mode_count())
        basis = x.box.eigenbasis
        ix, iy, iz = basis.index[:m].T
        sub = x.coeffs[..., :, ix, iy, iz]
        a = np.einsum("tcn,nc->tn", sub, basis.pol[:m])
        s = math.sqrt(2 * x.box.volume)
        return np.where(basis.is_sin[:m], -s * a.imag, s * a.real)

    def from_coordinates(self, cu, cv):
        sup = np.max(np.abs(cu - cv), axis=0)
        w = 0.5 ** np.arange(1, len(sup) + 1)
        return float(np.sum(w * np.minimum(1.0, sup)))


def traj_distance(u: Trajectory, v: Trajectory, metric: TrajectoryMetric) -> float:
    _check_grid(u, v)
    return metric.from_coordinates(metric.coordinates(u), metric.coordinates(v))


def ensemble_semidistance(A: EnsembleMeasure, B: EnsembleMeasure, metric: TrajectoryMetric) -> float:
    """max over members of A of the min distance to members of B."""
    for m in B.members:
        _check_grid(A.members[0], m)
    ca = [metric.coordinates(m) for m in A.members]
    cb = [metric.coordinates(m) for m in B.members]
    return max(min(metric.from_coordinates(a, b) for b in cb) for a in ca)


# ---------------------------------------------------------------------------
# initial measures


@dataclass(frozen=True, eq=False)
class DiracSampler:
    initial: SpectralField

    kind = "dirac"

    def draw(self, box, rng):
        if self.initial.box != box:
            raise BoxMismatchError(f"sampler box {self.initial.box} vs {box}")
        return self.initial

    def mean_energy(self, box):
        return sp.norm_H(self.initial) ** 2

    def to_dict(self):
        return {"kind": self.kind, "coordinates": self.initial.coordinates().tolist()}


@dataclass(frozen=True)
class GaussianSampler:
    """Independent N(0, variance) coordinates on the lowest ``pairs`` mode pairs."""

    pairs: int = 6
    variance: float = 1.0

    kind = "gaussian"

    def _dim(self, box):
        d = 2 * self.pairs
        if d < 1 or d > box.mode_count():
            raise BoxMismatchError(f"{self.pairs} mode pairs not available on {box}")
        return d

    def draw(self, box, rng):
        x = rng.standard_normal(self._dim(box)) * math.sqrt(self.variance)
        return sp.leray_project(SpectralField.from_coordinates(box, x))

    def mean_energy(self, box):
        return self._dim(box) * self.variance

    def to_dict(self):
        return {"kind": self.kind, "pairs": self.pairs, "variance": self.variance}


@dataclass(frozen=True)
class BallSampler:
    """Uniform on the H-ball of ``radius`` within the lowest ``pairs`` mode pairs."""

    pairs: int = 6
    radius: float = 1.0

    kind = "ball"

    def draw(self, box, rng):
        d = GaussianSampler(self.pairs)._dim(box)
        x = rng.standard_normal(d)
        x *= self.radius * rng.random() ** (1.0 / d) / np.linalg.norm(x)
        return SpectralField.from_coordinates(box, x)

    def mean_energy(self, box):
        d = 2 * self.pairs
        return self.radius**2 * d / (d + 2)

    def to_dict(self):
        return {"kind": self.kind, "pairs": self.pairs, "radius": self.radius}


def member_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for member ``index``; independent of ensemble size."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def draw_initial(sampler, box, n, seed):
    return [sampler.draw(box, member_rng(seed, i)) for i in range(n)]


def push_initial(
    sampler,
    n: int,
    p: PhysParams,
    cfg: SolverConfig,
    seed: int,
    threads: int = 1,
    chunk: int = 16,
) -> EnsembleMeasure:
    """Monte Carlo push-forward of an initial measure through the solution map."""
    if n < 1:
        raise ValueError("ensemble size must be >= 1")
    if not 0 <= int(seed) < 2**64:
        raise ConfigurationError("seed must be an unsigned 64-bit integer")
    init = draw_initial(sampler, p.box, n, seed)
    members = solve_many(init, p, cfg, threads=threads, chunk=chunk)
    return EnsembleMeasure(tuple(members))


def solve_many(initial: Sequence[SpectralField], p, cfg, threads=1, chunk=16):
    """Solve independent initial conditions in fixed-size batches."""
    from .errors import DivergedError

    stack = np.stack([w.coeffs for w in initial])
    starts = list(range(0, len(initial), chunk))

    def run(s):
        try:
            return integrate_batch(stack[s : s + chunk], p, cfg)
        except DivergedError as e:
            raise DivergedError(e.time, member=s + (e.member or 0)) from None

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, starts))
    else:
        results = [run(s) for s in starts]
    eff = effective_params(p, cfg)
    out = []
    for times, c in results:
        out.extend(Trajectory(times, ci, eff, cfg) for ci in c)
    return out


def mean_energy_bound_slack(rho: EnsembleMeasure) -> tuple:
    """Slack of sup_t int|u(t)|^2 <= int|u(0)|^2 + ||f||^2/(lambda1 nu)^2.

    Returns ``(slack, scale)``.
    """
    p = rho.members[0].params
    me = rho.mean_energy()
    bound = me[0] + p.R0**2
    return float(bound - me.max()), float(max(bound, 1e-300))
