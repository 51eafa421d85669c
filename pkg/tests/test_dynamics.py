import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import random_solenoidal
from nsalpha import (
    FROZEN_M,
    AprioriEnvelope,
    BoxSpec,
    PhysParams,
    SolverConfig,
    SpectralField,
    Trajectory,
    apriori_check,
    calibrate_M,
    eigenfunction,
    energy_equality_residual,
    fb_norm,
    norm_H,
    solve,
    step,
    strengthened_energy_check,
)
from nsalpha.dynamics import integrate_batch, required_M
from nsalpha.errors import ConfigurationError, DivergedError, InvalidPsiError, PreconditionError
from nsalpha.functionals import PSI_IDENTITY, PSI_SATURATING, PSI_TANH, PsiFunction, psi_constant
from nsalpha.spectral import apply_stokes, taylor_green


@pytest.fixture(scope="module")
def forced():
    box = BoxSpec(n=16)
    return PhysParams(0.1, 0.2, taylor_green(box, 0.2))


@pytest.fixture(scope="module")
def unforced():
    box = BoxSpec(n=16)
    return PhysParams(0.1, 0.2, SpectralField.zeros(box))


def _w0(box, amp=2.0, seed=0):
    return random_solenoidal(box, np.random.default_rng(seed), amp)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SolverConfig(0.0, 1.0)
    with pytest.raises(ConfigurationError):
        SolverConfig(0.01, 1.0, save_stride=0)
    with pytest.raises(ConfigurationError):
        SolverConfig(0.01, 1.0, scheme="euler")
    with pytest.raises(ConfigurationError):
        SolverConfig(0.01, 1.0, model="euler")
    with pytest.raises(ConfigurationError):
        SolverConfig(0.03, 1.0)
    cfg = SolverConfig(0.01, 1.0, "if-rk4", 4, "nse")
    assert SolverConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.n_steps == 100


def test_rest_is_fixed(unforced):
    z = SpectralField.zeros(unforced.box)
    for scheme in ("if-midpoint", "if-rk4"):
        assert np.abs(step(z, unforced, SolverConfig(0.1, 0.1, scheme)).coeffs).max() == 0


@pytest.mark.parametrize("scheme", ["if-midpoint", "if-rk4"])
def test_linear_single_mode_exact(scheme):
    box = BoxSpec(n=8)
    p = PhysParams(1.0, 0.3, SpectralField.zeros(box))
    u = eigenfunction(box, 1)
    for dt in (0.01, 0.37, 2.0):
        out = step(u, p, SolverConfig(dt, dt, scheme, nonlinear=False))
        assert np.abs(out.coeffs - math.exp(-dt) * u.coeffs).max() <= 1e-15


@pytest.mark.parametrize("scheme,order", [("if-midpoint", 2), ("if-rk4", 4)])
def test_richardson_order(forced, scheme, order):
    w0 = _w0(forced.box, 3.0, 1)
    T = 0.4

    def end(dt):
        return solve(w0, forced, SolverConfig(dt, T, scheme, round(T / dt))).coeffs[-1]

    dts = (0.04, 0.02, 0.01, 0.005)
    ends = [end(dt) for dt in dts]
    ref = end(0.0025)
    errs = [norm_H(SpectralField(forced.box, e - ref)) for e in ends[:-1]]
    # self-comparison against dt/4: ratio of successive errors -> 2^p
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert abs(math.log2(ratios[-1]) - order) < 0.35


def test_solve_t0_single_state(forced):
    w0 = _w0(forced.box)
    tr = solve(w0, forced, SolverConfig(0.01, 0.0))
    assert len(tr) == 1
    assert np.array_equal(tr.coeffs[0], w0.coeffs)


def test_unforced_energy_decreases(unforced):
    tr = solve(_w0(unforced.box, 5.0), unforced, SolverConfig(0.01, 1.0, save_stride=2))
    assert np.all(np.diff(tr.energy) < 0)
    tr = solve(_w0(unforced.box, 5.0), unforced, SolverConfig(0.01, 1.0, save_stride=2, model="nse"))
    assert np.all(np.diff(tr.energy) < 0)


def test_absorbing_ball(forced):
    w0 = _w0(forced.box, forced.R0, 2)
    tr = solve(w0, forced, SolverConfig(0.01, 2.0, save_stride=5))
    assert np.sqrt(tr.energy).max() <= forced.R0 * (1 + 1e-8)


def test_determinism(forced):
    w0 = _w0(forced.box)
    cfg = SolverConfig(0.01, 0.3)
    a, b = solve(w0, forced, cfg), solve(w0, forced, cfg)
    assert np.array_equal(a.coeffs, b.coeffs) and np.array_equal(a.times, b.times)


def test_alpha_zero_reduction(forced):
    w0 = _w0(forced.box)
    p0 = forced.with_alpha(0.0)
    for scheme in ("if-midpoint", "if-rk4"):
        a = step(w0, p0, SolverConfig(0.01, 0.01, scheme, model="ns-alpha"))
        b = step(w0, forced, SolverConfig(0.01, 0.01, scheme, model="nse"))
        assert np.array_equal(a.coeffs, b.coeffs)


def test_batch_matches_single(forced):
    ws = [_w0(forced.box, 1.0 + i, i) for i in range(3)]
    cfg = SolverConfig(0.01, 0.2, save_stride=5)
    _, c = integrate_batch(np.stack([w.coeffs for w in ws]), forced, cfg)
    for i, w in enumerate(ws):
        assert np.array_equal(c[i], solve(w, forced, cfg).coeffs)


def test_divergence_reports_time():
    box = BoxSpec(n=16)
    p = PhysParams(1e-3, 0.0, SpectralField.zeros(box))
    with pytest.raises(DivergedError) as ei:
        solve(_w0(box, 1e4), p, SolverConfig(0.5, 50.0))
    assert ei.value.time > 0 and math.isfinite(ei.value.time)
    assert ei.value.member == 0


def test_trajectory_read_only(forced):
    tr = solve(_w0(forced.box), forced, SolverConfig(0.01, 0.05))
    with pytest.raises(ValueError):
        tr.coeffs[0, 0, 1, 0, 0] = 1
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0]), tr.coeffs[:2], tr.params, tr.config)


# -- energy balance ----------------------------------------------------------


def test_energy_residual_frozen_nonsolution(unforced):
    u = _w0(unforced.box, 2.0)
    times = np.linspace(0, 1, 11)
    tr = Trajectory(times, np.repeat(u.coeffs[None], 11, axis=0), unforced, SolverConfig(0.1, 1.0))
    res = energy_equality_residual(tr)
    nu_int = unforced.nu * tr.enstrophy[0] * 1.0
    assert res.sum() == pytest.approx(nu_int, rel=1e-13)
    assert res.sum() > 0


def test_energy_residual_zero(unforced):
    z = SpectralField.zeros(unforced.box)
    tr = solve(z, unforced, SolverConfig(0.1, 1.0))
    assert np.all(energy_equality_residual(tr) == 0)


def test_energy_residual_order(forced):
    w0 = _w0(forced.box, 3.0, 3)
    T = 0.5
    errs = []
    for dt in (0.02, 0.01, 0.005):
        tr = solve(w0, forced, SolverConfig(dt, T, "if-midpoint", 1))
        errs.append(np.abs(np.cumsum(energy_equality_residual(tr))).max())
    slopes = np.diff(np.log(errs)) / np.diff(np.log([0.02, 0.01, 0.005]))
    assert np.all(np.abs(slopes - 2) < 0.2)


def test_nse_energy_residual_small(forced):
    from nsalpha.dynamics import energy_scale
    from nsalpha.spectral import random_field

    w0 = random_field(forced.box, np.random.default_rng(0), 48, 3.0)
    tr = solve(w0, forced, SolverConfig(0.005, 0.5, model="nse"))
    assert np.abs(np.cumsum(energy_equality_residual(tr))).max() <= 1e-4 * energy_scale(tr)


# -- a-priori envelope -------------------------------------------------------


def test_envelope_validation(forced):
    with pytest.raises(ConfigurationError):
        AprioriEnvelope(-1.0)
    with pytest.raises(ConfigurationError):
        AprioriEnvelope(1.0, M=0.0)
    w0 = _w0(forced.box, 2 * forced.R0)
    tr = solve(w0, forced, SolverConfig(0.01, 0.05))
    with pytest.raises(PreconditionError):
        apriori_check(tr, AprioriEnvelope(forced.R0))
    with pytest.raises(PreconditionError):
        apriori_check(tr, AprioriEnvelope(0.5 * forced.R0))


def test_energy_bound_unforced(unforced):
    tr = solve(_w0(unforced.box, 4.0), unforced, SolverConfig(0.01, 1.0, save_stride=10))
    rep = apriori_check(tr, AprioriEnvelope(4.0))
    i, j = np.triu_indices(len(tr), 1)
    tau = tr.times[j] - tr.times[i]
    direct = np.min(tr.energy[i] * np.exp(-unforced.nu * unforced.lambda1 * tau) - tr.energy[j])
    assert rep.slack_energy == pytest.approx(direct, rel=1e-13)
    assert rep.passed()


def test_single_mode_linear_decay_closed_form():
    # |w(t)|^2 = e^{-2 nu lambda1 t} while the bound decays like e^{-nu lambda1 t};
    # the slack is therefore the closed form below (strictly positive).
    box = BoxSpec(n=8)
    p = PhysParams(0.5, 0.0, SpectralField.zeros(box))
    u = eigenfunction(box, 1)
    tr = solve(u, p, SolverConfig(0.05, 2.0, nonlinear=False, save_stride=2))
    E = np.exp(-2 * p.nu * tr.times)
    assert np.allclose(tr.energy, E, rtol=1e-13)
    i, j = np.triu_indices(len(tr), 1)
    tau = tr.times[j] - tr.times[i]
    want = np.min(E[i] * np.exp(-p.nu * tau) - E[j])
    rep = apriori_check(tr, AprioriEnvelope(1.0))
    assert rep.slack_energy == pytest.approx(want, abs=1e-12)
    assert rep.slack_energy > 0


def test_forced_envelope_frozen_M(forced):
    tr = solve(_w0(forced.box, 0.5 * forced.R0, 4), forced, SolverConfig(0.01, 2.0, save_stride=5))
    rep = apriori_check(tr, AprioriEnvelope(forced.R0))
    assert rep.passed()
    assert required_M(tr) <= FROZEN_M


def test_calibrate_power_of_two(forced, unforced):
    z = SpectralField.zeros(forced.box)
    tr = solve(z, forced, SolverConfig(0.01, 1.0, save_stride=5))
    m = calibrate_M([tr])
    assert m >= 1 and math.log2(m) == int(math.log2(m))
    assert m >= required_M(tr) and (m == 1 or m / 2 < required_M(tr))
    assert calibrate_M([solve(z, unforced, SolverConfig(0.1, 1.0))]) == 1.0


# -- strengthened energy -----------------------------------------------------


def test_strengthened_examples(forced):
    tr = solve(_w0(forced.box, 2.0), forced, SolverConfig(0.01, 2.0, save_stride=5))
    v, s = strengthened_energy_check(tr, psi_constant(3.0))
    assert v == 0.0
    for psi in (PSI_IDENTITY, PSI_SATURATING, PSI_TANH):
        v, s = strengthened_energy_check(tr, psi)
        assert v <= 1e-8 * s
    v, s = strengthened_energy_check(tr, PSI_SATURATING)
    assert v < 0


def test_invalid_psi(forced):
    tr = solve(_w0(forced.box, 2.0), forced, SolverConfig(0.01, 0.1))
    bad = PsiFunction("neg", lambda r: -r, lambda r: -np.ones_like(r), 1.0)
    with pytest.raises(InvalidPsiError):
        strengthened_energy_check(tr, bad)
    steep = PsiFunction("sq", lambda r: r**2, lambda r: 2 * r, 1.0)
    with pytest.raises(InvalidPsiError):
        strengthened_energy_check(tr, steep)


# -- F^b norm ------------------------------------------------------------------


def test_fb_zero(unforced):
    z = SpectralField.zeros(unforced.box)
    assert fb_norm(solve(z, unforced, SolverConfig(0.1, 2.0))) == 0.0


def test_fb_steady_eigenmode():
    box = BoxSpec(n=8)
    u = eigenfunction(box, 1)
    nu = 0.3
    # a single Fourier mode is a steady state once f balances the viscous term
    p = PhysParams(nu, 0.0, apply_stokes(u) * nu)
    times = np.linspace(0.0, 3.0, 61)
    tr = Trajectory(times, np.repeat(u.coeffs[None], 61, axis=0), p, SolverConfig(0.05, 3.0))
    assert np.abs(tr.tendency).max() < 1e-14
    assert fb_norm(tr) == pytest.approx(2.0, rel=1e-12)


def test_fb_bounded_in_alpha(forced):
    w0 = _w0(forced.box, 3.0, 5)
    vals = [fb_norm(solve(w0, forced.with_alpha(a), SolverConfig(0.01, 2.0, save_stride=5))) for a in (0.4, 0.2, 0.1, 0.05)]
    assert max(vals) <= 1.5 * min(vals)


def test_nse_matches_advective_form(forced):
    from nsalpha.spectral import advect_arr

    w0 = _w0(forced.box, 3.0, 6)
    tr = solve(w0, forced, SolverConfig(0.01, 0.1, model="nse"))
    p = tr.params
    want = p.forcing.coeffs - p.nu * forced.box.lam * tr.coeffs - advect_arr(tr.coeffs, tr.coeffs, forced.box)
    assert np.abs(tr.tendency - want).max() <= 1e-13 * np.abs(want).max()
