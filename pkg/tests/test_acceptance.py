"""Acceptance suite: one test per criterion, at the stated tolerances and
runtime limits. A pass/fail line per criterion is printed in the terminal
summary (see conftest.py)."""

import time
import warnings

import numpy as np
import pytest

from memstab.control import (
    ControlRegion,
    build_truncated_system,
    coupled_generator,
    hautus_check,
    indicator_gram,
    solve_are,
    unstable_projector,
)
from memstab.dynamics import (
    SimulationConfig,
    advection,
    biot_savart,
    divergence,
    initial_state,
    memory_consistency,
    simulate,
    simulate_integral_form,
    steady_solve,
)
from memstab.experiment import ExperimentSpec, bundled_spec, run_experiment
from memstab.oracles import (
    block_eigenvalues_batch,
    contour_projector,
    cost_quadrature,
    quadrature_gram,
    trapezoid_memory,
)
from memstab.spectral import (
    CoupledSpectrum,
    FourierBasis,
    PhysicalParams,
    TorusGrid,
    complex_window,
    coupled_eigenvalues,
    riesz_expand,
    riesz_reconstruct,
)

UNIT = PhysicalParams(1.0, 1.0, 1.0)
HALF = ControlRegion(0.0, np.pi, 0.0, np.pi)
EPS = np.finfo(float).eps


def _draws(rng, n):
    eta = rng.uniform(0.1, 10.0, n)
    kappa = rng.uniform(0.1, 10.0, n)
    lam = rng.uniform(0.1, 10.0, n)
    return eta, kappa, lam


def _unit_gain(cutoff, nu):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sys = build_truncated_system(UNIT.with_nu(nu), FourierBasis(cutoff), HALF)
    return sys, solve_are(sys, cross_check=True)


@pytest.mark.criterion(1, "eigenvalue formula vs dense 2x2 solve, Vieta residuals")
def test_criterion_1_eigenvalue_formula(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    n = 1000
    eta, kappa, lam = _draws(rng, n)
    sigma = 10.0 ** rng.uniform(-2.0, 4.0, n)
    got = np.empty((n, 2), complex)
    for i in range(n):
        got[i] = coupled_eigenvalues(sigma[i], PhysicalParams(eta[i], kappa[i], lam[i]))
    ref = block_eigenvalues_batch(eta, kappa, lam, sigma)
    rel = np.max(np.abs(got - ref) / np.abs(ref))
    trace_res = np.abs(got.sum(1) + lam + eta * sigma)
    det_res = np.abs(got.prod(1) - sigma * (eta * lam + kappa))
    vieta = np.max(np.maximum(trace_res, det_res) / (1.0 + sigma))
    elapsed = time.perf_counter() - t0
    record_property("measured", f"rel={rel:.2e} vieta={vieta:.2e}")
    assert rel < 1e-10
    assert vieta < 1e-10
    assert elapsed < 1.0


@pytest.mark.criterion(2, "Re mu < 0, non-real iff inside the window, slow-branch bound")
def test_criterion_2_spectral_structure(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    eta, kappa, lam = _draws(rng, 1000)
    sigma = np.concatenate([np.unique(FourierBasis(8).sigma), np.geomspace(100.0, 1e8, 60)])
    worst_bound = 0.0
    for e, k, l in zip(eta, kappa, lam):
        p = PhysicalParams(e, k, l)
        mp, mm = coupled_eigenvalues(sigma, p)
        assert np.all(mp.real < 0) and np.all(mm.real < 0)
        lo, hi = complex_window(p)
        inside = (sigma > lo) & (sigma < hi)
        assert np.array_equal(mp.imag != 0, inside)
        big = sigma >= 100
        nu0 = p.nu0()
        bound = 10 * (e * l + k) * nu0 / (e**2 * sigma[big])
        worst_bound = max(worst_bound, float(np.max(np.abs(mp[big] + nu0) / bound)))
    elapsed = time.perf_counter() - t0
    record_property("measured", f"max |mu+ + nu0| / bound = {worst_bound:.3f}")
    assert worst_bound < 1.0
    assert elapsed < 1.0


@pytest.mark.criterion(3, "bi-orthonormality and Riesz round trip at cutoff 8")
def test_criterion_3_biorthonormal_riesz(record_property):
    t0 = time.perf_counter()
    basis = FourierBasis(8)
    assert basis.size == 288
    spec = CoupledSpectrum.from_basis(UNIT, basis)
    spec.require_nondefective()
    bio = spec.biorthogonality_residual()
    rng = np.random.default_rng(303)
    z = rng.standard_normal(basis.size) + 1j * rng.standard_normal(basis.size)
    w = rng.standard_normal(basis.size) + 1j * rng.standard_normal(basis.size)
    z2, w2 = riesz_reconstruct(riesz_expand((z, w), spec), spec)
    trip = max(np.max(np.abs(z2 - z)), np.max(np.abs(w2 - w)))
    elapsed = time.perf_counter() - t0
    record_property("measured", f"biorth={bio:.2e} round_trip={trip:.2e}")
    assert bio < 1e-12
    assert trip < 1e-12
    assert elapsed < 5.0


@pytest.mark.criterion(4, "indicator Gram vs quadrature, projector vs 64-node contour, idempotence")
def test_criterion_4_hautus_projector(record_property):
    t0 = time.perf_counter()
    basis = FourierBasis(4)
    rng = np.random.default_rng(404)
    regions = [HALF]
    for _ in range(3):
        a1, a2 = rng.uniform(0, 3, 2)
        regions.append(ControlRegion(a1, a1 + rng.uniform(0.3, 3), a2, a2 + rng.uniform(0.3, 3)))
    gram_err = max(np.max(np.abs(indicator_gram(r, basis) - quadrature_gram(r, basis, 256))) for r in regions)

    # unit parameters, nu = 1.5 (nudged): Hautus and idempotence
    spec = CoupledSpectrum.from_basis(UNIT, basis)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sys = build_truncated_system(UNIT.with_nu(1.5), basis, HALF)
    nu = sys.params.nu
    rep = hautus_check(spec, HALF, nu)
    pu = unstable_projector(spec, nu)
    idem = np.max(np.abs(pu @ pu - pu))

    # contour comparison: a circle that separates the shifted-unstable set
    # (eta = kappa = 1, lambda = 4, nu = 2; see the decisions ledger)
    pc_params = PhysicalParams(1.0, 1.0, 4.0, 2.0)
    pc_spec = CoupledSpectrum.from_basis(pc_params, basis)
    a = coupled_generator(pc_params, basis.sigma, pc_params.nu)
    pu2 = unstable_projector(pc_spec, pc_params.nu)
    assert np.trace(pu2).real == pytest.approx(4)
    contour = np.max(np.abs(pu2 - contour_projector(a, 0.62, 0.5, 64)))
    idem = max(idem, np.max(np.abs(pu2 @ pu2 - pu2)))
    elapsed = time.perf_counter() - t0
    record_property("measured", f"gram={gram_err:.2e} contour={contour:.2e} idem={idem:.2e}")
    assert rep.passed and len(rep.unstable) == 16
    assert gram_err < 1e-8
    assert contour < 1e-8
    assert idem < 1e-10
    assert elapsed < 30.0


@pytest.mark.criterion(5, "Riccati certification and cost identity at cutoff 4")
def test_criterion_5_riccati(record_property):
    t0 = time.perf_counter()
    sys, gain = _unit_gain(4, 1.5)
    P = gain.P
    herm = np.max(np.abs(P - P.conj().T))
    min_eig = np.linalg.eigvalsh(0.5 * (P + P.conj().T)).min()
    rng = np.random.default_rng(505)
    x0 = rng.standard_normal(sys.n) + 1j * rng.standard_normal(sys.n)
    a_cl = sys.A_nu + sys.B_mat @ gain.K
    horizon = 40.0 / abs(gain.closed_loop_abscissa)
    cost = cost_quadrature(a_cl, gain.K, x0, horizon, 0.01)
    value = np.vdot(x0, P @ x0).real
    elapsed = time.perf_counter() - t0
    record_property(
        "measured",
        f"residual={gain.residual:.2e} abscissa={gain.closed_loop_abscissa:.4f} "
        f"crosscheck={gain.crosscheck:.2e} cost_rel={abs(cost - value) / value:.2e}",
    )
    assert gain.residual < 1e-8
    assert herm < 1e-10 and min_eig > -1e-10
    assert gain.closed_loop_abscissa < 0
    assert gain.crosscheck < 1e-7
    assert abs(cost - value) <= 0.01 * value
    assert elapsed < 60.0


@pytest.mark.criterion(6, "linear closed-loop decay for nu in {0.5, 1.0, 1.5}, cutoff 6")
def test_criterion_6_linear_decay(tmp_path, record_property):
    t0 = time.perf_counter()
    spec = ExperimentSpec.load(bundled_spec("decay_vs_nu"), output_dir=tmp_path)
    assert spec.discretization["cutoff"] == 6
    assert spec.discretization["dt"] == 1e-3 and spec.discretization["horizon"] == 10.0
    records = run_experiment(spec, workers=1)
    elapsed = time.perf_counter() - t0
    assert len(records) == 3
    rates = {r.config["params"]["nu"]: r.rates["closed"]["l2"] for r in records}
    record_property("measured", " ".join(f"nu={nu:g}:{rate:.3f}" for nu, rate in rates.items()))
    for r in records:
        assert r.error is None, r.error
        nu = spec.params["nu"][records.index(r)]
        assert r.rates["closed"]["l2"] <= -nu + 0.05 * nu
        assert r.passed
    assert elapsed < 120.0


@pytest.mark.criterion(7, "memory variable vs trapezoid quadrature, second order")
def test_criterion_7_memory_equivalence(record_property):
    t0 = time.perf_counter()
    basis = FourierBasis(6)
    _, gain = _unit_gain(6, 1.5)
    x0 = initial_state(basis, seed=7)
    devs = {}
    for dt in (2e-3, 1e-3):
        cfg = SimulationConfig(UNIT, 6, dt, 10.0, gain=gain, region=HALF)
        res = simulate(cfg, x0, keep_history=True)
        devs[dt] = memory_consistency(res.z_history, res.w_history, UNIT.lambda_, dt)
    # spot-check the recursion against direct (non-recursive) quadrature
    zh, wh = res.z_history, res.w_history
    direct = trapezoid_memory(zh[:2001], UNIT.lambda_, 1e-3)
    spot = np.max(np.abs(direct[[500, 1000, 2000]] - wh[[500, 1000, 2000]]))
    ratio = devs[2e-3] / devs[1e-3]
    elapsed = time.perf_counter() - t0
    record_property("measured", f"dev(1e-3)={devs[1e-3]:.2e} ratio={ratio:.2f} spot={spot:.1e}")
    assert devs[1e-3] < 1e-5
    assert 3.5 < ratio < 4.5
    assert spot < 1e-5 * np.max(np.abs(wh))
    assert elapsed < 60.0


@pytest.mark.criterion(8, "nonlinear pipeline: steady state, bounded e^{nu t}|z|_H1, integral form")
def test_criterion_8_nonlinear(record_property):
    t0 = time.perf_counter()
    basis = FourierBasis(8)
    grid = TorusGrid(basis, 32)
    eps = 1e-2
    f = basis.trig_field([(1, 0, 0.0, eps)])
    steady = steady_solve(f, UNIT, grid)
    steady_err = np.max(np.abs(steady.w_inf - basis.trig_field([(1, 0, 0.0, eps / 2)])))

    nu = 0.5
    _, gain = _unit_gain(8, nu)
    x0 = initial_state(basis, seed=8)
    x0.z *= 1e-2 / basis.sobolev_norm(x0.z, 1)
    cfg = SimulationConfig(
        UNIT, 8, 1e-3, 10.0, grid=32, gain=gain, region=HALF, steady=steady, model="nonlinear"
    )
    res = simulate(cfg, x0, keep_history=True)
    h1 = res.series.h1_z
    growth = np.max(np.exp(nu * res.series.t) * h1) / h1[0]
    _, z_int = simulate_integral_form(cfg, x0.z)
    gap = np.max(np.linalg.norm(res.z_history - z_int, axis=1))
    elapsed = time.perf_counter() - t0
    record_property(
        "measured",
        f"steady={steady_err:.1e} max e^(nu t)|z|_H1/|z0|_H1={growth:.3f} integral_gap={gap:.2e}",
    )
    assert steady_err < 1e-10
    assert growth <= 5.0
    assert gap < 1e-6
    assert elapsed < 300.0


@pytest.mark.criterion(9, "divergence-free velocity, advection skew-symmetry, energy monotone")
def test_criterion_9_structure(record_property):
    t0 = time.perf_counter()
    basis = FourierBasis(8)
    grid = TorusGrid(basis, 32)
    rng = np.random.default_rng(909)
    worst_div = 0.0
    worst_skew = 0.0
    for _ in range(5):
        w = basis.symmetrize(rng.standard_normal(basis.size) + 1j * rng.standard_normal(basis.size))
        v = basis.symmetrize(rng.standard_normal(basis.size) + 1j * rng.standard_normal(basis.size))
        u = biot_savart(w, basis)
        scale = np.max(np.sqrt(basis.sigma) * np.hypot(np.abs(u[0]), np.abs(u[1])))
        worst_div = max(worst_div, np.max(np.abs(divergence(u, basis))) / (EPS * scale))
        worst_skew = max(worst_skew, abs(np.vdot(v, advection(w, v, grid))))
    cfg = SimulationConfig(UNIT, 8, 1e-3, 2.0)
    res = simulate(cfg, initial_state(basis, seed=9))
    increase = float(np.max(np.diff(res.series.energy)))
    elapsed = time.perf_counter() - t0
    record_property(
        "measured", f"div={worst_div:.1f} ulp skew={worst_skew:.1e} max dE={increase:.1e}"
    )
    assert worst_div <= 4.0
    assert res.max_divergence <= 4 * EPS * max(1.0, res.series.h1_z.max())
    assert worst_skew < 1e-10
    assert increase <= 1e-12
    assert elapsed < 60.0
