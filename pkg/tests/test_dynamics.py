import warnings

import numpy as np
import pytest
import scipy.linalg as sla

from memstab.control import (
    ControlRegion,
    build_truncated_system,
    coupled_generator,
    indicator_gram,
    solve_are,
)
from memstab.dynamics import (
    LinearStepper,
    SimulationConfig,
    SpectralState,
    SteadyState,
    TimeSeries,
    advection,
    biot_savart,
    curl,
    decay_fit,
    divergence,
    energy,
    feedback_matrix,
    initial_state,
    linearized_terms,
    memory_consistency,
    mode_propagator,
    nonlinear_term,
    simulate,
    simulate_integral_form,
    steady_solve,
    step_linear,
    step_nonlinear,
    trapezoid_memory_recursive,
)
from memstab.errors import BlowUp, DegenerateFit, DimensionMismatch, GridTooCoarse, NoConvergence
from memstab.oracles import (
    advection_by_convolution,
    convolution_product,
    ode_reference,
    streamfunction_velocity,
    trapezoid_memory,
)
from memstab.spectral import FourierBasis, PhysicalParams, TorusGrid

UNIT = PhysicalParams(1.0, 1.0, 1.0)
HALF = ControlRegion(0.0, np.pi, 0.0, np.pi)
EPS = np.finfo(float).eps


def random_field(basis, seed, decay=1.0):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(basis.size) + 1j * rng.standard_normal(basis.size)
    return basis.symmetrize(c * (1 + basis.sigma) ** (-decay))


@pytest.fixture(scope="module")
def small_gain():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sys = build_truncated_system(UNIT.with_nu(1.5), FourierBasis(3), HALF)
    return solve_are(sys, cross_check=False)


# --- velocity ---------------------------------------------------------------


def test_biot_savart_sin():
    b = FourierBasis(4)
    grid = TorusGrid(b, 16)
    w = b.trig_field([(1, 0, 0.0, 1.0)])
    u = grid.to_grid(biot_savart(w, b))
    x = grid.points
    np.testing.assert_allclose(u[0], 0.0, atol=1e-15)
    np.testing.assert_allclose(u[1], -np.cos(x[..., 0]), atol=1e-14)
    np.testing.assert_allclose(u, streamfunction_velocity(grid.to_grid(w)), atol=1e-14)


def test_biot_savart_divergence_and_curl():
    b = FourierBasis(6)
    w = random_field(b, 1)
    u = biot_savart(w, b)
    kmag = np.sqrt(b.sigma)
    scale = np.max(kmag * np.hypot(np.abs(u[0]), np.abs(u[1])))
    assert np.max(np.abs(divergence(u, b))) <= 4 * EPS * scale
    np.testing.assert_allclose(curl(u, b), w, atol=1e-15)


# --- products ---------------------------------------------------------------


def test_single_mode_is_steady():
    b = FourierBasis(4)
    grid = TorusGrid(b, 13)
    w = b.trig_field([(1, 0, 0.0, 1.0)])
    assert np.max(np.abs(nonlinear_term(w, grid))) < 1e-15
    conv = advection_by_convolution(b, biot_savart(w, b), w)
    assert np.max(np.abs(conv)) < 1e-15


def test_advection_matches_convolution():
    b = FourierBasis(4)
    grid = TorusGrid(b, 13)
    a, c = random_field(b, 2), random_field(b, 3)
    np.testing.assert_allclose(
        advection(a, c, grid), advection_by_convolution(b, biot_savart(a, b), c), atol=1e-12
    )


def test_convolution_oracle_product_of_cosines():
    # cos x1 * cos x1 = (1 + cos 2 x1)/2 -> only the (+-2, 0) modes survive the mean-free basis
    b = FourierBasis(2)
    c = b.trig_field([(1, 0, 1.0, 0.0)])
    np.testing.assert_allclose(convolution_product(b, c, c), b.trig_field([(2, 0, 0.5, 0.0)]), atol=1e-14)


def test_advection_skew_symmetry():
    b = FourierBasis(5)
    grid = TorusGrid(b, 16)
    a, c = random_field(b, 4), random_field(b, 5)
    assert abs(np.vdot(c, advection(a, c, grid))) < 1e-12


def test_dealias_grid_requirement():
    b = FourierBasis(4)
    with pytest.raises(GridTooCoarse):
        nonlinear_term(random_field(b, 0), TorusGrid(b, 12))
    out = nonlinear_term(random_field(b, 0), TorusGrid(b, 10), dealias=False)
    assert out.shape == (b.size,)
    with pytest.raises(GridTooCoarse):
        SimulationConfig(UNIT, 4, 1e-3, 1.0, grid=12, model="nonlinear")


def test_linearized_terms():
    b = FourierBasis(4)
    grid = TorusGrid(b, 13)
    z1, z2 = random_field(b, 6), random_field(b, 7)
    zero = SteadyState(np.zeros(b.size, complex), np.zeros(b.size, complex), 0.0)
    assert np.max(np.abs(linearized_terms(z1, zero, grid))) == 0.0
    mode = b.trig_field([(0, 2, 0.3, 0.0)])
    st = SteadyState(mode, mode, 0.0)
    assert np.max(np.abs(linearized_terms(2.0 * mode, st, grid))) < 1e-15
    st = SteadyState(random_field(b, 8), np.zeros(b.size), 0.0)
    lhs = linearized_terms(z1 + z2, st, grid)
    rhs = linearized_terms(z1, st, grid) + linearized_terms(z2, st, grid)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# --- steady state -----------------------------------------------------------


def test_steady_zero_and_single_mode():
    b = FourierBasis(4)
    grid = TorusGrid(b, 13)
    st = steady_solve(np.zeros(b.size), UNIT, grid)
    assert np.max(np.abs(st.w_inf)) == 0.0
    f = b.trig_field([(1, 0, 0.0, 1e-2)])
    st = steady_solve(f, UNIT, grid)
    np.testing.assert_allclose(st.w_inf, f / 2, atol=1e-15)


def test_steady_residual_independent_evaluator():
    b = FourierBasis(4)
    grid = TorusGrid(b, 13)
    f = 0.2 * random_field(b, 9)
    st = steady_solve(f, UNIT, grid, tol=1e-12)
    # re-evaluate with the brute-force convolution sum
    nu_eff = UNIT.eta + UNIT.kappa / UNIT.lambda_
    r = nu_eff * b.sigma * st.w_inf + advection_by_convolution(b, biot_savart(st.w_inf, b), st.w_inf) - f
    assert np.linalg.norm(r) < 1e-12
    assert st.iterations > 1
    assert b.hermitian_defect(st.w_inf) < 1e-15


def test_steady_divergence_reported():
    b = FourierBasis(4)
    grid = TorusGrid(b, 13)
    f = 400.0 * random_field(b, 10, decay=0.0)
    with pytest.raises(NoConvergence) as err:
        steady_solve(f, UNIT, grid, maxiter=200)
    assert err.value.iterations > 0


# --- linear stepping --------------------------------------------------------


def test_mode_propagator_example_against_ode():
    prop = mode_propagator(UNIT, np.array([1.0]), 1.0)[0]
    m = np.array([[-1.0, -1.0], [1.0, -1.0]])
    ref = ode_reference(lambda t, y: m @ y, [1.0, 0.0], 1.0)
    np.testing.assert_allclose(prop @ [1.0, 0.0], ref.real, atol=1e-10)
    # closed form: e^{-t}(cos t, sin t)
    np.testing.assert_allclose(prop @ [1.0, 0.0], np.exp(-1) * np.array([np.cos(1), np.sin(1)]), atol=1e-15)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 3 + 2 * np.sqrt(2), 3 + 2 * np.sqrt(2) + 1e-9, 8.0, 200.0])
@pytest.mark.parametrize("t", [1e-3, 0.3, 2.0])
def test_mode_propagator_matches_expm(sigma, t):
    p = UNIT
    m = np.array([[-p.eta * sigma, -p.kappa * sigma], [1.0, -p.lambda_]])
    np.testing.assert_allclose(mode_propagator(p, np.array([sigma]), t)[0], sla.expm(t * m), rtol=1e-12, atol=1e-14)


def test_mode_propagator_kappa_zero():
    p = PhysicalParams(1.0, 0.0, 1.0)
    m = np.array([[-1.0, 0.0], [1.0, -1.0]])
    np.testing.assert_allclose(mode_propagator(p, np.array([1.0]), 0.7)[0], sla.expm(0.7 * m), atol=1e-15)


def test_memory_of_constant_history():
    lam, dt = 1.7, 1e-2
    t = dt * np.arange(301)
    q = trapezoid_memory_recursive(np.full((301, 1), 2.0), lam, dt)[:, 0]
    np.testing.assert_allclose(q, 2.0 * (1 - np.exp(-lam * t)) / lam, atol=1e-4)
    np.testing.assert_allclose(q, trapezoid_memory(np.full(301, 2.0), lam, dt), atol=1e-13)


def test_closed_loop_strang_second_order(small_gain):
    b = FourierBasis(3)
    gram = indicator_gram(HALF, b)
    bk = feedback_matrix(small_gain, gram)
    a = coupled_generator(UNIT, b.sigma)
    x0 = initial_state(b, seed=2)
    exact = sla.expm(1.0 * (a + bk)) @ x0.stacked()
    errs = []
    for dt in (0.02, 0.01, 0.005):
        stepper = LinearStepper(UNIT, b, dt, small_gain, gram)
        st = x0
        for _ in range(int(round(1.0 / dt))):
            st = stepper.step(st)
        errs.append(np.linalg.norm(st.stacked() - exact))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(3.6 < r < 4.4 for r in ratios), ratios
    # Lie splitting is first order
    st = x0
    stepper = LinearStepper(UNIT, b, 0.01, small_gain, gram, scheme="euler")
    for _ in range(100):
        st = stepper.step(st)
    assert np.linalg.norm(st.stacked() - exact) > 5 * errs[1]


def test_step_linear_function(small_gain):
    b = FourierBasis(3)
    x0 = initial_state(b, seed=1)
    a = step_linear(x0, UNIT, 0.1, basis=b)
    z, w = mode_propagator(UNIT, b.sigma, 0.1)[:, 0, 0] * x0.z, mode_propagator(UNIT, b.sigma, 0.1)[:, 1, 0] * x0.z
    np.testing.assert_allclose(a.z, z)
    np.testing.assert_allclose(a.w, w)
    assert a.t == pytest.approx(0.1)
    with pytest.raises(ValueError):
        step_linear(x0, UNIT, 0.1, gain=small_gain)


def test_energy_monotone_uncontrolled():
    b = FourierBasis(5)
    cfg = SimulationConfig(PhysicalParams(0.7, 2.0, 0.4), 5, 1e-2, 5.0)
    res = simulate(cfg, initial_state(b, seed=3))
    assert np.max(np.diff(res.series.energy)) <= 1e-12
    st = initial_state(b, seed=3)
    assert energy(st, cfg.params, b) == pytest.approx(0.5)


def test_uncontrolled_rate_lowest_mode():
    b = FourierBasis(3)
    x0 = initial_state(b, kind="modes", modes=[(1, 0, 0.0, 1.0)], amplitude=None)
    res = simulate(SimulationConfig(UNIT, 3, 1e-2, 10.0, record_every=5), x0)
    fit = decay_fit(res.series)
    assert fit.rate == pytest.approx(-1.0, rel=0.02)


# --- nonlinear stepping -----------------------------------------------------


def test_nonlinear_zero_stays_zero():
    b = FourierBasis(4)
    cfg = SimulationConfig(UNIT, 4, 1e-2, 0.5, model="nonlinear")
    res = simulate(cfg, SpectralState.zeros(b))
    assert np.all(res.final.z == 0) and np.all(res.final.w == 0)


def test_nonlinear_linearization_error_is_quadratic():
    b = FourierBasis(4)
    rel = []
    for amp in (1e-2, 2e-2):
        x0 = initial_state(b, seed=11, amplitude=amp, decay=0.5)
        a = simulate(SimulationConfig(UNIT, 4, 1e-2, 1.0, model="nonlinear"), x0).final
        c = simulate(SimulationConfig(UNIT, 4, 1e-2, 1.0, model="linear"), x0).final
        rel.append(np.linalg.norm(a.z - c.z))
    assert 3.8 < rel[1] / rel[0] < 4.2


def test_nonlinear_preserves_structure(small_gain):
    b = FourierBasis(3)
    grid = TorusGrid(b, 10)
    st = steady_solve(b.trig_field([(1, 1, 0.0, 0.05)]), UNIT, grid)
    cfg = SimulationConfig(UNIT, 3, 1e-2, 0.5, grid=10, gain=small_gain, region=HALF, steady=st, model="nonlinear")
    res = simulate(cfg, initial_state(b, seed=4, amplitude=1e-2))
    assert res.max_hermitian_defect < 1e-15
    assert res.max_divergence < 1e-15
    one = step_nonlinear(initial_state(b, seed=4, amplitude=1e-2), cfg)
    assert one.t == pytest.approx(1e-2)


def test_blowup_guard():
    b = FourierBasis(3)
    cfg = SimulationConfig(UNIT, 3, 1e-2, 1.0, guard_factor=0.5)
    with pytest.raises(BlowUp) as err:
        simulate(cfg, initial_state(b, seed=0))
    assert err.value.t == pytest.approx(0.01 * round(err.value.t / 0.01))


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(UNIT, 3, 0.0, 1.0)
    with pytest.raises(ValueError):
        SimulationConfig(UNIT, 3, 0.1, 0.01)
    with pytest.raises(GridTooCoarse):
        SimulationConfig(UNIT, 4, 0.1, 1.0, grid=8)
    with pytest.raises(ValueError):
        SimulationConfig(UNIT, 3, 0.1, 1.0, model="stokes")
    with pytest.raises(DimensionMismatch):
        simulate(SimulationConfig(UNIT, 3, 0.1, 1.0), initial_state(FourierBasis(2)))


# --- memory and integral form ----------------------------------------------


def test_memory_consistency_analytic():
    lam = 2.0
    devs = []
    for dt in (1e-2, 5e-3):
        t = dt * np.arange(int(round(3.0 / dt)) + 1)
        z = np.exp(-t)[:, None]
        w = ((np.exp(-t) - np.exp(-lam * t)) / (lam - 1))[:, None]
        devs.append(memory_consistency(z, w, lam, dt))
    assert devs[0] < 0.1 * 1e-2**2
    assert 3.9 < devs[0] / devs[1] < 4.1


def test_memory_consistency_closed_loop(small_gain):
    b = FourierBasis(3)
    devs = []
    for dt in (2e-3, 1e-3):
        cfg = SimulationConfig(UNIT, 3, dt, 1.0, gain=small_gain, region=HALF)
        res = simulate(cfg, initial_state(b, seed=5), keep_history=True)
        devs.append(memory_consistency(res.z_history, res.w_history, 1.0, dt))
    assert devs[1] < 1e-5
    assert 3.7 < devs[0] / devs[1] < 4.3


def test_integral_form_matches_coupled_linear(small_gain):
    b = FourierBasis(3)
    x0 = initial_state(b, seed=6)
    errs = []
    for dt in (2e-3, 1e-3):
        cfg = SimulationConfig(UNIT, 3, dt, 2.0, gain=small_gain, region=HALF)
        res = simulate(cfg, x0, keep_history=True)
        _, zi = simulate_integral_form(cfg, x0.z)
        errs.append(np.max(np.linalg.norm(res.z_history - zi, axis=1)))
    assert errs[1] < 1e-5
    assert 3.5 < errs[0] / errs[1] < 4.5


# --- fitting and series -----------------------------------------------------


def test_decay_fit_exact_exponential():
    t = np.linspace(0, 5, 101)
    fit = decay_fit(TimeSeries.from_arrays(t, 3.0 * np.exp(-2 * t)))
    assert fit.rate == pytest.approx(-2.0, abs=1e-6)
    assert fit.intercept == pytest.approx(np.log(3.0), abs=1e-6)
    assert fit.samples == 51


def test_decay_fit_errors():
    t = np.linspace(0, 1, 12)
    with pytest.raises(ValueError):
        decay_fit(TimeSeries.from_arrays(t, np.exp(-t)))
    t = np.linspace(0, 10, 101)
    y = np.exp(-t)
    y[-3:] = 0.0
    with pytest.raises(DegenerateFit):
        decay_fit(TimeSeries.from_arrays(t, y))


def test_series_csv_round_trip():
    b = FourierBasis(3)
    res = simulate(SimulationConfig(UNIT, 3, 1e-2, 0.2), initial_state(b, seed=1))
    text = res.series.to_csv()
    assert text.splitlines()[0] == "t,l2_z,h1_z,l2_w,h2_w,l2_control,energy"
    back = TimeSeries.from_csv(text)
    for col in ("t", "l2_z", "energy"):
        np.testing.assert_array_equal(back.column(col), res.series.column(col))
    assert np.all(np.diff(back.t) > 0)
