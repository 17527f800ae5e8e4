"""Oracle cross-checks behind ``memstab verify``.

Each check compares a production routine with an independent route from
:mod:`memstab.oracles` at desk scale and returns a :class:`Check`.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import oracles
from .control import (
    ControlRegion,
    build_truncated_system,
    indicator_gram,
    solve_are,
    unstable_projector,
)
from .dynamics import (
    SimulationConfig,
    advection,
    biot_savart,
    curl,
    initial_state,
    memory_consistency,
    mode_propagator,
    simulate,
    steady_residual,
    steady_solve,
)
from .spectral import CoupledSpectrum, FourierBasis, PhysicalParams, TorusGrid, coupled_eigenvalues


@dataclass
class Check:
    suite: str
    name: str
    value: float
    tol: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tol)


def _random_field(basis, rng, decay=1.0):
    c = (rng.standard_normal(basis.size) + 1j * rng.standard_normal(basis.size))
    return basis.symmetrize(c * (1 + basis.sigma) ** (-decay))


def spectral_checks(rng):
    draws = 1000
    eta = rng.uniform(0.1, 10, draws)
    kap = rng.uniform(0.0, 10, draws)
    lam = rng.uniform(0.1, 10, draws)
    sig = rng.uniform(1, 1e4, draws)
    worst = 0.0
    for e, k, l, s in zip(eta, kap, lam, sig):
        p = PhysicalParams(e, k, l)
        mp, mm = coupled_eigenvalues(s, p)
        ref = oracles.block_eigenvalues(s, p)[0]
        got = np.array([mp, mm])
        worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
    yield "eigenvalues vs dense 2x2", worst, 1e-10
    spec = CoupledSpectrum.from_basis(PhysicalParams(1.0, 1.0, 1.0), FourierBasis(8))
    yield "bi-orthonormality (cutoff 8)", spec.biorthogonality_residual(), 1e-12


def control_checks(rng):
    basis = FourierBasis(4)
    region = ControlRegion(0.0, np.pi, 0.0, np.pi)
    g = indicator_gram(region, basis)
    yield "indicator Gram vs Gauss-Legendre", float(np.max(np.abs(g - oracles.quadrature_gram(region, basis)))), 1e-8
    p = PhysicalParams(1.0, 1.0, 4.0, 2.0)
    spec = CoupledSpectrum.from_basis(p, basis)
    sys = build_truncated_system(p, basis, region)
    pu = unstable_projector(spec, p.nu)
    pc = oracles.contour_projector(sys.A_nu, 0.62, 0.5, 64)
    yield "unstable projector vs contour", float(np.max(np.abs(pu - pc))), 1e-8
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sys = build_truncated_system(PhysicalParams(1.0, 1.0, 1.0, 1.5), basis, region)
    gain = solve_are(sys)
    yield "ARE residual", gain.residual, 1e-8
    yield "Hamiltonian vs Newton-Kleinman", gain.crosscheck, 1e-7


def dynamics_checks(rng):
    basis = FourierBasis(4)
    grid = TorusGrid(basis, 16)
    w = _random_field(basis, rng)
    u = biot_savart(w, basis)
    ref = oracles.streamfunction_velocity(grid.to_grid(w))
    yield "Biot-Savart vs streamfunction", float(np.max(np.abs(grid.to_grid(u) - ref))), 1e-12
    yield "curl of Biot-Savart", float(np.max(np.abs(curl(u, basis) - w))), 1e-12
    v = _random_field(basis, rng)
    got = advection(w, v, grid)
    want = oracles.advection_by_convolution(basis, biot_savart(w, basis), v)
    yield "advection vs convolution sum", float(np.max(np.abs(got - want))), 1e-12
    yield "advection skew-symmetry", abs(complex(np.vdot(v, advection(w, v, grid)))), 1e-10

    p = PhysicalParams(1.0, 1.0, 1.0)
    eps = 1e-2
    f = basis.trig_field([(1, 0, 0.0, eps)])
    st = steady_solve(f, p, grid)
    yield "steady state for eps sin x1", float(np.max(np.abs(st.w_inf - f / 2))), 1e-10
    yield "steady residual (independent)", steady_residual(st.w_inf, f, p, grid), 1e-10

    prop = mode_propagator(p, np.array([1.0]), 1.0)[0]
    m = np.array([[-1.0, -1.0], [1.0, -1.0]])
    ode = oracles.ode_reference(lambda t, y: m @ y, [1.0, 0.0], 1.0)
    yield "2x2 exponential vs adaptive ODE", float(np.max(np.abs(prop @ [1.0, 0.0] - ode))), 1e-8

    cfg = SimulationConfig(p, 4, 1e-3, 1.0)
    res = simulate(cfg, initial_state(basis, seed=0), keep_history=True)
    yield "memory consistency (dt=1e-3)", memory_consistency(res.z_history, res.w_history, 1.0, 1e-3), 1e-5
    e = res.series.energy
    yield "energy monotone (max increase)", float(max(np.max(np.diff(e)), 0.0)), 1e-12


SUITES = {
    "spectral": spectral_checks,
    "control": control_checks,
    "dynamics": dynamics_checks,
}


def run_suite(name: str = "all", seed: int = 0) -> list[Check]:
    names = list(SUITES) if name == "all" else [name]
    for n in names:
        if n not in SUITES:
            raise ValueError(f"unknown suite {n!r}; choose from {sorted(SUITES)} or 'all'")
    rng = np.random.default_rng(seed)
    out = []
    for n in names:
        gen = SUITES[n](rng)
        while True:
            t0 = time.perf_counter()
            try:
                label, value, tol = next(gen)
            except StopIteration:
                break
            out.append(Check(n, label, float(value), tol, time.perf_counter() - t0))
    return out


def format_table(checks) -> str:
    width = max((len(c.name) for c in checks), default=10)
    lines = [f"{'suite':<9} {'check':<{width}} {'value':>11} {'tol':>8}  verdict"]
    for c in checks:
        lines.append(
            f"{c.suite:<9} {c.name:<{width}} {c.value:>11.3e} {c.tol:>8.0e}  {'PASS' if c.passed else 'FAIL'}"
        )
    n_ok = sum(c.passed for c in checks)
    lines.append(f"{n_ok}/{len(checks)} checks passed")
    return "\n".join(lines) + "\n"

