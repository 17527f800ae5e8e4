"""Time integration of the coupled memory system on the 2-D torus.

Variables are the vorticity deviation ``z`` and the memory variable
``w(t) = int_0^t exp(-lambda (t - s)) z(s) ds`` which obeys
``w_t + lambda w - z = 0``. Per Fourier mode the principal part is the 2x2
block ``[[-eta sigma, -kappa sigma], [1, -lambda]]``.

The nonlinear model adds the advection ``(k*z).grad z``, its linearization
around a stationary vorticity ``w_inf`` and the decaying forcing
``-(kappa/lambda) exp(-lambda t) Lap w_inf`` that arises because the memory
of ``w_inf`` starts empty at ``t = 0``.
"""

from __future__ import annotations

import csv
import io as _io
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .control import ControlRegion, GainOperator, indicator_gram
from .errors import BlowUp, DegenerateFit, DimensionMismatch, GridTooCoarse, NoConvergence
from .io import fmt_float
from .spectral import (
    FourierBasis,
    PhysicalParams,
    TorusGrid,
    coupled_eigenvalues,
    discriminant,
)

SERIES_COLUMNS = ("t", "l2_z", "h1_z", "l2_w", "h2_w", "l2_control", "energy")
RNG_NAME = "numpy.random.default_rng (PCG64)"


@dataclass
class SpectralState:
    """Coefficients of ``z`` and ``w`` over the basis modes at time ``t``."""

    z: np.ndarray
    w: np.ndarray
    t: float = 0.0

    @classmethod
    def zeros(cls, basis: FourierBasis) -> SpectralState:
        return cls(np.zeros(basis.size, complex), np.zeros(basis.size, complex), 0.0)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.z, self.w])

    @classmethod
    def from_stacked(cls, x, t: float) -> SpectralState:
        m = len(x) // 2
        return cls(np.array(x[:m]), np.array(x[m:]), t)

    def hermitian_defect(self, basis: FourierBasis) -> float:
        return max(basis.hermitian_defect(self.z), basis.hermitian_defect(self.w))

    def copy(self) -> SpectralState:
        return SpectralState(self.z.copy(), self.w.copy(), self.t)


@dataclass
class SteadyState:
    w_inf: np.ndarray
    f_inf: np.ndarray
    residual: float
    iterations: int = 0

    def to_dict(self, basis: FourierBasis) -> dict:
        def pack(c):
            return np.stack([c.real, c.imag], axis=1).tolist()

        return {
            "format": "memstab-steady/1",
            "cutoff": basis.cutoff,
            "modes": basis.modes.tolist(),
            "w_inf": pack(self.w_inf),
            "f_inf": pack(self.f_inf),
            "residual": self.residual,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SteadyState:
        def unpack(v):
            a = np.asarray(v, dtype=float)
            return a[:, 0] + 1j * a[:, 1]

        return cls(unpack(d["w_inf"]), unpack(d["f_inf"]), float(d["residual"]),
                   int(d.get("iterations", 0)))


@dataclass
class SimulationConfig:
    """Everything needed to advance one run.

    ``model`` is ``"linear"`` (principal coupled system) or ``"nonlinear"``;
    ``scheme`` is ``"strang"`` (default, second order) or ``"euler"``
    (first-order Lie splitting, for debugging).
    """

    params: PhysicalParams
    cutoff: int
    dt: float
    horizon: float
    grid: int | None = None
    gain: GainOperator | None = None
    steady: SteadyState | None = None
    region: ControlRegion | None = None
    dealias: bool = True
    record_every: int = 1
    model: str = "linear"
    scheme: str = "strang"
    guard_factor: float = 1e3

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon >= self.dt:
            raise ValueError("horizon must be at least dt")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.model not in ("linear", "nonlinear"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.scheme not in ("strang", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.grid is None:
            self.grid = max(3 * self.cutoff + 1, 2 * self.cutoff + 2)
        if self.grid < 2 * self.cutoff + 2:
            raise GridTooCoarse(f"grid {self.grid} < 2*cutoff+2")
        if self.model == "nonlinear" and self.dealias and self.grid <= 3 * self.cutoff:
            raise GridTooCoarse(
                f"dealiased products need grid > 3*cutoff = {3 * self.cutoff}, got {self.grid}"
            )
        if self.gain is not None and self.gain.K.shape[0] != FourierBasis(self.cutoff).size:
            raise DimensionMismatch("gain size does not match cutoff")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class TimeSeries:
    t: np.ndarray
    l2_z: np.ndarray
    h1_z: np.ndarray
    l2_w: np.ndarray
    h2_w: np.ndarray
    l2_control: np.ndarray
    energy: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def column(self, name: str) -> np.ndarray:
        if name not in SERIES_COLUMNS:
            raise KeyError(name)
        return getattr(self, name)

    def rows(self):
        cols = [self.column(c) for c in SERIES_COLUMNS]
        return list(zip(*cols))

    def to_csv(self) -> str:
        out = [",".join(SERIES_COLUMNS)]
        for row in self.rows():
            out.append(",".join(fmt_float(v) for v in row))
        return "\n".join(out) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> TimeSeries:
        reader = csv.DictReader(_io.StringIO(text))
        data = {c: [] for c in SERIES_COLUMNS}
        for row in reader:
            for c in SERIES_COLUMNS:
                data[c].append(float(row[c]))
        return cls(**{c: np.asarray(v) for c, v in data.items()})

    @classmethod
    def from_arrays(cls, t, z_norm) -> TimeSeries:
        """Synthetic series with only ``l2_z`` populated (for fitting tests)."""
        t = np.asarray(t, float)
        zn = np.asarray(z_norm, float)
        zero = np.zeros_like(t)
        return cls(t, zn, zn, zero, zero, zero, 0.5 * zn**2)


# ---------------------------------------------------------------------------
# velocity and products


def biot_savart(w, basis: FourierBasis) -> np.ndarray:
    """Velocity coefficients, shape (2, M), with ``curl u = w`` and ``div u = 0``.

    ``u_hat = i (k2, -k1) w_hat / |k|^2``; the streamfunction is
    ``psi = (-Lap)^{-1} w`` and ``u = (d2 psi, -d1 psi)``.
    """
    w = np.asarray(w)
    psi = w / basis.sigma
    k = basis.modes
    return np.stack([1j * k[:, 1] * psi, -1j * k[:, 0] * psi])


def divergence(u_hat, basis: FourierBasis) -> np.ndarray:
    k = basis.modes
    return 1j * (k[:, 0] * u_hat[0] + k[:, 1] * u_hat[1])


def curl(u_hat, basis: FourierBasis) -> np.ndarray:
    k = basis.modes
    return 1j * (k[:, 0] * u_hat[1] - k[:, 1] * u_hat[0])


def advection(a, b, grid: TorusGrid, dealias: bool = True) -> np.ndarray:
    """Coefficients of ``(k*a).grad b`` by the pseudospectral product.

    Mean is removed and, when ``dealias``, the 2/3 mask is applied to the
    product before restriction to the retained modes.
    """
    basis = grid.basis
    if dealias and not grid.dealias_exact:
        raise GridTooCoarse(f"grid {grid.n} too coarse for dealiased products at cutoff {basis.cutoff}")
    u = biot_savart(a, basis)
    k = basis.modes
    stack = np.stack([u[0], u[1], 1j * k[:, 0] * b, 1j * k[:, 1] * b])
    f = grid.to_grid(stack)
    prod = f[0] * f[2] + f[1] * f[3]
    return grid.from_grid(prod, dealias=dealias)


def nonlinear_term(w, grid: TorusGrid, dealias: bool = True) -> np.ndarray:
    """``(k*w).grad w`` on the retained modes."""
    return advection(w, w, grid, dealias)


def linearized_terms(z, steady: SteadyState, grid: TorusGrid, dealias: bool = True) -> np.ndarray:
    """``(k*z).grad w_inf + (k*w_inf).grad z``."""
    return advection(z, steady.w_inf, grid, dealias) + advection(steady.w_inf, z, grid, dealias)


# ---------------------------------------------------------------------------
# steady state


def steady_residual(w_inf, f_inf, params: PhysicalParams, grid: TorusGrid, dealias: bool = True) -> float:
    """``||(eta + kappa/lambda)(-Lap) w + (k*w).grad w - f||_{L^2}``."""
    nu_eff = params.eta + params.kappa / params.lambda_
    r = nu_eff * grid.basis.sigma * w_inf + nonlinear_term(w_inf, grid, dealias) - f_inf
    return float(np.linalg.norm(r))


def steady_solve(
    f_inf,
    params: PhysicalParams,
    grid: TorusGrid,
    tol: float = 1e-12,
    maxiter: int = 500,
    dealias: bool = True,
) -> SteadyState:
    """Picard iteration ``w <- ((eta + kappa/lambda)(-Lap))^{-1} [f - (k*w).grad w]``."""
    basis = grid.basis
    f = np.asarray(f_inf, dtype=complex)
    if f.shape != (basis.size,):
        raise DimensionMismatch("forcing size does not match basis")
    nu_eff = params.eta + params.kappa / params.lambda_
    inv = 1.0 / (nu_eff * basis.sigma)
    w = f * inv
    res = steady_residual(w, f, params, grid, dealias)
    scale = max(float(np.linalg.norm(f)), 1.0)
    for it in range(1, maxiter + 1):
        if res < tol:
            return SteadyState(w, f, res, it - 1)
        if not np.isfinite(res) or res > 1e8 * scale:
            break
        w = basis.symmetrize((f - nonlinear_term(w, grid, dealias)) * inv)
        res = steady_residual(w, f, params, grid, dealias)
    if res < tol:
        return SteadyState(w, f, res, maxiter)
    raise NoConvergence(it, res)


# ---------------------------------------------------------------------------
# exact per-mode linear propagation


def mode_propagator(params: PhysicalParams, sigma, t: float) -> np.ndarray:
    """``exp(t L_k)`` for every block ``L_k = [[-eta s, -kappa s], [1, -lambda]]``.

    Uses ``exp(tL) = e^{st}[cosh(dt) I + sinh(dt)/d (L - sI)]`` with
    ``s = tr/2`` and ``d^2 = disc/4``. When ``|d t| <= 1`` the entire
    functions ``cosh(sqrt x)`` and ``sinh(sqrt x)/sqrt x`` are summed as power
    series in ``x = (dt)^2``, so coincident eigenvalues need no special case.
    Returns a real array of shape (M, 2, 2).
    """
    s_arr = np.atleast_1d(np.asarray(sigma, dtype=float))
    eta, kap, lam = params.eta, params.kappa, params.lambda_
    L = np.zeros((len(s_arr), 2, 2))
    L[:, 0, 0] = -eta * s_arr
    L[:, 0, 1] = -kap * s_arr
    L[:, 1, 0] = 1.0
    L[:, 1, 1] = -lam
    half_tr = -0.5 * (eta * s_arr + lam)
    x = 0.25 * discriminant(s_arr, params) * t * t
    out = np.empty_like(L)
    eye = np.eye(2)
    shifted = L - half_tr[:, None, None] * eye

    small = np.abs(x) <= 1.0
    if np.any(small):
        xs = x[small]
        ch = np.zeros_like(xs)
        sh = np.zeros_like(xs)
        term_c = np.ones_like(xs)
        term_s = np.ones_like(xs)
        for n in range(25):
            ch += term_c
            sh += term_s
            term_c = term_c * xs / ((2 * n + 1) * (2 * n + 2))
            term_s = term_s * xs / ((2 * n + 2) * (2 * n + 3))
        ex = np.exp(half_tr[small] * t)
        out[small] = ex[:, None, None] * (
            ch[:, None, None] * eye + (t * sh)[:, None, None] * shifted[small]
        )
    big = ~small
    if np.any(big):
        mu_p, mu_m = coupled_eigenvalues(s_arr[big], params)
        mu_p = np.atleast_1d(mu_p)
        mu_m = np.atleast_1d(mu_m)
        ep = np.exp(mu_p * t)[:, None, None]
        em = np.exp(mu_m * t)[:, None, None]
        Lb = L[big].astype(complex)
        gap = (mu_p - mu_m)[:, None, None]
        val = (ep * (Lb - mu_m[:, None, None] * eye) - em * (Lb - mu_p[:, None, None] * eye)) / gap
        out[big] = val.real
    return out


def apply_modes(prop, z, w):
    """Apply per-mode 2x2 matrices to the pair ``(z, w)``."""
    return prop[:, 0, 0] * z + prop[:, 0, 1] * w, prop[:, 1, 0] * z + prop[:, 1, 1] * w


def blockdiag_dense(prop) -> np.ndarray:
    """Stacked ``2M x 2M`` matrix of per-mode blocks."""
    m = prop.shape[0]
    i = np.arange(m)
    out = np.zeros((2 * m, 2 * m))
    out[i, i] = prop[:, 0, 0]
    out[i, i + m] = prop[:, 0, 1]
    out[i + m, i] = prop[:, 1, 0]
    out[i + m, i + m] = prop[:, 1, 1]
    return out


def feedback_matrix(gain: GainOperator, gram) -> np.ndarray:
    """``B K`` in the stacked ordering: control acts on the z rows only."""
    m = gram.shape[0]
    bk = np.zeros((2 * m, 2 * m), dtype=complex)
    bk[:m] = gram @ gain.K
    return bk


class LinearStepper:
    """Advance the principal coupled system, optionally under feedback.

    Open loop uses the exact per-mode exponential. Closed loop uses Strang
    splitting ``E(dt/2) expm(dt BK) E(dt/2)`` assembled once as a dense
    propagator; the ``euler`` scheme uses ``(I + dt BK) E(dt)``.
    """

    def __init__(self, params: PhysicalParams, basis: FourierBasis, dt: float,
                 gain: GainOperator | None = None, gram=None, scheme: str = "strang"):
        self.params = params
        self.basis = basis
        self.dt = dt
        self.gain = gain
        self.full = mode_propagator(params, basis.sigma, dt)
        self.dense = None
        if gain is not None:
            if gram is None:
                raise ValueError("closed loop needs the control Gram matrix")
            if gain.K.shape != (basis.size, 2 * basis.size):
                raise DimensionMismatch("gain does not match basis")
            bk = feedback_matrix(gain, gram)
            if scheme == "strang":
                half = blockdiag_dense(mode_propagator(params, basis.sigma, 0.5 * dt))
                self.dense = half @ sla.expm(dt * bk) @ half
            else:
                self.dense = (np.eye(2 * basis.size) + dt * bk) @ blockdiag_dense(self.full)

    def step(self, state: SpectralState) -> SpectralState:
        if self.dense is None:
            z, w = apply_modes(self.full, state.z, state.w)
            return SpectralState(z, w, state.t + self.dt)
        return SpectralState.from_stacked(self.dense @ state.stacked(), state.t + self.dt)


def step_linear(state: SpectralState, params: PhysicalParams, dt: float,
                gain: GainOperator | None = None, gram=None, basis: FourierBasis | None = None,
                scheme: str = "strang") -> SpectralState:
    """One step of the principal coupled system (see :class:`LinearStepper`)."""
    if basis is None:
        basis = gain.basis if gain is not None and gain.basis is not None else None
    if basis is None:
        raise ValueError("step_linear needs the basis")
    return LinearStepper(params, basis, dt, gain, gram, scheme).step(state)


class NonlinearStepper:
    """Splitting step for the nonlinear closed loop around ``w_inf``.

    Strang: exact linear half step, a Heun step over ``dt`` for
    ``-(k*z).grad z - linearized terms + chi_O K(z, w)`` with the forcing
    ``(kappa/lambda) sigma w_inf exp(-lambda t)`` integrated exactly, then a
    second exact linear half step. Hermitian symmetry is re-imposed after
    each step (it is preserved up to rounding).
    """

    def __init__(self, cfg: SimulationConfig, basis: FourierBasis, grid: TorusGrid, gram=None):
        self.cfg = cfg
        self.basis = basis
        self.grid = grid
        self.dt = cfg.dt
        p = cfg.params
        self.half = mode_propagator(p, basis.sigma, 0.5 * cfg.dt)
        self.full = mode_propagator(p, basis.sigma, cfg.dt)
        self.gk = None
        if cfg.gain is not None:
            self.gk = gram @ cfg.gain.K
        w_inf = cfg.steady.w_inf if cfg.steady is not None else None
        self.w_inf = w_inf
        if w_inf is not None:
            self.n_inf = advection(w_inf, w_inf, grid, cfg.dealias)
            self.forcing_profile = (p.kappa / p.lambda_) * basis.sigma * w_inf
        else:
            self.n_inf = None
            self.forcing_profile = None

    def explicit(self, z, w) -> np.ndarray:
        """Right-hand side of the explicit stage (z component only)."""
        if self.w_inf is None:
            r = -advection(z, z, self.grid, self.cfg.dealias)
        else:
            full = z + self.w_inf
            r = -(advection(full, full, self.grid, self.cfg.dealias) - self.n_inf)
        if self.gk is not None:
            r = r + self.gk @ np.concatenate([z, w])
        return r

    def forcing_integral(self, t0: float, t1: float):
        if self.forcing_profile is None:
            return 0.0
        lam = self.cfg.params.lambda_
        return self.forcing_profile * (math.exp(-lam * t0) - math.exp(-lam * t1)) / lam

    def step(self, state: SpectralState) -> SpectralState:
        dt = self.dt
        t0 = state.t
        if self.cfg.scheme == "euler":
            r = self.explicit(state.z, state.w)
            z, w = apply_modes(self.full, state.z, state.w)
            z = z + dt * r + self.forcing_integral(t0, t0 + dt)
        else:
            z, w = apply_modes(self.half, state.z, state.w)
            forcing = self.forcing_integral(t0, t0 + dt)
            r0 = self.explicit(z, w)
            r1 = self.explicit(z + dt * r0 + forcing, w)
            z = z + 0.5 * dt * (r0 + r1) + forcing
            z, w = apply_modes(self.half, z, w)
        z = self.basis.symmetrize(z)
        w = self.basis.symmetrize(w)
        return SpectralState(z, w, t0 + dt)


def step_nonlinear(state: SpectralState, cfg: SimulationConfig, gram=None) -> SpectralState:
    basis = FourierBasis(cfg.cutoff)
    grid = TorusGrid(basis, cfg.grid)
    if cfg.gain is not None and gram is None:
        gram = indicator_gram(_region(cfg), basis)
    return NonlinearStepper(cfg, basis, grid, gram).step(state)


# ---------------------------------------------------------------------------
# diagnostics


def energy(state: SpectralState, params: PhysicalParams, basis: FourierBasis) -> float:
    """``E = ||z||^2 / 2 + (kappa/2) ||grad w||^2``."""
    return float(
        0.5 * np.sum(np.abs(state.z) ** 2)
        + 0.5 * params.kappa * np.sum(basis.sigma * np.abs(state.w) ** 2)
    )


def _seminorm(c, basis, s):
    return float(np.sqrt(np.sum((1.0 + basis.sigma) ** s * np.abs(c) ** 2)))


def _region(cfg: SimulationConfig) -> ControlRegion:
    if cfg.region is not None:
        return cfg.region
    if cfg.gain is not None and cfg.gain.region is not None:
        return cfg.gain.region
    raise ValueError("closed-loop run needs a control region")


def initial_state(basis: FourierBasis, kind: str = "random", amplitude: float = 1.0,
                  seed: int = 0, decay: float = 2.0, modes=None) -> SpectralState:
    """Initial ``z_0`` (with ``w_0 = 0``), normalized to ``||z_0||_{L^2} = amplitude``.

    ``random``: independent complex normal coefficients from
    ``numpy.random.default_rng(seed)`` damped by ``(1 + sigma)^{-decay/2}``,
    then made Hermitian. ``modes``: a list of ``(k1, k2, a_cos, a_sin)``
    trigonometric terms (not renormalized when ``amplitude`` is None).
    """
    if kind == "random":
        rng = np.random.default_rng(seed)
        c = rng.standard_normal(basis.size) + 1j * rng.standard_normal(basis.size)
        c *= (1.0 + basis.sigma) ** (-0.5 * decay)
        c = basis.symmetrize(c)
    elif kind == "modes":
        if not modes:
            raise ValueError("kind='modes' needs a list of (k1, k2, a_cos, a_sin)")
        c = basis.trig_field(modes)
    else:
        raise ValueError(f"unknown initial kind {kind!r}")
    nrm = np.linalg.norm(c)
    if amplitude is not None and nrm > 0:
        c = c * (amplitude / nrm)
    return SpectralState(c, np.zeros(basis.size, complex), 0.0)


@dataclass
class SimulationResult:
    series: TimeSeries
    final: SpectralState
    z_history: np.ndarray | None = None
    w_history: np.ndarray | None = None
    max_hermitian_defect: float = 0.0
    max_divergence: float = 0.0


def simulate(cfg: SimulationConfig, initial: SpectralState, keep_history: bool = False) -> SimulationResult:
    """Integrate the unshifted system from ``initial`` over ``cfg.horizon``.

    Samples are recorded every ``cfg.record_every`` steps, including ``t=0``.
    Raises :class:`BlowUp` when ``||z||_{L^2}`` exceeds
    ``guard_factor * max(||z_0||, 1e-300)``.
    """
    basis = FourierBasis(cfg.cutoff)
    if initial.z.shape != (basis.size,) or initial.w.shape != (basis.size,):
        raise DimensionMismatch("initial state does not match cutoff")
    gram = indicator_gram(_region(cfg), basis) if cfg.gain is not None else None
    if cfg.model == "linear":
        stepper = LinearStepper(cfg.params, basis, cfg.dt, cfg.gain, gram, cfg.scheme)
    else:
        grid = TorusGrid(basis, cfg.grid)
        stepper = NonlinearStepper(cfg, basis, grid, gram)
    K = cfg.gain.K if cfg.gain is not None else None

    guard = cfg.guard_factor * max(float(np.linalg.norm(initial.z)), 1e-300)
    rows = []
    zh, wh = [], []
    herm = 0.0
    div = 0.0

    def record(st: SpectralState):
        nonlocal herm, div
        if K is not None:
            v = K @ st.stacked()
            ctrl = math.sqrt(max(float(np.real(np.vdot(v, gram @ v))), 0.0))
        else:
            ctrl = 0.0
        rows.append((
            st.t,
            float(np.linalg.norm(st.z)),
            _seminorm(st.z, basis, 1),
            float(np.linalg.norm(st.w)),
            _seminorm(st.w, basis, 2),
            ctrl,
            energy(st, cfg.params, basis),
        ))
        herm = max(herm, st.hermitian_defect(basis))
        div = max(div, float(np.max(np.abs(divergence(biot_savart(st.z, basis), basis)))))
        if keep_history:
            zh.append(st.z.copy())
            wh.append(st.w.copy())

    state = initial.copy()
    record(state)
    for n in range(1, cfg.steps + 1):
        state = stepper.step(state)
        state.t = n * cfg.dt
        nz = float(np.linalg.norm(state.z))
        if not np.isfinite(nz) or nz > guard:
            raise BlowUp(state.t, nz, guard)
        if n % cfg.record_every == 0:
            record(state)
    arr = np.asarray(rows, dtype=float).T
    series = TimeSeries(*arr, meta={"dt": cfg.dt, "record_every": cfg.record_every})
    return SimulationResult(
        series,
        state,
        np.asarray(zh) if keep_history else None,
        np.asarray(wh) if keep_history else None,
        herm,
        div,
    )


# ---------------------------------------------------------------------------
# integral (Volterra) form


def simulate_integral_form(cfg: SimulationConfig, z0, keep_history: bool = False):
    """Integrate the full vorticity ``W = w_inf + z`` with an explicit memory integral.

    ``W_t = eta Lap W + kappa Lap m - (k*W).grad W + f_inf + chi_O F``,
    ``m(t) = int_0^t exp(-lambda (t - s)) W(s) ds`` accumulated by the
    recursive trapezoid rule, and the feedback
    ``F = K(W - w_inf, m - (1 - exp(-lambda t))/lambda w_inf)``.
    Time stepping is Crank-Nicolson for the viscous and memory terms and
    second-order Adams-Bashforth for the rest, which reduces to a scalar
    implicit solve per mode.

    Returns ``(times, z_deviation_history)`` sampled every ``record_every``
    steps; ``z_deviation = W - w_inf``.
    """
    basis = FourierBasis(cfg.cutoff)
    p = cfg.params
    dt = cfg.dt
    s = basis.sigma
    if cfg.model == "nonlinear":
        grid = TorusGrid(basis, cfg.grid)
    w_inf = cfg.steady.w_inf if (cfg.steady is not None and cfg.model == "nonlinear") else np.zeros(basis.size, complex)
    f_inf = cfg.steady.f_inf if (cfg.steady is not None and cfg.model == "nonlinear") else np.zeros(basis.size, complex)
    gk = indicator_gram(_region(cfg), basis) @ cfg.gain.K if cfg.gain is not None else None
    decay = math.exp(-p.lambda_ * dt)

    def rhs(W, m, t):
        r = f_inf.copy()
        if cfg.model == "nonlinear":
            r = r - advection(W, W, grid, cfg.dealias)
        if gk is not None:
            a = (1.0 - math.exp(-p.lambda_ * t)) / p.lambda_
            r = r + gk @ np.concatenate([W - w_inf, m - a * w_inf])
        return r

    W = w_inf + np.asarray(z0, dtype=complex)
    m = np.zeros(basis.size, complex)
    lhs = 1.0 + 0.5 * dt * p.eta * s + 0.25 * dt * dt * p.kappa * s
    times = [0.0]
    hist = [W - w_inf]
    r_prev = None
    for n in range(cfg.steps):
        t = n * dt
        r = rhs(W, m, t)
        r_ab = r if r_prev is None else 1.5 * r - 0.5 * r_prev
        m_part = decay * m + 0.5 * dt * decay * W
        rhs_vec = (W - 0.5 * dt * p.eta * s * W
                   - 0.5 * dt * p.kappa * s * (m + m_part) + dt * r_ab)
        W_new = rhs_vec / lhs
        m = m_part + 0.5 * dt * W_new
        W = basis.symmetrize(W_new)
        r_prev = r
        if (n + 1) % cfg.record_every == 0:
            times.append((n + 1) * dt)
            hist.append(W - w_inf)
    return np.asarray(times), np.asarray(hist)


# ---------------------------------------------------------------------------
# post-processing


def trapezoid_memory_recursive(z_history, lambda_: float, dt: float) -> np.ndarray:
    """``Q_n ~ int_0^{t_n} exp(-lambda (t_n - s)) z(s) ds`` by the recursive trapezoid rule."""
    z = np.asarray(z_history)
    q = np.zeros_like(z, dtype=complex)
    e = math.exp(-lambda_ * dt)
    for n in range(1, len(z)):
        q[n] = e * q[n - 1] + 0.5 * dt * (e * z[n - 1] + z[n])
    return q


def memory_consistency(z_history, w_history, lambda_: float, dt: float) -> float:
    """Max deviation of the evolved ``w`` from trapezoid quadrature of the memory
    integral of ``z``, relative to the largest quadrature value."""
    q = trapezoid_memory_recursive(z_history, lambda_, dt)
    w = np.asarray(w_history)
    if w.shape != q.shape:
        raise DimensionMismatch("z and w histories differ in shape")
    axes = tuple(range(1, q.ndim))
    dev = np.sqrt(np.sum(np.abs(w - q) ** 2, axis=axes)) if axes else np.abs(w - q)
    scale = np.sqrt(np.sum(np.abs(q) ** 2, axis=axes)) if axes else np.abs(q)
    peak = float(np.max(scale))
    if peak == 0.0:
        return float(np.max(dev))
    return float(np.max(dev) / peak)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    samples: int


def decay_fit(series: TimeSeries, window_fraction: float = 0.5, norm: str = "l2") -> DecayFit:
    """Least-squares slope of ``log ||(z, w)||`` over the trailing part of the run.

    ``norm``: ``"l2"`` uses ``sqrt(l2_z^2 + l2_w^2)``; ``"h1h2"`` uses
    ``sqrt(h1_z^2 + h2_w^2)``; any column name fits that column alone.
    Only samples with ``t >= t_0 + window_fraction (t_end - t_0)`` are used.
    """
    if not 0.0 <= window_fraction < 1.0:
        raise ValueError("window_fraction must be in [0, 1)")
    t = np.asarray(series.t, float)
    if norm == "l2":
        y = np.hypot(series.l2_z, series.l2_w)
    elif norm == "h1h2":
        y = np.hypot(series.h1_z, series.h2_w)
    else:
        y = np.asarray(series.column(norm), float)
    start = t[0] + window_fraction * (t[-1] - t[0])
    sel = t >= start - 1e-12 * max(abs(t[-1]), 1.0)
    if np.count_nonzero(sel) < 10:
        raise ValueError("decay_fit needs at least 10 samples in the window")
    ys = y[sel]
    if np.any(~np.isfinite(ys)) or np.any(ys <= np.finfo(float).tiny):
        raise DegenerateFit("norm underflowed; decay exceeds the measurement floor")
    slope, intercept = np.polyfit(t[sel], np.log(ys), 1)
    return DecayFit(float(slope), float(intercept), int(np.count_nonzero(sel)))


def config_with(cfg: SimulationConfig, **changes) -> SimulationConfig:
    return replace(cfg, **changes)
