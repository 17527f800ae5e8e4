"""Riccati feedback synthesis for the truncated, shifted coupled system.

State vectors are stacked as ``X = (z_1..z_M, w_1..w_M)`` over the retained
Fourier modes; the control ``v`` lives on the same M modes and enters the
z-equation through the indicator Gram matrix of the control patch.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionMismatch,
    HautusFail,
    IllConditioned,
    NoConvergence,
    NoStabilizingSolution,
    ShiftOnEigenvalue,
)
from .spectral import TWO_PI, CoupledSpectrum, FourierBasis, PhysicalParams

log = logging.getLogger(__name__)

SHIFT_TOL = 1e-6
SHIFT_NUDGE = 1e-4


@dataclass(frozen=True)
class ControlRegion:
    """Axis-aligned control patch ``[a1, b1] x [a2, b2]`` inside [0, 2pi]^2."""

    a1: float
    b1: float
    a2: float
    b2: float

    def __post_init__(self):
        for a, b in ((self.a1, self.b1), (self.a2, self.b2)):
            if not (0.0 <= a < b <= TWO_PI + 1e-12):
                raise ValueError(f"invalid control interval [{a}, {b}]")

    @property
    def area(self) -> float:
        return (self.b1 - self.a1) * (self.b2 - self.a2)

    @classmethod
    def parse(cls, text) -> ControlRegion:
        if isinstance(text, str):
            parts = [float(eval_pi(p)) for p in text.split(",")]
        else:
            parts = [float(eval_pi(p)) for p in text]
        if len(parts) != 4:
            raise ValueError("region needs four numbers a1,b1,a2,b2")
        return cls(*parts)

    @classmethod
    def full(cls) -> ControlRegion:
        return cls(0.0, TWO_PI, 0.0, TWO_PI)

    def as_list(self) -> list[float]:
        return [self.a1, self.b1, self.a2, self.b2]

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points)
        x1, x2 = p[..., 0], p[..., 1]
        return (x1 >= self.a1) & (x1 <= self.b1) & (x2 >= self.a2) & (x2 <= self.b2)


def eval_pi(value):
    """Accept numbers or strings such as ``"pi"``, ``"pi/2"``, ``"1.5*pi"``."""
    if not isinstance(value, str):
        return value
    s = value.strip().replace(" ", "")
    try:
        return float(s)
    except ValueError:
        pass
    if "pi" not in s:
        raise ValueError(f"cannot parse {value!r}")
    head, _, tail = s.partition("pi")
    num = 1.0
    if head:
        num = float(head.rstrip("*")) if head.rstrip("*") else 1.0
    if tail:
        if not tail.startswith("/"):
            raise ValueError(f"cannot parse {value!r}")
        num /= float(tail[1:])
    return num * np.pi


def _interval_moments(a: float, b: float, m: np.ndarray) -> np.ndarray:
    """``int_a^b exp(i m t) dt`` for integer array ``m``."""
    m = np.asarray(m, dtype=float)
    out = np.empty(m.shape, dtype=complex)
    zero = m == 0
    out[zero] = b - a
    mm = m[~zero]
    out[~zero] = (np.exp(1j * mm * b) - np.exp(1j * mm * a)) / (1j * mm)
    return out


def indicator_gram(region: ControlRegion, basis: FourierBasis) -> np.ndarray:
    """``G[k, n] = <chi_O phi_n, phi_k>`` in closed form."""
    k = basis.modes
    d1 = k[None, :, 0] - k[:, None, 0]
    d2 = k[None, :, 1] - k[:, None, 1]
    g = _interval_moments(region.a1, region.b1, d1) * _interval_moments(region.a2, region.b2, d2)
    g /= TWO_PI**2
    return 0.5 * (g + g.conj().T)


@dataclass(frozen=True, eq=False)
class TruncatedSystem:
    """Finite spectral truncation of the shifted pair (A_nu, B)."""

    params: PhysicalParams
    basis: FourierBasis
    region: ControlRegion
    A_nu: np.ndarray
    B_mat: np.ndarray
    gram_O: np.ndarray

    @property
    def modes(self) -> int:
        return self.basis.size

    @property
    def n(self) -> int:
        return 2 * self.basis.size

    @property
    def spectrum(self) -> CoupledSpectrum:
        return CoupledSpectrum.from_basis(self.params, self.basis)


def coupled_generator(params: PhysicalParams, sigma, shift: float = 0.0) -> np.ndarray:
    """Dense ``2M x 2M`` generator of the coupled linear system, stacked (z, w)."""
    s = np.asarray(sigma, dtype=float)
    m = len(s)
    a = np.zeros((2 * m, 2 * m))
    i = np.arange(m)
    a[i, i] = -params.eta * s + shift
    a[i, i + m] = -params.kappa * s
    a[i + m, i] = 1.0
    a[i + m, i + m] = -params.lambda_ + shift
    return a


def admissible_shift(spectrum: CoupledSpectrum, nu: float, tol: float = SHIFT_TOL) -> float:
    """Return ``nu`` or, if ``-nu`` sits on some ``Re(mu)``, ``nu + 1e-4 * nu0`` (warns)."""
    nu0 = spectrum.params.nu0()
    if not nu < nu0:
        raise ValueError(f"shift nu={nu} must be below nu0={nu0}")
    re = spectrum.eigenvalues.real
    nudged = float(nu)
    for _ in range(10):
        if not np.any(np.abs(re + nudged) < tol):
            break
        nudged += SHIFT_NUDGE * nu0
    else:
        raise ShiftOnEigenvalue(f"could not move nu={nu} off the spectrum")
    if nudged != nu:
        warnings.warn(
            f"-nu={-nu} coincides with Re(mu); using nu={nudged}", RuntimeWarning, stacklevel=2
        )
        if not nudged < nu0:
            raise ShiftOnEigenvalue(f"nudged shift {nudged} reached nu0={nu0}")
    return nudged


def build_truncated_system(
    params: PhysicalParams, basis: FourierBasis, region: ControlRegion, nudge: bool = True
) -> TruncatedSystem:
    params.check_shift()
    if nudge:
        spec = CoupledSpectrum.from_basis(params, basis)
        params = params.with_nu(admissible_shift(spec, params.nu))
    gram = indicator_gram(region, basis)
    a_nu = coupled_generator(params, basis.sigma, params.nu).astype(complex)
    m = basis.size
    b = np.zeros((2 * m, m), dtype=complex)
    b[:m] = gram
    return TruncatedSystem(params, basis, region, a_nu, b, gram)


def spectral_split(spectrum: CoupledSpectrum, nu: float, tol: float = SHIFT_TOL):
    """Partition ``(mode, branch)`` indices by the sign of ``Re(mu + nu)``.

    Branch 0 is mu_plus, branch 1 is mu_minus.
    """
    re = spectrum.eigenvalues.real + nu
    if np.any(np.abs(re) < tol):
        raise ShiftOnEigenvalue(f"-nu={-nu} lies on the real part of an eigenvalue")
    unstable = [(int(i), int(b)) for i, b in zip(*np.nonzero(re > 0))]
    stable = [(int(i), int(b)) for i, b in zip(*np.nonzero(re < 0))]
    return unstable, stable


@dataclass
class HautusReport:
    nu: float
    unstable: list
    margins: dict = field(default_factory=dict)
    cluster_margins: dict = field(default_factory=dict)
    threshold: float = 1e-8

    @property
    def passed(self) -> bool:
        return all(m >= self.threshold for m in self.margins.values()) and all(
            m >= self.threshold for m in self.cluster_margins.values()
        )


def hautus_check(
    spectrum: CoupledSpectrum, region: ControlRegion, nu: float, threshold: float = 1e-8
) -> HautusReport:
    """Check that no unstable adjoint eigenfunction vanishes on the control patch.

    Per mode the margin is ``||phi_k||^2_{L^2(O)} = G[k, k]``. Modes sharing
    an eigenvalue span a joint eigenspace, so each such cluster is also
    checked through the smallest eigenvalue of its Gram sub-block.
    """
    if spectrum.basis is None:
        raise ValueError("hautus_check needs a Fourier basis")
    unstable, _ = spectral_split(spectrum, nu)
    gram = indicator_gram(region, spectrum.basis)
    report = HautusReport(nu=nu, unstable=unstable, threshold=threshold)
    mus = spectrum.eigenvalues
    clusters: dict = {}
    for i, b in unstable:
        report.margins[(i, b)] = float(gram[i, i].real)
        key = (round(mus[i, b].real, 9), round(mus[i, b].imag, 9))
        clusters.setdefault(key, []).append(i)
    for key, idx in clusters.items():
        sub = gram[np.ix_(idx, idx)]
        report.cluster_margins[key] = float(np.linalg.eigvalsh(sub)[0])
    if not report.passed:
        bad = [k for k, m in report.margins.items() if m < threshold]
        bad += [k for k, m in report.cluster_margins.items() if m < threshold]
        raise HautusFail(bad)
    return report


def _stacked_vectors(spectrum: CoupledSpectrum, index, vectors):
    m = len(spectrum)
    out = np.zeros((len(index), 2 * m), dtype=complex)
    for row, (i, b) in enumerate(index):
        out[row, i] = vectors[i, b, 0]
        out[row, i + m] = vectors[i, b, 1]
    return out


def unstable_projector(spectrum: CoupledSpectrum, nu: float) -> np.ndarray:
    """Spectral projector onto the unstable eigenvectors of A_nu (stacked ordering)."""
    unstable, _ = spectral_split(spectrum, nu)
    m = len(spectrum)
    if not unstable:
        return np.zeros((2 * m, 2 * m), dtype=complex)
    spectrum.require_nondefective(sorted({i for i, _ in unstable}))
    right = _stacked_vectors(spectrum, unstable, spectrum.zeta)
    left = _stacked_vectors(spectrum, unstable, spectrum.zeta_star)
    return right.T @ left.conj()


# --- Riccati solvers -------------------------------------------------------


def are_residual(A, B, P, Q=None) -> float:
    """Frobenius norm of ``A^H P + P A - P B B^H P + Q``."""
    n = A.shape[0]
    Q = np.eye(n) if Q is None else Q
    r = A.conj().T @ P + P @ A - P @ (B @ B.conj().T) @ P + Q
    return float(np.linalg.norm(r))


def care_hamiltonian(A, B, Q=None, cond_limit: float = 1e12, axis_tol: float = 1e-10):
    """Stabilizing ARE solution from the ordered Schur form of the Hamiltonian.

    ``H = [[A, -B B^H], [-Q, -A^H]]``; the first n Schur vectors (stable
    eigenvalues sorted first) span ``[I; P]``.
    """
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=complex)
    H = np.block([[A, -B @ B.conj().T], [-Q, -A.conj().T]])
    T, Z, sdim = sla.schur(H, output="complex", sort="lhp")
    ev = np.diag(T)
    scale = max(1.0, float(np.max(np.abs(ev))))
    if np.min(np.abs(ev.real)) < axis_tol * scale or sdim != n:
        raise NoStabilizingSolution(
            f"Hamiltonian has {sdim} stable eigenvalues (expected {n}); "
            f"min |Re| = {np.min(np.abs(ev.real)):.3e}"
        )
    U1, U2 = Z[:n, :n], Z[n:, :n]
    c = np.linalg.cond(U1)
    if c > cond_limit:
        raise IllConditioned(f"stable subspace basis condition number {c:.3e}")
    P = np.linalg.solve(U1.conj().T, U2.conj().T).conj().T
    return 0.5 * (P + P.conj().T)


def bass_seed(A, B) -> np.ndarray:
    """Stabilizing gain ``K0`` (``A - B K0`` Hurwitz) by Bass' Lyapunov construction."""
    n = A.shape[0]
    beta = max(0.0, float(np.max(-np.linalg.eigvals(A).real))) * 1.05 + 1.0
    Ab = -(A + beta * np.eye(n))
    X = sla.solve_continuous_lyapunov(Ab, -2.0 * B @ B.conj().T)
    X = 0.5 * (X + X.conj().T)
    return np.linalg.solve(X.conj().T, B).conj().T


def stabilizing_seed(A, B) -> np.ndarray:
    """Gain that stabilizes only the unstable modal part of ``A``.

    With ``W`` the left unstable eigenvectors (``W V = I``), Bass' gain ``K_u``
    for ``(W A V, W B)`` lifted as ``K_u W`` leaves the closed loop block
    triangular, so the stable part is untouched.
    """
    n = A.shape[0]
    ev, vl, vr = sla.eig(A, left=True, right=True)
    unstable = ev.real >= 0
    if not np.any(unstable):
        return np.zeros((B.shape[1], n), dtype=complex)
    V = vr[:, unstable]
    L = vl[:, unstable].conj().T
    W = np.linalg.solve(L @ V, L)
    Ku = bass_seed(W @ A @ V, W @ B)
    return Ku @ W


def care_newton_kleinman(A, B, Q=None, K0=None, tol: float = 1e-13, maxiter: int = 200):
    """Newton-Kleinman iteration: one Lyapunov solve per step from a stabilizing seed."""
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=complex)
    K = stabilizing_seed(A, B) if K0 is None else np.asarray(K0, dtype=complex)
    step = np.inf
    P_old = None
    for it in range(1, maxiter + 1):
        Ak = A - B @ K
        P = sla.solve_continuous_lyapunov(Ak.conj().T, -(Q + K.conj().T @ K))
        P = 0.5 * (P + P.conj().T)
        K = B.conj().T @ P
        if P_old is not None:
            step = np.linalg.norm(P - P_old) / max(1.0, np.linalg.norm(P))
            if step < tol:
                return P
        P_old = P
    raise NoConvergence(maxiter, float(step))


def _conjugation_symmetrize(P, basis: FourierBasis) -> np.ndarray:
    """Average P with its image under ``c_k -> conj(c_{-k})`` (real-field structure)."""
    m = basis.size
    perm = np.concatenate([basis.neg_index, basis.neg_index + m])
    return 0.5 * (P + P[np.ix_(perm, perm)].conj())


@dataclass(frozen=True, eq=False)
class GainOperator:
    P: np.ndarray
    K: np.ndarray
    residual: float
    closed_loop_abscissa: float
    params: PhysicalParams | None = None
    basis: FourierBasis | None = None
    region: ControlRegion | None = None
    crosscheck: float | None = None

    @property
    def modes(self) -> int:
        return self.K.shape[0]

    def to_dict(self) -> dict:
        def pack(mat):
            mat = np.asarray(mat)
            return {
                "shape": list(mat.shape),
                "data": np.stack([mat.real.ravel(), mat.imag.ravel()], axis=1).tolist(),
            }

        out = {
            "format": "memstab-gain/1",
            "ordering": "stacked (z_1..z_M, w_1..w_M) over modes",
            "params": self.params.as_dict() if self.params else None,
            "cutoff": self.basis.cutoff if self.basis else None,
            "modes": self.basis.modes.tolist() if self.basis else None,
            "region": self.region.as_list() if self.region else None,
            "P": pack(self.P),
            "K": pack(self.K),
            "residual": self.residual,
            "closed_loop_abscissa": self.closed_loop_abscissa,
            "crosscheck": self.crosscheck,
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> GainOperator:
        def unpack(obj):
            data = np.asarray(obj["data"], dtype=float)
            return (data[:, 0] + 1j * data[:, 1]).reshape(obj["shape"])

        params = basis = region = None
        if d.get("params"):
            p = d["params"]
            params = PhysicalParams(p["eta"], p["kappa"], p["lambda"], p["nu"])
        if d.get("cutoff"):
            basis = FourierBasis(d["cutoff"])
            if d.get("modes") is not None and basis.modes.tolist() != d["modes"]:
                raise ValueError("mode list in gain file does not match basis ordering")
        if d.get("region"):
            region = ControlRegion(*d["region"])
        return cls(
            P=unpack(d["P"]),
            K=unpack(d["K"]),
            residual=float(d["residual"]),
            closed_loop_abscissa=float(d["closed_loop_abscissa"]),
            params=params,
            basis=basis,
            region=region,
            crosscheck=d.get("crosscheck"),
        )

    def save(self, path):
        from .io import atomic_write_text

        atomic_write_text(path, json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> GainOperator:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def solve_are(sys: TruncatedSystem, cross_check: bool = True, tol: float = 1e-8) -> GainOperator:
    """Solve ``A^H P + P A - P B B^H P + I = 0`` on the full truncation.

    The Hamiltonian/Schur answer is returned; with ``cross_check`` the
    Newton-Kleinman answer is computed independently and their relative
    difference stored in ``GainOperator.crosscheck``.
    """
    A, B = sys.A_nu, sys.B_mat
    P = care_hamiltonian(A, B)
    P = _conjugation_symmetrize(P, sys.basis)
    residual = are_residual(A, B, P)
    K = -B.conj().T @ P
    abscissa = float(np.max(np.linalg.eigvals(A + B @ K).real))
    diff = None
    if cross_check:
        P_nk = care_newton_kleinman(A, B)
        diff = float(np.max(np.abs(P - P_nk)) / np.max(np.abs(P)))
    if residual > tol:
        log.warning("ARE residual %.3e above tolerance %.1e", residual, tol)
    if abscissa >= 0:
        raise NoStabilizingSolution(f"closed loop abscissa {abscissa} is not negative")
    return GainOperator(
        P=P,
        K=K,
        residual=residual,
        closed_loop_abscissa=abscissa,
        params=sys.params,
        basis=sys.basis,
        region=sys.region,
        crosscheck=diff,
    )


def feedback_apply(gain: GainOperator, state) -> np.ndarray:
    """Control coefficients ``v = K (z, w)``."""
    if hasattr(state, "z"):
        x = np.concatenate([np.asarray(state.z), np.asarray(state.w)])
    else:
        x = np.asarray(state)
    if x.shape[-1] != gain.K.shape[1]:
        raise DimensionMismatch(f"state size {x.shape[-1]} != gain width {gain.K.shape[1]}")
    return x @ gain.K.T
