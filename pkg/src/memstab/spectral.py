"""Closed-form spectral theory of the coupled memory operator.

Each base eigenvalue ``sigma`` of ``-Laplacian`` gives a 2x2 block acting on
the (z, w) coefficients of that mode::

    [[-eta*sigma, -kappa*sigma],
     [        1,      -lambda ]]

whose eigenvalues are the roots of ``mu**2 + (lambda + eta*sigma) mu +
sigma (eta*lambda + kappa)``. Everything in this module is a pure function of
``sigma`` and the physical parameters, so it works equally for the torus
Fourier basis and for a raw list of ``sigma`` values.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import DefectivePair, GridTooCoarse

TWO_PI = 2.0 * np.pi

#: Relative discriminant threshold below which a mode is flagged defective.
DEFECT_TOL = 1e-9


@dataclass(frozen=True)
class PhysicalParams:
    """Viscosity ``eta``, memory strength ``kappa``, kernel rate ``lambda_``
    and decay shift ``nu``.

    ``kappa == 0`` is accepted as the decoupled limit (no memory).
    """

    eta: float
    kappa: float
    lambda_: float
    nu: float = 0.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta!r}")
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be nonnegative, got {self.kappa!r}")
        if not self.lambda_ > 0:
            raise ValueError(f"lambda_ must be positive, got {self.lambda_!r}")
        if not self.nu >= 0:
            raise ValueError(f"nu must be nonnegative, got {self.nu!r}")

    def nu0(self) -> float:
        return accumulation_point(self)

    def with_nu(self, nu: float) -> PhysicalParams:
        return replace(self, nu=float(nu))

    def check_shift(self):
        if not self.nu < self.nu0():
            raise ValueError(f"shift nu={self.nu} must be below nu0={self.nu0()}")

    def as_dict(self) -> dict:
        return {"eta": self.eta, "kappa": self.kappa, "lambda": self.lambda_, "nu": self.nu}


def accumulation_point(params: PhysicalParams) -> float:
    """Limit of the slow eigenvalue branch: ``nu0 = kappa/eta + lambda``."""
    return params.kappa / params.eta + params.lambda_


def discriminant(sigma, params: PhysicalParams):
    """``(lambda + eta sigma)^2 - 4 sigma (eta lambda + kappa)``, written as
    ``(lambda - eta sigma)^2 - 4 kappa sigma`` to avoid cancellation."""
    s = np.asarray(sigma, dtype=float)
    return (params.lambda_ - params.eta * s) ** 2 - 4.0 * params.kappa * s


def coupled_eigenvalues(sigma, params: PhysicalParams):
    """Return ``(mu_plus, mu_minus)`` for base eigenvalue(s) ``sigma``.

    ``mu_plus`` has the larger real part; for a complex-conjugate pair it is
    the member with positive imaginary part. Works elementwise on arrays.
    """
    s = np.asarray(sigma, dtype=float)
    if np.any(s <= 0):
        raise ValueError("sigma must be positive")
    b = params.lambda_ + params.eta * s
    c = s * (params.eta * params.lambda_ + params.kappa)
    disc = discriminant(s, params)
    root = np.sqrt(np.abs(disc))
    real = disc >= 0
    # real roots: take the non-cancelling one and recover the other from the product
    mu_minus_real = -0.5 * (b + root)
    mu_plus_real = c / mu_minus_real
    mu_plus = np.where(real, mu_plus_real + 0j, -0.5 * b + 0.5j * root)
    mu_minus = np.where(real, mu_minus_real + 0j, -0.5 * b - 0.5j * root)
    if mu_plus.ndim == 0:
        return complex(mu_plus), complex(mu_minus)
    return mu_plus, mu_minus


def complex_window(params: PhysicalParams) -> tuple[float, float]:
    """Interval of ``sigma`` on which the eigenvalues are non-real.

    These are the roots of the discriminant viewed as a quadratic in sigma,
    ``eta^2 sigma^2 - 2 (eta lambda + 2 kappa) sigma + lambda^2``. The pair is
    non-real exactly for sigma strictly between them.
    """
    eta, kappa, lam = params.eta, params.kappa, params.lambda_
    hi = ((eta * lam + 2.0 * kappa) + 2.0 * np.sqrt(kappa * kappa + kappa * eta * lam)) / eta**2
    lo = lam**2 / (eta**2 * hi)
    return float(lo), float(hi)


@dataclass(frozen=True)
class CoupledEigenpair:
    sigma: float
    mu_plus: complex
    mu_minus: complex
    defective: bool
    zeta_plus: np.ndarray | None = None
    zeta_minus: np.ndarray | None = None
    zeta_star_plus: np.ndarray | None = None
    zeta_star_minus: np.ndarray | None = None

    def biorthogonality_residual(self) -> float:
        if self.defective:
            raise DefectivePair(self.sigma)
        direct = (self.zeta_plus, self.zeta_minus)
        adjoint = (self.zeta_star_plus, self.zeta_star_minus)
        gram = np.array([[np.vdot(b, a) for b in adjoint] for a in direct])
        return float(np.max(np.abs(gram - np.eye(2))))


def _is_defective(sigma, params, mu_plus, mu_minus):
    s = np.asarray(sigma, dtype=float)
    b = params.lambda_ + params.eta * s
    near_double = np.abs(discriminant(s, params)) < DEFECT_TOL * b**2
    # kappa = 0 makes mu = -lambda possible, where the eigenvector (1, 1/(mu+lambda)) blows up
    singular = (np.abs(mu_plus + params.lambda_) < DEFECT_TOL * b) | (
        np.abs(mu_minus + params.lambda_) < DEFECT_TOL * b
    )
    return near_double | singular


def _family_vectors(sigma, params, mu_plus, mu_minus):
    """Eigen- and adjoint-eigen coefficient 2-vectors, shape (..., 2 branches, 2)."""
    s = np.asarray(sigma, dtype=float)
    kappa, lam = params.kappa, params.lambda_
    mus = np.stack([np.asarray(mu_plus), np.asarray(mu_minus)], axis=-1)
    one = np.ones_like(mus)
    zeta = np.stack([one, 1.0 / (mus + lam)], axis=-1)
    shifted = lam + np.conj(mus)
    ks = (kappa * s)[..., None]
    scale = shifted**2 / (shifted**2 - ks)
    zeta_star = scale[..., None] * np.stack([one, -ks / shifted], axis=-1)
    return zeta, zeta_star


def eigenfamily(sigma: float, params: PhysicalParams) -> CoupledEigenpair:
    """Eigenvalues and bi-orthonormal eigen/adjoint coefficient vectors for one mode.

    Raises
    ------
    DefectivePair
        If the discriminant vanishes to within tolerance, or the eigenvector
        ``(1, 1/(mu + lambda))`` is singular (only possible for ``kappa = 0``).
    """
    mu_p, mu_m = coupled_eigenvalues(sigma, params)
    if bool(_is_defective(sigma, params, mu_p, mu_m)):
        raise DefectivePair(sigma)
    zeta, zeta_star = _family_vectors(float(sigma), params, mu_p, mu_m)
    return CoupledEigenpair(
        sigma=float(sigma),
        mu_plus=mu_p,
        mu_minus=mu_m,
        defective=False,
        zeta_plus=zeta[0],
        zeta_minus=zeta[1],
        zeta_star_plus=zeta_star[0],
        zeta_star_minus=zeta_star[1],
    )


class FourierBasis:
    """Mean-zero Fourier modes ``k`` with ``|k1|, |k2| <= cutoff`` on [0, 2pi]^2.

    Mode functions are ``exp(i k.x) / (2 pi)``, orthonormal in L^2. Modes are
    ordered by ``sigma = |k|^2`` and then lexicographically on ``(k1, k2)``.
    """

    normalization = 1.0 / TWO_PI

    def __init__(self, cutoff: int):
        cutoff = int(cutoff)
        if cutoff < 1:
            raise ValueError("cutoff must be a positive integer")
        self.cutoff = cutoff
        r = np.arange(-cutoff, cutoff + 1)
        k1, k2 = np.meshgrid(r, r, indexing="ij")
        k1, k2 = k1.ravel(), k2.ravel()
        keep = (k1 != 0) | (k2 != 0)
        k1, k2 = k1[keep], k2[keep]
        sig = k1 * k1 + k2 * k2
        order = np.lexsort((k2, k1, sig))
        self.modes = np.stack([k1[order], k2[order]], axis=1)
        self.sigma = sig[order].astype(float)
        self.modes.setflags(write=False)
        self.sigma.setflags(write=False)

    def __len__(self):
        return len(self.sigma)

    @property
    def size(self) -> int:
        return len(self.sigma)

    def __repr__(self):
        return f"FourierBasis(cutoff={self.cutoff}, size={self.size})"

    @cached_property
    def _lookup(self) -> dict:
        return {(int(a), int(b)): i for i, (a, b) in enumerate(self.modes)}

    def index_of(self, k) -> int:
        return self._lookup[(int(k[0]), int(k[1]))]

    @cached_property
    def neg_index(self) -> np.ndarray:
        """Permutation sending the index of ``k`` to the index of ``-k``."""
        idx = np.array([self._lookup[(-int(a), -int(b))] for a, b in self.modes])
        idx.setflags(write=False)
        return idx

    def hermitian_defect(self, coeffs) -> float:
        c = np.asarray(coeffs)
        return float(np.max(np.abs(c - np.conj(c[..., self.neg_index])), initial=0.0))

    def symmetrize(self, coeffs) -> np.ndarray:
        """Project coefficients onto the real-field (Hermitian) subspace."""
        c = np.asarray(coeffs)
        return 0.5 * (c + np.conj(c[..., self.neg_index]))

    def sobolev_norm(self, coeffs, s: float = 0.0) -> float:
        c = np.asarray(coeffs)
        return float(np.sqrt(np.sum((1.0 + self.sigma) ** s * np.abs(c) ** 2)))

    def single_mode(self, k, amplitude: complex = 1.0) -> np.ndarray:
        c = np.zeros(self.size, dtype=complex)
        c[self.index_of(k)] = amplitude
        return c

    def trig_field(self, terms) -> np.ndarray:
        """Coefficients of ``sum a_cos cos(k.x) + a_sin sin(k.x)`` for terms
        ``(k1, k2, a_cos, a_sin)``."""
        c = np.zeros(self.size, dtype=complex)
        for k1, k2, a_cos, a_sin in terms:
            # cos = (e + e*)/2, sin = (e - e*)/(2i) and e^{ik.x} = 2 pi phi_k
            i = self.index_of((k1, k2))
            j = self.index_of((-k1, -k2))
            c[i] += np.pi * (a_cos - 1j * a_sin)
            c[j] += np.pi * (a_cos + 1j * a_sin)
        return c


def torus_mode_values(k, points) -> np.ndarray:
    """Values of the unit-normalized mode ``exp(i k.x) / (2 pi)`` at ``points[..., 2]``."""
    pts = np.asarray(points, dtype=float)
    phase = k[0] * pts[..., 0] + k[1] * pts[..., 1]
    return np.exp(1j * phase) / TWO_PI


class TorusGrid:
    """Uniform ``n x n`` collocation grid on [0, 2pi]^2 tied to a basis.

    Field arrays are indexed ``[j1, j2]`` with ``x_i = 2 pi j_i / n``.
    """

    def __init__(self, basis: FourierBasis, n: int):
        n = int(n)
        if n < 2 * basis.cutoff + 2:
            raise GridTooCoarse(f"grid {n} < 2*cutoff+2 = {2 * basis.cutoff + 2}")
        self.basis = basis
        self.n = n
        self.flat_index = (basis.modes[:, 0] % n) * n + (basis.modes[:, 1] % n)
        freqs = np.fft.fftfreq(n, d=1.0 / n)
        self.k1, self.k2 = np.meshgrid(freqs, freqs, indexing="ij")
        # 2/3 rule: keep |k_i| < n/3
        self.dealias_mask = (np.abs(self.k1) < n / 3.0) & (np.abs(self.k2) < n / 3.0)
        self._scale = TWO_PI / n**2

    @property
    def points(self) -> np.ndarray:
        x = TWO_PI * np.arange(self.n) / self.n
        x1, x2 = np.meshgrid(x, x, indexing="ij")
        return np.stack([x1, x2], axis=-1)

    @property
    def dealias_exact(self) -> bool:
        """True when the 2/3 mask keeps every retained mode (grid > 3 cutoff)."""
        return self.n > 3 * self.basis.cutoff

    def to_grid(self, coeffs) -> np.ndarray:
        """Synthesize a (complex) field from basis coefficients."""
        c = np.asarray(coeffs)
        full = np.zeros(c.shape[:-1] + (self.n * self.n,), dtype=complex)
        full[..., self.flat_index] = c
        full = full.reshape(c.shape[:-1] + (self.n, self.n))
        return np.fft.ifft2(full) / self._scale

    def to_grid_real(self, coeffs) -> np.ndarray:
        return self.to_grid(coeffs).real

    def full_coefficients(self, field) -> np.ndarray:
        """All ``n x n`` normalized Fourier coefficients of a grid field."""
        return np.fft.fft2(field) * self._scale

    def from_grid(self, field, dealias: bool = False) -> np.ndarray:
        """Project a grid field onto the retained basis modes."""
        full = self.full_coefficients(field)
        if dealias:
            full = full * self.dealias_mask
        return full.reshape(full.shape[:-2] + (self.n * self.n,))[..., self.flat_index]


def basis_transforms(basis: FourierBasis, grid_size: int):
    """Return ``(forward, inverse)``: grid field -> coefficients and back."""
    grid = TorusGrid(basis, grid_size)
    return grid.from_grid, grid.to_grid


class CoupledSpectrum:
    """Per-mode eigen-structure of the coupled operator.

    Built either on a ``FourierBasis`` or on a synthetic list of sigma values.
    """

    def __init__(self, params: PhysicalParams, sigma, basis: FourierBasis | None = None):
        self.params = params
        self.basis = basis
        self.sigma = np.array(sigma, dtype=float)
        if self.sigma.ndim != 1 or np.any(self.sigma <= 0):
            raise ValueError("sigma must be a 1-D array of positive values")
        self.mu_plus, self.mu_minus = coupled_eigenvalues(self.sigma, params)
        self.defective = _is_defective(self.sigma, params, self.mu_plus, self.mu_minus)
        for arr in (self.sigma, self.mu_plus, self.mu_minus, self.defective):
            arr.setflags(write=False)

    @classmethod
    def from_basis(cls, params: PhysicalParams, basis: FourierBasis) -> CoupledSpectrum:
        return cls(params, basis.sigma, basis)

    @classmethod
    def from_sigma(cls, params: PhysicalParams, sigma) -> CoupledSpectrum:
        return cls(params, sigma)

    def __len__(self):
        return len(self.sigma)

    @property
    def eigenvalues(self) -> np.ndarray:
        """Shape (M, 2): columns are mu_plus, mu_minus."""
        return np.stack([self.mu_plus, self.mu_minus], axis=1)

    def require_nondefective(self, indices=None):
        d = self.defective if indices is None else self.defective[np.asarray(indices, dtype=int)]
        if np.any(d):
            bad = self.sigma if indices is None else self.sigma[np.asarray(indices, dtype=int)]
            raise DefectivePair(float(bad[d][0]))

    @cached_property
    def _vectors(self):
        self.require_nondefective()
        return _family_vectors(self.sigma, self.params, self.mu_plus, self.mu_minus)

    @property
    def zeta(self) -> np.ndarray:
        """Eigenvector coefficients, shape (M, 2 branches, 2 components)."""
        return self._vectors[0]

    @property
    def zeta_star(self) -> np.ndarray:
        """Adjoint eigenvector coefficients, shape (M, 2 branches, 2 components)."""
        return self._vectors[1]

    @property
    def pairs(self) -> list[CoupledEigenpair]:
        out = []
        for i, s in enumerate(self.sigma):
            if self.defective[i]:
                out.append(CoupledEigenpair(s, self.mu_plus[i], self.mu_minus[i], True))
            else:
                out.append(eigenfamily(s, self.params))
        return out

    def biorthogonality_residual(self) -> float:
        """max |<zeta_a, zeta*_b> - delta_ab| over all modes and branch pairs."""
        gram = np.einsum("mac,mbc->mab", self.zeta, np.conj(self.zeta_star))
        return float(np.max(np.abs(gram - np.eye(2))))


def _state_components(state):
    if hasattr(state, "z") and hasattr(state, "w"):
        return np.asarray(state.z), np.asarray(state.w)
    z, w = state
    return np.asarray(z), np.asarray(w)


def riesz_expand(state, spectrum: CoupledSpectrum) -> np.ndarray:
    """Coefficients ``a[n, b] = <(z_n, w_n), zeta*_{n,b}>`` (b = 0 for +, 1 for -)."""
    z, w = _state_components(state)
    if z.shape[-1] != len(spectrum) or w.shape[-1] != len(spectrum):
        raise ValueError("state size does not match spectrum")
    zs = np.conj(spectrum.zeta_star)
    return z[..., None] * zs[:, :, 0] + w[..., None] * zs[:, :, 1]


def riesz_reconstruct(coefficients, spectrum: CoupledSpectrum):
    """Inverse of :func:`riesz_expand`; returns ``(z, w)``."""
    a = np.asarray(coefficients)
    zeta = spectrum.zeta
    z = np.sum(a * zeta[:, :, 0], axis=-1)
    w = np.sum(a * zeta[:, :, 1], axis=-1)
    return z, w


def riesz_bounds(spectrum: CoupledSpectrum) -> tuple[float, float]:
    """Bracket for ``||x||^2 / sum |a|^2`` from the per-mode eigenvector matrices."""
    sv = np.linalg.svd(np.swapaxes(spectrum.zeta, 1, 2), compute_uv=False)
    return float(np.min(sv[:, -1]) ** 2), float(np.max(sv[:, 0]) ** 2)
