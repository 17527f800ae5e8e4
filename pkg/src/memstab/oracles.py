"""Independent reference computations used to cross-check the fast paths.

Nothing here is used by the production code path; each function recomputes a
quantity by a deliberately different route (dense eigensolves, quadrature,
brute-force sums, adaptive ODE integration).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from .spectral import TWO_PI, FourierBasis, PhysicalParams


def block_eigenvalues(sigma, params: PhysicalParams) -> np.ndarray:
    """Eigenvalues of the per-mode 2x2 blocks by a dense eigensolver, as columns
    (mu_plus, mu_minus) ordered by real part, then imaginary part, descending."""
    s = np.atleast_1d(np.asarray(sigma, dtype=float))
    return block_eigenvalues_batch(
        np.full(s.shape, params.eta), np.full(s.shape, params.kappa), np.full(s.shape, params.lambda_), s
    )


def block_eigenvalues_batch(eta, kappa, lambda_, sigma) -> np.ndarray:
    """Same as :func:`block_eigenvalues` with one parameter set per entry."""
    s = np.asarray(sigma, dtype=float)
    blocks = np.zeros((len(s), 2, 2))
    blocks[:, 0, 0] = -np.asarray(eta) * s
    blocks[:, 0, 1] = -np.asarray(kappa) * s
    blocks[:, 1, 0] = 1.0
    blocks[:, 1, 1] = -np.asarray(lambda_)
    ev = np.linalg.eigvals(blocks).astype(complex)
    swap = (ev[:, 1].real > ev[:, 0].real) | (
        (ev[:, 1].real == ev[:, 0].real) & (ev[:, 1].imag > ev[:, 0].imag)
    )
    ev[swap] = ev[swap][:, ::-1]
    return ev


def discriminant_sign_changes(params: PhysicalParams, lo: float, hi: float, samples: int = 200001):
    """Locate sign changes of the discriminant on [lo, hi] by scanning + bisection."""
    def disc(s):
        b = params.lambda_ + params.eta * s
        return b * b - 4.0 * s * (params.eta * params.lambda_ + params.kappa)

    grid = np.linspace(lo, hi, samples)
    vals = disc(grid)
    roots = []
    for i in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
        a, b = grid[i], grid[i + 1]
        for _ in range(200):
            m = 0.5 * (a + b)
            if np.sign(disc(m)) == np.sign(disc(a)):
                a = m
            else:
                b = m
        roots.append(0.5 * (a + b))
    return roots


def gauss_legendre_rect(a1, b1, a2, b2, n: int = 256):
    """Tensor Gauss-Legendre nodes and weights on a rectangle."""
    x, w = np.polynomial.legendre.leggauss(n)
    x1 = 0.5 * (b1 - a1) * (x + 1) + a1
    x2 = 0.5 * (b2 - a2) * (x + 1) + a2
    w1 = 0.5 * (b1 - a1) * w
    w2 = 0.5 * (b2 - a2) * w
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    W = np.outer(w1, w2)
    return np.stack([X1.ravel(), X2.ravel()], axis=1), W.ravel()


def mode_matrix(basis: FourierBasis, points) -> np.ndarray:
    """``Phi[k, j] = phi_k(x_j)``."""
    pts = np.asarray(points)
    phase = np.outer(basis.modes[:, 0], pts[:, 0]) + np.outer(basis.modes[:, 1], pts[:, 1])
    return np.exp(1j * phase) / TWO_PI


def quadrature_gram(region, basis: FourierBasis, n: int = 256) -> np.ndarray:
    """``G[k, n] = int_O phi_n conj(phi_k)`` by 2-D Gauss-Legendre quadrature."""
    pts, wts = gauss_legendre_rect(region.a1, region.b1, region.a2, region.b2, n)
    phi = mode_matrix(basis, pts)
    return (phi.conj() * wts) @ phi.T


def masked_projection(region, basis: FourierBasis, coeffs, n: int = 64) -> np.ndarray:
    """Coefficients of ``chi_O * v`` on the retained modes, by quadrature over O."""
    pts, wts = gauss_legendre_rect(region.a1, region.b1, region.a2, region.b2, n)
    phi = mode_matrix(basis, pts)
    field = np.asarray(coeffs) @ phi
    return (phi.conj() * wts) @ field


def contour_projector(A, center: complex, radius: float, nodes: int = 64) -> np.ndarray:
    """Riesz projector ``(1/2 pi i) \\oint (mu - A)^{-1} d mu`` on a circle, trapezoid rule."""
    n = A.shape[0]
    eye = np.eye(n)
    out = np.zeros((n, n), dtype=complex)
    for theta in TWO_PI * np.arange(nodes) / nodes:
        e = radius * np.exp(1j * theta)
        out += e * np.linalg.solve((center + e) * eye - A, eye)
    return out / nodes


def contour_projector_union(A, circles, nodes: int = 64) -> np.ndarray:
    """Sum of circle projectors over disjoint ``(center, radius)`` circles."""
    return sum(contour_projector(A, c, r, nodes) for c, r in circles)


def cost_quadrature(A_cl, K, x0, horizon: float, dt: float) -> float:
    """``int_0^T (|x|^2 + |K x|^2) dt`` along ``x' = A_cl x`` (composite Simpson)."""
    steps = int(round(horizon / dt))
    if steps % 2:
        steps += 1
    prop = sla.expm(A_cl * dt)
    x = np.asarray(x0, dtype=complex)
    vals = np.empty(steps + 1)
    for i in range(steps + 1):
        vals[i] = np.vdot(x, x).real + np.vdot(K @ x, K @ x).real
        x = prop @ x
    w = np.ones(steps + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float(dt / 3.0 * np.dot(w, vals))


def convolution_product(basis: FourierBasis, a, b) -> np.ndarray:
    """Coefficients on the retained modes of the product of two fields, by
    brute-force sum over all mode pairs: ``c_k = (1/2pi) sum_{p+q=k} a_p b_q``."""
    out = np.zeros(basis.size, dtype=complex)
    lookup = {(int(k1), int(k2)): i for i, (k1, k2) in enumerate(basis.modes)}
    for i, p in enumerate(basis.modes):
        if a[i] == 0:
            continue
        for j, q in enumerate(basis.modes):
            idx = lookup.get((int(p[0] + q[0]), int(p[1] + q[1])))
            if idx is not None:
                out[idx] += a[i] * b[j]
    return out / TWO_PI


def advection_by_convolution(basis: FourierBasis, u_hat, v_hat) -> np.ndarray:
    """``u . grad v`` with ``u_hat`` of shape (2, M), via convolution sums."""
    k = basis.modes
    dv1 = 1j * k[:, 0] * v_hat
    dv2 = 1j * k[:, 1] * v_hat
    return convolution_product(basis, u_hat[0], dv1) + convolution_product(basis, u_hat[1], dv2)


def streamfunction_velocity(w_field) -> np.ndarray:
    """Velocity on the physical grid from a vorticity grid field.

    Solves ``-Lap psi = w`` with a full-grid FFT (mean set to zero) and
    differentiates ``u = (d2 psi, -d1 psi)``; returns shape (2, n, n).
    """
    w_field = np.asarray(w_field)
    n = w_field.shape[0]
    k = np.fft.fftfreq(n, d=1.0 / n)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    lap = k1**2 + k2**2
    lap[0, 0] = 1.0
    psi = np.fft.fft2(w_field) / lap
    psi[0, 0] = 0.0
    u1 = np.fft.ifft2(1j * k2 * psi)
    u2 = np.fft.ifft2(-1j * k1 * psi)
    return np.stack([u1, u2])


def spectral_curl(basis: FourierBasis, u_hat) -> np.ndarray:
    return 1j * basis.modes[:, 0] * u_hat[1] - 1j * basis.modes[:, 1] * u_hat[0]


def ode_reference(rhs, y0, t_end: float, rtol: float = 1e-12, atol: float = 1e-14):
    """High-order adaptive integration (DOP853) of ``y' = rhs(t, y)``."""
    sol = solve_ivp(rhs, (0.0, t_end), np.asarray(y0, dtype=complex), method="DOP853",
                    rtol=rtol, atol=atol)
    return sol.y[:, -1]


def trapezoid_memory(z_history, lambda_: float, dt: float) -> np.ndarray:
    """Direct composite-trapezoid evaluation of ``int_0^t e^{-lambda(t-s)} z(s) ds``
    at every sample time (O(T^2) reference, no recursion)."""
    z = np.asarray(z_history)
    out = np.zeros_like(z, dtype=complex)
    for n in range(1, len(z)):
        s = dt * np.arange(n + 1)
        ker = np.exp(-lambda_ * (s[-1] - s))
        w = np.full(n + 1, dt)
        w[0] = w[-1] = 0.5 * dt
        out[n] = np.tensordot(w * ker, z[: n + 1], axes=(0, 0))
    return out
