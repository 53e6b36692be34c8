"""Independent oracles used by the test suite.

These deliberately avoid the package's own discretizations: the heat
semigroup is spectral, entropies come from adaptive quadrature, and
derivatives from finite differences.
"""

import numpy as np
from scipy.integrate import quad


def heat_exact(values0, grid, t):
    """Exact periodic heat semigroup applied to grid samples (spectral)."""
    v = np.asarray(values0, dtype=np.float64)
    k1 = 2.0 * np.pi * np.fft.fftfreq(grid.N, d=grid.h)
    if grid.d == 1:
        ksq = k1**2
    else:
        kx, ky = np.meshgrid(k1, k1, indexing="ij")
        ksq = kx**2 + ky**2
    return np.real(np.fft.ifftn(np.fft.fftn(v) * np.exp(-ksq * t)))


def psi_quadrature(spec_phi, gamma, xi, delta=0.0):
    """Relative entropy by adaptive quadrature of its derivative."""
    log_pg = np.log(spec_phi(gamma) + 0.0)

    def dpsi(u):
        return np.log(spec_phi(u) + delta) - log_pg

    val, _ = quad(dpsi, gamma, xi, limit=400)
    return val


def gaussian_bump(grid, amplitude, width, center=None, gamma=1.0):
    """gamma + amplitude * exp(-|x - center|^2 / (2 width^2)) on the grid."""
    if center is None:
        center = [0.0] * grid.d
    center = np.atleast_1d(center)
    r2 = np.zeros(grid.shape)
    for a, x in enumerate(grid.coords()):
        r2 += (x - center[a]) ** 2
    return gamma + amplitude * np.exp(-r2 / (2.0 * width**2))


def fit_loglog_slope(xs, ys):
    xs = np.log(np.asarray(xs, dtype=float))
    ys = np.log(np.asarray(ys, dtype=float))
    return float(np.polyfit(xs, ys, 1)[0])
