"""Nonlinearities (Phi, sigma, nu), the relative entropy, and assumption checks.

The model family is the power law Phi(x) = x^m with sigma = Phi^(1/2) and
drift nu = c_nu * Phi, for m >= 1.  Arbitrary increasing nonlinearities can be
supplied as a two-column table (x, Phi(x)) and are interpolated monotonically.

The relative entropy with respect to the reference density gamma is the
convex function vanishing at gamma with derivative log(Phi(x) / Phi(gamma));
its delta-regularized variant uses log((Phi(x) + delta) / Phi(gamma)).  In
the power-law case with delta = 0 the closed form is
m * (x log(x / gamma) - (x - gamma)).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.special import xlogy

from .errors import ConfigurationError, DomainError

__all__ = [
    "NonlinearitySpec",
    "EntropyFunction",
    "AssumptionCheck",
    "AssumptionReport",
    "check_assumptions",
]


def _as_checked_array(xi):
    x = np.asarray(xi, dtype=np.float64)
    if np.any(x < 0):
        raise DomainError("nonlinearities are defined on [0, inf) only")
    return x


@dataclass(frozen=True, eq=False)
class NonlinearitySpec:
    """The triple (Phi, sigma, nu) with reference density gamma.

    Use the ``power_law`` or ``from_table`` constructors; the default
    constructor fields are shared plumbing.
    """

    family: str
    gamma: float
    c_nu: float = 0.0
    m: float | None = None
    _phi_interp: object = None
    _phi_deriv: object = None
    _xi_max: float | None = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")
        if self.c_nu < 0:
            raise ConfigurationError(f"c_nu must be nonnegative, got {self.c_nu}")

    @classmethod
    def power_law(cls, m: float, gamma: float, c_nu: float = 0.0) -> "NonlinearitySpec":
        if m < 1:
            raise ConfigurationError(f"power-law exponent must satisfy m >= 1, got {m}")
        return cls(family="power_law", gamma=gamma, c_nu=c_nu, m=float(m))

    @classmethod
    def from_table(cls, xi, phi, gamma: float, c_nu: float = 0.0) -> "NonlinearitySpec":
        xi = np.asarray(xi, dtype=np.float64)
        phi = np.asarray(phi, dtype=np.float64)
        if xi.ndim != 1 or xi.shape != phi.shape or xi.size < 4:
            raise ConfigurationError("table needs matching 1d arrays with >= 4 rows")
        if xi[0] != 0.0 or phi[0] != 0.0:
            raise ConfigurationError("table must start at (0, 0)")
        if np.any(np.diff(xi) <= 0):
            raise ConfigurationError("table abscissae must be strictly increasing")
        # Decreasing stretches are rejected outright; flat (non-strict)
        # stretches are tolerated here so the assumption checker can flag
        # Phi' = 0 instead of the constructor.
        if np.any(np.diff(phi) < 0):
            raise ConfigurationError("table values must be non-decreasing")
        if phi[-1] <= 0:
            raise ConfigurationError("table must reach a positive value")
        interp = PchipInterpolator(xi, phi, extrapolate=False)
        if gamma > xi[-1]:
            raise ConfigurationError("gamma lies outside the tabulated range")
        return cls(
            family="custom",
            gamma=gamma,
            c_nu=c_nu,
            _phi_interp=interp,
            _phi_deriv=interp.derivative(),
            _xi_max=float(xi[-1]),
        )

    @classmethod
    def from_csv(cls, path, gamma: float, c_nu: float = 0.0) -> "NonlinearitySpec":
        """Two-column CSV (xi, Phi(xi)); a header row is skipped if non-numeric."""
        xs, ps = [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                try:
                    x, p = float(row[0]), float(row[1])
                except ValueError:
                    continue
                xs.append(x)
                ps.append(p)
        return cls.from_table(np.array(xs), np.array(ps), gamma, c_nu)

    # -- evaluation ------------------------------------------------------------

    def _check_range(self, x):
        if self.family == "custom" and np.any(x > self._xi_max):
            raise DomainError(
                f"input exceeds tabulated range (max {self._xi_max:.6g})"
            )

    def phi(self, xi):
        x = _as_checked_array(xi)
        self._check_range(x)
        if self.family == "power_law":
            return x**self.m
        return self._phi_interp(x)

    def phi_prime(self, xi):
        x = _as_checked_array(xi)
        self._check_range(x)
        if self.family == "power_law":
            if self.m == 1.0:
                return np.ones_like(x)
            return self.m * x ** (self.m - 1.0)
        return self._phi_deriv(x)

    def phi_sqrt(self, xi):
        x = _as_checked_array(xi)
        self._check_range(x)
        if self.family == "power_law":
            return x ** (self.m / 2.0)
        return np.sqrt(self._phi_interp(x))

    def sigma(self, xi):
        """Noise coefficient; the model choice is sigma = Phi^(1/2)."""
        return self.phi_sqrt(xi)

    def sigma_prime(self, xi):
        x = _as_checked_array(xi)
        self._check_range(x)
        if self.family == "power_law":
            p = self.m / 2.0 - 1.0
            if p == 0.0:
                return np.full_like(x, self.m / 2.0)
            with np.errstate(divide="ignore"):
                return (self.m / 2.0) * x**p
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._phi_deriv(x) / (2.0 * np.sqrt(self._phi_interp(x)))

    def nu(self, xi):
        """Drift magnitude, applied identically to every component."""
        if self.c_nu == 0.0:
            return np.zeros_like(_as_checked_array(xi))
        return self.c_nu * self.phi(xi)

    def phi_at_gamma(self) -> float:
        return float(self.phi(np.asarray(self.gamma)))


@dataclass(frozen=True, eq=False)
class EntropyFunction:
    """Relative entropy of a density against the constant reference gamma.

    delta = 0 is the plain entropy; delta > 0 regularizes the derivative to
    log((Phi + delta) / Phi(gamma)), always normalized to vanish at gamma.
    """

    spec: NonlinearitySpec
    delta: float = 0.0

    def __post_init__(self):
        if self.delta < 0:
            raise ConfigurationError(f"delta must be nonnegative, got {self.delta}")
        object.__setattr__(self, "_cache", None)  # (x_max, interpolant)

    def psi(self, xi):
        x = _as_checked_array(xi)
        spec = self.spec
        if spec.family == "power_law" and self.delta == 0.0:
            g = spec.gamma
            return spec.m * (xlogy(x, x / g) - (x - g))
        if x.size > 8:
            return self._psi_interpolated(x)
        return self._psi_quadrature(x)

    def _psi_interpolated(self, x):
        """Dense cumulative table of psi, built once and reused on field-sized input."""
        xmax = float(np.max(x)) if x.size else 1.0
        cache = self._cache
        if cache is None or cache[0] < xmax:
            top = max(2.0 * self.spec.gamma, 1.5 * xmax)
            if self.spec.family == "custom":
                top = min(top, self.spec._xi_max)
            g = self.spec.gamma
            nodes = np.unique(np.concatenate([
                [0.0], np.geomspace(top * 1e-12, top, 1024),
                np.linspace(0.0, top, 2049), [g],
            ]))
            log_phig = np.log(self.spec.phi_at_gamma())

            def integrand(u):
                return np.log(self.spec.phi(u) + self.delta) - log_phig

            gaps = np.array([
                _gauss_panel(integrand, a, b, n=16)
                for a, b in zip(nodes[:-1], nodes[1:])
            ])
            anchor = int(np.searchsorted(nodes, g))
            vals = np.zeros_like(nodes)
            vals[anchor:] = np.concatenate([[0.0], np.cumsum(gaps[anchor:])])
            vals[:anchor] = -np.cumsum(gaps[:anchor][::-1])[::-1]
            interp = PchipInterpolator(nodes, vals, extrapolate=False)
            cache = (top, interp)
            object.__setattr__(self, "_cache", cache)
        return np.maximum(cache[1](x), 0.0)

    def psi_prime(self, xi):
        x = _as_checked_array(xi)
        spec = self.spec
        if spec.family == "power_law" and self.delta == 0.0:
            with np.errstate(divide="ignore"):
                return spec.m * np.log(x / spec.gamma)
        with np.errstate(divide="ignore"):
            return np.log((spec.phi(x) + self.delta) / spec.phi_at_gamma())

    def _psi_quadrature(self, x):
        # integral of psi' from gamma, Gauss-Legendre per element; the
        # integrand's log singularity at 0 (delta = 0) is integrable, and the
        # panel split below keeps the quadrature accurate near the origin.
        scalar = x.ndim == 0
        flat = np.atleast_1d(x).astype(np.float64)
        out = np.empty_like(flat)
        for i, xv in enumerate(flat):
            out[i] = self._psi_scalar(float(xv))
        res = out.reshape(np.shape(x)) if not scalar else float(out[0])
        return res

    def _psi_scalar(self, xv: float) -> float:
        g = self.spec.gamma
        if xv == g:
            return 0.0
        log_phig = np.log(self.spec.phi_at_gamma())

        def integrand(u):
            return np.log(self.spec.phi(u) + self.delta) - log_phig

        lo, hi = (xv, g) if xv < g else (g, xv)
        sign = -1.0 if xv < g else 1.0
        if self.delta > 0 or lo >= g / 8.0:
            val = _gauss_panel(integrand, lo, hi)
        else:
            # split off the near-origin stretch and refine it geometrically
            split = g / 8.0
            val = _gauss_panel(integrand, split, hi)
            edges = np.geomspace(max(lo, 1e-300), split, 24)
            for a, b in zip(edges[:-1], edges[1:]):
                val += _gauss_panel(integrand, a, b)
            if lo == 0.0:
                # limit contribution of [0, edges[0]] vanishes for integrable logs
                val += _gauss_panel(integrand, 1e-300, edges[0]) if edges[0] > 1e-300 else 0.0
        return sign * val


@lru_cache(maxsize=8)
def _gl_nodes(n=64):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _gauss_panel(f, a, b, n=64):
    if b <= a:
        return 0.0
    x, w = _gl_nodes(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return float(half * np.sum(w * f(mid + half * x)))


# -- numerical assumption checks -------------------------------------------------


@dataclass
class AssumptionCheck:
    name: str
    constant: float
    passed: bool
    detail: str = ""

    def as_dict(self):
        return {
            "name": self.name,
            "constant": self.constant,
            "passed": bool(self.passed),
            "detail": self.detail,
        }


@dataclass
class AssumptionReport:
    checks: list
    threshold: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self):
        return {
            "threshold": self.threshold,
            "passed": self.passed,
            "checks": [c.as_dict() for c in self.checks],
        }


def check_assumptions(spec: NonlinearitySpec, xi_grid, threshold: float = 1e3) -> AssumptionReport:
    """Empirical sups of the structural conditions on (Phi, sigma, nu).

    Purely advisory: each ratio is evaluated on the supplied grid and compared
    against the user threshold.  Where a condition only asserts existence of
    constants, the best empirical constant over a small exponent grid is
    reported.  The grid must be positive, ascending, and reach near zero.
    """
    xi = np.asarray(xi_grid, dtype=np.float64)
    if xi.size < 8 or np.any(xi <= 0) or np.any(np.diff(xi) <= 0):
        raise ConfigurationError("xi grid must be positive, ascending, with >= 8 points")

    checks: list[AssumptionCheck] = []
    phi = spec.phi(xi)
    phip = spec.phi_prime(xi)
    phis = spec.phi_sqrt(xi)
    sig = spec.sigma(xi)
    nu = np.abs(spec.nu(xi))
    g = spec.gamma

    def add(name, constant, passed=None, detail=""):
        constant = float(constant)
        if passed is None:
            passed = np.isfinite(constant) and constant <= threshold
        checks.append(AssumptionCheck(name, constant, bool(passed), detail))

    zero_origin = max(abs(float(spec.phi(np.float64(0.0)))),
                      abs(float(spec.sigma(np.float64(0.0)))),
                      abs(float(spec.nu(np.float64(0.0)))))
    add("zero_at_origin", zero_origin, zero_origin < 1e-12)

    min_slope = float(np.min(phip))
    add("phi_strictly_increasing", min_slope, min_slope > 0.0,
        detail="min Phi' over grid")

    near = xi <= min(1.0, g)
    if not near.any():
        near = xi <= xi[max(1, xi.size // 8)]
    add("sigma_sq_over_xi_near_zero", np.max(sig[near] ** 2 / xi[near]))

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = phi / (xi * phip)
    add("phi_over_xi_phi_prime", np.nanmax(np.where(np.isfinite(ratio), ratio, np.inf)))

    run_sig = np.maximum.accumulate(sig**2)
    add("sigma_sq_running_sup", np.max(run_sig / (1.0 + xi + sig**2)))
    run_nu = np.maximum.accumulate(nu)
    add("nu_running_sup", np.max(run_nu / (1.0 + xi + nu)))

    upper = xi >= np.median(xi)
    if np.count_nonzero(upper) >= 4 and np.all(phi[upper] > 0):
        slope = np.polyfit(np.log(xi[upper]), np.log(phi[upper]), 1)[0]
        p_est = max(1.0, float(slope))
        add("phi_polynomial_growth", np.max(phi / (1.0 + xi**p_est)),
            detail=f"p={p_est:.3g}")
    else:
        add("phi_polynomial_growth", np.inf, False, detail="grid too short to fit p")

    hi = min(1.0, float(xi[-1]))
    try:
        val, _ = quad(lambda u: abs(np.log(max(float(spec.phi(np.float64(u))), 1e-300))),
                      xi[0] * 0.5, hi, limit=200)
        add("log_phi_locally_integrable", val, np.isfinite(val))
    except Exception as exc:  # quadrature blowup means non-integrable in practice
        add("log_phi_locally_integrable", np.inf, False, detail=str(exc))

    mm = spec.m if spec.m is not None else 1.0
    clamp = np.clip(xi, g / 2.0, 3.0 * g / 2.0)
    lhs = np.abs(phis - spec.phi_sqrt(clamp))
    denom = np.abs(xi - clamp) ** (mm / 2.0) + (np.abs(xi - g) >= g / 2.0)
    mask = denom > 0
    add("phi_sqrt_local_holder",
        np.max(lhs[mask] / denom[mask]) if mask.any() else 0.0,
        detail=f"exponent m/2 with m={mm:.3g}")

    best_a = np.inf
    best_theta = None
    for theta in np.linspace(0.0, 0.5, 11):
        c = np.max(phip / (phis * xi ** (-theta)))
        if c < best_a:
            best_a, best_theta = float(c), float(theta)
    sub = xi[:: max(1, xi.size // 128)]
    ps = spec.phi_sqrt(sub)
    dx = np.abs(sub[:, None] - sub[None, :])
    dps2 = (ps[:, None] - ps[None, :]) ** 2
    iu = np.triu_indices(sub.size, k=1)
    best_b = np.inf
    best_q = None
    for qq in (1.0, 1.5, 2.0, 3.0, 4.0):
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.max(dx[iu] ** qq / dps2[iu])
        if np.isfinite(c) and c < best_b:
            best_b, best_q = float(c), qq
    branch = (f"theta={best_theta:.2g}" if best_a <= best_b else f"q={best_q:.2g}")
    add("phi_prime_ratio", min(best_a, best_b), detail=branch)

    pos = phi > 0
    add("sigma_bounded_by_phi_sqrt", np.max(sig[pos] / phis[pos]))
    add("nu_bounded_by_phi", np.max(nu[pos] / phi[pos]) if spec.c_nu > 0 else 0.0)

    best_g = np.inf
    best_gq = None
    for qq in np.arange(0.0, 2.0, 0.25):
        c = np.max(phip / (1.0 + phis**qq))
        if c < best_g:
            best_g, best_gq = float(c), float(qq)
    add("phi_prime_growth", best_g, detail=f"q={best_gq:.3g}")

    slopes = np.diff(phis) / np.diff(xi)
    second = np.diff(slopes)  # divided differences: grid may be non-uniform
    tol = 1e-9 * max(1.0, float(np.max(np.abs(slopes))))
    if np.all(second <= tol):
        shape = "concave"
        best = np.inf
        for p in (2.0, 3.0, 4.0, 6.0, 8.0):
            c = np.max((phis / phip) ** p / (xi + 1.0))
            best = min(best, float(c))
        add("sqrt_phi_shape", best, detail=shape)
    elif np.all(second >= -tol):
        shape = "convex"
        mask = xi >= min(1.0, float(xi[-1]) / 2)
        shifted = np.clip(xi[mask] + 1.0, None, spec._xi_max or np.inf)
        c1 = np.max(spec.phi(shifted) / phi[mask])
        c2 = np.max(phis[mask] / phip[mask])
        add("sqrt_phi_shape", max(float(c1), float(c2)), detail=shape)
    else:
        add("sqrt_phi_shape", np.inf, False, detail="neither concave nor convex")

    return AssumptionReport(checks=checks, threshold=threshold)
