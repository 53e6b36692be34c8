"""Checkable functionals of trajectories: entropy, dissipation, kinetic identity,
tail estimates.

The central object is the running energy

    E(t) = integral Psi(rho_t) + integral_0^t integral |grad Phi^(1/2)(rho_s)|^2 ds,

whose maximum over the horizon is compared against a budget assembled from the
initial entropy and the noise's quadratic variations.  For deterministic runs
E is non-increasing, so the fitted constant (max E) / budget stays at or below
one; for noisy runs only the stability of the fitted constant across parameter
sweeps is meaningful, since the true constant is existential.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .grid import Field, face_diff, grad_values, l1_distance, trapezoid
from .noise import DivQVResult, div_quadratic_variation

__all__ = [
    "entropy_of",
    "dissipation_of",
    "dissipation_values",
    "EntropyReport",
    "entropy_estimate_check",
    "entropy_estimate_ensemble",
    "KineticSlice",
    "kinetic_l1_identity",
    "measure_tail",
    "measure_tail_ensemble",
    "VanishingReport",
    "vanishing_at_infinity_check",
    "inverse_density_dissipation",
]


def entropy_of(field: Field, ent) -> float:
    """Midpoint quadrature of the relative entropy Psi(rho)."""
    vals = np.maximum(field.values, 0.0)
    return float(np.sum(ent.psi(vals)) * field.grid.cell_volume)


def dissipation_values(values: np.ndarray, spec, h: float) -> float:
    """Quadrature of |grad Phi^(1/2)(rho)|^2 from face differences.

    Only differences of Phi^(1/2) across faces enter, so the result is exactly
    invariant under adding a constant to the tabulated square root.
    """
    ps = spec.phi_sqrt(np.maximum(values, 0.0))
    total = 0.0
    d = values.ndim
    for a in range(d):
        total += float(np.sum(face_diff(ps, a, h) ** 2))
    return total * h**d


def dissipation_of(field: Field, spec) -> float:
    return dissipation_values(field.values, spec, field.grid.h)


# -- entropy estimate ---------------------------------------------------------


@dataclass
class EntropyReport:
    """LHS, budget, and fitted constant of the entropy dissipation estimate."""

    sup_entropy: float
    cumulative_dissipation: float
    lhs: float                   # max_t [entropy(t) + dissipation_cum(t)]
    rhs_budget: float
    fitted_c: float
    initial_entropy: float
    qv: float                    # effective quadratic variation (eps-scaled)
    divqv_l1: float
    divqv_linf: float
    d: int
    theta: float
    q: float
    n_runs: int = 1
    context: dict | None = None

    def as_dict(self):
        out = {k: getattr(self, k) for k in (
            "sup_entropy", "cumulative_dissipation", "lhs", "rhs_budget",
            "fitted_c", "initial_entropy", "qv", "divqv_l1", "divqv_linf",
            "d", "theta", "q", "n_runs")}
        if self.context:
            out["context"] = self.context
        return out


def _running_energy(traj, ent):
    """Per-step entropy + cumulative dissipation, recomputed if ent differs
    from the delta = 0 entropy recorded during the run."""
    if len(traj.times) == 0 or traj.states.shape[0] == 0:
        raise ConfigurationError("empty trajectory")
    if getattr(ent, "delta", 0.0) == 0.0 and "entropy" in traj.diag:
        ents = traj.diag["entropy"]
        diss = traj.diag["dissipation_cum"]
        return ents, diss
    vol = traj.grid.cell_volume
    ents = np.array([
        float(np.sum(ent.psi(np.maximum(s, 0.0))) * vol) for s in traj.states
    ])
    diss_steps = np.array([
        dissipation_values(s, traj.spec, traj.grid.h) for s in traj.states
    ])
    diss = np.concatenate([[0.0], np.cumsum(
        0.5 * (diss_steps[1:] + diss_steps[:-1]) * np.diff(traj.times))])
    return ents, diss


def _entropy_budget(initial_entropy, qv_eff, divqv_l1, divqv_linf, d, A,
                    theta, q):
    if d == 1:
        power = 2.0 / (2.0 - q)
        return initial_entropy + 1.0 + qv_eff + divqv_l1 + divqv_l1**power
    return (initial_entropy + 1.0 + np.sqrt(qv_eff) * A**-0.5 + qv_eff / A
            + divqv_l1 + divqv_linf**theta)


def _effective_divqv(traj, params, divqv, divqv_samples):
    eps = traj.config.eps
    if eps == 0.0:
        return 0.0, 0.0
    if divqv is None:
        divqv = div_quadratic_variation(params, traj.grid, divqv_samples)
    return eps * divqv.l1, eps * divqv.linf


def entropy_estimate_check(traj, params, ent, theta: float = 1.0, q: float = 1.0,
                           divqv: DivQVResult | None = None,
                           divqv_samples: int = 200) -> EntropyReport:
    """Assemble both sides of the entropy dissipation estimate for one run.

    The exponents theta (d = 2 sup-norm term) and q (d = 1 power) are not
    pinned by theory; they default to 1 and are exposed for sensitivity
    sweeps.
    """
    if not (0.0 <= q < 2.0):
        raise ConfigurationError(f"q must lie in [0, 2), got {q}")
    ents, diss = _running_energy(traj, ent)
    lhs_curve = ents + diss
    lhs = float(np.max(lhs_curve))
    e0 = float(ents[0])
    eps = traj.config.eps
    qv_eff = eps * params.a_norm_sq
    divqv_l1, divqv_linf = _effective_divqv(traj, params, divqv, divqv_samples)
    rhs = float(_entropy_budget(e0, qv_eff, divqv_l1, divqv_linf,
                                traj.grid.d, params.A, theta, q))
    return EntropyReport(
        sup_entropy=float(np.max(ents)),
        cumulative_dissipation=float(diss[-1]),
        lhs=lhs, rhs_budget=rhs, fitted_c=lhs / rhs,
        initial_entropy=e0, qv=qv_eff,
        divqv_l1=divqv_l1, divqv_linf=divqv_linf,
        d=traj.grid.d, theta=theta, q=q,
    )


def entropy_estimate_ensemble(trajs, params, ent, theta: float = 1.0,
                              q: float = 1.0,
                              divqv: DivQVResult | None = None,
                              divqv_samples: int = 200) -> EntropyReport:
    """Ensemble-mean LHS against the common budget."""
    if not trajs:
        raise ConfigurationError("empty ensemble")
    if divqv is None and trajs[0].config.eps > 0:
        divqv = div_quadratic_variation(params, trajs[0].grid, divqv_samples)
    reports = [
        entropy_estimate_check(t, params, ent, theta, q, divqv, divqv_samples)
        for t in trajs
    ]
    lhs = float(np.mean([r.lhs for r in reports]))
    rhs = reports[0].rhs_budget
    base = reports[0]
    return EntropyReport(
        sup_entropy=float(np.mean([r.sup_entropy for r in reports])),
        cumulative_dissipation=float(np.mean([r.cumulative_dissipation for r in reports])),
        lhs=lhs, rhs_budget=rhs, fitted_c=lhs / rhs,
        initial_entropy=base.initial_entropy, qv=base.qv,
        divqv_l1=base.divqv_l1, divqv_linf=base.divqv_linf,
        d=base.d, theta=theta, q=q, n_runs=len(reports),
    )


# -- kinetic identity ----------------------------------------------------------


@dataclass
class KineticSlice:
    """A pair of densities with the closed-form velocity-overlap integrals.

    For nonnegative s, r the velocity integrals of the indicator lifting are
    integral chi(xi, s) dxi = s and integral chi(xi, s) chi(xi, r) dxi
    = min(s, r), so no velocity grid is ever materialized.
    """

    rho1: Field
    rho2: Field

    def __post_init__(self):
        if self.rho1.grid != self.rho2.grid:
            raise DomainError("kinetic slice needs a common grid")
        if np.any(self.rho1.values < 0) or np.any(self.rho2.values < 0):
            raise DomainError("kinetic overlap integrals require nonnegative densities")

    @property
    def self_overlap(self) -> np.ndarray:
        """Per-cell integral of chi_1^2 + chi_2^2 over the velocity variable."""
        return self.rho1.values + self.rho2.values

    @property
    def cross_overlap(self) -> np.ndarray:
        """Per-cell integral of chi_1 chi_2 over the velocity variable."""
        return np.minimum(self.rho1.values, self.rho2.values)

    def l1_identity(self) -> tuple[float, float]:
        vol = self.rho1.grid.cell_volume
        lhs = l1_distance(self.rho1, self.rho2)
        rhs = float(np.sum(self.self_overlap - 2.0 * self.cross_overlap) * vol)
        return lhs, rhs


def kinetic_l1_identity(rho1: Field, rho2: Field) -> tuple[float, float]:
    """L1 distance versus the squared L2 distance of the kinetic liftings.

    Exact identity per cell: |s - r| = s + r - 2 min(s, r); both sides are
    returned for comparison.
    """
    return KineticSlice(rho1, rho2).l1_identity()


# -- tail of the dissipation measure ---------------------------------------------


def _tail_integrand(values, spec, h, M):
    """integral over the band {M <= rho <= M+1} of Phi'(rho) |grad rho|^2."""
    indicator = (values >= M) & (values <= M + 1.0)
    if not indicator.any():
        return 0.0
    grad = grad_values(values, h)
    grad_sq = np.sum(grad**2, axis=0)
    return float(np.sum(spec.phi_prime(np.maximum(values, 0.0)) * grad_sq * indicator)
                 * h**values.ndim)


def measure_tail(traj, spec, params, M: float,
                 divqv: DivQVResult | None = None,
                 divqv_samples: int = 200) -> tuple[float, float]:
    """Tail dissipation against its budget for level M > gamma.

    lhs: time quadrature of the band dissipation above; rhs: initial excess
    mass above M plus the time quadrature of the effective divergence
    quadratic variation restricted to the band.
    """
    if M <= traj.gamma:
        raise DomainError(f"tail level M={M} must exceed gamma={traj.gamma}")
    h = traj.grid.h
    vol = traj.grid.cell_volume
    times = traj.times
    lhs_vals = np.array([_tail_integrand(s, spec, h, M) for s in traj.states])
    lhs = float(trapezoid(lhs_vals, times))
    rho0 = traj.states[0]
    rhs = float(np.sum(np.maximum(rho0 - M, 0.0)) * vol)
    eps = traj.config.eps
    if eps > 0.0:
        if divqv is None:
            divqv = div_quadratic_variation(params, traj.grid, divqv_samples)
        dq = eps * divqv.field.values
        band_vals = np.array([
            float(np.sum(dq * ((s >= M) & (s <= M + 1.0))) * vol)
            for s in traj.states
        ])
        rhs += float(trapezoid(band_vals, times))
    return lhs, rhs


def measure_tail_ensemble(trajs, spec, params, M: float,
                          divqv: DivQVResult | None = None,
                          divqv_samples: int = 200) -> tuple[float, float]:
    if not trajs:
        raise ConfigurationError("empty ensemble")
    if divqv is None and trajs[0].config.eps > 0:
        divqv = div_quadratic_variation(params, trajs[0].grid, divqv_samples)
    pairs = [measure_tail(t, spec, params, M, divqv) for t in trajs]
    lhs = float(np.mean([p[0] for p in pairs]))
    rhs = float(np.mean([p[1] for p in pairs]))
    return lhs, rhs


@dataclass
class VanishingReport:
    M_values: np.ndarray
    lhs_values: np.ndarray
    threshold: float
    passed: bool

    def as_dict(self):
        return {
            "M_values": list(map(float, self.M_values)),
            "lhs_values": list(map(float, self.lhs_values)),
            "threshold": self.threshold,
            "passed": bool(self.passed),
        }


def vanishing_at_infinity_check(traj, spec, M_list, threshold: float = 1e-10) -> VanishingReport:
    """Tail dissipation lhs(M) along increasing levels; passes when the top
    of the list has decayed below the threshold."""
    M = np.asarray(list(M_list), dtype=np.float64)
    if M.size == 0:
        raise ConfigurationError("empty M list")
    if np.any(np.diff(M) <= 0):
        raise ConfigurationError("M list must be strictly increasing")
    h = traj.grid.h
    lhs = np.array([
        float(trapezoid(
            [_tail_integrand(s, spec, h, float(m)) for s in traj.states],
            traj.times,
        ))
        for m in M
    ])
    passed = bool(lhs[-1] <= threshold)
    return VanishingReport(M_values=M, lhs_values=lhs, threshold=threshold,
                           passed=passed)


def inverse_density_dissipation(traj, spec, floor: float = 1e-8) -> float:
    """Time quadrature of the dissipation density weighted by 1/rho.

    Reported only: finiteness is expected but no defensible threshold exists,
    so callers should log this value rather than assert on it.
    """
    h = traj.grid.h
    vol = traj.grid.cell_volume
    vals = []
    for s in traj.states:
        pos = np.maximum(s, 0.0)
        grad = grad_values(pos, h)
        grad_sq = np.sum(grad**2, axis=0)
        vals.append(float(np.sum(
            spec.phi_prime(pos) * grad_sq / np.maximum(pos, floor)) * vol))
    return float(trapezoid(vals, traj.times))
