"""Rate-function evaluation by minimal-norm control recovery.

A target path rho(t) determines, slice by slice, the defect
h = d rho / dt - div grad Phi(rho).  Any control g reproducing the path obeys
-div(sigma(rho) g) = h; writing g = sigma(rho) grad phi turns this into the
weighted Poisson problem div(sigma^2(rho) grad phi) = -h, solvable by
conjugate gradients whenever h has zero mean (guaranteed for mass-conserving
targets).  The resulting g is the minimal-norm choice: any other admissible
control differs by a sigma^2-weighted divergence-free field orthogonal to
sigma grad phi, so the rate is half its squared space-time norm.

The small-noise Monte Carlo probe estimates tube probabilities around a
target and reports -eps log p alongside the recovered rate; at desk scale
only the qualitative trend is meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import inf, log

import numpy as np

from .errors import (ConfigurationError, MassConservationError,
                     SingularWeightError)
from .grid import Field, face_diff, face_mean, flux_divergence, trapezoid
from .noise import NoiseParams, NoiseScalingEntry, scaling_regime_check, sample_increment
from .skeleton import ControlField, solve_skeleton
from .solver import SolverConfig, _step_values
from .nonlinearity import NonlinearitySpec

__all__ = [
    "RateEvaluation",
    "minimal_control",
    "rate_function",
    "roundtrip_target",
    "mc_small_noise",
    "weighted_poisson_solve",
]


def _weighted_laplacian(phi, w_faces, h):
    fluxes = [w_faces[a] * face_diff(phi, a, h) for a in range(phi.ndim)]
    return flux_divergence(fluxes, h)


def weighted_poisson_solve(rhs, w_faces, h, tol=1e-8, max_iter=None,
                           raise_on_stall=True):
    """Solve div(w grad phi) = rhs on the periodic grid by conjugate gradients.

    Solvable iff rhs has zero mean; phi is fixed by zero mean.  Returns phi
    and the relative residual history (the error decreases monotonically in
    the energy norm, the plain residual need not).  ``raise_on_stall=False``
    returns the current iterate instead of raising when max_iter is hit.
    """
    b = -(rhs - rhs.mean())
    bnorm = float(np.sqrt(np.sum(b * b)))
    if bnorm == 0.0:
        return np.zeros_like(rhs), [0.0]
    if max_iter is None:
        max_iter = 20 * rhs.size
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(np.sum(r * r))
    history = [1.0]
    for _ in range(max_iter):
        Ap = -_weighted_laplacian(p, w_faces, h)
        denom = float(np.sum(p * Ap))
        if denom <= 0.0:
            raise SingularWeightError("weighted operator lost positivity")
        a = rs / denom
        x += a * p
        r -= a * Ap
        rs_new = float(np.sum(r * r))
        history.append(np.sqrt(rs_new) / bnorm)
        if history[-1] <= tol:
            return x - x.mean(), history
        p = r + (rs_new / rs) * p
        rs = rs_new
    if raise_on_stall:
        raise SingularWeightError(
            f"conjugate gradients stalled at relative residual {history[-1]:.3e}"
        )
    return x - x.mean(), history


@dataclass
class RateEvaluation:
    """Recovered minimal control for a target path and its half energy."""

    target: object
    recovered_control: ControlField
    rate: float
    residual: float
    slice_energy: np.ndarray | None = None
    times: np.ndarray | None = None


def _time_derivative(states, times):
    return np.gradient(states, times, axis=0, edge_order=2)


def minimal_control(target, spec: NonlinearitySpec, weight_floor: float = 1e-10,
                    tol: float = 1e-8, mass_tol: float = 1e-8) -> RateEvaluation:
    """Recover the minimal-norm control reproducing the target trajectory."""
    grid = target.grid
    h, d = grid.h, grid.d
    vol = grid.cell_volume
    states = np.asarray(target.states)
    times = np.asarray(target.times)
    if states.shape[0] < 3:
        raise ConfigurationError("target needs at least 3 time slices")
    dstates = _time_derivative(states, times)

    slice_energy = np.empty(states.shape[0])
    residual = 0.0
    cell_controls = np.zeros((states.shape[0], d) + grid.shape)
    for k in range(states.shape[0]):
        rho = np.maximum(states[k], 0.0)
        phi_vals = spec.phi(rho)
        lap = flux_divergence([face_diff(phi_vals, a, h) for a in range(d)], h)
        defect = dstates[k] - lap
        mass_rate = float(defect.sum() * vol)
        if abs(mass_rate) > mass_tol:
            raise MassConservationError(
                f"target not mass-conserving: d(mass)/dt = {mass_rate:.3e} at slice {k}"
            )
        sig_faces = [spec.sigma(face_mean(rho, a)) for a in range(d)]
        w_faces = [np.maximum(s**2, weight_floor) for s in sig_faces]
        # g = sigma grad phi and -div(sigma g) = defect, so the potential
        # solves div(sigma^2 grad phi) = -defect
        phi_pot, history = weighted_poisson_solve(-defect, w_faces, h, tol=tol)
        residual = max(residual, history[-1])
        energy = 0.0
        for a in range(d):
            g_face = sig_faces[a] * face_diff(phi_pot, a, h)
            energy += float(np.sum(g_face**2) * vol)
            # second-order face-to-cell averaging for the recorded control
            cell_controls[k, a] = 0.5 * (g_face + np.roll(g_face, 1, axis=a))
        slice_energy[k] = energy

    rate = float(0.5 * trapezoid(slice_energy, times))
    control = ControlField(grid, times, cell_controls)
    return RateEvaluation(target=target, recovered_control=control, rate=rate,
                          residual=residual, slice_energy=slice_energy,
                          times=times)


def rate_function(rho0: Field, target, spec: NonlinearitySpec,
                  initial_tol: float = 1e-10, **kwargs) -> float:
    """Half the minimal control energy, or +inf for infeasible targets."""
    first = Field(target.grid, target.states[0], target.gamma)
    if np.abs(first.values - rho0.values).sum() * target.grid.cell_volume > initial_tol:
        return inf
    try:
        return minimal_control(target, spec, **kwargs).rate
    except MassConservationError:
        return inf


def roundtrip_target(initial: Field, spec: NonlinearitySpec,
                     phi_star: np.ndarray, T: float, dt: float,
                     store_every: int = 1):
    """Drive the skeleton equation with g = sigma(rho) grad phi_star.

    This construction makes the applied control itself the minimal-norm one
    for the path it generates, so recovering it closes the loop.  Returns the
    trajectory, the applied control sampled at output times (cell-centered),
    and the exact face-based half energy accumulated at solver resolution.
    """
    grid = initial.grid
    h, d = grid.h, grid.d
    vol = grid.cell_volume
    gpsi_faces = [face_diff(phi_star, a, h) for a in range(d)]
    gpsi_cells = np.stack([
        0.5 * (gf + np.roll(gf, 1, axis=a)) for a, gf in enumerate(gpsi_faces)
    ])
    tally = {"energy": 0.0, "n": 0}

    def control(rho_vals, t):
        sig_c = spec.sigma(np.maximum(rho_vals, 0.0))
        face_energy = 0.0
        for a in range(d):
            gf = spec.sigma(face_mean(np.maximum(rho_vals, 0.0), a)) * gpsi_faces[a]
            face_energy += float(np.sum(gf**2) * vol)
        tally["energy"] += face_energy
        tally["n"] += 1
        return sig_c * gpsi_cells

    traj = solve_skeleton(initial, spec, control, T, dt=dt,
                          store_every=store_every)
    half_energy = 0.5 * tally["energy"] * traj.dt
    # record the applied control at output times for comparisons
    snaps = []
    for i in range(len(traj.times)):
        rho = np.maximum(traj.states[i], 0.0)
        snaps.append(spec.sigma(rho) * gpsi_cells)
    control_field = ControlField(grid, traj.times, np.stack(snaps))
    return traj, control_field, float(half_energy)


@dataclass
class McLevel:
    epsilon: float
    alpha: float
    A: float
    K_a: int
    n_runs: int
    hits: int
    p: float
    minus_eps_log_p: float
    lower_bound_only: bool

    def as_dict(self):
        return {k: getattr(self, k) for k in (
            "epsilon", "alpha", "A", "K_a", "n_runs", "hits", "p",
            "minus_eps_log_p", "lower_bound_only")}


@dataclass
class McReport:
    levels: list
    rate: float
    tube_radius: float
    scaling: dict

    @property
    def trend_increasing(self) -> bool:
        vals = [lv.minus_eps_log_p for lv in self.levels]
        return all(b > a for a, b in zip(vals, vals[1:]))

    def as_dict(self):
        return {
            "levels": [lv.as_dict() for lv in self.levels],
            "rate": self.rate,
            "tube_radius": self.tube_radius,
            "trend_increasing": self.trend_increasing,
            "scaling": self.scaling,
        }


def _child_seed(base_seed, level, run):
    return int(np.random.SeedSequence([base_seed, level, run]).generate_state(1)[0])


def mc_small_noise(rho0: Field, target, spec: NonlinearitySpec, entries,
                   n_runs: int, tube_radius: float, dt: float,
                   base_seed: int = 0, cfl_safety: float = 0.5) -> McReport:
    """Estimate tube probabilities p_eps = P(sup_t L1 distance < radius).

    ``entries`` is a decreasing-epsilon sequence of NoiseScalingEntry; it must
    not fail the scaling-regime check.  Runs that leave the tube terminate at
    the first violated checkpoint.  Levels with zero hits are flagged as
    lower bounds (p < 1/n_runs).
    """
    if n_runs < 1:
        raise ConfigurationError(f"n_runs must be >= 1, got {n_runs}")
    if tube_radius <= 0:
        raise ConfigurationError("tube radius must be positive")
    parsed = [e if isinstance(e, NoiseScalingEntry) else NoiseScalingEntry(*e)
              for e in entries]
    grid = rho0.grid
    scaling = scaling_regime_check(parsed, grid.d)
    if scaling.status == "fail":
        raise ConfigurationError("scaling sequence fails the small-noise regime check")

    times = np.asarray(target.times)
    states = np.asarray(target.states)
    T = float(times[-1])
    n_steps = max(1, round(T / dt))
    dt_eff = T / n_steps
    # checkpoint step indices for each target time
    ckpt = np.rint(times / dt_eff).astype(int)
    if np.any(np.abs(ckpt * dt_eff - times) > 1e-9 * max(T, 1.0)):
        raise ConfigurationError("target times must align with the step grid")
    vol = grid.cell_volume
    rate = rate_function(rho0, target, spec)

    levels = []
    for li, e in enumerate(parsed):
        params = NoiseParams.build(grid, e.alpha, e.A, e.K_a, seed=0)
        config = SolverConfig(dt=dt_eff, eps=e.epsilon, cfl_safety=cfl_safety)
        hits = 0
        for run in range(n_runs):
            p_run = params.with_seed(_child_seed(base_seed, li, run))
            rho = rho0.values.copy()
            inside = True
            next_ck = 1
            for k in range(n_steps):
                dW = sample_increment(p_run, grid, dt_eff, k).dW
                rho, _, _ = _step_values(rho, spec, p_run, config, dt_eff, dW,
                                         grid.h, grid.d, step_index=k)
                if next_ck < len(ckpt) and k + 1 == ckpt[next_ck]:
                    dist = float(np.abs(rho - states[next_ck]).sum() * vol)
                    if dist >= tube_radius:
                        inside = False
                        break
                    next_ck += 1
            if inside:
                hits += 1
        if hits == 0:
            p = 1.0 / n_runs
            mlp = e.epsilon * log(n_runs)
            lower = True
        else:
            p = hits / n_runs
            mlp = -e.epsilon * log(p)
            lower = False
        levels.append(McLevel(
            epsilon=e.epsilon, alpha=e.alpha, A=e.A, K_a=e.K_a,
            n_runs=n_runs, hits=hits, p=p, minus_eps_log_p=mlp,
            lower_bound_only=lower,
        ))
    return McReport(levels=levels, rate=rate, tube_radius=tube_radius,
                    scaling=scaling.as_dict())
