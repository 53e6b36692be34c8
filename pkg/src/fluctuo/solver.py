"""Conservative explicit Euler-Maruyama stepper for the density SPDE.

The update advances

    rho_new = rho + dt * div(F) - div(sqrt(eps) * sigma_face * dW_face),

where F collects face fluxes of grad Phi(rho) + eta grad rho
+ (eps * qv / 2) * sigma'(rho)^2 grad rho - nu(rho), with qv the spatially
constant quadratic variation of the noise per unit time.  Every term is a
difference of face fluxes, so the cell sum telescopes and total mass is
conserved to machine precision each step.  Face values of nonlinear
coefficients use arithmetic means of the adjacent cells; sigma' alone is
evaluated at max(rho, rho_floor) because its square blows up at zero for
sub-quadratic mobilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .diagnostics import dissipation_values
from .errors import CFLViolation, ConfigurationError, GridMismatchError, NegativityError
from .grid import Field, Grid, face_diff, face_mean, flux_divergence
from .noise import NoiseIncrement, NoiseParams, convolve, sample_increment
from .nonlinearity import EntropyFunction, NonlinearitySpec

__all__ = [
    "SolverConfig",
    "Trajectory",
    "step_ito",
    "solve",
    "coupled_solve",
    "solve_controlled",
    "write_diagnostics_csv",
]

_POLICIES = ("clamp_and_log", "reject")


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping controls.

    ``eps`` scales the noise: sqrt(eps) multiplies the stochastic flux and
    eps scales the Ito correction.  ``dt`` is an upper bound; runs use
    T / ceil(T / dt) so the horizon is hit exactly.
    """

    dt: float
    eta: float = 0.0
    eps: float = 0.0
    cfl_safety: float = 0.5
    negativity_policy: str = "clamp_and_log"
    negativity_tol: float = 1e-6
    rho_floor: float = 1e-12

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.eta < 0 or self.eps < 0:
            raise ConfigurationError("eta and eps must be nonnegative")
        if not (0.0 < self.cfl_safety <= 1.0):
            raise ConfigurationError(
                f"cfl_safety must lie in (0, 1], got {self.cfl_safety}"
            )
        if self.negativity_policy not in _POLICIES:
            raise ConfigurationError(f"negativity_policy must be one of {_POLICIES}")


@dataclass
class Trajectory:
    """Stored states at output times plus per-step diagnostics."""

    grid: Grid
    gamma: float
    times: np.ndarray            # output times, times[0] == 0
    states: np.ndarray           # (n_out,) + grid.shape
    diag: dict                   # per-step arrays, keyed by column name
    dt: float                    # effective step actually used
    spec: NonlinearitySpec
    params: NoiseParams | None
    config: SolverConfig
    seed: int | None = None

    def state(self, i: int) -> Field:
        return Field(self.grid, self.states[i], self.gamma)

    @property
    def initial(self) -> Field:
        return self.state(0)

    @property
    def final(self) -> Field:
        return self.state(len(self.times) - 1)

    @property
    def n_steps(self) -> int:
        return len(self.diag["t"]) - 1


_DIAG_COLUMNS = ("t", "mass_excess", "entropy", "dissipation_cum", "min_rho",
                 "l1_to_reference")


class _DiagRecorder:
    """Per-step trajectory diagnostics, including negativity excursions."""

    def __init__(self, spec, gamma, h, d):
        self.ent = EntropyFunction(spec, 0.0)
        self.gamma = gamma
        self.vol = h**d
        self.rows = {k: [] for k in _DIAG_COLUMNS}
        self.rows["n_clamped"] = []
        self.rows["clamped_mass"] = []
        self.diss_cum = 0.0

    def record(self, t, rho, n_clamped=0, clamped_mass=0.0, diss_increment=0.0):
        self.diss_cum += diss_increment
        pos = np.maximum(rho, 0.0)
        self.rows["t"].append(t)
        self.rows["mass_excess"].append(float((rho - self.gamma).sum() * self.vol))
        self.rows["entropy"].append(float(np.sum(self.ent.psi(pos)) * self.vol))
        self.rows["dissipation_cum"].append(self.diss_cum)
        self.rows["min_rho"].append(float(rho.min()))
        self.rows["l1_to_reference"].append(
            float(np.abs(rho - self.gamma).sum() * self.vol)
        )
        self.rows["n_clamped"].append(int(n_clamped))
        self.rows["clamped_mass"].append(float(clamped_mass))

    def as_arrays(self):
        return {k: np.asarray(v) for k, v in self.rows.items()}


def _deterministic_fluxes(rho_eval, spec, config, qv, h, d):
    """Face fluxes of the drift terms plus the per-step stable dt bound."""
    corr = 0.5 * config.eps * qv
    fluxes = []
    dmax = 0.0
    phi_vals = spec.phi(rho_eval)
    for a in range(d):
        drho = face_diff(rho_eval, a, h)
        rho_f = face_mean(rho_eval, a)
        F = face_diff(phi_vals, a, h)
        diff_coeff = spec.phi_prime(rho_f) + config.eta
        if config.eta:
            F = F + config.eta * drho
        if corr:
            sp2 = spec.sigma_prime(np.maximum(rho_f, config.rho_floor)) ** 2
            F = F + corr * sp2 * drho
            # faces with zero jump carry zero correction flux, so their
            # (possibly huge) coefficient does not constrain the step
            diff_coeff = diff_coeff + corr * sp2 * (drho != 0.0)
        if spec.c_nu:
            F = F - spec.nu(rho_f)
        fluxes.append(F)
        dmax = max(dmax, float(diff_coeff.max()))
    dt_max = config.cfl_safety * h * h / (2.0 * d * max(dmax, 1e-300))
    return fluxes, dt_max


def _apply_negativity_policy(rho, config):
    mn = float(rho.min())
    if mn >= 0.0:
        return rho, 0, 0.0
    if config.negativity_policy == "reject":
        if mn < -config.negativity_tol:
            raise NegativityError(
                f"min density {mn:.3e} below -{config.negativity_tol:.3e}"
            )
        return rho, 0, 0.0
    neg = rho < 0.0
    n_clamped = int(neg.sum())
    deficit = float(-rho[neg].sum())
    rho = np.maximum(rho, 0.0)
    pos_sum = float(rho.sum())
    if pos_sum > 0.0:
        # redistribute the clamped mass proportionally so the cell sum stays
        # exactly what the flux form produced
        rho *= (pos_sum - deficit) / pos_sum
    return rho, n_clamped, deficit


def _step_values(rho, spec, params, config, dt, dW, h, d, step_index=None,
                 extra_fluxes=None):
    rho_eval = np.maximum(rho, 0.0)
    fluxes, dt_max = _deterministic_fluxes(
        rho_eval, spec, config, params.a_norm_sq, h, d
    )
    if dt > dt_max * (1.0 + 1e-12):
        raise CFLViolation(dt, dt_max, step_index)
    if extra_fluxes is not None:
        fluxes = [F + E for F, E in zip(fluxes, extra_fluxes)]
    rho_new = rho + dt * flux_divergence(fluxes, h)
    if config.eps:
        amp = np.sqrt(config.eps)
        noise_fluxes = [
            amp * spec.sigma(face_mean(rho_eval, a)) * face_mean(dW[a], a)
            for a in range(d)
        ]
        rho_new = rho_new - flux_divergence(noise_fluxes, h)
    return _apply_negativity_policy(rho_new, config)


def step_ito(state: Field, spec: NonlinearitySpec, params: NoiseParams,
             config: SolverConfig, increment: NoiseIncrement) -> Field:
    """Advance one step; the increment supplies both the noise and the dt."""
    if increment.grid != state.grid:
        raise GridMismatchError("increment grid differs from state grid")
    if abs(increment.dt - config.dt) > 1e-9 * config.dt:
        raise ConfigurationError(
            f"increment dt {increment.dt:.6g} does not match config dt {config.dt:.6g}"
        )
    if float(state.values.min()) < -config.negativity_tol:
        raise NegativityError(
            f"state min {float(state.values.min()):.3e} below tolerance"
        )
    rho, _, _ = _step_values(
        state.values, spec, params, config, increment.dt, increment.dW,
        state.grid.h, state.grid.d,
    )
    return Field(state.grid, rho, state.gamma)


def _resolve_steps(T, dt):
    if T < 0:
        raise ConfigurationError(f"horizon T must be nonnegative, got {T}")
    if T == 0:
        return 0, dt
    n = max(1, ceil(T / dt - 1e-12))
    return n, T / n


def _run(initial: Field, spec, params, config, T, seed, store_every,
         control_hook=None, paired_initial=None):
    """Shared trajectory loop.

    ``control_hook(step_index, t, rho) -> list of face fluxes or None``
    injects deterministic forcing built against the current state;
    ``paired_initial`` runs a second state through the identical noise.
    """
    grid, gamma = initial.grid, initial.gamma
    h, d = grid.h, grid.d
    n_steps, dt = _resolve_steps(T, config.dt)
    p = params if seed is None else params.with_seed(seed)

    states = [initial.values.copy()]
    rho = initial.values.copy()
    rec = _DiagRecorder(spec, gamma, h, d)
    rec.record(0.0, rho)
    times = [0.0]

    paired = None
    if paired_initial is not None:
        paired = paired_initial.values.copy()
        paired_states = [paired.copy()]
        paired_rec = _DiagRecorder(spec, gamma, h, d)
        paired_rec.record(0.0, paired)

    for k in range(n_steps):
        t_next = (k + 1) * dt
        dW = sample_increment(p, grid, dt, k).dW if config.eps else None
        extra = control_hook(k, k * dt, rho) if control_hook is not None else None
        diss = dissipation_values(np.maximum(rho, 0.0), spec, h) * dt
        rho, n_cl, cl_mass = _step_values(
            rho, spec, p, config, dt, dW, h, d, step_index=k, extra_fluxes=extra
        )
        rec.record(t_next, rho, n_cl, cl_mass, diss)
        if paired is not None:
            diss2 = dissipation_values(np.maximum(paired, 0.0), spec, h) * dt
            paired, n2, m2 = _step_values(
                paired, spec, p, config, dt, dW, h, d, step_index=k
            )
            paired_rec.record(t_next, paired, n2, m2, diss2)
        if (k + 1) % store_every == 0 or k + 1 == n_steps:
            states.append(rho.copy())
            times.append(t_next)
            if paired is not None:
                paired_states.append(paired.copy())

    traj = Trajectory(
        grid=grid, gamma=gamma, times=np.asarray(times), states=np.asarray(states),
        diag=rec.as_arrays(), dt=dt, spec=spec, params=p, config=config, seed=p.seed,
    )
    if paired is None:
        return traj
    traj2 = Trajectory(
        grid=grid, gamma=gamma, times=np.asarray(times),
        states=np.asarray(paired_states), diag=paired_rec.as_arrays(), dt=dt,
        spec=spec, params=p, config=config, seed=p.seed,
    )
    return traj, traj2


def solve(initial: Field, spec: NonlinearitySpec, params: NoiseParams,
          config: SolverConfig, T: float, seed: int | None = None,
          store_every: int = 1) -> Trajectory:
    """Integrate to time T; deterministic given the seed."""
    if store_every < 1:
        raise ConfigurationError("store_every must be >= 1")
    return _run(initial, spec, params, config, T, seed, store_every)


def coupled_solve(initial1: Field, initial2: Field, spec: NonlinearitySpec,
                  params: NoiseParams, config: SolverConfig, T: float,
                  seed: int | None = None, store_every: int = 1):
    """Two trajectories driven by the identical noise realization."""
    if initial1.grid != initial2.grid:
        raise GridMismatchError("coupled initial data must share one grid")
    return _run(initial1, spec, params, config, T, seed, store_every,
                paired_initial=initial2)


def solve_controlled(initial: Field, spec: NonlinearitySpec, params: NoiseParams,
                     config: SolverConfig, control, T: float,
                     seed: int | None = None, store_every: int = 1,
                     gbar: np.ndarray | None = None,
                     apply_envelope: bool = True,
                     mollify: bool = True) -> Trajectory:
    """Solve with the deterministic control forcing added to the flux.

    The control enters as -div(sigma(rho) g_eff) with
    g_eff = envelope * (g ** kernel) + mix * gbar(t), where gbar(t) is the
    collapsed spatially constant control direction (optional).  Disabling
    ``apply_envelope`` and ``mollify`` applies the raw control, in which the
    eps = 0 dynamics reduce to the skeleton equation.
    """
    grid = initial.grid
    if control.grid != grid:
        raise GridMismatchError("control grid differs from state grid")
    h, d = grid.h, grid.d
    ctimes = np.asarray(control.times)
    cache = {"idx": -1, "g": None}

    def effective(idx):
        g = control.values[idx]
        out = np.empty_like(g)
        for c in range(d):
            gc = g[c]
            if mollify:
                gc = convolve(gc, params.kernel, h, params.use_fft)
            if apply_envelope:
                gc = params.envelope * gc
                if gbar is not None:
                    gc = gc + params.mix * gbar[idx, c]
            out[c] = gc
        return out

    def hook(step, t, rho):
        idx = int(np.searchsorted(ctimes, t + 1e-12 * max(1.0, abs(t)), side="right") - 1)
        idx = min(max(idx, 0), len(ctimes) - 1)
        if idx != cache["idx"]:
            cache["idx"] = idx
            cache["g"] = effective(idx)
        g_eff = cache["g"]
        rho_eval = np.maximum(rho, 0.0)
        return [
            -spec.sigma(face_mean(rho_eval, a)) * face_mean(g_eff[a], a)
            for a in range(d)
        ]

    if store_every < 1:
        raise ConfigurationError("store_every must be >= 1")
    return _run(initial, spec, params, config, T, seed, store_every,
                control_hook=hook)


def write_diagnostics_csv(traj: Trajectory, path):
    """Per-step diagnostics as CSV rows."""
    import csv as _csv

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(_DIAG_COLUMNS)
        cols = [traj.diag[k] for k in _DIAG_COLUMNS]
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
