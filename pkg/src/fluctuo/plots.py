"""Optional figure rendering for report subcommands.

All plots are written as PNG files next to the delimited outputs; nothing
here is required by the numerical pipeline, and every figure is rebuilt from
the same data the CSV/JSON artifacts carry.
"""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def plot_trajectory(traj, path):
    """State snapshots plus entropy / mass-drift panels."""
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    ax = axes[0]
    if traj.grid.d == 1:
        x = traj.grid.centers()
        idx = np.unique(np.linspace(0, len(traj.times) - 1, 6).astype(int))
        for i in idx:
            ax.plot(x, traj.states[i], label=f"t={traj.times[i]:.3g}")
        ax.set_xlabel("x")
        ax.set_ylabel("density")
        ax.legend(fontsize=7)
    else:
        im = ax.imshow(traj.states[-1], origin="lower",
                       extent=[-traj.grid.L, traj.grid.L] * 2)
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(f"density at t={traj.times[-1]:.3g}")
    t = traj.diag["t"]
    axes[1].plot(t, traj.diag["entropy"])
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("relative entropy")
    drift = traj.diag["mass_excess"] - traj.diag["mass_excess"][0]
    axes[2].plot(t, drift)
    axes[2].set_xlabel("t")
    axes[2].set_ylabel("mass drift")
    return _save(fig, path)


def plot_qv(qv_values, grid, expected, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    if grid.d == 1:
        ax.plot(grid.centers(), qv_values, label="empirical")
        ax.axhline(expected, color="k", ls="--", label="kernel norm")
        ax.set_xlabel("x")
        ax.legend(fontsize=8)
    else:
        im = ax.imshow(qv_values, origin="lower",
                       extent=[-grid.L, grid.L] * 2)
        fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_ylabel("quadratic variation / t")
    return _save(fig, path)


def plot_contract(ratios, tolerance, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.hist(ratios, bins=24)
    ax.axvline(tolerance, color="r", ls="--", label=f"tolerance {tolerance}")
    ax.set_xlabel("sup_t ||rho1 - rho2||_1 / initial distance")
    ax.set_ylabel("pairs")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_scaling(report, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    eps = [e.epsilon for e in report.entries]
    ax.loglog(eps, report.constant_mode, "o-", label="constant-mode control")
    ax.loglog(eps, report.divergence_cost, "s-", label="divergence cost")
    ax.invert_xaxis()
    ax.set_xlabel("epsilon")
    ax.legend(fontsize=8)
    ax.set_title(f"status: {report.status}")
    return _save(fig, path)


def plot_mc(report, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    eps = [lv.epsilon for lv in report.levels]
    vals = [lv.minus_eps_log_p for lv in report.levels]
    ax.plot(eps, vals, "o-", label="-eps log p")
    if np.isfinite(report.rate):
        ax.axhline(report.rate, color="k", ls="--", label="rate")
    ax.invert_xaxis()
    ax.set_xlabel("epsilon")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_energy_density(times, slice_energy, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.plot(times, slice_energy)
    ax.set_xlabel("t")
    ax.set_ylabel("control energy density")
    return _save(fig, path)


def plot_entropy_budget(reports, labels, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    xs = np.arange(len(reports))
    ax.bar(xs - 0.15, [r.lhs for r in reports], width=0.3, label="lhs")
    ax.bar(xs + 0.15, [r.rhs_budget for r in reports], width=0.3, label="budget")
    ax.set_xticks(xs, labels, fontsize=8)
    ax.set_ylabel("entropy + dissipation")
    ax.legend(fontsize=8)
    return _save(fig, path)
