"""Figure rendering for the report path (PNG files next to the CSVs)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fields import Field

_DPI = 120


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def field_heatmap(f: Field, path: Path, title: str, cmap: str = "RdBu_r"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ts = f.times()
    vals = f.rows()
    vmax = np.max(np.abs(vals)) or 1.0
    im = ax.pcolormesh(f.grid.x, ts, vals, cmap=cmap, vmin=-vmax, vmax=vmax,
                       shading="nearest")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    ax.set_title(title)
    _save(fig, path)


def geometry_diagram(geom, grid, path: Path):
    fig, ax = plt.subplots(figsize=(6, 2.8))
    rows = [("leader", geom.leader_domain, "tab:blue"),
            ("follower 1", geom.follower_domains[0], "tab:green"),
            ("follower 2", geom.follower_domains[1], "tab:olive"),
            ("observation 1", geom.observation_domains[0], "tab:red"),
            ("observation 2", geom.observation_domains[1], "tab:pink"),
            ("inner", geom.aux_inner, "tab:purple")]
    for i, w in enumerate(geom.aux_omega):
        rows.append((f"omega {i}", w, "tab:gray"))
    for k, (name, itv, color) in enumerate(rows):
        ax.barh(k, itv.hi - itv.lo, left=itv.lo, height=0.6, color=color, alpha=0.7)
    ax.set_yticks(range(len(rows)), [r[0] for r in rows])
    ax.set_xlim(0, grid.L)
    ax.set_xlabel("x")
    ax.set_title(f"control geometry ({geom.case_tag})")
    _save(fig, path)


def weight_profiles(w, path: Path):
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    tm = w.grid.t_mid
    mid = w.sigma_bar_i[w.selected_index].shape[1] // 2
    axes[0].plot(w.grid.x, w.etas[0].values, label="profile 0")
    if len(w.etas) > 1:
        axes[0].plot(w.grid.x, w.etas[1].values, "--", label="profile 1")
    axes[0].legend()
    axes[0].set_title("auxiliary profiles")
    axes[0].set_xlabel("x")
    axes[1].semilogy(tm, w.sigma_star, label="sigma max")
    axes[1].semilogy(tm, w.sigma_hat, label="sigma min")
    axes[1].semilogy(tm, w.xi_bar_star, label="xi max")
    axes[1].legend()
    axes[1].set_title("time envelopes")
    axes[1].set_xlabel("t")
    for key in ("rho0", "rho1", "rho3", "rho5"):
        axes[2].plot(tm, w.log_rho(key), label=key)
    axes[2].legend()
    axes[2].set_title("log weight families")
    axes[2].set_xlabel("t")
    _save(fig, path)


def convergence_curve(history, path: Path, title: str, ylabel: str = "relative update"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(range(1, len(history) + 1), history, marker="o", ms=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    _save(fig, path)


def eps_curve(table, path: Path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    eps = [row["eps"] for row in table]
    tn = [row["terminal_norm"] for row in table]
    ax.loglog(eps, tn, marker="s")
    ax.invert_xaxis()
    ax.set_xlabel("penalty eps")
    ax.set_ylabel("terminal norm")
    ax.set_title("terminal norm along the penalty schedule")
    _save(fig, path)


def ratio_histogram(ratios, path: Path, title: str):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(ratios, bins=24, color="tab:blue", alpha=0.8)
    ax.set_xlabel("lhs / rhs")
    ax.set_ylabel("samples")
    ax.set_title(title)
    _save(fig, path)


def mu_scan_curve(mu_grid, min_form, path: Path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogx(mu_grid, min_form, marker="o")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("penalty weight mu")
    ax.set_ylabel("min directional second derivative")
    ax.set_title("equilibrium certification scan")
    _save(fig, path)
