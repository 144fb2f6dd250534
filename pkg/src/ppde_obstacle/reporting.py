"""Artifact writers: deterministic CSV tables, JSON reports, and the figures
rendered next to each table."""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def write_csv(path, header, rows, meta: dict | None = None) -> None:
    """Deterministic CSV with provenance comments in the preamble."""
    lines = []
    for k in sorted((meta or {})):
        lines.append(f"# {k}={meta[k]}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_sanitize(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _save(fig, path):
    fig.savefig(path, dpi=130, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def figure_value(path, estimate: float, ci: float, label: str) -> None:
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.errorbar([0], [estimate], yerr=[ci], fmt="o", capsize=6)
    ax.set_xticks([0], [label])
    ax.set_ylabel("value estimate")
    ax.set_title("value with tolerance band")
    _save(fig, path)


def figure_convergence(path, sections: dict) -> None:
    n = len(sections)
    fig, axes = plt.subplots(1, max(n, 1), figsize=(4.2 * max(n, 1), 3.4), squeeze=False)
    for ax, (name, rows) in zip(axes[0], sections.items()):
        xs = [r[0] for r in rows]
        ys = [r[1] for r in rows]
        ax.plot(xs, ys, "o-")
        ax.set_xlabel(name)
        ax.set_ylabel("value")
        if len(xs) > 1 and xs[0] > 0 and xs[-1] / xs[0] >= 8:
            ax.set_xscale("log")
        ax.set_title(f"refinement in {name}")
    _save(fig, path)


def figure_sandwich(path, rows) -> None:
    alphas = [r["alpha"] for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8.4, 3.4))
    a1.plot(alphas, [r["psi0"] for r in rows], "v-", label="lower envelope")
    a1.plot(alphas, [r["phi0"] for r in rows], "^-", label="upper envelope")
    a1.plot(alphas, [r["u0"] for r in rows], "k--", label="value estimate")
    a1.set_xlabel("alpha")
    a1.invert_xaxis()
    a1.legend(fontsize=8)
    a1.set_title("envelope sandwich")
    a2.plot(alphas, [r["gap"] for r in rows], "s-")
    a2.set_xlabel("alpha")
    a2.set_ylabel("gap")
    a2.invert_xaxis()
    a2.set_title("gap vs level")
    _save(fig, path)


def figure_snell(path, lattice, result) -> None:
    xs = lattice.x_grid
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8.4, 3.4))
    for i in range(0, lattice.n_steps + 1, max(lattice.n_steps // 4, 1)):
        a1.plot(xs, result.envelope[i], label=f"step {i}")
    a1.plot(xs, result.reward[0], "k:", label="reward")
    a1.legend(fontsize=7)
    a1.set_xlabel("state")
    a1.set_title("nonlinear Snell envelope")
    img = result.contact.astype(float)
    a2.imshow(img.T, origin="lower", aspect="auto", cmap="Greys",
              extent=[0, lattice.n_steps, xs[0], xs[-1]])
    a2.set_xlabel("step")
    a2.set_ylabel("state")
    a2.set_title("stopping region (first contact)")
    _save(fig, path)


def figure_dpp(path, rows) -> None:
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    labels = [r[0] for r in rows]
    vals = [r[-1] for r in rows]
    ax.bar(range(len(rows)), vals)
    ax.set_xticks(range(len(rows)), labels, rotation=20, fontsize=8)
    ax.set_ylabel("|residual|")
    ax.set_title("dynamic programming residuals")
    _save(fig, path)


def figure_hitting(path, report) -> None:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8.4, 3.4))
    deltas = sorted(
        float(k.split("_")[-1]) for k in report["capacity"][0] if k.startswith("P_gamma_gt_")
    )
    for row in report["capacity"]:
        ps = [row[f"P_gamma_gt_{d:g}"] for d in deltas]
        a1.plot(deltas, ps, "o-", label=f"x={row['x']:g}")
    a1.set_xlabel("delta")
    a1.set_ylabel("P(gap > delta)")
    a1.legend(fontsize=7)
    a1.set_title("cascade hitting-time gaps")
    xs = [row["x"] for row in report["capacity"]]
    es = [row["E_first_gap"] for row in report["capacity"]]
    a2.plot(xs, es, "o-", label="mean first gap")
    if "linear_bound_slope" in report:
        a2.plot(xs, [report["linear_bound_slope"] * x for x in xs], "--", label="linear bound")
    a2.set_xlabel("|x|")
    a2.legend(fontsize=8)
    a2.set_title("first-knot gap vs offset")
    _save(fig, path)


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
