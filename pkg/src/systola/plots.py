"""Static figures for reports.  Always renders off-screen (Agg)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
WIDTH = 5.5  # inches

STYLE = {
    "axes.labelsize": 10,
    "font.size": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # fixed metadata keeps reruns byte-identical
    "svg.hashsalt": "systola",
}


MARKERS = "osD^vP"


def _figure(ncols=1, scale=1.0, **kw):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(1, ncols, figsize=(WIDTH * scale, WIDTH * scale * GOLDEN),
                               layout="constrained", **kw)
    return fig, ax


def _save(fig, path):
    with plt.rc_context(STYLE):
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def sweep_figure(rows, path):
    """Ratio LHS/RHS against refinement, one line per (inequality, p)."""
    fig, ax = _figure()
    series = {}
    for r in rows:
        if r.get("status") != "ok":
            continue
        series.setdefault((r["inequality"], r["p"]), []).append((r["refinement"], r["ratio"]))
    ordered = sorted(series.items(), key=lambda kv: (kv[0][0], str(kv[0][1])))
    for i, ((ineq, p), pts) in enumerate(ordered):
        pts.sort()
        k, ratio = zip(*pts)
        label = f"({ineq})" if p in (None, "") else f"({ineq}), p={p}"
        # coinciding series stay visible through open, shrinking markers
        ax.plot(k, ratio, marker=MARKERS[i % len(MARKERS)], ms=7 - 0.8 * (i % 4), mfc="none", lw=1.0, label=label)
    ax.axhline(1.0, color="0.5", lw=0.8, ls="--")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("refinement k")
    ax.set_ylabel("LHS / RHS")
    if series:
        ax.legend(frameon=False, loc="center left", bbox_to_anchor=(1.01, 0.5))
    _save(fig, path)


def report_figure(report: dict, path):
    """Both sides of one inequality next to its equality diagnostics (value / threshold)."""
    fig, (ax0, ax1) = _figure(ncols=2, scale=1.3, width_ratios=[1, 1.6])
    ax0.bar(["LHS", "RHS"], [report["lhs"], report["rhs"]], color=["C0", "C1"], width=0.6)
    ax0.set_title(f"({report['inequality']})  ratio {report['ratio']:.4f}", fontsize=9)
    diags = report.get("diagnostics", {})
    names = [k for k, v in diags.items() if isinstance(v.get("value"), (int, float))
             and not isinstance(v.get("value"), bool) and v.get("threshold")]
    if names:
        vals = [diags[k]["value"] / diags[k]["threshold"] for k in names]
        colors = ["C2" if diags[k].get("passed") else "C3" for k in names]
        ax1.barh(names, vals, color=colors, height=0.5)
        for i, k in enumerate(names):
            ax1.text(vals[i], i, f" {diags[k]['value']:.3g}", va="center", fontsize=8)
        ax1.axvline(1.0, color="k", lw=0.8)
        ax1.set_xlabel("value / threshold")
        ax1.set_title("diagnostics (green = passed)", fontsize=9)
    else:
        ax1.axis("off")
    _save(fig, path)


def jacobian_figure(mesh, values, path, title="jac"):
    """Per-simplex field over the fundamental domain, or a histogram without coordinates."""
    fig, ax = _figure()
    if mesh.dim == 2 and mesh.vertex_coords is not None and mesh.lattice is not None:
        cent = _centroids(mesh)
        xy = cent @ mesh.lattice.basis.T
        tpc = ax.tripcolor(xy[:, 0], xy[:, 1], values, shading="gouraud", cmap="viridis")
        fig.colorbar(tpc, ax=ax, shrink=0.8)
        ax.set_aspect("equal")
        ax.set_xticks([])
        ax.set_yticks([])
    else:
        ax.hist(values, bins=40, color="C0")
        ax.set_xlabel(title)
        ax.set_ylabel("simplices")
    ax.set_title(title, fontsize=9)
    _save(fig, path)


def _centroids(mesh):
    # fractional centroids from (vertex, lattice offset) keys
    out = np.empty((mesh.n_simplices, mesh.dim))
    for s, key in enumerate(mesh.top_keys):
        pts = [mesh.vertex_coords[v] + np.asarray(o, dtype=float) for v, o in key]
        out[s] = np.mean(pts, axis=0)
    return np.mod(out, 1.0)
