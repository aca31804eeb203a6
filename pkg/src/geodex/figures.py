"""Figure rendering for the command-line report pipeline.

Each entry point receives already-computed result objects and writes one
PNG file.  matplotlib is imported lazily with the Agg backend, so
library users never pay for a plotting stack and no display is needed.
"""

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _finish(fig, filename):
    fig.tight_layout()
    fig.savefig(filename, dpi=120)
    _pyplot().close(fig)
    return filename


def orbit_figure(filename, geodesic):
    """Coordinate and velocity traces over one period."""
    plt = _pyplot()
    samples = geodesic.samples
    ts = np.linspace(0.0, 1.0, samples.shape[0])
    d = geodesic.spec.dim
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for i, cname in enumerate(geodesic.spec.coords):
        top.plot(ts, samples[:, i], label=cname)
        bottom.plot(ts, samples[:, d + i], label=f"d{cname}/dt")
    top.set_ylabel("coordinate")
    top.legend(loc="best", fontsize=8)
    bottom.set_ylabel("velocity")
    bottom.set_xlabel("orbit parameter")
    bottom.legend(loc="best", fontsize=8)
    top.set_title(f"closed orbit, residual {geodesic.closure_residual:.2e}")
    return _finish(fig, filename)


def maslov_figure(filename, report):
    """Step profile of the extended coindex across the chart segments."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for seg in report.segments:
        ax.plot([seg.t0, seg.t1], [seg.extco0, seg.extco1],
                marker="o", color="tab:blue")
    ax.set_xlabel("path parameter")
    ax.set_ylabel("extended coindex")
    ax.set_title(f"index {report.value}, "
                 f"min eigenvalue margin {report.min_eig_margin:.2f} decades")
    ax.grid(alpha=0.3)
    return _finish(fig, filename)


def winding_figure(filename, path, samples=512):
    """Unwrapped phase of the unitary determinant along a symplectic
    path, the continuous quantity behind loop winding counts."""
    from . import symplectic as sp
    plt = _pyplot()
    ts = np.linspace(path.a, path.b, samples)
    mats = path.at_many(ts)
    dets = sp._unitary_dets(path.space, mats)
    angle = np.unwrap(np.angle(dets))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(ts, (angle - angle[0]) / (2 * np.pi), color="tab:red")
    ax.set_xlabel("path parameter")
    ax.set_ylabel("determinant phase / 2 pi")
    ax.grid(alpha=0.3)
    return _finish(fig, filename)


def index_figure(filename, report):
    """Bar snapshot of the integer invariants in one index report."""
    plt = _pyplot()
    fields = [("mu", report.mu), ("nullity", report.nullity),
              ("mu_restricted", report.mu_restricted), ("i_m", report.i_m),
              ("n-(B0)", report.n_minus_b0), ("n0", report.n0),
              ("n1", report.n1), ("mu_fixed", report.mu_fixed)]
    labels = [f[0] for f in fields]
    values = [f[1] for f in fields]
    fig, ax = plt.subplots(figsize=(7, 4))
    bars = ax.bar(labels, values, color="tab:blue")
    ax.bar_label(bars)
    ax.set_ylabel("count")
    ax.set_title(f"iterate {report.n_iter}: identity "
                 f"{'holds' if report.theorem_holds else 'fails'}")
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
    return _finish(fig, filename)


def iterate_figure(filename, table):
    """Index growth along the iteration sequence with the validated
    lower line when the growth is superlinear."""
    plt = _pyplot()
    ns = sorted(table.reports)
    mus = [table.reports[n].mu for n in ns]
    mubars = [table.reports[n].mu_restricted for n in ns]
    ims = [table.reports[n].i_m for n in ns]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(ns, mus, marker="o", label="mu")
    ax.plot(ns, mubars, marker="s", label="mu restricted")
    ax.plot(ns, ims, marker="^", label="i_M")
    if table.growth_class == "superlinear" and table.alpha_bar:
        line = [table.alpha_bar * n - table.beta_bar for n in ns]
        ax.plot(ns, line, linestyle="--", color="gray",
                label="lower line")
    ax.set_xlabel("iterate")
    ax.set_ylabel("index")
    ax.set_title(f"growth: {table.growth_class}")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, filename)


def partition_figure(filename, partition):
    """Iterate nullities colored by partition class."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    cmap = plt.get_cmap("tab10")
    for idx, m in enumerate(partition.m_values):
        members = partition.classes[m]
        if not members:
            continue
        ax.scatter(members, [partition.nullities[m]] * len(members),
                   color=cmap(idx % 10), label=f"class of {m}", s=24)
    ax.set_xlabel("iterate")
    ax.set_ylabel("nullity")
    ax.set_title(f"{partition.s} classes")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, filename)


def morse_relations_figure(filename, mu, beta, q_coeffs):
    """Index counts against Betti numbers with the quotient series."""
    plt = _pyplot()
    ks = np.arange(len(q_coeffs))
    mu = list(mu) + [0] * (len(ks) - len(mu))
    beta = list(beta) + [0] * (len(ks) - len(beta))
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.35
    ax.bar(ks - width / 2, mu[:len(ks)], width, label="mu_k")
    ax.bar(ks + width / 2, beta[:len(ks)], width, label="beta_k")
    ax.plot(ks, q_coeffs, marker="o", color="black", label="q_k")
    ax.set_xlabel("degree k")
    ax.set_ylabel("count")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, filename)
