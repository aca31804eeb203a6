"""Morse index of closed orbits by Galerkin projection, and the index
theorem bookkeeping that ties it to the symplectic side.

For stationary Lorentzian specs the second variation of the energy is
computed on the constrained variation space (fields whose linearized
Killing charge is constant in time); arbitrary periodic fields are
projected into it by a scalar correction along the Killing direction.
Negative and null directions are counted after whitening by an auxiliary
Riemannian H^1 product, on trigonometric bases of doubling order until
the counts stabilize away from the marginal band.

The monodromy side provides the concavity/boundary corrections: a
symmetric form on the space of initial conditions that return with
unchanged position, and the intersection counts n0, n1 entering the
index theorem and its fixed-endpoint variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import bilinear as bl
from . import symplectic as symp
from .geodesic import _system_blocks, geodesic_maslov

__all__ = [
    "GeometryPack",
    "GalerkinResult",
    "BoundaryForm",
    "IndexReport",
    "build_geometry",
    "galerkin_index",
    "boundary_form",
    "index_report",
]

WHITEN_BAND = 1e-7
NODES_FLOOR = 256
MAX_ROUNDS = 5


@dataclass
class GeometryPack:
    """Samples of the frame geometry along the (iterated) orbit."""

    n_iter: int
    ts: np.ndarray
    weights: np.ndarray
    periodic: bool
    constrained: bool
    G: np.ndarray          # frame Gram h^T g h, (m, d, d)
    GRh: np.ndarray        # Hamiltonian block h^T g R(.,v)v h, (m, d, d)
    C: np.ndarray          # frame connection, (m, d, d)
    G_aux: np.ndarray      # auxiliary Riemannian Gram, (m, d, d)
    y: np.ndarray = None         # Killing components in the frame, (m, d)
    ydot_cov: np.ndarray = None  # frame components of nabla_v Y, (m, d)
    gyy: np.ndarray = None       # g(Y, Y), (m,)
    Gy: np.ndarray = None
    Gydc: np.ndarray = None

    @property
    def dim(self):
        return self.G.shape[-1]


def build_geometry(transfer, n_iter, nodes, periodic=True):
    """Sample G, G R_h, C and the Killing data on a quadrature grid over
    [0, n_iter].  Periodic grids omit the right endpoint and use the
    rectangle rule; fixed-endpoint grids include it with trapezoid
    weights."""
    key = (n_iter, int(nodes), periodic)
    cache = getattr(transfer, "_geometry_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(transfer, "_geometry_cache", cache)
    if key in cache:
        return cache[key]

    span = float(n_iter)
    if periodic:
        ts = np.arange(nodes) * (span / nodes)
        weights = np.full(nodes, span / nodes)
    else:
        ts = np.linspace(0.0, span, nodes + 1)
        weights = np.full(nodes + 1, span / nodes)
        weights[0] = weights[-1] = 0.5 * span / nodes
    base = np.mod(ts, 1.0)

    geo = transfer.geodesic
    frame = transfer.frame
    spec = geo.spec
    c, g, rh = _system_blocks(geo, frame, base)
    grh = np.einsum("mij,mjk->mik", g, rh)
    grh = 0.5 * (grh + np.swapaxes(grh, -2, -1))

    pack = GeometryPack(
        n_iter=n_iter, ts=ts, weights=weights, periodic=periodic,
        constrained=spec.has_killing(), G=g, GRh=grh, C=c, G_aux=g,
    )
    if spec.has_killing():
        states = geo.solution.state_many(base)
        xs, vs = states[:, : spec.dim], states[:, spec.dim:]
        h = frame.h_many(base)
        ybig = spec.killing_many(xs)
        ydc = spec.killing_covariant_many(xs, vs)
        pack.y = np.linalg.solve(h, ybig[..., None])[..., 0]
        pack.ydot_cov = np.linalg.solve(h, ydc[..., None])[..., 0]
        pack.Gy = np.einsum("mij,mj->mi", g, pack.y)
        pack.Gydc = np.einsum("mij,mj->mi", g, pack.ydot_cov)
        pack.gyy = np.einsum("mi,mi->m", pack.y, pack.Gy)
        if np.any(pack.gyy >= 0):
            raise ValueError("Killing field fails to be timelike on the orbit")
        pack.G_aux = g - 2.0 * np.einsum("mi,mj->mij", pack.Gy, pack.Gy) \
            / pack.gyy[:, None, None]
    cache[key] = pack
    return pack


def _basis_functions(pack, order):
    """Trigonometric basis values and derivatives on the pack grid."""
    ts = pack.ts
    span = float(pack.n_iter)
    if pack.periodic:
        funcs = [np.ones_like(ts)]
        dfuncs = [np.zeros_like(ts)]
        for k in range(1, order + 1):
            w = 2.0 * np.pi * k / span
            funcs.extend([np.cos(w * ts), np.sin(w * ts)])
            dfuncs.extend([-w * np.sin(w * ts), w * np.cos(w * ts)])
    else:
        funcs, dfuncs = [], []
        for k in range(1, 2 * order + 2):
            w = np.pi * k / span
            funcs.append(np.sin(w * ts))
            dfuncs.append(w * np.cos(w * ts))
    return np.stack(funcs), np.stack(dfuncs)


def _periodic_antiderivative(samples, span):
    """Mean-zero antiderivative of mean-zero periodic samples by spectral
    division; samples live on the uniform open grid over [0, span)."""
    m = samples.shape[-1]
    freq = np.fft.rfftfreq(m, d=span / m)
    spec = np.fft.rfft(samples, axis=-1)
    spec[..., 0] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        spec = spec / (2j * np.pi * freq)
    spec[..., 0] = 0.0
    out = np.fft.irfft(spec, n=m, axis=-1)
    return out - out.mean(axis=-1, keepdims=True)


def _corrected_family(pack, order):
    """Galerkin family on the constrained variation space: trigonometric
    fields in the frame, each corrected along the Killing direction so
    the linearized charge is constant.  Returns (V, DV, charge) with the
    per-member constraint constants (None when unconstrained)."""
    funcs, dfuncs = _basis_functions(pack, order)
    d = pack.dim
    eye = np.eye(d)
    w = np.einsum("am,ie->aime", funcs, eye).reshape(-1, funcs.shape[1], d)
    wdot = np.einsum("am,ie->aime", dfuncs, eye).reshape(w.shape)
    dw = wdot + np.einsum("mij,nmj->nmi", pack.C, w)
    if not pack.constrained:
        return w, dw, None

    kappa = (np.einsum("nmi,mi->nm", dw, pack.Gy)
             - np.einsum("nmi,mi->nm", w, pack.Gydc))
    inv_gyy = 1.0 / pack.gyy
    denom = float(np.sum(pack.weights * inv_gyy))
    charge = (kappa * inv_gyy) @ pack.weights / denom
    lamdot = (charge[:, None] - kappa) * inv_gyy
    if pack.periodic:
        lam = _periodic_antiderivative(lamdot, float(pack.n_iter))
    else:
        lam = cumulative_trapezoid(lamdot, pack.ts, axis=-1, initial=0.0)
        resid = lam[:, -1] / float(pack.n_iter)
        lam = lam - np.outer(resid, pack.ts)
        lamdot = lamdot - resid[:, None]
    v = w + lam[..., None] * pack.y
    dv = dw + lamdot[..., None] * pack.y + lam[..., None] * pack.ydot_cov
    return v, dv, charge


def _weighted_gram(u, coeff, w, weights):
    """Gram matrix sum_m weights[m] * u[n,m,:] @ coeff[m] @ w[k,m,:],
    staged as batched matmul plus one large GEMM."""
    cw = coeff * weights[:, None, None]
    half = np.matmul(u.transpose(1, 0, 2), cw)
    left = np.ascontiguousarray(half.transpose(1, 0, 2)).reshape(u.shape[0], -1)
    right = w.reshape(w.shape[0], -1)
    return left @ right.T


def _quadratic_forms(pack, v, dv):
    a = (_weighted_gram(dv, pack.G, dv, pack.weights)
         + _weighted_gram(v, pack.GRh, v, pack.weights))
    b = (_weighted_gram(dv, pack.G_aux, dv, pack.weights)
         + _weighted_gram(v, pack.G_aux, v, pack.weights))
    return 0.5 * (a + a.T), 0.5 * (b + b.T)


def _whitened_inertia(a, b):
    """Inertia of the form a on the span of the family, using b as the
    positive H^1 product; directions collapsed by the correction map
    (null for b) are dropped before counting."""
    evals, evecs = np.linalg.eigh(b)
    band = WHITEN_BAND * (1.0 + float(np.max(np.abs(evals), initial=0.0)))
    keep = evals > band
    t = evecs[:, keep] / np.sqrt(evals[keep])
    white = t.T @ a @ t
    return bl.index_coindex_nullity(bl.symform(0.5 * (white + white.T)))


@dataclass
class GalerkinResult:
    mu: int
    nullity: int
    order: int
    converged: bool
    history: list            # (order, mu, nullity, marginal) per level
    restricted: bool = False


def galerkin_index(transfer, n_iter=1, periodic=True, restricted=False,
                   order0=None, max_rounds=MAX_ROUNDS):
    """Negative and null directions of the second variation over the
    (constrained) variation space, by trigonometric Galerkin projection
    with doubling order until two levels agree and no eigenvalue sits in
    the marginal band."""
    # Period-one fields (the kernel in particular) occupy harmonics at
    # multiples of n_iter in the span-[0, n_iter] basis, so the starting
    # order must grow with the iterate count or low levels can agree on
    # an under-resolved reading.
    order = order0 if order0 is not None else max(5, 6 * n_iter)
    history = []
    prev = None
    converged = False
    for _ in range(max_rounds):
        nodes = max(NODES_FLOOR, 8 * order) * n_iter
        pack = build_geometry(transfer, n_iter, nodes, periodic=periodic)
        v, dv, charge = _corrected_family(pack, order)
        a, b = _quadratic_forms(pack, v, dv)
        if restricted:
            if charge is None:
                raise ValueError(
                    "restricted index needs a constrained (stationary) spec")
            norm = np.linalg.norm(charge)
            if norm > 1e-12 * (1.0 + float(np.max(np.abs(a)))):
                u, _, vt = np.linalg.svd(charge[None, :])
                nullmat = vt[1:, :].T
                a = nullmat.T @ a @ nullmat
                b = nullmat.T @ b @ nullmat
        counts = _whitened_inertia(a, b)
        history.append((order, counts.n_minus, counts.n_zero, counts.marginal))
        current = (counts.n_minus, counts.n_zero)
        if prev == current and not counts.marginal:
            converged = True
            break
        prev = current
        order *= 2
    mu, nullity = prev if not converged else current
    return GalerkinResult(mu=int(mu), nullity=int(nullity), order=history[-1][0],
                          converged=converged, history=history,
                          restricted=restricted)


# ---------------------------------------------------------------------------
# Monodromy-side bookkeeping
# ---------------------------------------------------------------------------

@dataclass
class BoundaryForm:
    """The symmetric concavity form on initial conditions returning with
    unchanged position, with the intersection counts used by the index
    theorem."""

    matrix: np.ndarray
    basis: np.ndarray
    n_minus: int
    n_zero: int
    n0: int               # dim(S cap vertical)
    n1: int               # dim(ker(P - Id) cap vertical)
    asymmetry: float


def _nullspace_cols(mat, tol=1e-9):
    u, s, vt = np.linalg.svd(mat)
    if s.size:
        rank = int(np.sum(s > tol * s[0]))
    else:
        rank = 0
    return vt[rank:, :].T


def boundary_form(monodromy, tol=1e-9):
    """Concavity form of a symplectic monodromy: on S = ker((P-Id)_top)
    the pairing (P z1 - z1)_bottom . (z2)_top is symmetric, and its
    index enters the periodic index theorem."""
    two_d = monodromy.shape[0]
    d = two_d // 2
    e = monodromy - np.eye(two_d)
    s_basis = _nullspace_cols(e[:d, :], tol)
    es = e @ s_basis
    mat = es[d:, :].T @ s_basis[:d, :]
    scale = 1.0 + float(np.max(np.abs(mat), initial=0.0))
    asym = float(np.linalg.norm(mat - mat.T, ord=np.inf))
    if asym > 1e-7 * scale:
        raise ValueError(f"concavity form fails symmetry: {asym:.3e}")
    counts = bl.index_coindex_nullity(bl.symform(0.5 * (mat + mat.T)))
    vert = np.vstack([np.zeros((d, d)), np.eye(d)])
    if s_basis.shape[1]:
        n0 = bl.intersection(bl.span_of(s_basis), bl.span_of(vert)).dim
    else:
        n0 = 0
    kernel = _nullspace_cols(e, tol)
    if kernel.shape[1]:
        n1 = bl.intersection(bl.span_of(kernel), bl.span_of(vert)).dim
    else:
        n1 = 0
    return BoundaryForm(matrix=0.5 * (mat + mat.T), basis=s_basis,
                        n_minus=counts.n_minus, n_zero=counts.n_zero,
                        n0=n0, n1=n1, asymmetry=asym)


# ---------------------------------------------------------------------------
# The index theorem report
# ---------------------------------------------------------------------------

@dataclass
class IndexReport:
    """Both routes to the Morse index of one iterate, with the identities
    that tie them together.

    ``mu`` and ``nullity`` come from the Galerkin route; ``i_m`` and the
    boundary data come from the symplectic route.  ``shift`` is 1 for the
    constrained (stationary Lorentzian) functional and 0 otherwise; the
    index theorem reads mu = i_m + shift + n_minus_b0 - n1, and the
    fixed-endpoint variant mu_fix = i_m + shift - n0."""

    n_iter: int
    mu: int
    nullity: int
    mu_restricted: int
    i_m: int
    n_minus_b0: int
    n0: int
    n1: int
    shift: int
    nullity_monodromy: int
    mu_fixed: int
    theorem_holds: bool
    fixed_endpoint_holds: bool
    nullity_two_routes_agree: bool
    a_gamma: int
    b_gamma: int
    converged: bool
    galerkin_order: int


def index_report(transfer, n_iter=1, seed=0):
    """Compute the Morse index by Galerkin projection and by the index
    theorem, together with the nullity two-route check and the iteration
    invariants A and B."""
    gal = galerkin_index(transfer, n_iter=n_iter, periodic=True)
    i_m = geodesic_maslov(transfer, n_iter=n_iter, seed=seed)
    p_n = np.linalg.matrix_power(transfer.monodromy, n_iter)
    bform = boundary_form(p_n)
    shift = 1 if transfer.geodesic.spec.has_killing() else 0
    nullity_p = symp._fixed_space_dim(p_n)

    fixed = galerkin_index(transfer, n_iter=n_iter, periodic=False)
    constrained = transfer.geodesic.spec.has_killing()
    if constrained:
        restricted = galerkin_index(transfer, n_iter=n_iter, periodic=True,
                                    restricted=True)
        mu_restricted = restricted.mu
        converged = gal.converged and fixed.converged and restricted.converged
    else:
        mu_restricted = gal.mu
        converged = gal.converged and fixed.converged

    theorem_rhs = i_m + shift + bform.n_minus - bform.n1
    fixed_rhs = i_m + shift - bform.n0
    return IndexReport(
        n_iter=n_iter,
        mu=gal.mu,
        nullity=gal.nullity,
        mu_restricted=mu_restricted,
        i_m=i_m,
        n_minus_b0=bform.n_minus,
        n0=bform.n0,
        n1=bform.n1,
        shift=shift,
        nullity_monodromy=nullity_p,
        mu_fixed=fixed.mu,
        theorem_holds=(gal.mu == theorem_rhs),
        fixed_endpoint_holds=(fixed.mu == fixed_rhs),
        nullity_two_routes_agree=(gal.nullity == nullity_p),
        a_gamma=gal.mu - i_m,
        b_gamma=i_m - mu_restricted,
        converged=converged,
        galerkin_order=gal.order,
    )
