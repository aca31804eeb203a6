"""Maslov, Conley-Zehnder and Hormander indices of symplectic paths.

Index convention.  For a Lagrangian path gamma staying transverse to an
auxiliary Lagrangian L1, the contribution over [t0, t1] is

    extco(gamma(t1)) - extco(gamma(t0)),

where extco(L) is the *extended coindex* of the chart form of L in the
(L0, L1) chart: coindex plus nullity, and the nullity of the chart form
equals dim(L cap L0).  Summing over a partition whose pieces each sit in
a single chart gives mu_L0(gamma), an integer independent of the chart
choices.  Paths are allowed to start or end on the L0-train; the endpoint
contributions are part of the definition here (no half-integers).

Two routes are implemented: an adaptive partition that bisects until each
piece admits one auxiliary chart from a deterministic pool, and a plain
fine-uniform-partition evaluation of the definition used as the reference
oracle (``maslov_index_uniform``).

The Conley-Zehnder index of a symplectic path Phi is the Maslov index of
t -> (Id x Phi(t)) applied to the diagonal, relative to the diagonal, in
(V x V, omega x -omega).  The Hormander index q(L0, L1; L0', L1') is
mu_L1(gamma) - mu_L0(gamma) for any path gamma from L0' to L1'; it is
computed on two independently constructed paths and cross-checked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import bilinear as bl

__all__ = [
    "SympSpace",
    "sympspace",
    "LagrangianFrame",
    "lagrangian_frame",
    "SympPath",
    "vertical",
    "horizontal",
    "diagonal",
    "doubled",
    "chart_form",
    "maslov_index",
    "maslov_index_report",
    "maslov_index_uniform",
    "conley_zehnder",
    "conley_zehnder_uniform",
    "hormander_index",
    "cz_maslov_bridge_check",
    "iteration_bound_check",
    "loop_winding",
    "lagrangian_image",
    "graph_path",
    "iterate_path",
    "concatenate",
    "reverse_path",
    "load_path_json",
    "save_path_json",
    "random_symplectic_path",
    "random_symplectic_loop",
    "rotation_path",
    "self_test",
]

ANGLE_FLOOR = 1e-6        # hard transversality floor (radians)
CONTINUITY_CAP = 0.2      # max Frobenius projector step between samples


class TransversalityError(ValueError):
    pass


class ChartNotFoundError(RuntimeError):
    def __init__(self, t0, t1):
        super().__init__(
            f"no auxiliary Lagrangian chart found on [{t0}, {t1}] "
            "after maximal refinement"
        )
        self.interval = (t0, t1)


class PathKindError(TypeError):
    pass


def canonical_omega(n):
    omega = np.zeros((2 * n, 2 * n))
    omega[:n, n:] = np.eye(n)
    omega[n:, :n] = -np.eye(n)
    return omega


def _darboux_basis(omega, tol=1e-10):
    """Columns of D give a basis with D^T omega D = canonical omega."""
    n2 = omega.shape[0]
    n = n2 // 2
    es, fs = [], []
    candidates = list(np.eye(n2).T)

    def reduce_vec(v):
        for e, f in zip(es, fs):
            v = v - (v @ omega @ f) * e + (v @ omega @ e) * f
        return v

    while len(es) < n:
        v = None
        for c in candidates:
            r = reduce_vec(c)
            if np.linalg.norm(r) > 1e-8:
                v = r / np.linalg.norm(r)
                break
        pairings = [abs(v @ omega @ reduce_vec(c)) for c in candidates]
        w = reduce_vec(candidates[int(np.argmax(pairings))])
        s = v @ omega @ w
        if abs(s) < tol:
            raise ValueError("omega is degenerate; no Darboux basis")
        es.append(v)
        fs.append(w / s)
    d = np.column_stack(es + fs)
    return d


class SympSpace:
    """A real symplectic vector space (R^{2n}, omega)."""

    def __init__(self, dim2n, omega=None):
        if dim2n % 2 != 0 or dim2n <= 0:
            raise ValueError(f"dim2n must be a positive even integer, got {dim2n}")
        self.dim2n = int(dim2n)
        self.n = dim2n // 2
        if omega is None:
            omega = canonical_omega(self.n)
            self._canonical = True
        else:
            omega = np.asarray(omega, dtype=float)
            self._canonical = bool(np.allclose(omega, canonical_omega(self.n)))
        scale = 1.0 + np.linalg.norm(omega, ord=np.inf)
        if np.linalg.norm(omega + omega.T, ord=np.inf) > 1e-10 * scale:
            raise ValueError("omega is not antisymmetric")
        if abs(np.linalg.det(omega)) < 1e-12:
            raise ValueError("omega is degenerate")
        self.omega = omega
        self._darboux = np.eye(dim2n) if self._canonical else _darboux_basis(omega)

    def __eq__(self, other):
        return (
            isinstance(other, SympSpace)
            and self.dim2n == other.dim2n
            and np.array_equal(self.omega, other.omega)
        )

    def __repr__(self):
        tag = "canonical" if self._canonical else "custom"
        return f"SympSpace(dim2n={self.dim2n}, omega={tag})"


def sympspace(dim2n, omega=None):
    return SympSpace(dim2n, omega)


def _orth(columns):
    q, r = np.linalg.qr(columns)
    # fix a deterministic sign so frames are reproducible
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _orth_many(frames):
    q, r = np.linalg.qr(frames)
    diag = np.einsum("...ii->...i", r)
    signs = np.sign(diag)
    signs[signs == 0] = 1.0
    return q * signs[..., None, :]


@dataclass(frozen=True)
class LagrangianFrame:
    space: SympSpace
    basis: np.ndarray  # (2n, n), orthonormal columns


def lagrangian_frame(space, columns, tol=1e-7):
    cols = np.asarray(columns, dtype=float)
    if cols.shape != (space.dim2n, space.n):
        raise ValueError(f"expected frame shape {(space.dim2n, space.n)}, got {cols.shape}")
    basis = _orth(cols)
    resid = np.linalg.norm(basis.T @ space.omega @ basis, ord=np.inf)
    scale = np.linalg.norm(space.omega, ord=np.inf)
    if resid > tol * scale:
        raise ValueError(f"columns do not span a Lagrangian subspace (residual {resid:.3e})")
    return LagrangianFrame(space, basis)


def vertical(space):
    d = space._darboux
    return lagrangian_frame(space, d[:, space.n:])


def horizontal(space):
    d = space._darboux
    return lagrangian_frame(space, d[:, : space.n])


def doubled(space):
    """(V x V, omega x -omega)."""
    n2 = space.dim2n
    omega2 = np.zeros((2 * n2, 2 * n2))
    omega2[:n2, :n2] = space.omega
    omega2[n2:, n2:] = -space.omega
    return SympSpace(2 * n2, omega2)


def diagonal(double_space, base_space):
    eye = np.eye(base_space.dim2n)
    return lagrangian_frame(double_space, np.vstack([eye, eye]))


def graph_frame(double_space, base_space, mat):
    eye = np.eye(base_space.dim2n)
    return lagrangian_frame(double_space, np.vstack([eye, mat]))


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

@dataclass
class SympPath:
    """A path of symplectic matrices or of Lagrangian frames.

    ``evaluate`` maps a scalar parameter to a (2n, 2n) matrix (kind
    "symplectic") or a (2n, n) frame whose span is the Lagrangian (kind
    "lagrangian").  ``evaluate_many`` is an optional vectorized version
    taking an array of parameters; the index routines use it when present.
    """

    space: SympSpace
    kind: str
    evaluate: object
    a: float
    b: float
    grid: np.ndarray
    evaluate_many: object = None

    def at_many(self, ts):
        ts = np.asarray(ts, dtype=float)
        if self.evaluate_many is not None:
            return np.asarray(self.evaluate_many(ts))
        return np.stack([np.asarray(self.evaluate(t), dtype=float) for t in ts])


def _default_grid(a, b, m=33):
    return np.linspace(a, b, m)


def path_from_function(space, kind, fn, a=0.0, b=1.0, grid=None, fn_many=None):
    if kind not in ("symplectic", "lagrangian"):
        raise PathKindError(f"unknown path kind {kind!r}")
    grid = np.asarray(grid, dtype=float) if grid is not None else _default_grid(a, b)
    return SympPath(space, kind, fn, float(a), float(b), grid, fn_many)


def path_from_samples(space, kind, ts, mats, validate=True, tol=1e-6):
    """Piecewise-linear interpolation through the given samples."""
    ts = np.asarray(ts, dtype=float)
    mats = np.asarray(mats, dtype=float)
    if ts.ndim != 1 or ts.size < 2 or np.any(np.diff(ts) <= 0):
        raise ValueError("sample times must be strictly increasing, at least two")
    if validate:
        scale = 1.0 + np.linalg.norm(space.omega, ord=np.inf)
        for k, m in enumerate(mats):
            if kind == "symplectic":
                resid = np.linalg.norm(m.T @ space.omega @ m - space.omega, ord=np.inf)
            else:
                resid = np.linalg.norm(m.T @ space.omega @ m, ord=np.inf)
            if resid > tol * scale:
                raise ValueError(
                    f"sample {k} (t={ts[k]}) fails the {kind} residual test: {resid:.3e}"
                )

    def interp_many(query):
        query = np.atleast_1d(np.asarray(query, dtype=float))
        idx = np.clip(np.searchsorted(ts, query, side="right") - 1, 0, ts.size - 2)
        t0, t1 = ts[idx], ts[idx + 1]
        w = np.where(t1 > t0, (query - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0)
        return (1.0 - w)[:, None, None] * mats[idx] + w[:, None, None] * mats[idx + 1]

    def interp_one(t):
        return interp_many(np.array([t]))[0]

    return SympPath(space, kind, interp_one, float(ts[0]), float(ts[-1]), ts, interp_many)


def lagrangian_image(path, frame):
    """t -> Phi(t)[L] as a Lagrangian path."""
    if path.kind != "symplectic":
        raise PathKindError("lagrangian_image needs a symplectic path")
    basis = frame.basis

    def one(t):
        return path.evaluate(t) @ basis

    def many(ts):
        return path.at_many(ts) @ basis

    return SympPath(path.space, "lagrangian", one, path.a, path.b, path.grid, many)


def graph_path(path):
    """t -> Gr(Phi(t)) = (Id x Phi(t)) [diagonal] in the doubled space."""
    if path.kind != "symplectic":
        raise PathKindError("graph_path needs a symplectic path")
    dspace = doubled(path.space)
    eye = np.eye(path.space.dim2n)

    def one(t):
        return np.vstack([eye, path.evaluate(t)])

    def many(ts):
        mats = path.at_many(ts)
        tops = np.broadcast_to(eye, mats.shape)
        return np.concatenate([tops, mats], axis=1)

    return SympPath(dspace, "lagrangian", one, path.a, path.b, path.grid, many), dspace


def iterate_path(path, n_iter):
    """Extend a one-period symplectic path (Phi(a)=Id on [0,1]) to [0, N]
    by the Floquet rule Phi(k + s) = Phi(s) Phi(1)^k."""
    if path.kind != "symplectic":
        raise PathKindError("iterate_path needs a symplectic path")
    if not (abs(path.a) < 1e-12 and abs(path.b - 1.0) < 1e-12):
        raise ValueError("iterate_path expects the base path on [0, 1]")
    start = np.asarray(path.evaluate(0.0))
    if np.linalg.norm(start - np.eye(path.space.dim2n), ord=np.inf) > 1e-6:
        raise ValueError("iterate_path expects Phi(0) = Id")
    monodromy = np.asarray(path.evaluate(1.0))
    powers = [np.eye(path.space.dim2n)]
    for _ in range(n_iter):
        powers.append(powers[-1] @ monodromy)
    powers = np.stack(powers)

    def split(ts):
        ts = np.asarray(ts, dtype=float)
        k = np.clip(np.floor(ts).astype(int), 0, n_iter - 1)
        return k, ts - k

    def many(ts):
        k, frac = split(np.atleast_1d(ts))
        base = path.at_many(frac)
        return np.einsum("mij,mjk->mik", base, powers[k])

    def one(t):
        return many(np.array([t]))[0]

    grid = np.concatenate([path.grid[:-1] + k for k in range(n_iter)] + [[float(n_iter)]])
    return SympPath(path.space, "symplectic", one, 0.0, float(n_iter), grid, many)


def concatenate(p1, p2):
    if abs(p1.b - p2.a) > 1e-12:
        raise ValueError("paths do not share an endpoint")
    if p1.kind != p2.kind or p1.space != p2.space:
        raise ValueError("paths are not compatible")

    def one(t):
        return p1.evaluate(t) if t <= p1.b else p2.evaluate(t)

    def many(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = None
        left = ts <= p1.b
        vals_left = p1.at_many(ts[left]) if np.any(left) else None
        vals_right = p2.at_many(ts[~left]) if np.any(~left) else None
        probe = vals_left if vals_left is not None else vals_right
        out = np.empty((ts.size,) + probe.shape[1:])
        if vals_left is not None:
            out[left] = vals_left
        if vals_right is not None:
            out[~left] = vals_right
        return out

    grid = np.concatenate([p1.grid, p2.grid[1:]])
    return SympPath(p1.space, p1.kind, one, p1.a, p2.b, grid, many)


def shift_path(path, offset):
    """Reparametrize by t -> t - offset (the domain moves by +offset)."""

    def one(t):
        return path.evaluate(t - offset)

    def many(ts):
        return path.at_many(np.asarray(ts, dtype=float) - offset)

    return SympPath(path.space, path.kind, one, path.a + offset,
                    path.b + offset, path.grid + offset, many)


def reverse_path(path):
    a, b = path.a, path.b

    def one(t):
        return path.evaluate(a + b - t)

    def many(ts):
        return path.at_many(a + b - np.asarray(ts, dtype=float))

    return SympPath(path.space, path.kind, one, a, b, (a + b - path.grid)[::-1].copy(), many)


# ---------------------------------------------------------------------------
# Chart forms and extended coindices
# ---------------------------------------------------------------------------

def chart_form(space, lag, l0, l1, tol=None):
    """The symmetric form representing ``lag`` in the (l0, l1) chart.

    ``lag`` must be transverse to l1; write x in lag uniquely as u + T u
    with u in l0, T u in l1, then the form is omega(T., .) restricted to
    l0 in the basis of l0.  Its nullity equals dim(lag cap l0).
    """
    frames = np.asarray(lag.basis if isinstance(lag, LagrangianFrame) else lag, dtype=float)
    phi = _chart_forms_batch(frames[None], l0.basis, l1.basis, space.omega)[0]
    return bl.symform(phi, tol)


def _chart_forms_batch(frames, l0basis, l1basis, omega):
    n = l0basis.shape[1]
    a = np.hstack([l0basis, l1basis])
    try:
        coords = np.linalg.solve(np.broadcast_to(a, frames.shape[:1] + a.shape), frames)
    except np.linalg.LinAlgError:
        raise TransversalityError("l0 and l1 are not transverse") from None
    u = coords[:, :n, :]
    w = coords[:, n:, :]
    k = l1basis.T @ omega @ l0basis
    m = np.swapaxes(w, 1, 2) @ k
    try:
        phi = np.linalg.solve(np.swapaxes(u, 1, 2), m)
    except np.linalg.LinAlgError:
        raise TransversalityError("path frame is not transverse to the chart Lagrangian") from None
    return 0.5 * (phi + np.swapaxes(phi, 1, 2))


def _extco_batch(frames, l0basis, l1basis, omega):
    """Extended coindex (coindex + nullity of the chart form) per frame,
    with the margin (decades) of each zero-band decision."""
    phi = _chart_forms_batch(frames, l0basis, l1basis, omega)
    eigs = np.linalg.eigvalsh(phi)
    norms = np.max(np.abs(eigs), axis=1)
    tols = 1e-9 * (1.0 + norms)
    extco = np.sum(eigs >= -tols[:, None], axis=1)
    mags = np.abs(eigs)
    safe = np.maximum(mags, 1e-300)
    dec = np.where(mags > 0.0, np.abs(np.log10(safe / tols[:, None])), np.inf)
    margins = np.min(dec, axis=1)
    return extco.astype(int), margins


def _angle_margins(frames, other_basis):
    """Smallest principal angle between each frame and ``other_basis``."""
    prods = np.swapaxes(frames, -2, -1) @ other_basis
    smax = np.linalg.svd(prods, compute_uv=False)[..., 0]
    return np.arccos(np.clip(smax, -1.0, 1.0))


def _proj_dist(f1, f2):
    p1 = f1 @ np.swapaxes(f1, -2, -1)
    p2 = f2 @ np.swapaxes(f2, -2, -1)
    return np.linalg.norm(p1 - p2, axis=(-2, -1))


# ---------------------------------------------------------------------------
# Maslov index: adaptive partition route
# ---------------------------------------------------------------------------

@dataclass
class MaslovSegment:
    t0: float
    t1: float
    chart: int
    extco0: int
    extco1: int
    eig_margin: float
    angle_margin: float


@dataclass
class MaslovReport:
    value: int
    segments: list
    marginal: bool
    min_eig_margin: float
    min_angle_margin: float
    retried: bool = False


def _pool_frames(space, seed=0, extra=8):
    """Deterministic auxiliary-chart candidates: vertical/horizontal,
    graphs of a few fixed symmetric forms, and seeded random graphs."""
    n = space.n
    d = space._darboux
    rng = np.random.default_rng(seed)
    syms = [np.zeros((n, n)), np.eye(n), -np.eye(n), 2.0 * np.eye(n)]
    for _ in range(extra):
        s = rng.uniform(-2.0, 2.0, size=(n, n))
        syms.append(0.5 * (s + s.T))
    frames = [d[:, n:], d[:, :n]]
    eye = np.eye(n)
    for s in syms:
        frames.append(d @ np.vstack([eye, s]))       # graph over horizontal
    for s in syms[1:4]:
        frames.append(d @ np.vstack([s, eye]))       # graph over vertical
    return [_orth(f) for f in frames]


def _lagrangian_frames_of(path, ts):
    mats = path.at_many(ts)
    return _orth_many(mats)


class _MaslovRun:
    def __init__(self, path, l0, pool, angle_floor, cont_cap, max_frames=60000):
        if path.kind != "lagrangian":
            raise PathKindError("maslov_index needs a Lagrangian path")
        self.path = path
        self.l0 = l0
        self.pool = pool
        self.omega = path.space.omega
        self.floor = angle_floor
        self.cap = cont_cap
        self.segments = []
        self.budget = max_frames
        self.l0_margins = [float(_angle_margins(p[None], l0.basis)[0]) for p in pool]

    def frames(self, ts):
        self.budget -= len(ts)
        if self.budget < 0:
            raise ChartNotFoundError(self.path.a, self.path.b)
        return _lagrangian_frames_of(self.path, np.asarray(ts))

    def refine(self, ts, frames):
        """Insert midpoints until consecutive projector steps are small."""
        ts = list(ts)
        frames = list(frames)
        for _ in range(40):
            dists = _proj_dist(np.stack(frames[:-1]), np.stack(frames[1:]))
            bad = np.where(dists > self.cap)[0]
            if bad.size == 0:
                return np.asarray(ts), np.stack(frames)
            new_ts = [(ts[i] + ts[i + 1]) / 2.0 for i in bad]
            new_frames = self.frames(new_ts)
            for offset, i in enumerate(bad):
                ts.insert(i + 1 + offset, new_ts[offset])
                frames.insert(i + 1 + offset, new_frames[offset])
        raise ChartNotFoundError(ts[0], ts[-1])

    def candidate_for(self, frames):
        """First pool chart transverse to l0 and every sample, with the
        between-sample safety rule; None when none qualifies."""
        dists = _proj_dist(frames[:-1], frames[1:]) if len(frames) > 1 else np.zeros(0)
        for idx, cand in enumerate(self.pool):
            if self.l0_margins[idx] <= self.floor:
                continue
            margins = _angle_margins(frames, cand)
            worst = float(np.min(margins))
            if worst <= self.floor:
                continue
            if dists.size and float(np.max(dists)) > 0.5 * np.sin(worst):
                continue
            return idx, worst
        return None

    def process(self, ts, frames, depth=0):
        if depth > 48:
            raise ChartNotFoundError(ts[0], ts[-1])
        ts, frames = self.refine(ts, frames)
        found = self.candidate_for(frames)
        if found is None:
            mid = len(ts) // 2
            if len(ts) == 2:
                tm = 0.5 * (ts[0] + ts[1])
                fm = self.frames([tm])[0]
                self.process([ts[0], tm], [frames[0], fm], depth + 1)
                self.process([tm, ts[1]], [fm, frames[1]], depth + 1)
                return
            self.process(ts[: mid + 1], frames[: mid + 1], depth + 1)
            self.process(ts[mid:], frames[mid:], depth + 1)
            return
        idx, angle_margin = found
        cand = self.pool[idx]
        ends = np.stack([frames[0], frames[-1]])
        extco, margins = _extco_batch(ends, self.l0.basis, cand, self.omega)
        self.segments.append(
            MaslovSegment(
                t0=float(ts[0]),
                t1=float(ts[-1]),
                chart=idx,
                extco0=int(extco[0]),
                extco1=int(extco[1]),
                eig_margin=float(np.min(margins)),
                angle_margin=angle_margin,
            )
        )


def _run_maslov(path, l0, seed, pool_offset, presplit):
    pool = _pool_frames(path.space, seed=seed)
    pool = pool[pool_offset:] + pool[:pool_offset]
    run = _MaslovRun(path, l0, pool, ANGLE_FLOOR, CONTINUITY_CAP)
    grid = np.asarray(path.grid, dtype=float)
    if presplit:
        mids = 0.5 * (grid[:-1] + grid[1:])
        grid = np.sort(np.concatenate([grid, mids]))
    frames = run.frames(grid)
    run.process(list(grid), list(frames))
    run.segments.sort(key=lambda s: s.t0)
    value = sum(s.extco1 - s.extco0 for s in run.segments)
    eig_margin = min((s.eig_margin for s in run.segments), default=np.inf)
    angle_margin = min((s.angle_margin for s in run.segments), default=np.inf)
    return MaslovReport(
        value=int(value),
        segments=run.segments,
        marginal=eig_margin < 1.0,
        min_eig_margin=float(eig_margin),
        min_angle_margin=float(angle_margin),
    )


def maslov_index_report(path, l0=None, seed=0):
    """Adaptive-partition Maslov index with per-segment margins.

    A marginal eigenvalue decision at a segment endpoint triggers one
    re-run on a perturbed partition (midpoints inserted, pool rotated);
    the report keeps the marginal flag if the retry is marginal too.
    """
    if l0 is None:
        l0 = vertical(path.space)
    report = _run_maslov(path, l0, seed, pool_offset=0, presplit=False)
    if report.marginal:
        retry = _run_maslov(path, l0, seed, pool_offset=3, presplit=True)
        retry.retried = True
        if retry.value != report.value and not retry.marginal:
            return retry
        if retry.min_eig_margin > report.min_eig_margin:
            return retry
    return report


def maslov_index(path, l0=None, seed=0):
    return maslov_index_report(path, l0, seed).value


# ---------------------------------------------------------------------------
# Maslov index: fine-uniform-partition reference evaluation
# ---------------------------------------------------------------------------

def maslov_index_uniform(path, l0=None, samples=10000, seed=0):
    """Definition evaluated on a fine uniform partition.

    Each subinterval gets the first pool chart transverse to l0 and both
    endpoint frames; the index is the telescoped sum of extended-coindex
    differences.  Used as the independent oracle for the adaptive route.
    """
    if path.kind != "lagrangian":
        raise PathKindError("maslov_index_uniform needs a Lagrangian path")
    if l0 is None:
        l0 = vertical(path.space)
    pool = _pool_frames(path.space, seed=seed)
    omega = path.space.omega

    for _ in range(5):
        ts = np.linspace(path.a, path.b, samples + 1)
        frames = _lagrangian_frames_of(path, ts)
        steps = _proj_dist(frames[:-1], frames[1:])
        assignment = np.full(samples, -1, dtype=int)
        unresolved = np.arange(samples)
        for idx, cand in enumerate(pool):
            if unresolved.size == 0:
                break
            if float(_angle_margins(cand[None], l0.basis)[0]) <= ANGLE_FLOOR:
                continue
            margins = _angle_margins(frames, cand)
            pair_min = np.minimum(margins[unresolved], margins[unresolved + 1])
            # endpoints transverse AND the step too small to cross the
            # cand-train inside the subinterval
            ok = (pair_min > ANGLE_FLOOR) & (steps[unresolved] <= 0.5 * np.sin(pair_min))
            assignment[unresolved[ok]] = idx
            unresolved = unresolved[~ok]
        if unresolved.size == 0:
            total = 0
            for idx in np.unique(assignment):
                cand = pool[idx]
                members = np.where(assignment == idx)[0]
                left, _ = _extco_batch(frames[members], l0.basis, cand, omega)
                right, _ = _extco_batch(frames[members + 1], l0.basis, cand, omega)
                total += int(np.sum(right - left))
            return total
        samples *= 2
    t_bad = ts[unresolved[0]]
    raise ChartNotFoundError(t_bad, ts[unresolved[0] + 1])


# ---------------------------------------------------------------------------
# Conley-Zehnder, Hormander, bridge identity, iteration bounds
# ---------------------------------------------------------------------------

def conley_zehnder(path, seed=0):
    gpath, dspace = graph_path(path)
    return maslov_index(gpath, diagonal(dspace, path.space), seed=seed)


def conley_zehnder_uniform(path, samples=10000, seed=0):
    gpath, dspace = graph_path(path)
    return maslov_index_uniform(gpath, diagonal(dspace, path.space), samples=samples, seed=seed)


def _chart_segment_path(space, kstart, kend, chart, cochart):
    """Linear path in the (cochart, chart) chart from kstart to kend."""
    j0 = chart.basis.T @ space.omega @ cochart.basis
    phi0 = chart_form(space, kstart, cochart, chart).matrix
    phi1 = chart_form(space, kend, cochart, chart).matrix
    m0 = np.linalg.solve(j0.T, phi0)
    m1 = np.linalg.solve(j0.T, phi1)

    def many(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        ms = (1.0 - ts)[:, None, None] * m0 + ts[:, None, None] * m1
        return cochart.basis[None] + np.einsum("ij,mjk->mik", chart.basis, ms)

    def one(t):
        return many(np.array([t]))[0]

    return SympPath(space, "lagrangian", one, 0.0, 1.0, np.linspace(0, 1, 17), many)


def _transverse_to_all(space, frames, seed, skip=0):
    skipped = 0
    for cand in _pool_frames(space, seed=seed):
        margin = min(float(_angle_margins(cand[None], f.basis)[0]) for f in frames)
        if margin > 1e-4:
            if skipped >= skip:
                return lagrangian_frame(space, cand)
            skipped += 1
    for cand in _pool_frames(space, seed=seed + 101, extra=24)[2:]:
        margin = min(float(_angle_margins(cand[None], f.basis)[0]) for f in frames)
        if margin > 1e-5:
            if skipped >= skip:
                return lagrangian_frame(space, cand)
            skipped += 1
    raise TransversalityError("no pool Lagrangian transverse to all the given frames")


def _hormander_via_path(space, l0, l1, gamma, seed):
    return maslov_index(gamma, l1, seed=seed) - maslov_index(gamma, l0, seed=seed)


def hormander_index(l0, l1, l0p, l1p, seed=0):
    """q(L0, L1; L0', L1'), computed on two independently constructed
    paths from L0' to L1' and cross-checked for path independence."""
    space = l0.space
    chart = _transverse_to_all(space, [l0p, l1p], seed)
    cochart = _transverse_to_all(space, [chart], seed, skip=0)
    gamma = _chart_segment_path(space, l0p, l1p, chart, cochart)
    q1 = _hormander_via_path(space, l0, l1, gamma, seed)

    mid = _transverse_to_all(space, [chart], seed + 7, skip=1)
    chart2 = _transverse_to_all(space, [l0p, mid, l1p], seed + 13, skip=1)
    cochart2 = _transverse_to_all(space, [chart2], seed + 17)
    seg1 = _chart_segment_path(space, l0p, mid, chart2, cochart2)
    seg2 = shift_path(_chart_segment_path(space, mid, l1p, chart2, cochart2), 1.0)
    gamma2 = concatenate(seg1, seg2)
    q2 = _hormander_via_path(space, l0, l1, gamma2, seed)
    if q1 != q2:
        raise RuntimeError(
            f"Hormander index is path dependent in this computation: {q1} != {q2}"
        )
    return q1


def _fixed_space_dim(mat, tol=1e-7):
    s = np.linalg.svd(mat - np.eye(mat.shape[0]), compute_uv=False)
    scale = max(1.0, float(s[0]))
    return int(np.sum(s < tol * scale))


def cz_maslov_bridge_check(path, l0=None, ell0=None, seed=0):
    """Check i_CZ(Phi) + mu_L0(Phi[ell0]) = q(Delta, L0 x ell0;
    Gr(Phi(a)^-1), Gr(Phi(b)^-1)) and return the three integers.

    The identity as stated needs endpoints without eigenvalue 1 (or a
    loop).  For paths that start or end on the eigenvalue-1 stratum the
    exact statement acquires the endpoint term
    dim ker(Phi(b)-Id) - dim ker(Phi(a)-Id); both verdicts are returned.
    """
    space = path.space
    if l0 is None:
        l0 = vertical(space)
    if ell0 is None:
        ell0 = vertical(space)
    i_cz = conley_zehnder(path, seed=seed)
    mu = maslov_index(lagrangian_image(path, ell0), l0, seed=seed)
    dspace = doubled(space)
    delta = diagonal(dspace, space)
    l0_x_ell0 = lagrangian_frame(
        dspace, scipy.linalg.block_diag(l0.basis, ell0.basis)
    )
    phi_a = np.asarray(path.evaluate(path.a))
    phi_b = np.asarray(path.evaluate(path.b))
    gr_a = graph_frame(dspace, space, np.linalg.inv(phi_a))
    gr_b = graph_frame(dspace, space, np.linalg.inv(phi_b))
    q = hormander_index(delta, l0_x_ell0, gr_a, gr_b, seed=seed)
    correction = _fixed_space_dim(phi_b) - _fixed_space_dim(phi_a)
    return {
        "i_cz": i_cz,
        "mu": mu,
        "q": q,
        "endpoint_term": correction,
        "holds": i_cz + mu == q,
        "holds_with_endpoint_term": i_cz + mu == q + correction,
    }


def relative_maslov_check(path, l0, l1, seed=0):
    """Check mu_L0(Phi[K]) - mu_L1(Phi[K])-type difference formula:
    for beta_L(t) = Phi(t)[L], the difference
    mu_L0(beta_{L1'}) - mu_L0(beta_{L1}) equals
    q(L1, L1'; Phi(a)^-1 L0, Phi(b)^-1 L0).  Here L1, L1' are the two
    given frames; returns the dict of integers and the verdict."""
    space = path.space
    l0v = vertical(space)
    mu1 = maslov_index(lagrangian_image(path, l0), l0v, seed=seed)
    mu2 = maslov_index(lagrangian_image(path, l1), l0v, seed=seed)
    inv_a = np.linalg.inv(path.evaluate(path.a))
    inv_b = np.linalg.inv(path.evaluate(path.b))
    fa = lagrangian_frame(space, inv_a @ l0v.basis)
    fb = lagrangian_frame(space, inv_b @ l0v.basis)
    q = hormander_index(l0, l1, fa, fb, seed=seed)
    return {"mu_first": mu1, "mu_second": mu2, "q": q, "holds": mu1 - mu2 == q}


@dataclass(frozen=True)
class BoundReport:
    """Stated iteration bound plus the two-sided envelope.

    ``bound`` is the published constant (n(N-1) for the Conley-Zehnder
    index, n(7N+5) for the Maslov index).  With the endpoint-inclusive
    index convention used throughout this package the Conley-Zehnder
    constant is one-sided only: a positive elliptic block with rotation
    number theta in (1/2, 1) deviates by 2 floor(theta N), which exceeds
    n(N-1) and saturates 2n(N-1).  ``two_sided_bound`` records the
    envelope that does hold (2n(N-1), resp. n(8N+4)).
    """

    which: str
    n_iter: int
    half_dim: int
    base_value: int
    iterate_value: int
    bound: int
    within: bool
    two_sided_bound: int
    within_two_sided: bool


def iteration_bound_check(path, n_iter, which="cz", l0=None, seed=0):
    """Iterate a one-period symplectic path and compare the index of the
    iterate against N times the base index:

        |i_CZ(z^N) - N i_CZ(z)|   <= n (N - 1)
        |mu_L0(z^N) - N mu_L0(z)| <= n (7 N + 5)
    """
    n = path.space.n
    ipath = iterate_path(path, n_iter)
    if which == "cz":
        base = conley_zehnder(path, seed=seed)
        iterate = conley_zehnder(ipath, seed=seed)
        bound = n * (n_iter - 1)
        two_sided = 2 * n * (n_iter - 1)
    elif which == "maslov":
        if l0 is None:
            l0 = vertical(path.space)
        base = maslov_index(lagrangian_image(path, l0), l0, seed=seed)
        iterate = maslov_index(lagrangian_image(ipath, l0), l0, seed=seed)
        bound = n * (7 * n_iter + 5)
        two_sided = n * (8 * n_iter + 4)
    else:
        raise ValueError(f"unknown bound kind {which!r}")
    dev = abs(iterate - n_iter * base)
    return BoundReport(which, n_iter, n, base, iterate, bound, dev <= bound,
                       two_sided, dev <= two_sided)


# ---------------------------------------------------------------------------
# Winding of the unitary polar factor along a loop
# ---------------------------------------------------------------------------

def _unitary_dets(space, mats):
    d = space._darboux
    dinv = np.linalg.inv(d)
    n = space.n
    canon = np.einsum("ij,mjk,kl->mil", dinv, mats, d)
    gram = np.swapaxes(canon, 1, 2) @ canon
    eigs, vecs = np.linalg.eigh(gram)
    inv_sqrt = np.einsum(
        "mij,mj,mkj->mik", vecs, 1.0 / np.sqrt(eigs), vecs
    )
    q = canon @ inv_sqrt
    a = q[:, :n, :n]
    b = q[:, :n, n:]
    return np.linalg.det(a + 1j * b)


def loop_winding(path, samples=256, require_closed=True):
    """Winding number of det of the unitary polar factor along the path.

    For a loop this is the homotopy class in Sp(2n); block-diagonal loops
    diag(eta, (eta^*)^-1) wind zero.  Refines the sampling until adjacent
    phase steps are below pi/2, then unwinds and checks integrality.
    """
    if path.kind != "symplectic":
        raise PathKindError("loop_winding needs a symplectic path")
    m0 = np.asarray(path.evaluate(path.a))
    m1 = np.asarray(path.evaluate(path.b))
    if require_closed and np.linalg.norm(m1 - m0, ord=np.inf) > 1e-6 * (1 + np.linalg.norm(m0)):
        raise ValueError("path endpoints differ; not a loop")
    for _ in range(8):
        ts = np.linspace(path.a, path.b, samples + 1)
        dets = _unitary_dets(path.space, path.at_many(ts))
        steps = np.angle(dets[1:] / dets[:-1])
        if np.max(np.abs(steps)) < 0.5 * np.pi:
            total = float(np.sum(steps))
            winding = total / (2.0 * np.pi)
            nearest = int(np.round(winding))
            if require_closed and abs(winding - nearest) > 0.05:
                raise RuntimeError(f"winding {winding:.6f} is not near an integer")
            return nearest if require_closed else winding
        samples *= 2
    raise RuntimeError("loop sampling did not stabilize the phase steps")


# ---------------------------------------------------------------------------
# Path file format
# ---------------------------------------------------------------------------

def save_path_json(filename, path, samples=None):
    """Write {dim2n, kind, omega, samples: [[t, row-major matrix]...]}."""
    if samples is None:
        samples = path.grid
    samples = np.asarray(samples, dtype=float)
    mats = path.at_many(samples)
    doc = {
        "dim2n": path.space.dim2n,
        "kind": path.kind,
        "omega": [list(row) for row in path.space.omega],
        "samples": [
            [float(t), [float(x) for x in mat.reshape(-1)]]
            for t, mat in zip(samples, mats)
        ],
    }
    with open(filename, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_path_json(filename):
    with open(filename) as fh:
        doc = json.load(fh)
    dim2n = int(doc["dim2n"])
    kind = doc["kind"]
    if kind not in ("symplectic", "lagrangian"):
        raise ValueError(f"unknown path kind {kind!r} in {filename}")
    omega = np.asarray(doc["omega"], dtype=float) if "omega" in doc and doc["omega"] is not None else None
    space = SympSpace(dim2n, omega)
    cols = dim2n if kind == "symplectic" else dim2n // 2
    ts, mats = [], []
    for t, flat in doc["samples"]:
        ts.append(float(t))
        mat = np.asarray(flat, dtype=float).reshape(dim2n, cols)
        mats.append(mat)
    return path_from_samples(space, kind, np.asarray(ts), np.stack(mats))


# ---------------------------------------------------------------------------
# Random path families (diagonalized generators, vectorized evaluation)
# ---------------------------------------------------------------------------

def random_sp_generator(space, rng, scale=1.0):
    n2 = space.dim2n
    s = rng.standard_normal((n2, n2))
    s = 0.5 * (s + s.T)
    return scale * np.linalg.solve(space.omega, s)


def _expm_family(gen):
    """Returns f(ts) -> expm(f_k * gen) evaluated in a batch, via a
    well-conditioned eigendecomposition (caller retries on bad luck)."""
    vals, vecs = np.linalg.eig(gen)
    cond = np.linalg.cond(vecs)
    if not np.isfinite(cond) or cond > 1e8:
        return None
    vinv = np.linalg.inv(vecs)

    def apply(fs):
        fs = np.asarray(fs, dtype=float)
        e = np.exp(np.multiply.outer(fs, vals))
        out = np.einsum("ij,mj,jk->mik", vecs, e, vinv)
        return np.ascontiguousarray(out.real)

    return apply


def _smooth_profile(rng, loop=False):
    a = float(rng.uniform(0.5, 1.5)) * (1 if rng.random() < 0.5 else -1)
    k = int(rng.integers(1, 3))
    ph = float(rng.uniform(0, 2 * np.pi))
    if loop:
        return lambda ts: a * np.sin(np.pi * ts) ** 2 * np.cos(k * np.pi * ts + ph)
    b = float(rng.uniform(-0.5, 0.5))
    return lambda ts: a * np.asarray(ts) + b * np.sin(np.pi * k * np.asarray(ts) + ph) - b * np.sin(ph)


def random_symplectic_path(space, rng, scale=1.0, loop=False, from_identity=True):
    """Smooth random path.  With ``from_identity`` the path starts at Id;
    otherwise both endpoints are generic (no eigenvalue 1)."""
    while True:
        g1 = random_sp_generator(space, rng, scale)
        g2 = random_sp_generator(space, rng, scale)
        fam1, fam2 = _expm_family(g1), _expm_family(g2)
        if fam1 is not None and fam2 is not None:
            break
    f1 = _smooth_profile(rng, loop)
    f2 = _smooth_profile(rng, loop)
    tail = np.eye(space.dim2n)
    if not from_identity and not loop:
        while True:
            g3 = random_sp_generator(space, rng, scale)
            fam3 = _expm_family(g3)
            if fam3 is not None:
                break
        tail = fam3(np.array([1.0]))[0]

    def many(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return np.einsum("mij,mjk->mik", fam1(f1(ts)), fam2(f2(ts))) @ tail

    def one(t):
        return many(np.array([t]))[0]

    return SympPath(space, "symplectic", one, 0.0, 1.0, np.linspace(0, 1, 33), many)


def rotation_path(space, turns, duration=1.0):
    """Plane-wise rotations: in Darboux coordinates each (q_i, p_i) plane
    turns by 2 pi turns_i t / duration."""
    n = space.n
    turns = np.asarray(turns, dtype=float)
    d = space._darboux
    dinv = np.linalg.inv(d)

    def many(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.zeros((ts.size, 2 * n, 2 * n))
        for i in range(n):
            th = 2.0 * np.pi * turns[i] * ts / duration
            out[:, i, i] = np.cos(th)
            out[:, i, n + i] = -np.sin(th)
            out[:, n + i, i] = np.sin(th)
            out[:, n + i, n + i] = np.cos(th)
        return np.einsum("ij,mjk,kl->mil", d, out, dinv)

    def one(t):
        return many(np.array([t]))[0]

    return SympPath(space, "symplectic", one, 0.0, duration,
                    np.linspace(0, duration, 65), many)


def random_symplectic_loop(space, rng, winding=0):
    """A loop: contractible random factor times a plane rotation with the
    requested winding (sign convention: one positive (q,p)-plane turn has
    winding -1 for the det of the unitary polar factor here)."""
    base = random_symplectic_path(space, rng, loop=True)
    if winding == 0:
        return base
    turns = np.zeros(space.n)
    turns[0] = -winding
    rot = rotation_path(space, turns)

    def many(ts):
        return np.einsum("mij,mjk->mik", base.at_many(ts), rot.at_many(ts))

    def one(t):
        return many(np.array([t]))[0]

    return SympPath(space, "symplectic", one, 0.0, 1.0, base.grid, many)


def random_lagrangian_frame(space, rng):
    while True:
        path = random_symplectic_path(space, rng, scale=1.0)
        mat = path.evaluate(float(rng.uniform(0.3, 1.0)))
        cand = mat @ vertical(space).basis
        try:
            return lagrangian_frame(space, cand)
        except ValueError:
            continue


# ---------------------------------------------------------------------------
# Randomized self-test (CLI selftest uses this)
# ---------------------------------------------------------------------------

def self_test(seed=0, cases=12):
    rng = np.random.default_rng(seed)
    failures = []

    for case in range(cases):
        n = 1 + case % 2
        space = SympSpace(2 * n)
        path = random_symplectic_path(space, rng, from_identity=False)
        lpath = lagrangian_image(path, vertical(space))

        mu_fast = maslov_index(lpath, seed=seed)
        mu_ref = maslov_index_uniform(lpath, samples=2000, seed=seed)
        if mu_fast != mu_ref:
            failures.append({"check": "maslov-oracle", "case": case,
                             "fast": mu_fast, "reference": mu_ref})

        cz_fast = conley_zehnder(path, seed=seed)
        cz_ref = conley_zehnder_uniform(path, samples=2000, seed=seed)
        if cz_fast != cz_ref:
            failures.append({"check": "cz-oracle", "case": case,
                             "fast": cz_fast, "reference": cz_ref})

        bridge = cz_maslov_bridge_check(path, seed=seed)
        if not bridge["holds"]:
            failures.append({"check": "bridge", "case": case, **bridge})

        loop = random_symplectic_loop(space, rng, winding=int(rng.integers(-1, 2)))
        czl = conley_zehnder(loop, seed=seed)
        mul = maslov_index(lagrangian_image(loop, vertical(space)), seed=seed)
        if czl != -mul:
            failures.append({"check": "loop-cz-vs-maslov", "case": case,
                             "cz": czl, "mu": mul})

    # fixed sanity values
    space1 = SympSpace(2)
    rot = rotation_path(space1, [1.0])
    if abs(conley_zehnder(rot)) != 2:
        failures.append({"check": "rotation-loop-cz"})
    if abs(loop_winding(rot)) != 1:
        failures.append({"check": "rotation-loop-winding"})

    return {
        "suite": "symplectic",
        "cases": cases,
        "seed": seed,
        "failures": failures,
        "ok": not failures,
    }
