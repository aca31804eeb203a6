"""Closed geodesics and their linearized flow.

The pipeline here starts from a manifold spec and an initial-data guess,
refines it to a closed orbit of period one, builds a periodic frame along
the orbit by correcting parallel transport for holonomy, and integrates
the Jacobi system in that frame.  The output is a symplectic path (the
fundamental solution) and the Lagrangian path of vertical images, ready
for the index machinery in :mod:`geodex.symplectic`.

Conventions: orbits are parameterized on [0, 1]; longer periods are
absorbed into the velocity scale, so iterates live on [0, N] through the
Floquet rule rather than re-integration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import schur

from . import symplectic as symp
from .manifold import ChartDomainError

__all__ = [
    "IntegrationError",
    "ClosedGeodesicError",
    "GeodesicSolution",
    "ClosedGeodesic",
    "TransferFrame",
    "TransferData",
    "integrate_geodesic",
    "refine_closed",
    "periodic_trivialization",
    "jacobi_transfer",
    "geodesic_maslov",
]

RTOL = 1e-10
ATOL = 1e-12
ENERGY_DRIFT_TOL = 1e-8
CLOSURE_TOL = 1e-9
SYMPLECTIC_TOL = 1e-8


class IntegrationError(RuntimeError):
    pass


class ClosedGeodesicError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


def _domain_events(spec):
    events = []
    for i, c in enumerate(spec.coords):
        if c not in spec.domain:
            continue
        lo, hi = spec.domain[c]

        def low(t, y, i=i, lo=lo):
            return y[i] - lo

        def high(t, y, i=i, hi=hi):
            return y[i] - hi

        low.terminal = high.terminal = True
        events.extend([low, high])
    return events


@dataclass
class GeodesicSolution:
    """Dense solution of the geodesic equation with conservation data."""

    spec: object
    interp: object                  # OdeSolution over [t0, t1]
    t_span: tuple
    energy: float
    c_gamma: float = None
    energy_drift: float = 0.0
    killing_drift: float = 0.0

    def state_many(self, ts):
        out = self.interp(np.atleast_1d(np.asarray(ts, dtype=float)))
        return np.moveaxis(out, -1, 0)

    def x_many(self, ts):
        return self.state_many(ts)[:, : self.spec.dim]

    def v_many(self, ts):
        return self.state_many(ts)[:, self.spec.dim:]

    def state(self, t):
        return self.state_many(np.array([t]))[0]


def integrate_geodesic(spec, x0, v0, t_span=(0.0, 1.0), check=True,
                       rtol=RTOL, atol=ATOL):
    """Integrate the geodesic equation with dense output.

    Raises ChartDomainError (with the last good time and state) if the
    orbit leaves a declared domain, and IntegrationError if the solver
    fails or the conserved quantities drift beyond tolerance.
    """
    d = spec.dim
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)

    def rhs(t, y):
        x, v = y[:d], y[d:]
        gam = spec.christoffel_many(x[None])[0]
        acc = -np.einsum("kij,i,j->k", gam, v, v)
        return np.concatenate([v, acc])

    sol = solve_ivp(rhs, t_span, np.concatenate([x0, v0]), method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True,
                    events=_domain_events(spec) or None)
    if sol.status == 1:
        raise ChartDomainError(
            f"orbit left the declared domain at t={sol.t[-1]:.6f}",
            t_last=float(sol.t[-1]), state=sol.y[:, -1].copy())
    if not sol.success:
        raise IntegrationError(f"geodesic integration failed: {sol.message}")

    out = GeodesicSolution(spec, sol.sol, tuple(map(float, t_span)), 0.0)
    g0 = spec.metric_at(x0)
    energy = float(v0 @ g0 @ v0)
    out.energy = energy
    if spec.has_killing():
        y0 = spec.killing_many(x0[None])[0]
        out.c_gamma = float(v0 @ g0 @ y0)
    if check:
        ts = np.linspace(t_span[0], t_span[1], 201)
        xs, vs = out.x_many(ts), out.v_many(ts)
        g = spec.metric_many(xs)
        e = np.einsum("mi,mij,mj->m", vs, g, vs)
        out.energy_drift = float(np.max(np.abs(e - energy)))
        if out.energy_drift > ENERGY_DRIFT_TOL * (1.0 + abs(energy)):
            raise IntegrationError(
                f"energy drift {out.energy_drift:.3e} exceeds tolerance")
        if spec.has_killing():
            y = spec.killing_many(xs)
            c = np.einsum("mi,mij,mj->m", vs, g, y)
            out.killing_drift = float(np.max(np.abs(c - out.c_gamma)))
            if out.killing_drift > ENERGY_DRIFT_TOL * (1.0 + abs(out.c_gamma)):
                raise IntegrationError(
                    f"Killing charge drift {out.killing_drift:.3e} exceeds tolerance")
    return out


@dataclass
class ClosedGeodesic:
    """A refined closed orbit of period one."""

    spec: object
    x0: np.ndarray
    v0: np.ndarray
    solution: GeodesicSolution
    closure_residual: float
    residual_history: list
    samples: np.ndarray = None       # (m, 2d) states on a uniform grid

    @property
    def energy(self):
        return self.solution.energy

    @property
    def c_gamma(self):
        return self.solution.c_gamma

    def x_many(self, ts):
        return self.solution.x_many(ts)

    def v_many(self, ts):
        return self.solution.v_many(ts)


def _gauge_pins(spec, v0):
    """Coordinates of the initial point frozen during refinement: one for
    the phase along the orbit, plus the Killing time coordinate when the
    Killing field is a constant coordinate field."""
    pins = {int(np.argmax(np.abs(v0)))}
    if spec.has_killing():
        consts = [comp.variables() == set() for comp in spec.killing]
        if all(consts):
            vals = np.array([comp.evaluate({}) for comp in spec.killing])
            nonzero = np.nonzero(vals)[0]
            if nonzero.size == 1:
                pins.add(int(nonzero[0]))
    return sorted(pins)


def refine_closed(spec, x0, v0, tol=CLOSURE_TOL, max_iter=25):
    """Refine initial data to a closed orbit by damped Gauss-Newton on
    the time-one closure map, with gauge pins for phase and stationarity.

    Raises ClosedGeodesicError carrying the residual history when the
    iteration does not reach tolerance.
    """
    d = spec.dim
    x0 = np.asarray(x0, dtype=float).copy()
    v0 = np.asarray(v0, dtype=float).copy()
    pins = _gauge_pins(spec, v0)
    free = [i for i in range(d) if i not in pins]

    def unpack(u):
        x = x0.copy()
        x[free] = u[: len(free)]
        return x, u[len(free):].copy()

    def residual(u):
        x, v = unpack(u)
        sol = integrate_geodesic(spec, x, v, check=False)
        end = sol.state(1.0)
        return np.concatenate([spec.delta(end[:d], x), end[d:] - v])

    u = np.concatenate([x0[free], v0])
    r = residual(u)
    history = [float(np.linalg.norm(r))]
    it = 0
    while history[-1] > tol and it < max_iter:
        it += 1
        jac = np.empty((2 * d, u.size))
        for j in range(u.size):
            h = 1e-7 * (1.0 + abs(u[j]))
            up = u.copy()
            up[j] += h
            jac[:, j] = (residual(up) - r) / h
        step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        scale = 1.0
        for _ in range(9):
            cand = u + scale * step
            rc = residual(cand)
            if np.linalg.norm(rc) < history[-1]:
                u, r = cand, rc
                break
            scale *= 0.5
        else:
            raise ClosedGeodesicError(
                "closure refinement stalled (damping exhausted)", history)
        history.append(float(np.linalg.norm(r)))
    if history[-1] > tol:
        raise ClosedGeodesicError(
            f"closure residual {history[-1]:.3e} above {tol:.1e} "
            f"after {it} steps", history)

    xr, vr = unpack(u)
    solution = integrate_geodesic(spec, xr, vr, check=True)
    ts = np.linspace(0.0, 1.0, 257)
    samples = solution.state_many(ts)
    return ClosedGeodesic(spec, xr, vr, solution, history[-1], history, samples)


# ---------------------------------------------------------------------------
# Periodic frames along the orbit
# ---------------------------------------------------------------------------

def _skew_log(q, tol=1e-9):
    """Real logarithm of a special orthogonal matrix as a skew matrix,
    via the real Schur form; pairs of -1 eigenvalues become half-turn
    planes."""
    d = q.shape[0]
    t, z = schur(q, output="real")
    k = np.zeros((d, d))
    minus = []
    i = 0
    while i < d:
        if i + 1 < d and abs(t[i + 1, i]) > tol:
            angle = np.arctan2(t[i + 1, i], t[i, i])
            k[i, i + 1] = -angle
            k[i + 1, i] = angle
            i += 2
        else:
            if t[i, i] < 0:
                minus.append(i)
            i += 1
    if len(minus) % 2:
        raise ValueError("matrix is not special orthogonal")
    for a, b in zip(minus[::2], minus[1::2]):
        k[a, b] = -np.pi
        k[b, a] = np.pi
    out = z @ k @ z.T
    resid = np.linalg.norm(_expm_skew_many(out, np.array([1.0]))[0] - q, ord=np.inf)
    if resid > 1e-8:
        raise ValueError(f"skew logarithm failed, residual {resid:.3e}")
    return out


def _expm_skew_many(k, scales):
    """exp(c * K) for each c in scales, K real skew."""
    w, vecs = np.linalg.eig(k)
    phases = np.exp(np.outer(scales, w))
    out = np.einsum("ij,mj,kj->mik", vecs, phases, vecs.conj())
    return out.real


def _bump(ts):
    """C^3 step 0 -> 1 on [0, 1] with derivative 140 t^3 (1-t)^3."""
    ts = np.asarray(ts, dtype=float)
    t = np.clip(ts, 0.0, 1.0)
    phi = ((( -20.0 * t + 70.0) * t - 84.0) * t + 35.0) * t ** 4
    dphi = 140.0 * t ** 3 * (1.0 - t) ** 3
    return phi, dphi


def _holonomy_correction(holonomy, tol=1e-9):
    """Smooth family rho(t) with rho(0)=Id, rho(1)=holonomy^{-1} and
    endpoint-flat logarithmic derivative, through the polar pieces of the
    inverse holonomy.  Returns (rho_many, c_many, orientation_preserving);
    a negative determinant admits no such family in GL+, so the identity
    correction is returned with the flag lowered."""
    d = holonomy.shape[0]
    det = float(np.linalg.det(holonomy))

    if det < 0:
        def rho_id(ts):
            ts = np.atleast_1d(ts)
            return np.broadcast_to(np.eye(d), (ts.size, d, d)).copy()

        def c_zero(ts):
            ts = np.atleast_1d(ts)
            return np.zeros((ts.size, d, d))

        return rho_id, c_zero, False

    m = np.linalg.inv(holonomy)
    u, sing, vt = np.linalg.svd(m)
    q = u @ vt
    if np.linalg.det(q) < 0:
        raise ValueError("inconsistent polar factor signs")
    k = _skew_log(q)
    v = vt.T
    logs = np.log(sing)
    b = (v * logs) @ v.T

    def stretch(powers):
        return np.einsum("ij,mj,kj->mik", v, np.exp(np.outer(powers, logs)), v)

    def rho_many(ts):
        phi, _ = _bump(ts)
        return np.einsum("mij,mjk->mik", _expm_skew_many(k, phi), stretch(phi))

    def c_many(ts):
        phi, dphi = _bump(ts)
        conj = np.einsum("mij,jk,mkl->mil", stretch(-phi), k, stretch(phi))
        return dphi[:, None, None] * (conj + b)

    resid = np.linalg.norm(rho_many(np.array([1.0]))[0] - m, ord=np.inf)
    if resid > tol * (1.0 + np.linalg.norm(m, ord=np.inf)):
        raise ValueError(f"holonomy correction misses target: {resid:.3e}")
    return rho_many, c_many, True


@dataclass
class TransferFrame:
    """Frame h(t) along the orbit: parallel transport times a holonomy
    correction.  When the holonomy reverses orientation no periodic
    correction exists in GL+; the frame is then plain transport and the
    ``periodic`` flag is False (indices read in the fixed-endpoint sense)."""

    geodesic: ClosedGeodesic
    transport_interp: object
    rho_many: object
    correction_many: object
    holonomy: np.ndarray
    orientation_preserving: bool
    periodic: bool

    def transport_many(self, ts):
        out = self.transport_interp(np.atleast_1d(np.asarray(ts, dtype=float)))
        d = self.geodesic.spec.dim
        return np.moveaxis(out, -1, 0).reshape(-1, d, d)

    def h_many(self, ts):
        return np.einsum("mij,mjk->mik",
                         self.transport_many(ts), self.rho_many(ts))

    def c_many(self, ts):
        return self.correction_many(ts)


def periodic_trivialization(geo, rtol=RTOL, atol=ATOL):
    """Parallel transport along the orbit, corrected to close up over one
    period whenever the holonomy preserves orientation."""
    spec = geo.spec
    d = spec.dim

    def rhs(t, pflat):
        state = geo.solution.state(t)
        x, v = state[:d], state[d:]
        gam = spec.christoffel_many(x[None])[0]
        p = pflat.reshape(d, d)
        return (-np.einsum("kij,i,jm->km", gam, v, p)).ravel()

    sol = solve_ivp(rhs, (0.0, 1.0), np.eye(d).ravel(), method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise IntegrationError(f"parallel transport failed: {sol.message}")
    holonomy = sol.y[:, -1].reshape(d, d)
    rho_many, c_many, orient = _holonomy_correction(holonomy)
    return TransferFrame(
        geodesic=geo,
        transport_interp=sol.sol,
        rho_many=rho_many,
        correction_many=c_many,
        holonomy=holonomy,
        orientation_preserving=orient,
        periodic=orient,
    )


# ---------------------------------------------------------------------------
# Jacobi transfer
# ---------------------------------------------------------------------------

@dataclass
class TransferData:
    """Fundamental solution of the Jacobi system in a periodic frame."""

    geodesic: ClosedGeodesic
    frame: TransferFrame
    space: symp.SympSpace
    phi_path: symp.SympPath
    ell_path: symp.SympPath
    monodromy: np.ndarray
    symplectic_residual: float
    hamiltonian_symmetry_residual: float
    fixed_vector_residuals: dict = field(default_factory=dict)

    @property
    def periodic(self):
        return self.frame.periodic


def _system_blocks(geo, frame, ts):
    """C, G, R_h sampled along the orbit (batched)."""
    spec = geo.spec
    d = spec.dim
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    states = geo.solution.state_many(ts)
    xs, vs = states[:, :d], states[:, d:]
    h = frame.h_many(ts)
    c = frame.c_many(ts)
    g = np.einsum("mji,mjk,mkl->mil", h, spec.metric_many(xs), h)
    jac = spec.jacobi_operator_many(xs, vs)
    rh = np.linalg.solve(h, np.einsum("mij,mjk->mik", jac, h))
    return c, g, rh


def jacobi_transfer(geo, frame=None, rtol=RTOL, atol=ATOL):
    """Integrate the Jacobi system along the orbit in frame coordinates.

    The state of a Jacobi field is (u, alpha) with u the frame components
    and alpha the frame momentum G(u' + C u); the flow is symplectic for
    the canonical form, which is verified on samples.
    """
    if frame is None:
        frame = periodic_trivialization(geo)
    spec = geo.spec
    d = spec.dim
    space = symp.sympspace(2 * d)

    def xmat(t):
        c, g, rh = (a[0] for a in _system_blocks(geo, frame, t))
        top = np.hstack([-c, np.linalg.inv(g)])
        bottom = np.hstack([g @ rh, c.T])
        return np.vstack([top, bottom])

    def rhs(t, flat):
        return (xmat(t) @ flat.reshape(2 * d, 2 * d)).ravel()

    sol = solve_ivp(rhs, (0.0, 1.0), np.eye(2 * d).ravel(), method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise IntegrationError(f"Jacobi transfer failed: {sol.message}")

    def phi_many(ts):
        out = sol.sol(np.atleast_1d(np.asarray(ts, dtype=float)))
        return np.moveaxis(out, -1, 0).reshape(-1, 2 * d, 2 * d)

    def phi_one(t):
        return phi_many(np.array([t]))[0]

    ts = np.linspace(0.0, 1.0, 33)
    mats = phi_many(ts)
    omega = space.omega
    symp_resid = float(np.max(np.abs(
        np.einsum("mji,jk,mkl->mil", mats, omega, mats) - omega)))
    if symp_resid > SYMPLECTIC_TOL:
        raise IntegrationError(
            f"fundamental solution loses symplecticity: {symp_resid:.3e}")
    c, g, rh = _system_blocks(geo, frame, ts)
    grh = np.einsum("mij,mjk->mik", g, rh)
    ham_resid = float(np.max(np.abs(grh - np.swapaxes(grh, -2, -1))))
    if ham_resid > SYMPLECTIC_TOL * (1.0 + float(np.max(np.abs(grh)))):
        raise IntegrationError(
            f"Hamiltonian block fails symmetry: {ham_resid:.3e}")

    phi_path = symp.path_from_function(space, "symplectic", phi_one,
                                       0.0, 1.0, fn_many=phi_many)
    ell_path = symp.lagrangian_image(phi_path, symp.vertical(space))
    mono = phi_many(np.array([1.0]))[0]

    fixed = {}
    v0 = geo.v0
    w = np.concatenate([v0, np.zeros(d)])
    fixed["velocity"] = float(np.linalg.norm(mono @ w - w) /
                              (1.0 + np.linalg.norm(w)))
    if spec.has_killing():
        y0 = spec.killing_many(geo.x0[None])[0]
        g0 = spec.metric_at(geo.x0)
        a0 = g0 @ spec.killing_covariant_many(geo.x0[None], v0[None])[0]
        w2 = np.concatenate([y0, a0])
        fixed["killing"] = float(np.linalg.norm(mono @ w2 - w2) /
                                 (1.0 + np.linalg.norm(w2)))

    return TransferData(
        geodesic=geo,
        frame=frame,
        space=space,
        phi_path=phi_path,
        ell_path=ell_path,
        monodromy=mono,
        symplectic_residual=symp_resid,
        hamiltonian_symmetry_residual=ham_resid,
        fixed_vector_residuals=fixed,
    )


def geodesic_maslov(transfer, n_iter=1, seed=0):
    """Index of the vertical-image path over [0, N], initial instant
    included.  For a non-periodic frame the value carries fixed-endpoint
    meaning only; callers should consult ``transfer.periodic``."""
    if n_iter == 1:
        path = transfer.phi_path
    else:
        path = symp.iterate_path(transfer.phi_path, n_iter)
    ell = symp.lagrangian_image(path, symp.vertical(transfer.space))
    return symp.maslov_index(ell, symp.vertical(transfer.space), seed=seed)
