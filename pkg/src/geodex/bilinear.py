"""Index calculus for symmetric bilinear forms on finite-dimensional spaces.

Everything downstream (symplectic chart forms, Galerkin index counts,
nullity bookkeeping) reduces to three primitives implemented here:

* inertia counts (index, coindex, nullity) of a symmetric matrix with an
  explicit zero band and a recorded decision margin,
* B-orthogonal complements and the usual subspace algebra,
* the splitting identity
      n-(B) = n-(B|W) + n-(B|S) + dim(W cap S) - dim(W cap Ker B),
  with S the B-orthogonal of W, checked instance by instance.

Counting conventions.  An eigenvalue lambda counts as zero when
|lambda| <= tol, negative when lambda < -tol, positive when lambda > tol.
A decision is *marginal* when some eigenvalue sits within a factor of ten
of the band edge (tol/10 < |lambda| < 10*tol); the recorded margin is the
distance to the edge in decades, so margin >= 1 means comfortably clean.
Exact zeros produced by construction land far inside the band and are not
marginal.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "SymForm",
    "Subspace",
    "InertiaCounts",
    "SplitReport",
    "index_coindex_nullity",
    "restrict",
    "b_orthogonal",
    "kernel",
    "intersection",
    "span_sum",
    "contains",
    "same_span",
    "splitting_check",
    "isotropic_reduction_check",
    "charpoly_inertia",
    "self_test",
]


class AsymmetricFormError(ValueError):
    def __init__(self, asym_norm, tol):
        super().__init__(
            f"matrix is not symmetric: ||B - B^T|| = {asym_norm:.3e} exceeds {tol:.3e}"
        )
        self.asym_norm = asym_norm


class RankDeficientError(ValueError):
    pass


class NotIsotropicError(ValueError):
    def __init__(self, norm):
        super().__init__(f"subspace is not isotropic: ||Z^T B Z|| = {norm:.3e}")
        self.norm = norm


def default_tol(matrix):
    """1e-9 scaled by (1 + spectral norm estimate) of the matrix."""
    if matrix.size == 0:
        return 1e-9
    est = np.linalg.norm(matrix, ord=np.inf)
    return 1e-9 * (1.0 + est)


@dataclass(frozen=True)
class SymForm:
    """A symmetric bilinear form as a dense symmetric matrix plus a tol."""

    matrix: np.ndarray
    tol: float

    @property
    def dim(self):
        return self.matrix.shape[0]


def symform(matrix, tol=None):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
    if tol is None:
        tol = default_tol(matrix)
    asym = np.linalg.norm(matrix - matrix.T, ord=np.inf)
    if asym > 10.0 * tol:
        raise AsymmetricFormError(asym, 10.0 * tol)
    sym = 0.5 * (matrix + matrix.T)
    return SymForm(sym, float(tol))


@dataclass(frozen=True)
class Subspace:
    """A subspace kept as an orthonormal basis (columns)."""

    basis: np.ndarray

    @property
    def ambient(self):
        return self.basis.shape[0]

    @property
    def dim(self):
        return self.basis.shape[1]


def subspace(columns, tol=None):
    """Orthonormalize ``columns`` and reject rank-deficient generators."""
    cols = np.asarray(columns, dtype=float)
    if cols.ndim != 2:
        raise ValueError(f"expected a 2-d array of columns, got shape {cols.shape}")
    n, k = cols.shape
    if k == 0:
        return Subspace(np.zeros((n, 0)))
    u, s, _ = np.linalg.svd(cols, full_matrices=False)
    cutoff = (tol if tol is not None else max(n, k) * np.finfo(float).eps * (s[0] if s.size else 1.0))
    rank = int(np.sum(s > cutoff))
    if rank < k:
        raise RankDeficientError(
            f"columns have rank {rank} < {k} (smallest singular value {s[-1]:.3e})"
        )
    return Subspace(u[:, :rank])


def span_of(columns, tol=None):
    """Orthonormal basis of the span, silently dropping dependent columns."""
    cols = np.asarray(columns, dtype=float)
    n = cols.shape[0]
    if cols.size == 0:
        return Subspace(np.zeros((n, 0)))
    u, s, _ = np.linalg.svd(cols, full_matrices=False)
    cutoff = tol if tol is not None else max(cols.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)
    rank = int(np.sum(s > cutoff))
    return Subspace(u[:, :rank])


def full_space(n):
    return Subspace(np.eye(n))


@dataclass(frozen=True)
class InertiaCounts:
    n_minus: int
    n_plus: int
    n_zero: int
    margin: float          # decades of clearance to the zero-band edge
    marginal: bool

    def astuple(self):
        return (self.n_minus, self.n_plus, self.n_zero)


def _margin_decades(values, tol):
    """Distance (in decades) of the eigenvalue set to the band edge tol."""
    mags = np.abs(np.asarray(values, dtype=float))
    mags = mags[mags > 0.0]
    if mags.size == 0:
        return np.inf
    return float(np.min(np.abs(np.log10(mags / tol))))


def _counts_from_eigs(eigs, tol):
    n_minus = int(np.sum(eigs < -tol))
    n_plus = int(np.sum(eigs > tol))
    n_zero = eigs.size - n_minus - n_plus
    margin = _margin_decades(eigs, tol)
    return InertiaCounts(n_minus, n_plus, n_zero, margin, margin < 1.0)


def index_coindex_nullity(form):
    """Inertia of the form: (index, coindex, nullity) with margin report."""
    if form.dim == 0:
        return InertiaCounts(0, 0, 0, np.inf, False)
    eigs = np.linalg.eigvalsh(form.matrix)
    return _counts_from_eigs(eigs, form.tol)


def restrict(form, sub):
    """The form pulled back to an orthonormal basis of the subspace."""
    mat = sub.basis.T @ form.matrix @ sub.basis
    mat = 0.5 * (mat + mat.T)
    return SymForm(mat, form.tol)


def kernel(form):
    """Ker B = {x : B(x, .) = 0}, via SVD of the (symmetric) matrix."""
    return _nullspace(form.matrix, form.tol)


def _nullspace(matrix, tol):
    n = matrix.shape[1]
    if matrix.shape[0] == 0 or n == 0:
        return Subspace(np.eye(n))
    _, s, vt = np.linalg.svd(matrix)
    s_full = np.zeros(n)
    s_full[: s.size] = s
    keep = s_full <= tol
    return Subspace(vt.T[:, keep])


def b_orthogonal(form, sub):
    """S^{perp_B} = {x : B(x, s) = 0 for all s in S}."""
    if sub.dim == 0:
        return full_space(form.dim)
    return _nullspace(sub.basis.T @ form.matrix, form.tol)


def intersection(a, b, tol=1e-9):
    """Orthonormal basis of A cap B via the nullspace of [A, -B]."""
    if a.dim == 0 or b.dim == 0:
        return Subspace(np.zeros((a.ambient, 0)))
    stacked = np.hstack([a.basis, -b.basis])
    ns = _nullspace(stacked, tol)
    if ns.dim == 0:
        return Subspace(np.zeros((a.ambient, 0)))
    vectors = a.basis @ ns.basis[: a.dim, :]
    return span_of(vectors, tol)


def span_sum(a, b, tol=1e-9):
    return span_of(np.hstack([a.basis, b.basis]), tol)


def contains(a, b, tol=1e-8):
    """Is span(B) a subset of span(A)?"""
    if b.dim == 0:
        return True
    resid = b.basis - a.basis @ (a.basis.T @ b.basis)
    return float(np.linalg.norm(resid, ord=2)) <= tol


def same_span(a, b, tol=1e-8):
    return a.dim == b.dim and contains(a, b, tol) and contains(b, a, tol)


@dataclass(frozen=True)
class SplitReport:
    n_B: int
    n_W: int
    n_S: int
    dim_WS: int
    dim_WK: int
    holds: bool
    marginal: bool
    margin: float


def splitting_check(form, w):
    """Check n-(B) = n-(B|W) + n-(B|S) + dim(W cap S) - dim(W cap Ker B).

    S is the B-orthogonal complement of W.  The report carries every count
    plus the worst eigenvalue-decision margin that entered; ``holds`` is
    the integer identity itself.
    """
    s = b_orthogonal(form, w)
    ker = kernel(form)
    c_b = index_coindex_nullity(form)
    c_w = index_coindex_nullity(restrict(form, w))
    c_s = index_coindex_nullity(restrict(form, s))
    dim_ws = intersection(w, s, form.tol).dim
    dim_wk = intersection(w, ker, form.tol).dim
    margin = min(c_b.margin, c_w.margin, c_s.margin)
    marginal = c_b.marginal or c_w.marginal or c_s.marginal
    holds = c_b.n_minus == c_w.n_minus + c_s.n_minus + dim_ws - dim_wk
    return SplitReport(
        n_B=c_b.n_minus,
        n_W=c_w.n_minus,
        n_S=c_s.n_minus,
        dim_WS=dim_ws,
        dim_WK=dim_wk,
        holds=holds,
        marginal=marginal,
        margin=margin,
    )


def isotropic_reduction_check(form, z):
    """For nondegenerate B and isotropic Z:
    n-(B) = n-(B restricted to Z^{perp_B}) + dim Z.

    Raises NotIsotropicError when Z fails the isotropy test and ValueError
    when B is degenerate (the statement needs Ker B = 0).
    """
    iso_norm = float(np.linalg.norm(z.basis.T @ form.matrix @ z.basis, ord=np.inf))
    if iso_norm > 10.0 * form.tol:
        raise NotIsotropicError(iso_norm)
    counts = index_coindex_nullity(form)
    if counts.n_zero != 0:
        raise ValueError("isotropic reduction requires a nondegenerate form")
    zperp = b_orthogonal(form, z)
    reduced = index_coindex_nullity(restrict(form, zperp))
    return counts.n_minus == reduced.n_minus + z.dim


# ---------------------------------------------------------------------------
# Independent oracle: exact-rational characteristic polynomial + Sturm chains.
# ---------------------------------------------------------------------------

def _charpoly_fractions(matrix):
    """Characteristic polynomial coefficients (monic, descending powers)
    via the Faddeev-LeVerrier recursion in exact rational arithmetic."""
    n = matrix.shape[0]
    a = [[Fraction(x) for x in row] for row in matrix.tolist()]
    coeffs = [Fraction(1)]
    m = [[Fraction(0)] * n for _ in range(n)]
    for k in range(1, n + 1):
        # M <- A @ (M + c_{k-1} I)
        shifted = [row[:] for row in m]
        for i in range(n):
            shifted[i][i] += coeffs[-1]
        m = [
            [sum(a[i][l] * shifted[l][j] for l in range(n)) for j in range(n)]
            for i in range(n)
        ]
        trace = sum(m[i][i] for i in range(n))
        coeffs.append(-trace / k)
    return coeffs


def _poly_deriv(p):
    n = len(p) - 1
    return [c * (n - i) for i, c in enumerate(p[:-1])] or [Fraction(0)]


def _poly_divmod(num, den):
    num = num[:]
    lead = den[0]
    q = []
    while len(num) >= len(den) and any(c != 0 for c in num):
        factor = num[0] / lead
        q.append(factor)
        for i in range(len(den)):
            num[i] -= factor * den[i]
        num.pop(0)
    while num and num[0] == 0:
        num.pop(0)
    return q or [Fraction(0)], num or [Fraction(0)]


def _poly_gcd(a, b):
    a, b = a[:], b[:]
    while any(c != 0 for c in b):
        _, r = _poly_divmod(a, b)
        a, b = b, r
    # normalize monic
    if a and a[0] != 0:
        lead = a[0]
        a = [c / lead for c in a]
    return a


def _squarefree_parts(p):
    """Yun-style decomposition: yields (factor, multiplicity) with the
    factor squarefree and the product of factor^multiplicity equal to p
    up to a constant."""
    parts = []
    g = _poly_gcd(p, _poly_deriv(p))
    if len(g) == 1:
        return [(p, 1)]
    w, _ = _poly_divmod(p, g)
    mult = 1
    while len(w) > 1:
        nxt = _poly_gcd(w, g)
        factor, _ = _poly_divmod(w, nxt)
        if len(factor) > 1:
            parts.append((factor, mult))
        g_next, _ = _poly_divmod(g, nxt)
        w, g = nxt, g_next
        mult += 1
    return parts


def _sturm_chain(p):
    chain = [p, _poly_deriv(p)]
    while len(chain[-1]) > 1 or chain[-1][0] != 0:
        _, r = _poly_divmod(chain[-2], chain[-1])
        if len(r) == 1 and r[0] == 0:
            break
        chain.append([-c for c in r])
    return chain


def _poly_eval(p, x):
    acc = Fraction(0)
    for c in p:
        acc = acc * x + c
    return acc


def _sign_variations(chain, x):
    signs = []
    for p in chain:
        v = _poly_eval(p, x)
        if v != 0:
            signs.append(1 if v > 0 else -1)
    return sum(1 for a, b in zip(signs, signs[1:]) if a != b)


def _variations_at_minus_inf(chain):
    signs = []
    for p in chain:
        lead = p[0]
        if lead == 0:
            continue
        deg = len(p) - 1
        s = lead if deg % 2 == 0 else -lead
        signs.append(1 if s > 0 else -1)
    return sum(1 for a, b in zip(signs, signs[1:]) if a != b)


def _variations_at_plus_inf(chain):
    signs = [1 if p[0] > 0 else -1 for p in chain if p[0] != 0]
    return sum(1 for a, b in zip(signs, signs[1:]) if a != b)


def charpoly_inertia(matrix, tol=None):
    """Inertia counts from the characteristic polynomial alone.

    The polynomial is computed exactly (rational arithmetic on the float
    entries), split into squarefree parts so multiplicities are honest,
    and roots are located by Sturm sign variations at -tol and +tol.
    Completely independent of the eigensolver route.  Returns the tuple
    (n_minus, n_plus, n_zero) using the same zero band as
    index_coindex_nullity.
    """
    matrix = np.asarray(matrix, dtype=float)
    if tol is None:
        tol = default_tol(matrix)
    n = matrix.shape[0]
    if n == 0:
        return (0, 0, 0)
    p = _charpoly_fractions(matrix)
    t = Fraction(float(tol))
    n_minus = n_plus = 0
    for factor, mult in _squarefree_parts(p):
        chain = _sturm_chain(factor)
        below = _variations_at_minus_inf(chain) - _sign_variations(chain, -t)
        above = _sign_variations(chain, t) - _variations_at_plus_inf(chain)
        n_minus += mult * below
        n_plus += mult * above
    return (n_minus, n_plus, n - n_minus - n_plus)


# ---------------------------------------------------------------------------
# Randomized self-test suite (used by the CLI selftest command).
# ---------------------------------------------------------------------------

def random_symmetric(rng, n, degenerate_rank=None):
    """Random symmetric matrix; optionally with an exact-rank construction
    B = G^T D G with some zero diagonal entries so Ker B is nontrivial."""
    g = rng.standard_normal((n, n))
    if degenerate_rank is None:
        b = g + g.T
        return 0.5 * (b + b.T)
    d = np.zeros(n)
    signs = rng.choice([-1.0, 1.0], size=degenerate_rank)
    d[:degenerate_rank] = signs * (0.5 + rng.random(degenerate_rank))
    b = g.T @ np.diag(d) @ g
    return 0.5 * (b + b.T)


def random_subspace(rng, n, k):
    return subspace(rng.standard_normal((n, k)))


def isotropic_seed(form, rng):
    """A B-isotropic vector built from one positive and one negative
    eigendirection; None when the form is semi-definite."""
    eigs, vecs = np.linalg.eigh(form.matrix)
    pos = np.where(eigs > form.tol)[0]
    negs = np.where(eigs < -form.tol)[0]
    if pos.size == 0 or negs.size == 0:
        return None
    i = int(rng.integers(0, negs.size))
    j = int(rng.integers(0, pos.size))
    v = vecs[:, negs[i]] / np.sqrt(-eigs[negs[i]]) + vecs[:, pos[j]] / np.sqrt(eigs[pos[j]])
    return v / np.linalg.norm(v)


def self_test(seed=0, cases=200):
    """Randomized invariants; returns a summary dict (no timing fields so
    reports stay byte-identical run to run)."""
    rng = np.random.default_rng(seed)
    failures = []
    marginal = 0
    worst_margin = np.inf

    for case in range(cases):
        n = int(rng.integers(2, 9))
        if case % 5 == 0:
            b = symform(random_symmetric(rng, n, degenerate_rank=int(rng.integers(1, n))))
        else:
            b = symform(random_symmetric(rng, n))
        k = int(rng.integers(1, n + 1))
        w = random_subspace(rng, n, k)

        rep = splitting_check(b, w)
        worst_margin = min(worst_margin, rep.margin)
        if rep.marginal:
            marginal += 1
        elif not rep.holds:
            failures.append({"check": "splitting", "case": case})

        counts = index_coindex_nullity(b)
        if counts.astuple() != charpoly_inertia(b.matrix, b.tol):
            failures.append({"check": "charpoly-oracle", "case": case})
        if counts.n_minus + counts.n_plus + counts.n_zero != n:
            failures.append({"check": "dimension-sum", "case": case})

        # monotonicity of index/coindex under restriction
        sub_counts = index_coindex_nullity(restrict(b, w))
        ok = (
            sub_counts.n_minus <= counts.n_minus <= sub_counts.n_minus + (n - k)
            and sub_counts.n_plus <= counts.n_plus <= sub_counts.n_plus + (n - k)
        )
        if not ok and not (counts.marginal or sub_counts.marginal):
            failures.append({"check": "restriction-monotonicity", "case": case})

        # double B-orthogonal closure: (S^perpB)^perpB = S + Ker B
        dbl = b_orthogonal(b, b_orthogonal(b, w))
        target = span_sum(w, kernel(b))
        if not same_span(dbl, target, 1e-7):
            failures.append({"check": "double-orthogonal", "case": case})

        # isotropic reduction on a nondegenerate even-signature form
        if counts.n_zero == 0:
            vec = isotropic_seed(b, rng)
            if vec is not None:
                if not isotropic_reduction_check(b, subspace(vec[:, None])):
                    failures.append({"check": "isotropic-reduction", "case": case})

    return {
        "suite": "bilinear",
        "cases": cases,
        "seed": seed,
        "failures": failures,
        "marginal": marginal,
        "worst_margin": float(worst_margin),
        "ok": not failures,
    }
