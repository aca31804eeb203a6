"""Iterate-level analysis of a closed geodesic: index growth along the
iteration sequence, integer bounds relating iterate indices, the nullity
partition induced by the unit-circle spectrum of the return map, and an
abstract Morse-relations checker for index/Betti sequences.

The per-iterate rows are independent; set GEODEX_THREADS to compute them
in a thread pool.  Results are keyed by the iterate count, so the output
does not depend on completion order.
"""

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import geodesic as gd
from . import morse as ms
from . import symplectic as sp

MAX_DENOMINATOR = 64   # largest recognized root-of-unity order
ANGLE_TOL = 1e-8       # absolute angle residual for rational recognition
UNIT_BAND = 1e-8       # |.|-distance from the unit circle for partition input
CLUSTER_TOL = 1e-5     # eigenvalue distance treated as one root cluster
KERNEL_TOL = 1e-7      # singular values below this count as kernel


class AngleRecognitionError(ValueError):
    """A unit-circle angle sits within tolerance of two admissible
    rationals; the caller must tighten the denominator cap or the
    tolerance rather than let the code guess."""


def _thread_count():
    raw = os.environ.get("GEODEX_THREADS", "1")
    try:
        count = int(raw)
    except ValueError:
        raise ValueError(f"GEODEX_THREADS must be an integer, got {raw!r}")
    return max(1, count)


def _divisors(n):
    return [q for q in range(1, n + 1) if n % q == 0]


# ---------------------------------------------------------------------------
# Nullity of iterates from the return map
# ---------------------------------------------------------------------------

def nullity_of_iterate(p, n_iter, details=False):
    """Real dimension of the 1-eigenspace of the n-th power of the return
    map, computed from the eigenstructure of the map itself: geometric
    kernels at every n-th root of unity, conjugate pairs counting twice.

    When the algebraic multiplicity near those roots disagrees with the
    geometric count (a defective or ambiguous cluster), the value is
    recomputed from the rank of p^n - Id directly and flagged.
    """
    p = np.asarray(p, dtype=float)
    dim2 = p.shape[0]
    evals = np.linalg.eigvals(p)
    scale = 1.0 + float(np.linalg.norm(p, ord=2))

    alg = 0
    geo = 0
    for q in _divisors(n_iter):
        for a in range(q):
            if math.gcd(a, q) != 1:
                continue
            root = np.exp(2j * np.pi * a / q)
            alg += int(np.sum(np.abs(evals - root) <= CLUSTER_TOL))
            sing = np.linalg.svd(p - root * np.eye(dim2), compute_uv=False)
            geo += int(np.sum(sing <= KERNEL_TOL * scale))
    if alg == geo:
        return (geo, False) if details else geo

    # Defective or ambiguous cluster near the unit circle.  The direct
    # rank of p^n - Id is trustworthy only while powering cannot amplify
    # the kernel residual past the spectral gap; beyond that the
    # eigenspace reading stands (the kernel of the power is exactly the
    # sum of geometric eigenspaces at the contributing roots).
    rho = float(np.max(np.abs(evals)))
    if rho ** n_iter <= 1e4:
        power = np.linalg.matrix_power(p, n_iter) - np.eye(dim2)
        sing = np.linalg.svd(power, compute_uv=False)
        value = int(np.sum(sing <= 1e-3))
    else:
        value = geo
    return (value, True) if details else value


# ---------------------------------------------------------------------------
# Nullity partition from the unit-circle spectrum
# ---------------------------------------------------------------------------

def _recognize_rational(frac, max_q, tol):
    """Match a phase fraction in [0, 1) against p/q with q <= max_q.
    Returns the normalized Fraction, or None when nothing admissible is
    within tolerance.  Two distinct admissible matches raise."""
    hits = set()
    for q in range(1, max_q + 1):
        p = round(frac * q)
        if abs(frac - p / q) <= tol:
            hits.add(Fraction(p % q, q))
    if len(hits) > 1:
        raise AngleRecognitionError(
            f"phase {frac!r} matches several rationals with denominator "
            f"<= {max_q}: {sorted(hits)}; tighten the cap or the tolerance")
    return hits.pop() if hits else None


@dataclass
class NullityPartition:
    """Partition of the iterate counts 1..n_max into classes on which the
    iterate nullity is constant, derived from the root-of-unity content
    of the return map spectrum."""

    m_values: list
    classes: dict            # m -> sorted members within 1..n_max
    rules: dict              # m -> human-readable membership predicate
    denominators: list
    nullities: dict          # m -> nullity of the m-th iterate
    s: int
    n_max: int


def nullity_partition(p, dim_m, n_max, max_q=MAX_DENOMINATOR,
                      angle_tol=ANGLE_TOL, unit_band=UNIT_BAND):
    """Build the iterate-nullity partition for a return map.

    Unit-circle eigenvalue phases are recognized as rationals p/q by
    continued-fraction-grade enumeration up to the denominator cap; the
    set D of denominators generates the class representatives as lcms of
    its subsets, and membership of an iterate count N is decided by which
    denominators divide N.  Class constancy of the nullity is verified
    against the iterate-nullity routine for every tabulated member."""
    p = np.asarray(p, dtype=float)
    evals = np.linalg.eigvals(p)
    unit = evals[np.abs(np.abs(evals) - 1.0) <= unit_band]

    denominators = set()
    for lam in unit:
        frac = float(np.angle(lam) / (2.0 * np.pi)) % 1.0
        hit = _recognize_rational(frac, max_q, angle_tol / (2.0 * np.pi))
        if hit is not None:
            denominators.add(hit.denominator)
    denominators = sorted(denominators)

    m_values = {1}
    for mask in range(1, 1 << len(denominators)):
        chosen = [q for i, q in enumerate(denominators) if mask >> i & 1]
        m_values.add(math.lcm(*chosen))
    m_values = sorted(m_values)

    s = len(m_values)
    if s > 2 ** dim_m:
        raise ValueError(
            f"partition has {s} classes, above the 2^dim bound {2 ** dim_m}")

    classes = {m: [] for m in m_values}
    for n in range(1, n_max + 1):
        dividing = [q for q in denominators if n % q == 0]
        classes[math.lcm(*dividing) if dividing else 1].append(n)

    rules = {}
    for m in m_values:
        subset = [q for q in denominators if m % q == 0]
        rules[m] = ("N such that {q in D : q | N} = {%s}"
                    % ", ".join(str(q) for q in subset))

    nullities = {m: nullity_of_iterate(p, m) for m in m_values}
    for m, members in classes.items():
        readings = {nullity_of_iterate(p, n) for n in members}
        if len(readings) > 1:
            raise ValueError(
                f"nullity not constant on the class of {m}: {sorted(readings)}")
        if members and readings != {nullities[m]} and m <= n_max:
            raise ValueError(
                f"class of {m} disagrees with its representative nullity")

    return NullityPartition(m_values=m_values, classes=classes, rules=rules,
                            denominators=denominators, nullities=nullities,
                            s=s, n_max=n_max)


# ---------------------------------------------------------------------------
# Morse relations checker
# ---------------------------------------------------------------------------

@dataclass
class MorseRelationsResult:
    holds: bool
    q_coeffs: list


def morse_relations_check(mu_seq, beta_seq):
    """Decide whether the index counts dominate the Betti numbers in the
    strong alternating-sum sense: q_k = sum_{i<=k} (-1)^(k-i) (mu_i - b_i)
    must be nonnegative for every k and vanish past the common support."""
    mu = [int(v) for v in mu_seq]
    beta = [int(v) for v in beta_seq]
    if any(v < 0 for v in mu + beta):
        raise ValueError("count sequences must be nonnegative")
    length = max(len(mu), len(beta)) + 1
    mu += [0] * (length - len(mu))
    beta += [0] * (length - len(beta))

    q = []
    prev = 0
    for k in range(length):
        prev = (mu[k] - beta[k]) - prev
        q.append(prev)
    holds = all(v >= 0 for v in q) and q[-1] == 0
    if holds:
        # weak inequalities follow from the strong ones
        assert all(m >= b for m, b in zip(mu, beta))
    return MorseRelationsResult(holds=holds, q_coeffs=q)


# ---------------------------------------------------------------------------
# Iterate table
# ---------------------------------------------------------------------------

@dataclass
class IterationTable:
    """Per-iterate index reports with the integer growth bounds between
    them and a growth classification of the index sequence."""

    reports: dict            # N -> IndexReport
    cz_indices: dict         # N -> int (None when the frame reverses orientation)
    bounds: dict             # N -> {name: bool or None}
    wall_times: dict         # N -> seconds spent on the row
    growth_class: str
    dim: int
    n_max: int
    k_star: int = None
    alpha_bar: float = None
    beta_bar: float = None

    @property
    def all_bounds_hold(self):
        return all(ok for row in self.bounds.values()
                   for ok in row.values() if ok is not None)

    def as_dict(self):
        from dataclasses import asdict
        return {
            "n_max": int(self.n_max),
            "dim": int(self.dim),
            "growth_class": self.growth_class,
            "k_star": None if self.k_star is None else int(self.k_star),
            "alpha_bar": None if self.alpha_bar is None else float(self.alpha_bar),
            "beta_bar": None if self.beta_bar is None else float(self.beta_bar),
            "reports": {str(n): {k: (bool(v) if isinstance(v, (bool, np.bool_))
                                     else int(v))
                                 for k, v in asdict(r).items()}
                        for n, r in self.reports.items()},
            "cz_indices": {str(n): (None if v is None else int(v))
                           for n, v in self.cz_indices.items()},
            "bounds": {str(n): {k: (None if v is None else bool(v))
                                for k, v in row.items()}
                       for n, row in self.bounds.items()},
            "wall_times": {str(n): round(float(t), 6)
                           for n, t in self.wall_times.items()},
        }


def _growth_class(mus, dim, converged):
    """Classify the index sequence: bounded while it stays under the
    8*dim+1 threshold, superlinear when a positive lower line alpha*N -
    beta validates on every row, undetermined otherwise."""
    n_max = len(mus)
    threshold = 8 * dim + 1
    if not converged:
        return "undetermined", None, None, None

    k_star = next((n for n in range(1, n_max + 1)
                   if mus[n - 1] > threshold), None)
    if k_star is not None:
        alpha = (mus[k_star - 1] - threshold) / k_star
        beta = mus[k_star - 1] + 1.0
        rows = range(k_star, n_max + 1)
    else:
        # threshold never crossed: take the best per-iterate rate and
        # cover the deficit, so a genuinely growing sequence still
        # exhibits its linear lower line
        alpha = max(mus[n - 1] / n for n in range(1, n_max + 1))
        beta = max(0.0, max(alpha * n - mus[n - 1]
                            for n in range(1, n_max + 1)))
        rows = range(1, n_max + 1)

    line_ok = alpha > 0 and all(
        mus[n - 1] >= alpha * n - beta - 1e-12 for n in rows)
    if line_ok:
        return "superlinear", k_star, alpha, beta
    if all(mu <= threshold for mu in mus):
        return "bounded", k_star, None, None
    return "undetermined", k_star, None, None


def iterate_analysis(orbit, n_max, seed=0):
    """Index reports for the first n_max iterates of a closed geodesic,
    with the per-iterate integer bounds and the growth classification.

    Accepts a refined closed geodesic or an existing transfer; rows are
    independent and honor GEODEX_THREADS."""
    if isinstance(orbit, gd.TransferData):
        transfer = orbit
    else:
        transfer = gd.jacobi_transfer(orbit)
    dim = transfer.geodesic.spec.dim
    oriented = transfer.frame.orientation_preserving

    def row(n):
        start = time.perf_counter()
        report = ms.index_report(transfer, n, seed=seed)
        cz = None
        if oriented:
            path = (transfer.phi_path if n == 1
                    else sp.iterate_path(transfer.phi_path, n))
            cz = sp.conley_zehnder(path, seed=seed)
        return n, report, cz, time.perf_counter() - start

    threads = _thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, range(1, n_max + 1)))
    else:
        rows = [row(n) for n in range(1, n_max + 1)]

    reports = {n: rep for n, rep, _, _ in rows}
    cz_indices = {n: cz for n, _, cz, _ in rows}
    wall_times = {n: wall for n, _, _, wall in rows}

    mubar = {n: reports[n].mu_restricted for n in reports}
    bounds = {}
    for n in range(1, n_max + 1):
        rep = reports[n]
        row_checks = {
            "maslov": abs(rep.i_m - n * reports[1].i_m) <= dim * (7 * n + 5),
            "cz": None,
            "mubar_monotone": n == 1 or mubar[n] >= mubar[n - 1],
            "superadditive": all(mubar[n] >= mubar[r] + mubar[n - r]
                                 for r in range(1, n)),
            "defect": rep.a_gamma + rep.b_gamma <= dim,
        }
        if oriented and cz_indices[n] is not None:
            row_checks["cz"] = (abs(cz_indices[n] - n * cz_indices[1])
                                <= dim * (n - 1))
        bounds[n] = row_checks

    converged = all(reports[n].converged for n in reports)
    mus = [reports[n].mu for n in range(1, n_max + 1)]
    growth, k_star, alpha, beta = _growth_class(mus, dim, converged)

    return IterationTable(reports=reports, cz_indices=cz_indices,
                          bounds=bounds, wall_times=wall_times,
                          growth_class=growth, dim=dim, n_max=n_max,
                          k_star=k_star, alpha_bar=alpha, beta_bar=beta)
