"""Manifold descriptions: spec-file parsing and metric geometry.

A manifold spec is a small sectioned text format:

    [manifold]
    dim = 2
    coords = t, theta
    periods = theta: 2*pi
    signature = -+
    domain = t: -4 .. 4          # optional probe/integration box

    [metric]
    g.t.t = -1
    g.theta.theta = 1

    [killing]
    Y.t = 1

    [geodesic.circle]
    x0 = 0, 0
    v0 = 0, 2*pi

Metric entries may address coordinates by name or by index; unspecified
entries are zero and symmetry is filled in automatically.  Expressions
use the grammar of ``geodex.expressions`` plus the constants pi and e.

All geometric quantities (metric, inverse, Christoffel symbols, curvature
terms) are evaluated numerically from symbolic derivative trees of the
metric expressions, vectorized over batches of points.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import expressions as ex

__all__ = [
    "ManifoldSpec",
    "SpecFileError",
    "SpecValidationError",
    "ChartDomainError",
    "load_manifold",
    "parse_manifold",
    "auxiliary_riemannian",
    "bundled_spec_path",
]

CONSTANTS = {"pi": np.pi, "e": np.e}
RESERVED = set(CONSTANTS) | set(ex.FUNCTIONS)


class SpecFileError(ValueError):
    def __init__(self, message, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line


class SpecValidationError(ValueError):
    pass


class ChartDomainError(RuntimeError):
    def __init__(self, message, t_last=None, state=None):
        super().__init__(message)
        self.t_last = t_last
        self.state = state


def _const(text, line):
    try:
        node = ex.parse(text, line=line)
    except ex.ExprError:
        raise
    free = node.variables() - set(CONSTANTS)
    if free:
        raise SpecFileError(f"non-constant expression {text!r} (uses {sorted(free)})", line)
    value = node.evaluate(CONSTANTS)
    return float(value)


@dataclass
class ManifoldSpec:
    """A single-chart semi-Riemannian manifold with optional Killing field."""

    dim: int
    coords: tuple
    metric: list                      # dim x dim nested list of expression trees
    killing: tuple = None             # dim expression trees or None
    periods: dict = field(default_factory=dict)
    signature: str = None             # like "-++", order-insensitive counts
    domain: dict = field(default_factory=dict)   # name -> (low, high)
    geodesic_guesses: dict = field(default_factory=dict)  # name -> (x0, v0)
    name: str = ""

    def __post_init__(self):
        self._cache = {}

    # -- expression evaluation ------------------------------------------

    def _env(self, xs):
        xs = np.asarray(xs, dtype=float)
        env = dict(CONSTANTS)
        for i, c in enumerate(self.coords):
            env[c] = xs[..., i]
        return env, xs.shape[:-1]

    def _eval_table(self, trees, xs):
        """Evaluate a nested list structure of expression trees over a
        batch of points; returns an array (batch shape + table shape),
        table axes ordered outermost nesting level first."""
        env, batch = self._env(xs)
        nbatch = len(batch)

        def rec(node):
            if isinstance(node, (list, tuple)):
                return np.stack([rec(item) for item in node], axis=nbatch)
            val = node.evaluate(env)
            if np.ndim(val) == 0:
                return np.broadcast_to(float(val), batch).copy()
            return np.asarray(val, dtype=float)

        return rec(trees)

    def _derivative_trees(self, order):
        key = ("dg", order)
        if key not in self._cache:
            if order == 0:
                self._cache[key] = self.metric
            else:
                lower = self._derivative_trees(order - 1)
                self._cache[key] = [
                    _map_tree(lower, lambda node, c=c: node.diff(c))
                    for c in self.coords
                ]
        return self._cache[key]

    def metric_many(self, xs):
        return self._eval_table(self.metric, xs)

    def metric_at(self, x):
        return self.metric_many(np.asarray(x, dtype=float)[None])[0]

    def dmetric_many(self, xs):
        """(batch, k, i, j) array of d g_ij / d x_k."""
        return self._eval_table(self._derivative_trees(1), xs)

    def d2metric_many(self, xs):
        """(batch, m, k, i, j) array of second derivatives."""
        return self._eval_table(self._derivative_trees(2), xs)

    def christoffel_many(self, xs):
        g = self.metric_many(xs)
        dg = self.dmetric_many(xs)
        ginv = np.linalg.inv(g)
        # Gamma^k_ij = 1/2 ginv^{kl} (d_i g_lj + d_j g_li - d_l g_ij)
        braces = (np.moveaxis(dg, -3, -2) + np.moveaxis(dg, -3, -1)
                  - dg)
        # braces[l, i, j] = d_i g_lj + d_j g_li - d_l g_ij
        return 0.5 * np.einsum("...kl,...lij->...kij", ginv, braces)

    def christoffel(self, x):
        return self.christoffel_many(np.asarray(x, dtype=float)[None])[0]

    def dchristoffel_many(self, xs):
        """(batch, m, k, i, j) array of d Gamma^k_ij / d x_m, exact."""
        g = self.metric_many(xs)
        dg = self.dmetric_many(xs)
        d2g = self.d2metric_many(xs)
        ginv = np.linalg.inv(g)
        dginv = -np.einsum("...ka,...mab,...bl->...mkl", ginv, dg, ginv)
        braces = np.moveaxis(dg, -3, -2) + np.moveaxis(dg, -3, -1) - dg
        dbraces = (np.moveaxis(d2g, -3, -2) + np.moveaxis(d2g, -3, -1)
                   - d2g)
        term1 = 0.5 * np.einsum("...mkl,...lij->...mkij", dginv, braces)
        term2 = 0.5 * np.einsum("...kl,...mlij->...mkij", ginv, dbraces)
        return term1 + term2

    def curvature_many(self, xs):
        """(batch, l, k, i, j) components R^l_kij of the curvature tensor,
        R(e_i, e_j) e_k = R^l_kij e_l."""
        gam = self.christoffel_many(xs)
        dgam = self.dchristoffel_many(xs)
        # d_i Gamma^l_jk - d_j Gamma^l_ik
        t1 = np.einsum("...iljk->...lkij", dgam) - np.einsum("...jlik->...lkij", dgam)
        t2 = (np.einsum("...lim,...mjk->...lkij", gam, gam)
              - np.einsum("...ljm,...mik->...lkij", gam, gam))
        return t1 + t2

    def jacobi_operator_many(self, xs, vs):
        """Matrices M with (M w) = R(v, w) v at each point, so that the
        Jacobi equation reads D^2 J/dt^2 = M J along a geodesic with
        velocity v."""
        riem = self.curvature_many(xs)
        vs = np.asarray(vs, dtype=float)
        return np.einsum("...lkij,...k,...i->...lj", riem, vs, vs)

    # -- Killing field ---------------------------------------------------

    def has_killing(self):
        return self.killing is not None

    def killing_many(self, xs):
        if self.killing is None:
            raise SpecValidationError("spec has no killing section")
        return self._eval_table(list(self.killing), xs)

    def dkilling_many(self, xs):
        if self.killing is None:
            raise SpecValidationError("spec has no killing section")
        key = "dY"
        if key not in self._cache:
            self._cache[key] = [
                [comp.diff(c) for comp in self.killing] for c in self.coords
            ]
        return self._eval_table(self._cache[key], xs)

    def killing_covariant_many(self, xs, vs):
        """nabla_v Y at each point."""
        dy = self.dkilling_many(xs)          # (batch, i, k) = d_i Y^k
        gam = self.christoffel_many(xs)
        vs = np.asarray(vs, dtype=float)
        flat = np.einsum("...ik,...i->...k", dy, vs)
        conn = np.einsum("...kij,...i,...j->...k", gam, vs, self.killing_many(xs))
        return flat + conn

    def killing_residual_many(self, xs):
        """Lie derivative (L_Y g)_ij at each point; zero for Killing Y."""
        dg = self.dmetric_many(xs)
        g = self.metric_many(xs)
        y = self.killing_many(xs)
        dy = self.dkilling_many(xs)
        adv = np.einsum("...k,...kij->...ij", y, dg)
        grad = np.einsum("...kj,...ik->...ij", g, dy)
        return adv + grad + np.swapaxes(grad, -2, -1)

    # -- periodic coordinates and probe points ---------------------------

    def period_vector(self):
        return np.array([self.periods.get(c, 0.0) for c in self.coords])

    def wrap(self, x):
        x = np.array(x, dtype=float)
        per = self.period_vector()
        mask = per > 0
        x[..., mask] = np.mod(x[..., mask], per[mask])
        return x

    def delta(self, x, y):
        """x - y with periodic components reduced to the nearest branch."""
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        per = self.period_vector()
        mask = per > 0
        d[..., mask] = d[..., mask] - per[mask] * np.round(d[..., mask] / per[mask])
        return d

    def probe_box(self):
        lows, highs = [], []
        for c in self.coords:
            if c in self.domain:
                lo, hi = self.domain[c]
                span = hi - lo
                lows.append(lo + 0.05 * span)
                highs.append(hi - 0.05 * span)
            elif c in self.periods:
                lows.append(0.0)
                highs.append(self.periods[c])
            else:
                lows.append(-1.5)
                highs.append(1.5)
        return np.array(lows), np.array(highs)

    def probe_points(self, rng, count=50):
        lo, hi = self.probe_box()
        return lo + (hi - lo) * rng.random((count, self.dim))

    def in_domain(self, x):
        for i, c in enumerate(self.coords):
            if c in self.domain:
                lo, hi = self.domain[c]
                if not (lo <= x[i] <= hi):
                    return False
        return True

    # -- validation -------------------------------------------------------

    def validate(self, seed=0, probes=50, killing_tol=1e-8):
        """Probe-point checks: invertibility, constant signature (matching
        the declared one when present), Killing residual and timelikeness.
        Returns a report dict; raises SpecValidationError on failure."""
        rng = np.random.default_rng(seed)
        xs = self.probe_points(rng, probes)
        g = self.metric_many(xs)
        eigs = np.linalg.eigvalsh(g)
        scale = np.max(np.abs(eigs), axis=1)
        if np.any(np.min(np.abs(eigs), axis=1) < 1e-10 * scale):
            raise SpecValidationError("metric is singular at a probe point")
        n_minus = np.sum(eigs < 0, axis=1)
        if np.any(n_minus != n_minus[0]):
            raise SpecValidationError("metric signature changes across probe points")
        if self.signature is not None:
            declared = self.signature.count("-")
            if declared != int(n_minus[0]):
                raise SpecValidationError(
                    f"declared signature {self.signature!r} has {declared} minus "
                    f"signs but probes show {int(n_minus[0])}"
                )
        report = {
            "probes": probes,
            "n_minus": int(n_minus[0]),
            "n_plus": int(self.dim - n_minus[0]),
        }
        if self.killing is not None:
            resid = self.killing_residual_many(xs)
            worst = float(np.max(np.abs(resid)))
            if worst > killing_tol:
                raise SpecValidationError(
                    f"Killing equation residual {worst:.3e} exceeds {killing_tol:.1e}"
                )
            y = self.killing_many(xs)
            yy = np.einsum("...i,...ij,...j->...", y, g, y)
            if np.any(yy >= 0):
                raise SpecValidationError(
                    "killing field fails to be timelike at a probe point"
                )
            report["killing_residual"] = worst
            report["g_YY_max"] = float(np.max(yy))
        return report


def _map_tree(tree, fn):
    if isinstance(tree, (list, tuple)):
        return [_map_tree(item, fn) for item in tree]
    return fn(tree)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def parse_manifold(text, name=""):
    lines = text.splitlines()
    section = None
    data = {"manifold": {}, "metric": [], "killing": [], "geodesics": {}}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise SpecFileError("unterminated section header", lineno)
            section = line[1:-1].strip().lower()
            if section.startswith("geodesic."):
                gname = section.split(".", 1)[1]
                if not gname:
                    raise SpecFileError("empty geodesic name", lineno)
                data["geodesics"].setdefault(gname, {})
                section = ("geodesic", gname)
            elif section not in ("manifold", "metric", "killing"):
                raise SpecFileError(f"unknown section [{section}]", lineno)
            continue
        if section is None:
            raise SpecFileError("content before any section header", lineno)
        if "=" not in line:
            raise SpecFileError("expected 'key = value'", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if isinstance(section, tuple):
            data["geodesics"][section[1]][key] = (value, lineno)
        elif section == "manifold":
            data["manifold"][key] = (value, lineno)
        else:
            data[section].append((key, value, lineno))

    man = data["manifold"]
    if "dim" not in man:
        raise SpecFileError("[manifold] section must declare dim")
    dim_text, dim_line = man["dim"]
    try:
        dim = int(dim_text)
    except ValueError:
        raise SpecFileError(f"dim must be an integer, got {dim_text!r}", dim_line)
    if dim <= 0:
        raise SpecFileError("dim must be positive", dim_line)

    if "coords" not in man:
        raise SpecFileError("[manifold] section must declare coords")
    coords_text, coords_line = man["coords"]
    coords = tuple(c.strip() for c in coords_text.split(","))
    if len(coords) != dim or any(not c.isidentifier() for c in coords):
        raise SpecFileError(
            f"coords must be {dim} comma-separated identifiers", coords_line
        )
    clash = set(coords) & RESERVED
    if clash:
        raise SpecFileError(f"coordinate names {sorted(clash)} are reserved", coords_line)
    if len(set(coords)) != dim:
        raise SpecFileError("duplicate coordinate names", coords_line)

    def coord_index(token, line):
        if token in coords:
            return coords.index(token)
        try:
            idx = int(token)
        except ValueError:
            raise SpecFileError(f"unknown coordinate {token!r}", line)
        if not 0 <= idx < dim:
            raise SpecFileError(f"coordinate index {idx} out of range", line)
        return idx

    periods = {}
    if "periods" in man:
        text_p, line_p = man["periods"]
        for item in text_p.split(","):
            item = item.strip()
            if not item:
                continue
            if ":" not in item:
                raise SpecFileError("periods entries look like 'name: expr'", line_p)
            cname, pexpr = (s.strip() for s in item.split(":", 1))
            idx = coord_index(cname, line_p)
            value = _const(pexpr, line_p)
            if value <= 0:
                raise SpecFileError(f"period for {cname} must be positive", line_p)
            periods[coords[idx]] = value

    domain = {}
    if "domain" in man:
        text_d, line_d = man["domain"]
        for item in text_d.split(","):
            item = item.strip()
            if not item:
                continue
            if ":" not in item or ".." not in item:
                raise SpecFileError("domain entries look like 'name: low .. high'", line_d)
            cname, rng_text = (s.strip() for s in item.split(":", 1))
            idx = coord_index(cname, line_d)
            lo_text, hi_text = (s.strip() for s in rng_text.split("..", 1))
            lo, hi = _const(lo_text, line_d), _const(hi_text, line_d)
            if hi <= lo:
                raise SpecFileError(f"empty domain for {cname}", line_d)
            domain[coords[idx]] = (lo, hi)

    signature = None
    if "signature" in man:
        sig_text, sig_line = man["signature"]
        signature = sig_text.strip()
        if len(signature) != dim or set(signature) - {"+", "-"}:
            raise SpecFileError(
                f"signature must be {dim} characters of '+'/'-'", sig_line
            )

    known = {"dim", "coords", "periods", "signature", "domain"}
    for key, (_, line) in man.items():
        if key not in known:
            raise SpecFileError(f"unknown [manifold] key {key!r}", line)

    zero = ex.parse("0")
    metric = [[zero for _ in range(dim)] for _ in range(dim)]
    seen = {}
    for key, value, line in data["metric"]:
        parts = key.split(".")
        if len(parts) != 3 or parts[0] != "g":
            raise SpecFileError(f"metric keys look like 'g.i.j', got {key!r}", line)
        i = coord_index(parts[1], line)
        j = coord_index(parts[2], line)
        pair = (min(i, j), max(i, j))
        if pair in seen and seen[pair] != value:
            raise SpecFileError(
                f"conflicting definitions for metric entry {key}", line
            )
        seen[pair] = value
        node = ex.parse(value, line=line)
        bad = node.variables() - set(coords) - set(CONSTANTS)
        if bad:
            raise SpecFileError(f"unknown symbols {sorted(bad)} in metric entry", line)
        metric[i][j] = node
        metric[j][i] = node
    if not seen:
        raise SpecFileError("[metric] section is empty")

    killing = None
    if data["killing"]:
        comps = [zero] * dim
        for key, value, line in data["killing"]:
            token = key[2:] if key.startswith("Y.") else key
            idx = coord_index(token, line)
            node = ex.parse(value, line=line)
            bad = node.variables() - set(coords) - set(CONSTANTS)
            if bad:
                raise SpecFileError(f"unknown symbols {sorted(bad)} in killing entry", line)
            comps[idx] = node
        killing = tuple(comps)

    guesses = {}
    for gname, entries in data["geodesics"].items():
        if "x0" not in entries or "v0" not in entries:
            raise SpecFileError(f"[geodesic.{gname}] needs x0 and v0")
        vecs = {}
        for key in ("x0", "v0"):
            value, line = entries[key]
            items = [s.strip() for s in value.split(",")]
            if len(items) != dim:
                raise SpecFileError(
                    f"{key} needs {dim} components, got {len(items)}", line
                )
            vecs[key] = np.array([_const(s, line) for s in items])
        extra = set(entries) - {"x0", "v0"}
        if extra:
            raise SpecFileError(
                f"unknown keys {sorted(extra)} in [geodesic.{gname}]",
                entries[sorted(extra)[0]][1],
            )
        guesses[gname] = (vecs["x0"], vecs["v0"])

    return ManifoldSpec(
        dim=dim,
        coords=coords,
        metric=metric,
        killing=killing,
        periods=periods,
        signature=signature,
        domain=domain,
        geodesic_guesses=guesses,
        name=name,
    )


def load_manifold(path):
    with open(path) as fh:
        text = fh.read()
    return parse_manifold(text, name=os.path.splitext(os.path.basename(path))[0])


def bundled_spec_path(name):
    """Filesystem path of a spec file shipped with the package."""
    import importlib.resources as resources

    base = resources.files("geodex") / "specs" / f"{name}.spec"
    return str(base)


# ---------------------------------------------------------------------------
# Auxiliary Riemannian metric of a stationary spec
# ---------------------------------------------------------------------------

def auxiliary_riemannian(spec, validate=True, seed=0):
    """g_R(v,w) = g(v,w) - 2 g(v,Y) g(w,Y) / g(Y,Y), as expression trees.

    Requires a timelike Killing field; the result is positive definite
    wherever Y is timelike, and Y remains Killing for g_R.
    """
    if spec.killing is None:
        raise SpecValidationError("auxiliary metric needs a killing section")
    d = spec.dim
    w = []
    for i in range(d):
        acc = None
        for j in range(d):
            term = ex.mul(spec.metric[i][j], spec.killing[j])
            acc = term if acc is None else ex.add(acc, term)
        w.append(acc)
    gyy = None
    for i in range(d):
        term = ex.mul(w[i], spec.killing[i])
        gyy = term if gyy is None else ex.add(gyy, term)
    metric = [
        [
            ex.sub(spec.metric[i][j],
                   ex.div(ex.mul(ex.parse("2"), ex.mul(w[i], w[j])), gyy))
            for j in range(d)
        ]
        for i in range(d)
    ]
    out = ManifoldSpec(
        dim=d,
        coords=spec.coords,
        metric=metric,
        killing=spec.killing,
        periods=dict(spec.periods),
        signature="+" * d,
        domain=dict(spec.domain),
        geodesic_guesses=dict(spec.geodesic_guesses),
        name=spec.name + "-auxiliary",
    )
    if validate:
        rng = np.random.default_rng(seed)
        xs = spec.probe_points(rng, 100)
        g = spec.metric_many(xs)
        y = spec.killing_many(xs)
        yy = np.einsum("...i,...ij,...j->...", y, g, y)
        if np.any(yy >= 0):
            raise SpecValidationError("killing field not timelike at a probe point")
        gr = out.metric_many(xs)
        eigs = np.linalg.eigvalsh(gr)
        if np.any(eigs <= 0):
            raise SpecValidationError("auxiliary metric fails positivity at a probe")
        resid = out.killing_residual_many(xs)
        if np.max(np.abs(resid)) > 1e-8:
            raise SpecValidationError("Y is not Killing for the auxiliary metric")
    return out
