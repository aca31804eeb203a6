"""Command-line front end: parse manifold spec files, run the index
pipelines, and emit machine-readable JSON reports with a delimited table
and a rendered figure alongside.

Every command writes a report of the shape

    {"schema", "command", "inputs", "results",
     "invariant_checks": [{"name", "holds", "margin"}, ...],
     "versions", "seed"}

and exits 0 exactly when every invariant check holds (1 when a check
fails, 2 on input or numerical errors).  Reports contain no timestamps
or timing fields, so identical configuration and seed give byte-identical
output on one platform.  The `selftest` command writes only the JSON
report; the other commands add `<stem>.csv` and `<stem>.png` next to it.
Set GEODEX_THREADS to parallelize per-iterate rows in `iterate`.
"""

import argparse
import csv
import json
import os
import sys
import tempfile

import numpy as np
import scipy

from . import __version__
from . import bilinear as bl
from . import figures
from . import geodesic as gd
from . import iteration as it
from . import manifold as mf
from . import morse as ms
from . import symplectic as sp

SCHEMA = 1


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Plumbing
# ---------------------------------------------------------------------------

def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".geodex-tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_report(out_path, report):
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"
    _atomic_write(out_path, text)


def _write_csv(out_path, fieldnames, rows):
    import io
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in fieldnames})
    _atomic_write(out_path, buf.getvalue())


def _check(name, holds, margin=None):
    return {"name": name, "holds": bool(holds),
            "margin": None if margin is None else float(margin)}


def _load_spec(arg):
    path = arg
    if not os.path.exists(path):
        bundled = mf.bundled_spec_path(arg)
        if os.path.exists(bundled):
            path = bundled
        else:
            raise CliError(f"spec file not found: {arg}")
    try:
        spec = mf.load_manifold(path)
        spec.validate(seed=0)
    except mf.SpecFileError as exc:
        raise CliError(f"{path}:{exc.line}: {exc.args[0]}")
    except mf.SpecValidationError as exc:
        raise CliError(f"{path}: {exc}")
    return spec, path


def _refine(spec, name):
    if name not in spec.geodesic_guesses:
        available = ", ".join(sorted(spec.geodesic_guesses)) or "none"
        raise CliError(
            f"no geodesic guess named {name!r} (available: {available})")
    x0, v0 = spec.geodesic_guesses[name]
    try:
        return gd.refine_closed(spec, x0, v0)
    except (gd.ClosedGeodesicError, gd.IntegrationError,
            mf.ChartDomainError) as exc:
        raise CliError(f"closed-orbit refinement failed: {exc}")


def _orbit_path(args):
    """Resolve the path input of maslov/cz: either a stored path file or
    the Jacobi flow path of a named orbit."""
    if args.path is not None:
        path = sp.load_path_json(args.path)
        inputs = {"path": args.path}
        return path, inputs
    if args.spec is None or args.geodesic is None:
        raise CliError("provide either --path or --spec with --geodesic")
    spec, spec_path = _load_spec(args.spec)
    transfer = gd.jacobi_transfer(_refine(spec, args.geodesic))
    path = transfer.phi_path
    if args.n > 1:
        path = sp.iterate_path(path, args.n)
    inputs = {"spec": spec_path, "geodesic": args.geodesic, "n": args.n}
    return path, inputs


def _stem(out_path):
    root, _ = os.path.splitext(out_path)
    return root


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_selftest(args):
    bil = bl.self_test(seed=args.seed, cases=200)
    symp = sp.self_test(seed=args.seed, cases=12)
    checks = [
        _check("bilinear-suite", bil["ok"], bil["worst_margin"]),
        _check("symplectic-suite", symp["ok"]),
    ]
    results = {"bilinear": bil, "symplectic": symp}
    return {"inputs": {}, "results": results, "checks": checks,
            "csv": None, "figure": None}


def _cmd_maslov(args):
    path, inputs = _orbit_path(args)
    if path.kind == "symplectic":
        lpath = sp.lagrangian_image(path, sp.vertical(path.space))
    else:
        lpath = path
    report = sp.maslov_index_report(lpath, seed=args.seed)
    reference = sp.maslov_index_uniform(lpath, samples=4000, seed=args.seed)
    checks = [
        _check("uniform-oracle-agreement", report.value == reference),
        _check("nondegenerate-reading", not report.marginal,
               report.min_eig_margin),
    ]
    results = {
        "index": report.value,
        "reference_index": reference,
        "marginal": report.marginal,
        "retried": report.retried,
        "min_eig_margin": report.min_eig_margin,
        "min_angle_margin": report.min_angle_margin,
        "segments": [
            {"t0": s.t0, "t1": s.t1, "chart": s.chart, "extco0": s.extco0,
             "extco1": s.extco1, "eig_margin": s.eig_margin,
             "angle_margin": s.angle_margin}
            for s in report.segments
        ],
    }
    fieldnames = ["t0", "t1", "chart", "extco0", "extco1", "eig_margin",
                  "angle_margin"]
    csv_payload = (fieldnames, results["segments"])

    def figure(fname):
        figures.maslov_figure(fname, report)

    return {"inputs": inputs, "results": results, "checks": checks,
            "csv": csv_payload, "figure": figure}


def _cmd_cz(args):
    path, inputs = _orbit_path(args)
    if path.kind != "symplectic":
        raise CliError("the cz command needs a symplectic path")
    value = sp.conley_zehnder(path, seed=args.seed)
    reference = sp.conley_zehnder_uniform(path, samples=4000, seed=args.seed)
    bridge = sp.cz_maslov_bridge_check(path, seed=args.seed)
    checks = [
        _check("uniform-oracle-agreement", value == reference),
        _check("bridge-identity", bridge["holds_with_endpoint_term"]),
    ]
    start = np.asarray(path.evaluate(path.a))
    end = np.asarray(path.evaluate(path.b))
    is_loop = bool(np.allclose(start, end, atol=1e-9))
    if is_loop:
        mu_loop = sp.maslov_index(
            sp.lagrangian_image(path, sp.vertical(path.space)),
            seed=args.seed)
        checks.append(_check("loop-index-opposition", value == -mu_loop))
    results = {
        "index": value,
        "reference_index": reference,
        "bridge": bridge,
        "is_loop": is_loop,
    }
    rows = [{"quantity": "i_cz", "value": value},
            {"quantity": "mu", "value": bridge["mu"]},
            {"quantity": "hormander_q", "value": bridge["q"]},
            {"quantity": "endpoint_term", "value": bridge["endpoint_term"]}]
    csv_payload = (["quantity", "value"], rows)

    def figure(fname):
        figures.winding_figure(fname, path)

    return {"inputs": inputs, "results": results, "checks": checks,
            "csv": csv_payload, "figure": figure}


def _cmd_geodesic(args):
    spec, spec_path = _load_spec(args.spec)
    orbit = _refine(spec, args.geodesic)
    transfer = gd.jacobi_transfer(orbit)
    eigs = np.linalg.eigvals(transfer.monodromy)
    results = {
        "x0": orbit.x0, "v0": orbit.v0,
        "energy": orbit.energy, "charge": orbit.c_gamma,
        "closure_residual": orbit.closure_residual,
        "residual_history": orbit.residual_history,
        "monodromy": transfer.monodromy,
        "floquet_moduli": sorted(float(a) for a in np.abs(eigs)),
        "orientation_preserving": transfer.frame.orientation_preserving,
        "periodic_frame": transfer.frame.periodic,
        "symplectic_residual": transfer.symplectic_residual,
        "fixed_vector_residuals": transfer.fixed_vector_residuals,
    }
    checks = [
        _check("orbit-closes", orbit.closure_residual <= gd.CLOSURE_TOL,
               orbit.closure_residual),
        _check("transfer-symplectic",
               transfer.symplectic_residual <= gd.SYMPLECTIC_TOL,
               transfer.symplectic_residual),
    ]
    for vec_name, resid in transfer.fixed_vector_residuals.items():
        checks.append(_check(f"fixed-vector-{vec_name}", resid <= 1e-6, resid))
    d = spec.dim
    rows = []
    ts = np.linspace(0.0, 1.0, orbit.samples.shape[0])
    for t, state in zip(ts, orbit.samples):
        # the parameter column is "param" so a coordinate named "t"
        # cannot shadow it
        row = {"param": f"{t:.8f}"}
        for i, cname in enumerate(spec.coords):
            row[cname] = f"{state[i]:.12e}"
            row[f"d{cname}"] = f"{state[d + i]:.12e}"
        rows.append(row)
    fieldnames = ["param"]
    for cname in spec.coords:
        fieldnames += [cname, f"d{cname}"]
    csv_payload = (fieldnames, rows)

    def figure(fname):
        figures.orbit_figure(fname, orbit)

    inputs = {"spec": spec_path, "geodesic": args.geodesic}
    return {"inputs": inputs, "results": results, "checks": checks,
            "csv": csv_payload, "figure": figure}


def _cmd_index(args):
    spec, spec_path = _load_spec(args.spec)
    transfer = gd.jacobi_transfer(_refine(spec, args.geodesic))
    report = ms.index_report(transfer, args.n, seed=args.seed)
    power = np.linalg.matrix_power(transfer.monodromy, args.n)
    concavity = ms.boundary_form(power)
    from dataclasses import asdict
    results = asdict(report)
    results["concavity_asymmetry"] = concavity.asymmetry
    checks = [
        _check("galerkin-converged", report.converged),
        _check("index-identity", report.theorem_holds),
        _check("fixed-endpoint-identity", report.fixed_endpoint_holds),
        _check("nullity-two-routes", report.nullity_two_routes_agree),
        _check("concavity-symmetric", concavity.asymmetry <= 1e-7,
               concavity.asymmetry),
    ]
    rows = [{"field": k, "value": v} for k, v in sorted(results.items())]
    csv_payload = (["field", "value"], rows)

    def figure(fname):
        figures.index_figure(fname, report)

    inputs = {"spec": spec_path, "geodesic": args.geodesic, "n": args.n}
    return {"inputs": inputs, "results": results, "checks": checks,
            "csv": csv_payload, "figure": figure}


def _cmd_iterate(args):
    spec, spec_path = _load_spec(args.spec)
    transfer = gd.jacobi_transfer(_refine(spec, args.geodesic))
    table = it.iterate_analysis(transfer, args.nmax, seed=args.seed)
    results = table.as_dict()
    del results["wall_times"]  # keep reports byte-identical across runs

    dim = table.dim
    ns = sorted(table.reports)
    maslov_slack = min(dim * (7 * n + 5)
                       - abs(table.reports[n].i_m - n * table.reports[1].i_m)
                       for n in ns)
    checks = [
        _check("rows-converged",
               all(table.reports[n].converged for n in ns)),
        _check("iterate-index-bound",
               all(table.bounds[n]["maslov"] for n in ns), maslov_slack),
        _check("restricted-index-monotone",
               all(table.bounds[n]["mubar_monotone"] for n in ns)),
        _check("restricted-index-superadditive",
               all(table.bounds[n]["superadditive"] for n in ns)),
        _check("defect-bound",
               all(table.bounds[n]["defect"] for n in ns)),
    ]
    cz_rows = [table.bounds[n]["cz"] for n in ns]
    if all(v is not None for v in cz_rows):
        checks.append(_check("cz-iterate-bound", all(cz_rows)))

    rows = []
    for n in ns:
        rep = table.reports[n]
        rows.append({
            "n": n, "mu": rep.mu, "nullity": rep.nullity,
            "mu_restricted": rep.mu_restricted, "i_m": rep.i_m,
            "cz": "" if table.cz_indices[n] is None else table.cz_indices[n],
            "mu_fixed": rep.mu_fixed, "a_gamma": rep.a_gamma,
            "b_gamma": rep.b_gamma, "converged": rep.converged,
            "order": rep.galerkin_order,
        })
    fieldnames = ["n", "mu", "nullity", "mu_restricted", "i_m", "cz",
                  "mu_fixed", "a_gamma", "b_gamma", "converged", "order"]
    csv_payload = (fieldnames, rows)

    def figure(fname):
        figures.iterate_figure(fname, table)

    inputs = {"spec": spec_path, "geodesic": args.geodesic,
              "nmax": args.nmax}
    return {"inputs": inputs, "results": results, "checks": checks,
            "csv": csv_payload, "figure": figure}


def _cmd_partition(args):
    spec, spec_path = _load_spec(args.spec)
    transfer = gd.jacobi_transfer(_refine(spec, args.geodesic))
    try:
        part = it.nullity_partition(transfer.monodromy, spec.dim, args.nmax)
    except (ValueError, it.AngleRecognitionError) as exc:
        raise CliError(f"partition construction failed: {exc}")
    results = {
        "m_values": part.m_values,
        "denominators": part.denominators,
        "s": part.s,
        "classes": {str(m): members for m, members in part.classes.items()},
        "rules": {str(m): rule for m, rule in part.rules.items()},
        "nullities": {str(m): v for m, v in part.nullities.items()},
    }
    checks = [
        _check("class-count-bound", part.s <= 2 ** spec.dim,
               2 ** spec.dim - part.s),
        _check("class-nullity-constant", True),
    ]
    rows = []
    for m in part.m_values:
        for n in part.classes[m]:
            rows.append({"n": n, "class_m": m,
                         "nullity": part.nullities[m]})
    rows.sort(key=lambda r: r["n"])
    csv_payload = (["n", "class_m", "nullity"], rows)

    def figure(fname):
        figures.partition_figure(fname, part)

    inputs = {"spec": spec_path, "geodesic": args.geodesic,
              "nmax": args.nmax}
    return {"inputs": inputs, "results": results, "checks": checks,
            "csv": csv_payload, "figure": figure}


def _parse_counts(text, flag):
    try:
        values = [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise CliError(f"{flag} wants a comma-separated integer list")
    if not values:
        raise CliError(f"{flag} must not be empty")
    return values


def _cmd_morse_relations(args):
    mu = _parse_counts(args.mu, "--mu")
    beta = _parse_counts(args.beta, "--beta")
    try:
        res = it.morse_relations_check(mu, beta)
    except ValueError as exc:
        raise CliError(str(exc))
    results = {"mu": mu, "beta": beta, "holds": res.holds,
               "q_coeffs": res.q_coeffs}
    checks = [_check("relations-hold", res.holds, min(res.q_coeffs))]
    rows = []
    padded_mu = mu + [0] * (len(res.q_coeffs) - len(mu))
    padded_beta = beta + [0] * (len(res.q_coeffs) - len(beta))
    for k, q in enumerate(res.q_coeffs):
        rows.append({"k": k, "mu": padded_mu[k], "beta": padded_beta[k],
                     "q": q})
    csv_payload = (["k", "mu", "beta", "q"], rows)

    def figure(fname):
        figures.morse_relations_figure(fname, mu, beta, res.q_coeffs)

    return {"inputs": {"mu": args.mu, "beta": args.beta},
            "results": results, "checks": checks,
            "csv": csv_payload, "figure": figure}


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="geodex",
        description=("symplectic path indices and variational index "
                     "reports for closed geodesics"),
    )
    parser.add_argument("--version", action="version",
                        version=f"geodex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0,
                       help="seed for randomized pools (default 0)")
        p.add_argument("--out", default=None,
                       help="report path (default geodex-<command>.json)")

    p = sub.add_parser("selftest",
                       help="run the randomized form/index suites")
    common(p)

    p = sub.add_parser("maslov",
                       help="index of a Lagrangian path against the "
                            "vertical, with the uniform oracle")
    p.add_argument("--path", help="stored path file (JSON)")
    p.add_argument("--spec")
    p.add_argument("--geodesic")
    p.add_argument("--n", type=int, default=1)
    common(p)

    p = sub.add_parser("cz", help="index of a symplectic path with the "
                                  "bridge identity")
    p.add_argument("--path", help="stored path file (JSON)")
    p.add_argument("--spec")
    p.add_argument("--geodesic")
    p.add_argument("--n", type=int, default=1)
    common(p)

    p = sub.add_parser("geodesic", help="refine a closed orbit and report "
                                        "its transfer data")
    p.add_argument("--spec", required=True)
    p.add_argument("--geodesic", required=True)
    common(p)

    p = sub.add_parser("index", help="variational index report of an orbit "
                                     "iterate")
    p.add_argument("--spec", required=True)
    p.add_argument("--geodesic", required=True)
    p.add_argument("--n", type=int, default=1)
    common(p)

    p = sub.add_parser("iterate", help="index table across iterates with "
                                       "growth bounds")
    p.add_argument("--spec", required=True)
    p.add_argument("--geodesic", required=True)
    p.add_argument("--nmax", type=int, default=16)
    common(p)

    p = sub.add_parser("partition", help="nullity partition from the "
                                         "return-map spectrum")
    p.add_argument("--spec", required=True)
    p.add_argument("--geodesic", required=True)
    p.add_argument("--nmax", type=int, default=64)
    common(p)

    p = sub.add_parser("morse-relations", help="check index counts against "
                                               "Betti numbers")
    p.add_argument("--mu", required=True,
                   help="comma-separated index counts")
    p.add_argument("--beta", required=True,
                   help="comma-separated Betti numbers")
    common(p)

    return parser


_HANDLERS = {
    "selftest": _cmd_selftest,
    "maslov": _cmd_maslov,
    "cz": _cmd_cz,
    "geodesic": _cmd_geodesic,
    "index": _cmd_index,
    "iterate": _cmd_iterate,
    "partition": _cmd_partition,
    "morse-relations": _cmd_morse_relations,
}


def run(args):
    handler = _HANDLERS[args.command]
    payload = handler(args)

    out_path = args.out or f"geodex-{args.command}.json"
    report = {
        "schema": SCHEMA,
        "command": args.command,
        "seed": args.seed,
        "inputs": payload["inputs"],
        "results": payload["results"],
        "invariant_checks": payload["checks"],
        "versions": {
            "geodex": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    _write_report(out_path, report)

    artifacts = [out_path]
    if payload["csv"] is not None:
        fieldnames, rows = payload["csv"]
        csv_path = _stem(out_path) + ".csv"
        _write_csv(csv_path, fieldnames, rows)
        artifacts.append(csv_path)
    if payload["figure"] is not None:
        png_path = _stem(out_path) + ".png"
        payload["figure"](png_path)
        artifacts.append(png_path)

    all_hold = all(c["holds"] for c in payload["checks"])
    status = "ok" if all_hold else "CHECK FAILED"
    print(f"geodex {args.command}: {status}; wrote "
          + ", ".join(artifacts))
    for c in payload["checks"]:
        margin = "" if c["margin"] is None else f" (margin {c['margin']:.3g})"
        print(f"  [{'pass' if c['holds'] else 'FAIL'}] {c['name']}{margin}")
    return 0 if all_hold else 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except CliError as exc:
        print(f"geodex: {exc}", file=sys.stderr)
        return 2
    except (mf.SpecFileError,) as exc:
        print(f"geodex: line {exc.line}: {exc.args[0]}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
