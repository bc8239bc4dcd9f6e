"""Command-line driver.

Every subcommand writes a report (JSON by default, CSV on request) and exits
with 0 when its checks pass, 1 when a check fails and 2 on usage errors.

JSON reports carry a top-level ``schema_version``; CSV tables start with a
header row (columns are listed in each subcommand's ``--help``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0"
THREADS_ENV = "RENORMINDEX_THREADS"
GEOMETRY_ALIASES = {
    "torus": "flat_torus", "flat_torus": "flat_torus", "t2": "flat_torus",
    "sphere": "round_sphere", "round_sphere": "round_sphere", "s2": "round_sphere",
    "circle": "circle", "s1": "circle",
    "cylinder": "b_cylinder", "b_cylinder": "b_cylinder",
}
GEOMETRY_KEYS = {"kind", "radius", "periods", "resolution", "boundary_length", "collar_extent", "dimension"}

SCHEMA_HELP = f"""\
report schema {SCHEMA_VERSION}: {{"schema_version", "command", "config", "result", "passed"}}
geometry spec file: one "key = value" per line, '#' comments, comma-separated lists
  keys: {", ".join(sorted(GEOMETRY_KEYS))}
run "renormindex <subcommand> --help" for flags and CSV columns"""

log = logging.getLogger("renormindex")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    geometry: dict = field(default_factory=dict)
    twist: int = 0
    times: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    output: str | None = None
    fmt: str = "json"
    seed: int = 0
    threads: int | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = {k: v for k, v in self.tolerances.items() if not (v > 0)}
        if bad:
            raise UsageError(f"tolerances must be positive: {bad}")
        if self.fmt not in ("json", "csv"):
            raise UsageError(f"unknown format {self.fmt!r}")
        if self.output:
            parent = Path(self.output).resolve().parent
            if not parent.is_dir() or not os.access(parent, os.W_OK):
                raise UsageError(f"output directory {parent} is not writable")


# --- geometry specs ----------------------------------------------------------

def _parse_value(text: str):
    text = text.strip()
    parts = [p.strip() for p in text.split(",")] if "," in text else [text]
    vals = []
    for p in parts:
        try:
            vals.append(int(p))
        except ValueError:
            try:
                vals.append(float(p))
            except ValueError:
                vals.append(p)
    return vals if len(vals) > 1 else vals[0]


def parse_geometry_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; lists are comma separated."""
    spec = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in GEOMETRY_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r} (allowed: {sorted(GEOMETRY_KEYS)})")
        spec[key] = _parse_value(val)
    if "kind" not in spec:
        raise UsageError(f"{path}: missing 'kind'")
    return spec


def geometry_spec(name: str | None, resolution=None, default="flat_torus") -> dict:
    if name is None:
        spec = {"kind": default}
    elif name.lower() in GEOMETRY_ALIASES:
        spec = {"kind": name.lower()}
    elif Path(name).is_file():
        spec = parse_geometry_file(name)
    else:
        raise UsageError(f"unknown geometry {name!r}: use {sorted(set(GEOMETRY_ALIASES))} or a spec file")
    kind = GEOMETRY_ALIASES.get(str(spec["kind"]).lower())
    if kind is None:
        raise UsageError(f"unknown geometry kind {spec['kind']!r}")
    spec["kind"] = kind
    if kind == "circle":
        spec["kind"] = "flat_torus"
        spec.setdefault("periods", 2 * math.pi)
    if resolution is not None:
        spec["resolution"] = resolution
    return spec


def _build(spec):
    from .geometry import build_geometry

    try:
        return build_geometry(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# --- output ----------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _clean(float(obj.real)), "im": _clean(float(obj.imag))}
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def render(cfg: RunConfig, result: dict, passed: bool, table: list | None = None) -> str:
    if cfg.fmt == "csv":
        if not table:
            raise UsageError(f"{cfg.subcommand} has no CSV table; use --format json")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in table:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return buf.getvalue()
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": cfg.subcommand,
        "config": {"geometry": cfg.geometry, "twist": cfg.twist, "times": cfg.times, "tolerances": cfg.tolerances, "seed": cfg.seed, **cfg.options},
        "result": result,
        "passed": bool(passed),
    }
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


# --- subcommands -------------------------------------------------------------

def cmd_clifford_check(cfg):
    from .clifford import CliffordElement, basis_monomials, matrix_representation, matrix_supertrace, random_element, supertrace

    rng = np.random.default_rng(cfg.seed)
    rows, summary, ok = [["n", "degree", "monomials", "max_deviation"]], {}, True
    for n in cfg.options["dims"]:
        if n % 2 or n < 2:
            raise UsageError("dimensions must be even and positive")
        top_expected = (-2j) ** (n // 2)
        worst_by_deg = {}
        for S in basis_monomials(n):
            e = CliffordElement(n, {S: 1})
            st = complex(supertrace(e, orthonormal_frame=True))
            expected = top_expected if len(S) == n else 0
            # independent oracle: trace of chirality times the spin matrix
            mat = complex(matrix_supertrace(matrix_representation(e), n))
            dev = max(abs(st - expected), abs(mat - expected))
            cnt, w = worst_by_deg.get(len(S), (0, 0.0))
            worst_by_deg[len(S)] = (cnt + 1, max(w, dev))
        # supercommutators of random homogeneous elements have zero supertrace
        comm = 0.0
        for _ in range(cfg.options["samples"]):
            a, b = random_element(n, rng), random_element(n, rng)
            comm = max(comm, abs(complex(supertrace(_supercommutator(a, b, n), orthonormal_frame=True))))
        exact = all(w == 0 for k, (cnt, w) in worst_by_deg.items() if k < n)
        top_dev = worst_by_deg[n][1]
        passed = exact and top_dev == 0 and comm <= cfg.tolerances["commutator"]
        ok &= passed
        summary[str(n)] = {"monomials": 2**n, "below_top_exact_zero": exact, "top_deviation": top_dev, "supercommutator_supertrace": comm, "passed": passed}
        rows.extend([n, k, cnt, w] for k, (cnt, w) in sorted(worst_by_deg.items()))
    return summary, ok, rows


def _supercommutator(a, b, n):
    # [a, b]_s = ab - (-1)^{|a||b|} ba, summed over homogeneous parts
    from .clifford import CliffordElement, clifford_mul

    total = CliffordElement(n)
    for i in range(n + 1):
        ai = a.grade_part(i)
        for j in range(n + 1):
            bj = b.grade_part(j)
            total = total + clifford_mul(ai, bj) - clifford_mul(bj, ai) * (-1) ** (i * j)
    return total


def cmd_lichnerowicz(cfg):
    from .operators import build_dirac, lichnerowicz_residual

    base = dict(cfg.geometry)
    if base["kind"] == "flat_torus":
        geom = _build(base)
        res = lichnerowicz_residual(build_dirac(geom, cfg.twist))
        passed = res <= cfg.tolerances["residual"]
        return {"residual": res, "tolerance": cfg.tolerances["residual"]}, passed, [["resolution", "residual"], [geom.resolution[0], res]]
    if base["kind"] != "round_sphere":
        raise UsageError("lichnerowicz runs on the torus or the sphere")
    levels = cfg.options["levels"]
    res = [lichnerowicz_residual(build_dirac(_build({**base, "resolution": N}), cfg.twist)) for N in levels]
    order = float(np.polyfit(np.log(levels), np.log(res), 1)[0]) * -1
    passed = abs(order - 2.0) <= cfg.tolerances["order"]
    table = [["resolution", "residual"]] + [[N, r] for N, r in zip(levels, res)]
    return {"resolutions": levels, "residuals": res, "order": order, "expected_order": 2.0}, passed, table


def cmd_heat_trace(cfg):
    from .heat import LaplaceTypeOperator, heat_trace_expansion

    geom = _build(cfg.geometry)
    sp = LaplaceTypeOperator(geom).spectrum()
    lo, hi = cfg.options["t_range"]
    fit = heat_trace_expansion(sp, geom.dimension, cfg.options["fit"], t_range=(lo, hi), samples=cfg.options["samples"])
    ts = np.geomspace(lo, hi, cfg.options["samples"])
    table = [["t", "trace"]] + [[float(t), sp.heat_trace(t)] for t in ts]
    table += [["i", "a_i"]] + [[i, float(a)] for i, a in enumerate(fit.coefficients)]
    a = fit.coefficients
    out = {
        "coefficients": a, "stderr": np.sqrt(np.abs(np.diag(fit.covariance))), "drift": fit.drift,
        "condition": fit.condition, "residual": fit.residual, "stable": fit.stable,
        "trace": [[float(t), sp.heat_trace(t)] for t in ts],
    }
    # the highest fitted coefficient always absorbs the truncation; judge the leading two
    change = fit.drift * np.maximum(np.abs(a), 1e-12 * abs(a[0]))
    passed = bool(np.all(change[:2] <= cfg.tolerances["drift"] * abs(a[0])))
    if geom.kind == "round_sphere":
        out["a1_over_a0"] = float(a[1] / a[0])
        passed = passed and abs(out["a1_over_a0"] - 1 / 3) <= cfg.tolerances["ratio"]
    return out, passed, table


def cmd_rescale(cfg):
    from .getzler import rescaled_limit, scale_kernel, taylor_filtration_check
    from .operators import build_dirac

    geom = _build(cfg.geometry)
    fam = scale_kernel(build_dirac(geom, cfg.twist, fourier_cutoff=cfg.options["fourier_cutoff"]))
    filt = taylor_filtration_check(fam, tol=cfg.tolerances["filtration"])
    limit, drift = rescaled_limit(fam)
    st = np.abs(fam.supertraces().real)
    mask = st > 1e-300
    slope = float(np.polyfit(np.log(fam.scales[mask]), np.log(st[mask]), 1)[0]) if mask.sum() > 1 else float("nan")
    integrated = limit * fam.area
    passed = filt.passed and abs(integrated - cfg.twist) <= cfg.tolerances["limit"]
    if cfg.twist:
        passed = passed and abs(slope - geom.dimension) <= cfg.tolerances["slope"]
    table = [["t", "supertrace"]] + [[float(s), float(v)] for s, v in zip(fam.scales, fam.supertraces().real)]
    return {"filtration_violations": filt.violations, "filtration_passed": filt.passed, "limit": limit, "limit_drift": drift,
            "integrated_limit": integrated, "supertrace_slope": slope}, passed, table


def cmd_renorm(cfg):
    from .renorm import b_heat_trace, pole_structure, regularized_integral

    geom = _build({**cfg.geometry, "kind": "b_cylinder"} if cfg.geometry["kind"] != "b_cylinder" else cfg.geometry)
    L = geom.params["boundary_length"]
    tol = cfg.tolerances["finite_part"]
    rows, table, ok = [], [["m", "finite_part", "expected", "pole_order", "nearest_pole"]], True
    for m in cfg.options["powers"]:
        data = regularized_integral(lambda x, th, m=m: x**m + 0 * th, geom)
        expected = 0.0 if m == 0 else L / m
        expected_order = 1 if m == 0 else 0
        poles = pole_structure(lambda x, th, m=m: x**m + 0 * th, geom, window=(-m - 0.5, 0.5))
        nearest = min((p.location for p in poles), key=lambda z: abs(z + m), default=float("nan"))
        good = abs(data.finite_part - expected) <= tol and data.pole_order == expected_order and abs(nearest + m) <= cfg.tolerances["pole"]
        ok &= good
        rows.append({"m": m, "finite_part": data.finite_part, "expected": expected, "pole_order": data.pole_order, "nearest_pole": nearest, "passed": good})
        table.append([m, data.finite_part, expected, data.pole_order, nearest])
    bt = b_heat_trace(geom, cfg.times).tolist()
    bt_ok = max(abs(v) for v in bt) <= cfg.tolerances["b_trace"]
    return {"powers": rows, "b_heat_trace": dict(zip(map(str, cfg.times), bt)), "b_heat_trace_passed": bt_ok}, ok and bt_ok, table


def cmd_index(cfg):
    from .index import verify_index_theorem

    geom = _build(cfg.geometry)
    rep = verify_index_theorem(geom, cfg.twist, cfg.times, tolerances={k: cfg.tolerances[k] for k in ("geometric", "mckean_singer", "eta")})
    d = rep.to_dict()
    d["index"] = rep.spectral_index
    table = [["t", "supertrace"]] + [[t, s] for t, s in zip(rep.times, rep.supertraces)]
    # diagnostic runs are never asserted, so they exit 0
    return d, rep.passed or rep.branch == "diagnostic", table


def cmd_psc_check(cfg):
    from .index import psc_obstruction_check

    geom = _build(cfg.geometry)
    try:
        rep = psc_obstruction_check(geom)
    except ValueError as exc:
        raise UsageError(f"psc-check not applicable: {exc}") from exc
    return rep.to_dict(), rep.passed, [["quantity", "value"], ["min_abs_eigenvalue", rep.min_abs_eigenvalue], ["index", rep.spectral_index]]


COMMANDS = {
    "clifford-check": (cmd_clifford_check, "exhaustive supertrace audit over Clifford basis monomials", "n,degree,monomials,max_deviation"),
    "lichnerowicz": (cmd_lichnerowicz, "residual of D^2 - Delta - c(F) - kappa/4 (sphere: convergence order)", "resolution,residual"),
    "heat-trace": (cmd_heat_trace, "small-time heat-trace fit of the scalar Laplacian", "t,trace then i,a_i"),
    "rescale": (cmd_rescale, "rescaled diagonal heat kernel: filtration and limit", "t,supertrace"),
    "renorm": (cmd_renorm, "finite parts and pole lattice on the b-cylinder", "m,finite_part,expected,pole_order,nearest_pole"),
    "index": (cmd_index, "end-to-end index comparison report", "t,supertrace"),
    "psc-check": (cmd_psc_check, "positive scalar curvature obstruction", "quantity,value"),
}

DEFAULT_GEOMETRY = {"clifford-check": None, "lichnerowicz": "flat_torus", "heat-trace": "round_sphere", "rescale": "flat_torus",
                    "renorm": "b_cylinder", "index": "flat_torus", "psc-check": "round_sphere"}


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="renormindex", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="subcommand", parser_class=_Parser)
    for name, (_, help_, cols) in COMMANDS.items():
        s = sub.add_parser(name, help=help_, description=f"{help_}. CSV columns: {cols}.")
        s.add_argument("--geometry", help="torus | sphere | circle | cylinder | path to a key = value spec file")
        s.add_argument("--resolution", type=int, help="grid points per axis")
        s.add_argument("--twist", type=int, default=0, help="twist degree d")
        s.add_argument("--t", dest="times", type=_floats, action="append", help="time(s), comma separated; repeatable")
        s.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE", help="override a tolerance")
        s.add_argument("--format", dest="fmt", choices=("json", "csv"), default="json")
        s.add_argument("--output", "-o", help="write the report here instead of stdout")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--threads", type=int, help=f"BLAS thread limit (default: ${THREADS_ENV})")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "clifford-check":
            s.add_argument("--dim", type=_ints, default=[2, 4, 6], help="even dimensions, comma separated")
            s.add_argument("--samples", type=int, default=20, help="random supercommutator samples")
        if name == "lichnerowicz":
            s.add_argument("--levels", type=_ints, default=[16, 32, 64], help="sphere resolutions for the order fit")
        if name == "heat-trace":
            s.add_argument("--fit", type=int, default=3, help="number of coefficients beyond a_0")
            s.add_argument("--t-range", type=_floats, default=[1e-3, 1e-1])
            s.add_argument("--samples", type=int, default=40)
        if name == "rescale":
            s.add_argument("--fourier-cutoff", type=int, default=48)
        if name == "renorm":
            s.add_argument("--powers", type=_ints, default=[0, 1, 2, 3])
    return p


TOLERANCES = {
    "clifford-check": {"commutator": 1e-12},
    "lichnerowicz": {"residual": 1e-8, "order": 0.2},
    "heat-trace": {"drift": 1e-3, "ratio": 1e-3},
    "rescale": {"filtration": 1e-6, "limit": 1e-6, "slope": 0.1},
    "renorm": {"finite_part": 1e-8, "pole": 1e-3, "b_trace": 1e-8},
    "index": {"geometric": 1e-3, "mckean_singer": 1e-8, "eta": 1e-10},
    "psc-check": {},
}
DEFAULT_TIMES = {"index": [0.1, 0.5, 1.0], "renorm": [0.1, 0.5, 1.0]}


def make_config(ns) -> RunConfig:
    tol = dict(TOLERANCES[ns.subcommand])
    for item in ns.tol:
        key, _, val = item.partition("=")
        if key not in tol:
            raise UsageError(f"unknown tolerance {key!r} for {ns.subcommand} (known: {sorted(tol)})")
        try:
            tol[key] = float(val)
        except ValueError as exc:
            raise UsageError(f"bad tolerance value {val!r}") from exc
    times = [t for group in (ns.times or []) for t in group] or DEFAULT_TIMES.get(ns.subcommand, [])
    if any(t <= 0 for t in times):
        raise UsageError("times must be positive")
    default = DEFAULT_GEOMETRY[ns.subcommand]
    geom = geometry_spec(ns.geometry, ns.resolution, default) if default else {}
    opts = {}
    for key in ("dim", "samples", "levels", "fit", "t_range", "fourier_cutoff", "powers"):
        if hasattr(ns, key):
            opts["dims" if key == "dim" else key] = getattr(ns, key)
    if "t_range" in opts and (len(opts["t_range"]) != 2 or not 0 < opts["t_range"][0] < opts["t_range"][1]):
        raise UsageError("--t-range needs two increasing positive values")
    threads = ns.threads
    if threads is None and os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError as exc:
            raise UsageError(f"{THREADS_ENV} must be an integer") from exc
    if threads is not None and threads < 1:
        raise UsageError("--threads must be positive")
    return RunConfig(ns.subcommand, geom, ns.twist, times, tol, ns.output, ns.fmt, ns.seed, threads, opts)


def run(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        if not ns.subcommand:
            raise UsageError("missing subcommand")
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = make_config(ns)
        func = COMMANDS[cfg.subcommand][0]
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg.threads):
            result, passed, table = func(cfg)
        text = render(cfg, result, passed, table)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(SCHEMA_HELP, file=sys.stderr)
        return 2
    if cfg.output:
        Path(cfg.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0 if passed else 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
