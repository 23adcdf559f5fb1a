"""Command line front end ``lag-geoflow``."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cycle import (
    InvariantFunction,
    PolynomialArc,
    check_positive,
    cycle_from_arc,
    cycle_from_json,
    is_special,
    norm,
    project_mean_zero,
    total_mass,
)
from .errors import InvalidInput, LagGeoflowError
from .fiber import _as_complex, fiber_from_json
from .foliation import ChartPoint, MaxArclength, horizontal_match, trace_leaves
from .geodesic import (
    GeodesicPath,
    bvp_solve,
    check_horizontal_family,
    distance,
    ivp_solve,
    triangle_identity,
    verify_geodesic,
)
from .tolerances import DEFAULT

COMMANDS = ("roots", "cycle", "positivity", "leaves", "match", "ivp", "bvp", "distance", "verify", "triangle")


# -- deterministic JSON --------------------------------------------------------

def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    if x == int(x) and abs(x) < 1e16:
        return repr(float(x))
    return format(x, ".17g")


def dumps(obj, indent: int = 0) -> str:
    """JSON text with floats at 17 significant digits and sorted keys."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(x, (dict, list, tuple, np.ndarray)) for x in seq):
            return "[" + ", ".join(dumps(x, indent + 1) for x in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(x, indent + 1) for x in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, complex):
        return dumps([obj.real, obj.imag], indent)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _cplx(arr) -> list:
    return [[float(c.real), float(c.imag)] for c in np.asarray(arr, dtype=complex)]


# -- SVG -----------------------------------------------------------------------

def _svg(path: str, roots=(), cycles=(), leaves=(), snapshots=()) -> None:
    pts = [complex(r) for r in roots]
    for c in list(cycles) + list(snapshots):
        pts.extend(complex(x) for x in c)
    for lf in leaves:
        pts.extend(complex(x) for x in lf)
    pts = np.array(pts) if pts else np.array([0j])
    lo_x, hi_x = pts.real.min(), pts.real.max()
    lo_y, hi_y = pts.imag.min(), pts.imag.max()
    span = max(hi_x - lo_x, hi_y - lo_y, 1e-9)
    size = 600.0
    margin = 0.08 * span
    scale = size / (span + 2 * margin)

    def xy(c):
        return ((c.real - lo_x + margin) * scale, (hi_y - c.imag + margin) * scale)

    def poly(arr, close=False):
        s = " ".join("%.3f,%.3f" % xy(complex(c)) for c in arr)
        return s

    w = (hi_x - lo_x + 2 * margin) * scale
    h = (hi_y - lo_y + 2 * margin) * scale
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1f}" height="{h:.1f}" '
           f'viewBox="0 0 {w:.1f} {h:.1f}">', '<rect width="100%" height="100%" fill="white"/>']
    for lf in leaves:
        out.append(f'<polyline points="{poly(lf)}" fill="none" stroke="#888" stroke-width="0.6"/>')
    for c in cycles:
        out.append(f'<polyline points="{poly(c)}" fill="none" stroke="black" stroke-width="1.6"/>')
    k = len(snapshots)
    for i, c in enumerate(snapshots):
        f = i / max(k - 1, 1)
        col = "#%02x%02x%02x" % (int(40 + 200 * f), 60, int(220 - 180 * f))
        out.append(f'<polyline points="{poly(c)}" fill="none" stroke="{col}" stroke-width="1.1"/>')
    for r in roots:
        x, y = xy(complex(r))
        out.append(f'<path d="M{x - 6:.2f},{y - 6:.2f} L{x + 6:.2f},{y + 6:.2f} M{x - 6:.2f},{y + 6:.2f} '
                   f'L{x + 6:.2f},{y - 6:.2f}" stroke="red" stroke-width="2"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


# -- input helpers ---------------------------------------------------------------

def _load_json_arg(text: str):
    if text is None:
        return None
    p = Path(text)
    if not text.lstrip().startswith(("{", "[")) and p.exists():
        text = p.read_text()
    elif not text.lstrip().startswith(("{", "[")):
        raise InvalidInput(f"file not found: {text}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"invalid JSON: {exc}") from None


def _tolerances(pairs):
    kw = {}
    for item in pairs or []:
        if "=" not in item:
            raise InvalidInput(f"--tol expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        kw[k.strip()] = v
    return DEFAULT.with_overrides(**kw)


def _threads(arg):
    if arg is not None:
        return int(arg)
    env = os.environ.get("LAG_GEOFLOW_THREADS")
    return int(env) if env else 1


def _fiber(args, tol):
    obj = _load_json_arg(args.fiber) if getattr(args, "fiber", None) else None
    return fiber_from_json(obj, tol) if obj is not None else None


def _cycle(text, fiber, tol):
    obj = _load_json_arg(text)
    return cycle_from_json(obj, tol, fiber)


def _velocity(args, circle):
    if args.h_file:
        obj = _load_json_arg(args.h_file)
        vals = obj["h"] if isinstance(obj, dict) else obj
        h = InvariantFunction(np.asarray(vals, dtype=float))
    elif args.h_fourier:
        coeffs = [float(x) for x in args.h_fourier.split(",")]
        h = InvariantFunction.from_fourier(coeffs, circle.N)
    else:
        raise InvalidInput("ivp needs --h-fourier or --h-file")
    return project_mean_zero(circle, h)


def _path_json(path: GeodesicPath, circle0) -> dict:
    out = {
        "times": list(map(float, path.times)),
        "snapshots": [c.to_json() for c in path.snapshots],
        "h": list(map(float, path.h.values)),
        "distance": norm(circle0, path.h),
        "diagnostics": path.diagnostics,
        "horizon_reached": path.horizon_reached,
    }
    if path.s is not None:
        out["s"] = list(map(float, path.s))
    if path.stop_reason:
        out["stop_reason"] = path.stop_reason
    return out


def _snap_csv(path_base: str, snaps) -> None:
    if len(snaps) == 1:
        Path(path_base).write_text(snaps[0].to_csv())
        return
    base = Path(path_base)
    for i, c in enumerate(snaps):
        base.with_name(f"{base.stem}_{i:03d}{base.suffix or '.csv'}").write_text(c.to_csv())


# -- commands ------------------------------------------------------------------

def cmd_roots(args, tol):
    fib = _fiber(args, tol)
    if fib is None:
        raise InvalidInput("--fiber is required")
    out = fib.roots_json()
    out["root_sep"] = fib.root_sep if math.isfinite(fib.root_sep) else None
    out["degree"] = fib.degree
    return out


def cmd_cycle(args, tol):
    fib = _fiber(args, tol)
    if fib is None:
        raise InvalidInput("--fiber is required")
    arc = PolynomialArc(tuple(_as_complex(c) for c in _load_json_arg(args.arc)))
    c = cycle_from_arc(fib, arc, args.N)
    if args.csv:
        Path(args.csv).write_text(c.to_csv())
    if args.svg:
        _svg(args.svg, fib.roots, [c.zeta])
    return c.to_json()


def cmd_positivity(args, tol):
    c = _cycle(args.cycle, _fiber(args, tol), tol)
    rep = check_positive(c)
    out = {"is_positive": rep.is_positive, "margin": rep.margin, "worst_u": rep.worst_u}
    if rep.is_positive:
        out["is_special"] = is_special(c)
        out["total_mass"] = total_mass(c)
    return out


def cmd_leaves(args, tol):
    fib = _fiber(args, tol)
    c = _cycle(args.cycle, fib, tol)
    fib = c.fiber
    idx = np.unique(np.linspace(1, c.N - 1, args.count).round().astype(int))
    starts = [ChartPoint.in_zeta_chart(c.z[k], c.zeta[k]) for k in idx]
    traces = []
    for sgn in ((1, -1) if args.sign == 0 else (args.sign,)):
        traces += trace_leaves(fib, starts, [sgn] * len(starts), MaxArclength(args.length))
    if args.csv:
        Path(args.csv).write_text("".join(t.to_csv() for t in traces))
    if args.svg:
        _svg(args.svg, fib.roots, [c.zeta], [t.zeta for t in traces])
    return {
        "leaves": [
            {"start": [t.zeta[0].real, t.zeta[0].imag], "end": [t.zeta[-1].real, t.zeta[-1].imag],
             "sign": t.direction_sign, "termination": t.termination,
             "arclength": float(t.arclength[-1]), "nodes": int(t.zeta.size),
             "residual": t.residual(fib)}
            for t in traces
        ]
    }


def cmd_match(args, tol):
    fib = _fiber(args, tol)
    c0 = _cycle(args.cycle0, fib, tol)
    c1 = _cycle(args.cycle1, c0.fiber, tol)
    m = horizontal_match(c0, c1)
    if args.svg:
        _svg(args.svg, c0.fiber.roots, [c0.zeta, c1.zeta])
    return {
        "v": list(map(float, m.v)), "orientation": m.orientation,
        "beta_zeta": _cplx(m.beta_zeta), "beta_z": _cplx(m.beta_z),
        "s_arclength": list(map(float, m.s_arclength)), "area": list(map(float, m.area)),
        "endpoint_theta": list(m.endpoint_theta), "leaf_residual": m.leaf_residual,
    }


def cmd_ivp(args, tol):
    fib = _fiber(args, tol)
    c = _cycle(args.cycle, fib, tol)
    h = _velocity(args, c)
    path = ivp_solve(c, h, args.T, args.dt, method=args.method, store_every=args.store_every)
    if args.csv:
        _snap_csv(args.csv, path.snapshots)
    if args.svg:
        step = max(1, len(path.snapshots) // 10)
        _svg(args.svg, c.fiber.roots, [c.zeta], snapshots=[s.zeta for s in path.snapshots[::step]])
    return _path_json(path, c)


def cmd_bvp(args, tol):
    fib = _fiber(args, tol)
    c0 = _cycle(args.cycle0, fib, tol)
    c1 = _cycle(args.cycle1, c0.fiber, tol)
    times = [float(x) for x in args.t.split(",")] if args.t else [0.0, 0.25, 0.5, 0.75, 1.0]
    path = bvp_solve(c0, c1, times)
    if args.csv:
        _snap_csv(args.csv, path.snapshots)
    if args.svg:
        _svg(args.svg, c0.fiber.roots, [c0.zeta, c1.zeta], snapshots=[s.zeta for s in path.snapshots])
    return _path_json(path, c0)


def cmd_distance(args, tol):
    fib = _fiber(args, tol)
    c0 = _cycle(args.cycle0, fib, tol)
    c1 = _cycle(args.cycle1, c0.fiber, tol)
    return {"distance": distance(c0, c1)}


def cmd_verify(args, tol):
    fib = _fiber(args, tol)
    obj = _load_json_arg(args.path)
    snaps = [cycle_from_json(s, tol, fib) for s in obj["snapshots"]]
    h = InvariantFunction(np.asarray(obj["h"], dtype=float), True)
    path = GeodesicPath(np.asarray(obj["times"], dtype=float), snaps, h)
    rep = verify_geodesic(path)
    return {
        "residual": rep.residual,
        "per_time": list(map(float, rep.per_time)),
        "speed_variation": rep.speed_variation,
        "horizontality": check_horizontal_family(snaps),
    }


def cmd_triangle(args, tol):
    fib = _fiber(args, tol)
    c0 = _cycle(args.cycle0, fib, tol)
    c1 = _cycle(args.cycle1, c0.fiber, tol)
    c2 = _cycle(args.cycle2, c0.fiber, tol)
    return {"residual": triangle_identity(c0, c1, c2)}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lag-geoflow",
        description="Geodesics of O(n)-invariant positive Lagrangian spheres in A_m Milnor fibers.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--fiber", help='fiber JSON text or file: {"coeffs": [[re,im],...], "n": int}')
        p.add_argument("--tol", action="append", metavar="KEY=VALUE", help="override a tolerance")
        p.add_argument("--threads", type=int, help="worker cap (default LAG_GEOFLOW_THREADS or 1)")
        p.add_argument("--out", help="write JSON here instead of standard output")
        return p

    p = common(sub.add_parser("roots", help="roots of f"))
    p = common(sub.add_parser("cycle", help="symmetric circle over a polynomial arc"))
    p.add_argument("--arc", required=True, help="arc coefficients, JSON list of [re,im] (ascending in x)")
    p.add_argument("--N", type=int, default=128)
    p.add_argument("--csv")
    p.add_argument("--svg")
    p = common(sub.add_parser("positivity", help="positivity report of a cycle"))
    p.add_argument("--cycle", required=True)
    p = common(sub.add_parser("leaves", help="trace leaves through cycle nodes"))
    p.add_argument("--cycle", required=True)
    p.add_argument("--count", type=int, default=9)
    p.add_argument("--length", type=float, default=1.0)
    p.add_argument("--sign", type=int, choices=(-1, 0, 1), default=0, help="0 traces both directions")
    p.add_argument("--csv")
    p.add_argument("--svg")
    p = common(sub.add_parser("match", help="leafwise matching of two cycles"))
    p.add_argument("--cycle0", required=True)
    p.add_argument("--cycle1", required=True)
    p.add_argument("--svg")
    p = common(sub.add_parser("ivp", help="geodesic with given initial velocity"))
    p.add_argument("--cycle", required=True)
    p.add_argument("--h-fourier", help="cosine coefficients c0,c1,... of h(u)")
    p.add_argument("--h-file", help='JSON list or {"h": [...]} of h on the half grid')
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1 / 200)
    p.add_argument("--method", choices=("potential", "stencil"), default="potential")
    p.add_argument("--store-every", type=int, default=1)
    p.add_argument("--csv")
    p.add_argument("--svg")
    p = common(sub.add_parser("bvp", help="geodesic between two cycles"))
    p.add_argument("--cycle0", required=True)
    p.add_argument("--cycle1", required=True)
    p.add_argument("--t", help="comma separated snapshot times")
    p.add_argument("--csv")
    p.add_argument("--svg")
    p = common(sub.add_parser("distance", help="geodesic distance"))
    p.add_argument("--cycle0", required=True)
    p.add_argument("--cycle1", required=True)
    p = common(sub.add_parser("verify", help="check a geodesic JSON produced by ivp or bvp"))
    p.add_argument("--path", required=True)
    p = common(sub.add_parser("triangle", help="flatness identity for three cycles"))
    p.add_argument("--cycle0", required=True)
    p.add_argument("--cycle1", required=True)
    p.add_argument("--cycle2", required=True)
    return ap


_HANDLERS = {
    "roots": cmd_roots, "cycle": cmd_cycle, "positivity": cmd_positivity, "leaves": cmd_leaves,
    "match": cmd_match, "ivp": cmd_ivp, "bvp": cmd_bvp, "distance": cmd_distance,
    "verify": cmd_verify, "triangle": cmd_triangle,
}


def run(argv=None, stdout=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    args = build_parser().parse_args(argv)
    try:
        tol = _tolerances(args.tol)
        threads = _threads(args.threads)
        result = _HANDLERS[args.command](args, tol)
    except LagGeoflowError as exc:
        stdout.write(dumps({"error": {"kind": exc.kind, "detail": exc.detail}}) + "\n")
        return exc.exit_code
    except (OSError, KeyError, ValueError, TypeError) as exc:
        stdout.write(dumps({"error": {"kind": "InvalidInput", "detail": str(exc)}}) + "\n")
        return 2
    result["meta"] = {"command": args.command, "tolerances": tol.as_dict(), "threads": threads,
                      "version": __version__}
    text = dumps(result) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        stdout.write(text)
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
