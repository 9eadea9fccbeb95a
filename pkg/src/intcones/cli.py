"""Command line: ``cones solve | plot | generate``.

``solve`` prints a tab-separated summary (``key<TAB>value`` lines, then
one ``cone<TAB>vertex<TAB>z`` line per cone) and writes the requested
artifacts. Exit status: 0 when the distortion target is met, 2 when the
run stopped at the iteration cap (or stalled), 1 on error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import shapes
from .mesh import MeshError, load_obj, save_obj
from .pipeline import Config, ConfigError, run_pipeline

log = logging.getLogger("intcones")

EXIT_OK, EXIT_ERROR, EXIT_CAP = 0, 1, 2


def _solve(args) -> int:
    mesh = load_obj(args.input)
    cfg = Config(epsilon_tar=args.target_distortion, n_g=args.ng, bounds=tuple(args.bound),
                 lambda_d=args.lambda_d, eta0=args.eta, max_iter=args.max_iter,
                 boundary=args.boundary)
    report = run_pipeline(mesh, cfg)

    from .report import emit_field_ply, emit_report, emit_trace_csv

    if args.out:
        emit_report(report, args.out)
    if args.field:
        emit_field_ply(mesh, report.u, args.field, binary=args.binary_ply)
    if args.trace:
        emit_trace_csv(report, args.trace)
    figure = args.figure
    if figure is None and args.out and not args.no_figure:
        figure = str(Path(args.out).with_suffix("")) + "_trace.png"
    if figure and not args.no_figure:
        from .plotting import plot_trace

        plot_trace(report.trace, figure, title=Path(args.input).name, target=cfg.epsilon_tar)

    out = sys.stdout
    rows = [
        ("input", args.input),
        ("n_vertices", report.n_vertices),
        ("genus", report.genus),
        ("n_boundary_loops", report.n_boundary_loops),
        ("termination", report.termination),
        ("iterations", report.iterations),
        ("distortion", f"{report.distortion:.12g}"),
        ("n_c", report.n_c),
        ("n_0", report.n_0),
        ("sum_z", report.audit["sum_z"]),
        ("yamabe_residual", f"{report.audit['yamabe_residual']:.3e}"),
    ]
    if report.holonomy is not None:
        h = report.holonomy
        rows += [("holonomy_r", " ".join(str(int(x)) for x in h.r)),
                 ("holonomy_distortion", f"{h.E:.12g}"),
                 ("e_dif", f"{h.E_dif:.12g}")]
    rows.append(("seconds", f"{report.timings.get('total', 0.0):.3f}"))
    if figure and not args.no_figure:
        rows.append(("figure", figure))
    for k, v in rows:
        out.write(f"{k}\t{v}\n")
    for v, z in report.cones:
        out.write(f"cone\t{v}\t{z}\n")
    for w in report.warnings:
        log.warning(w)
    return EXIT_OK if report.converged else EXIT_CAP


def _plot(args) -> int:
    from .plotting import plot_trace
    from .report import read_trace_csv

    plot_trace(read_trace_csv(args.trace), args.output, title=Path(args.trace).name)
    print(f"figure\t{args.output}")
    return EXIT_OK


def _parse_params(items):
    out = {}
    for item in items or []:
        key, _, val = item.partition("=")
        if not _:
            raise ValueError(f"expected key=value, got {item!r}")
        try:
            out[key] = int(val)
        except ValueError:
            out[key] = float(val)
    return out


def _generate(args) -> int:
    mesh = shapes.SHAPES[args.shape](**_parse_params(args.param))
    if mesh.vertices.shape[1] != 3:
        raise MeshError("this shape lives in R^4 and cannot be written as OBJ")
    save_obj(mesh, args.output)
    print(f"n_vertices\t{mesh.n_vertices}\nn_faces\t{mesh.n_faces}\noutput\t{args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cones", description="Integer cone singularities for low-distortion conformal maps.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="place cones on a triangle mesh")
    s.add_argument("input", help="ASCII OBJ triangle mesh")
    s.add_argument("--target-distortion", type=float, default=0.2)
    s.add_argument("--ng", type=int, default=30, help="max free multipliers per angle solve")
    s.add_argument("--bound", type=int, nargs=2, default=(-1, 1), metavar=("LO", "HI"))
    s.add_argument("--lambda-d", type=float, default=1e6, help="seam-jump weight (genus >= 1)")
    s.add_argument("--eta", type=float, default=0.10, help="initial removal threshold")
    s.add_argument("--max-iter", type=int, default=1000)
    s.add_argument("--boundary", choices=("dirichlet", "neumann"), default="dirichlet")
    s.add_argument("--out", help="JSON report path")
    s.add_argument("--field", help="PLY with the log conformal factor as 'quality'")
    s.add_argument("--binary-ply", action="store_true")
    s.add_argument("--trace", help="CSV event trace")
    s.add_argument("--figure", help="trace figure (defaults next to --out)")
    s.add_argument("--no-figure", action="store_true")
    s.set_defaults(func=_solve)

    pl = sub.add_parser("plot", help="render a trace CSV")
    pl.add_argument("trace")
    pl.add_argument("output")
    pl.set_defaults(func=_plot)

    g = sub.add_parser("generate", help="write a built-in test mesh")
    g.add_argument("shape", choices=sorted(shapes.SHAPES))
    g.add_argument("output")
    g.add_argument("--param", action="append", help="shape parameter key=value")
    g.set_defaults(func=_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MeshError, ConfigError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - report anything else as an error exit
        log.exception("unexpected failure: %s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
