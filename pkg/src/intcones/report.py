"""JSON reports, per-vertex PLY fields and CSV traces."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .mesh import Mesh
from .pipeline import SolveReport, config_dict

SIG_DIGITS = 12


def _num(x: float) -> float:
    """Round to ``SIG_DIGITS`` significant digits (non-finite values kept)."""
    x = float(x)
    if not np.isfinite(x):
        return x
    return float(f"{x:.{SIG_DIGITS}g}")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def report_dict(report: SolveReport) -> dict:
    """Serializable view with a fixed key order."""
    out = {
        "mesh": {
            "n_vertices": report.n_vertices,
            "genus": report.genus,
            "n_boundary_loops": report.n_boundary_loops,
        },
        "config": config_dict(report.config),
        "cones": [{"vertex": v, "z": z} for v, z in report.cones],
        "n_c": report.n_c,
        "n_0": report.n_0,
        "distortion": report.distortion,
        "iterations": report.iterations,
        "termination": report.termination,
        "pin": report.pin,
        "trace": [
            {"event": t.event, "E": t.E, "n_c": t.n_c, "n_0": t.n_0,
             "iteration": t.iteration, "step": t.step, "eta": t.eta}
            for t in report.trace
        ],
    }
    h = report.holonomy
    if report.genus >= 1 and h is not None:
        hol = {
            "r": [int(x) for x in h.r],
            "e_dif": h.E_dif,
            "distortion": h.E,
            "scale": h.a,
            "residual": h.residual,
            "r_box": [[int(x) for x in h.r_box[0]], [int(x) for x in h.r_box[1]]],
            "at_box_edge": h.at_box_edge,
        }
        if h.basis is not None:
            hol["loops"] = [
                {"vertices": list(lp.vertices), "k_g_sum": lp.total_k_g}
                for lp in h.basis.loops
            ]
            hol["crossings"] = [{"vertex": x.vertex, "loops": [x.a, x.b]} for x in h.basis.intersections]
        if h.cut is not None:
            cut = h.cut
            hol["cut"] = {
                "n_vars": cut.n_vars,
                "pairs": [
                    {"loop": i, "vertex": int(v),
                     "left_vars": [int(cut.copy_var[c]) for c in lc],
                     "right_vars": [int(cut.copy_var[c]) for c in rc],
                     "right_slots": [int(cut.copy_slot[c]) for c in rc]}
                    for i, lp in enumerate(cut.basis.loops)
                    for v, lc, rc in zip(lp.vertices, cut.left_copies[i], cut.right_copies[i])
                ],
            }
        out["holonomy"] = hol
    out["timings"] = dict(report.timings)
    out["audit"] = dict(report.audit)
    out["warnings"] = list(report.warnings)
    return _clean(out)


def emit_report(report: SolveReport, path) -> dict:
    data = report_dict(report)
    Path(path).write_text(json.dumps(data, indent=2) + "\n")
    return data


# -- PLY -----------------------------------------------------------------


def emit_field_ply(mesh: Mesh, u, path, binary: bool = False) -> None:
    """Mesh with a per-vertex float ``quality`` channel set to ``u``.

    Only the first three coordinates are written (meshes in higher
    dimensions are projected).
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_vertices,):
        raise ValueError("one value per vertex is required")
    xyz = np.zeros((mesh.n_vertices, 3))
    d = min(3, mesh.vertices.shape[1])
    xyz[:, :d] = mesh.vertices[:, :d]
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\nproperty double quality\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(np.hstack([xyz, u[:, None]]).astype("<f8").tobytes())
            for a, b, c in mesh.faces.tolist():
                fh.write(struct.pack("<Biii", 3, a, b, c))
        else:
            lines = [f"{x:.17g} {y:.17g} {z:.17g} {q:.17g}" for (x, y, z), q in zip(xyz, u)]
            lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
            fh.write(("\n".join(lines) + "\n").encode("ascii"))


def read_field_ply(path):
    """Read a file written by :func:`emit_field_ply`; returns
    ``(xyz, faces, quality)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    nv = nf = 0
    fmt = "ascii"
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
        elif parts and parts[0] == "format":
            fmt = parts[1]
    body = raw[end:]
    if fmt == "ascii":
        rows = body.decode("ascii").split("\n")
        vert = np.array([[float(t) for t in rows[i].split()] for i in range(nv)]).reshape(nv, 4)
        faces = np.array([[int(t) for t in rows[nv + i].split()[1:]] for i in range(nf)], dtype=np.int64)
    else:
        vert = np.frombuffer(body[: nv * 32], dtype="<f8").reshape(nv, 4)
        rec = np.frombuffer(body[nv * 32: nv * 32 + nf * 13],
                            dtype=np.dtype([("n", "u1"), ("i", "<i4", 3)]))
        faces = rec["i"].astype(np.int64)
    return vert[:, :3], faces.reshape(-1, 3), vert[:, 3].copy()


# -- trace CSV ---------------------------------------------------------------

TRACE_FIELDS = ("event", "iteration", "step", "E", "n_c", "n_0", "eta")


def emit_trace_csv(report: SolveReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for t in report.trace:
            w.writerow([t.event, t.iteration, t.step, repr(t.E), t.n_c, t.n_0, repr(t.eta)])


def read_trace_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("iteration", "step", "n_c", "n_0"):
            r[k] = int(r[k])
        for k in ("E", "eta"):
            r[k] = float(r[k])
    return rows
