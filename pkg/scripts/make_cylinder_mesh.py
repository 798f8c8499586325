#!/usr/bin/env python
"""Generate the offset-circle benchmark mesh as a Gmsh 2.2 ASCII file.

Domain: interior of the unit circle at the origin minus the disc of
radius 0.5 centered at (0.5, 0). The circles touch at (1, 0), so the
domain is a crescent with a cusp; both boundary polylines share that
vertex exactly. The outer boundary carries physical tag 1 ("outer"),
the inner one tag 2 ("inner").

Construction: near-uniform vertex rings on both circles (vertex spacing
about lc), a hexagonal interior lattice kept clear of both boundaries,
a Delaunay triangulation of the union, and removal of the triangles
whose centroid lies inside the hole. Because the hole and the exterior
contain no vertices, every boundary chord is guaranteed to appear in
the triangulation, which the script verifies before writing.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from penflow.mesh import build_mesh, mesh_quality, triangle_areas  # noqa: E402

OUTER_R = 1.0
INNER_C = np.array([0.5, 0.0])
INNER_R = 0.5


def circle_ring(center, radius, lc):
    n = max(8, int(round(2 * math.pi * radius / lc)))
    ang = 2 * math.pi * np.arange(n) / n
    pts = np.column_stack([center[0] + radius * np.cos(ang),
                           center[1] + radius * np.sin(ang)])
    # angle 0 must give the tangency vertex exactly
    pts[0] = [center[0] + radius, center[1]]
    return pts


def hex_lattice(lc):
    dy = lc * math.sqrt(3.0) / 2.0
    rows = int(math.ceil(2.2 / dy))
    pts = []
    for j in range(-rows, rows + 1):
        y = j * dy
        offset = 0.5 * lc if j % 2 else 0.0
        cols = int(math.ceil(2.2 / lc))
        for i in range(-cols, cols + 1):
            pts.append((i * lc + offset, y))
    return np.array(pts)


def generate(lc):
    outer = circle_ring((0.0, 0.0), OUTER_R, lc)
    inner = circle_ring(INNER_C, INNER_R, lc)
    lattice = hex_lattice(lc)
    margin = 0.7 * lc
    r_out = np.linalg.norm(lattice, axis=1)
    r_in = np.linalg.norm(lattice - INNER_C, axis=1)
    lattice = lattice[(r_out <= OUTER_R - margin)
                      & (r_in >= INNER_R + margin)]

    pts = np.vstack([outer, inner, lattice])
    # the tangency vertex (1, 0) appears on both rings; drop duplicates
    pts, keep = np.unique(pts, axis=0, return_index=True)
    order = np.argsort(keep)
    pts = pts[order]

    def ring_ids(ring):
        ids = []
        for p in ring:
            hit = np.flatnonzero((pts[:, 0] == p[0]) & (pts[:, 1] == p[1]))
            assert len(hit) == 1
            ids.append(int(hit[0]))
        return ids

    outer_ids = ring_ids(outer)
    inner_ids = ring_ids(inner)

    tri = Delaunay(pts)
    simplices = tri.simplices
    # A triangle lies in the hole exactly when all three vertices sit on
    # the inner ring (the convex hull of circle points is inside the
    # disc); centroid-in-circle misclassifies thin cusp triangles.
    in_hole = np.isin(simplices, np.array(inner_ids)).all(axis=1)
    simplices = simplices[~in_hole]
    areas = np.abs(triangle_areas(pts, simplices))
    simplices = simplices[areas > 1e-14]
    tagged = {}
    for ids, tag in ((outer_ids, 1), (inner_ids, 2)):
        for a, b in zip(ids, ids[1:] + ids[:1]):
            tagged[(min(a, b), max(a, b))] = tag
    return pts, simplices, tagged


def verify(pts, simplices, tagged, lc):
    mesh = build_mesh(pts, simplices, tagged, h_char=lc)
    boundary = {tuple(e) for e in mesh.edges[mesh.boundary_edges]}
    missing = [e for e in tagged if e not in boundary]
    if missing:
        raise SystemExit(f"{len(missing)} boundary chords missing from the "
                         f"triangulation, e.g. {missing[0]}")
    untagged = np.count_nonzero(mesh.boundary_tags == 0)
    if untagged:
        raise SystemExit(f"{untagged} boundary edges have no tag")
    q = mesh_quality(mesh)
    print(f"lc={lc:g}: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles, "
          f"{len(mesh.boundary_edges)} boundary edges")
    print(f"  h_max={q.h_max:.4f} min_angle={q.min_angle_deg:.3f} deg "
          f"min_area={q.min_area:.3e}")
    return mesh


def write_msh(path, pts, simplices, tagged):
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat",
             "$PhysicalNames", "2", '1 1 "outer"', '1 2 "inner"',
             "$EndPhysicalNames", "$Nodes", str(len(pts))]
    for i, (x, y) in enumerate(pts, start=1):
        lines.append(f"{i} {float(x)!r} {float(y)!r} 0")
    lines.append("$EndNodes")
    elements = []
    for (a, b), tag in sorted(tagged.items()):
        elements.append(f"1 2 {tag} {tag} {a + 1} {b + 1}")
    for a, b, c in simplices:
        elements.append(f"2 2 0 1 {a + 1} {b + 1} {c + 1}")
    lines += ["$Elements", str(len(elements))]
    lines += [f"{i} {rest}" for i, rest in enumerate(elements, start=1)]
    lines.append("$EndElements")
    Path(path).write_text("\n".join(lines) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lc", type=float, default=0.1,
                    help="target vertex spacing (default 0.1)")
    ap.add_argument("--out", default=None,
                    help="output path (default src/penflow/data/"
                         "offset_cylinder_lc<lc>.msh)")
    args = ap.parse_args()
    pts, simplices, tagged = generate(args.lc)
    verify(pts, simplices, tagged, args.lc)
    out = args.out
    if out is None:
        out = (Path(__file__).resolve().parents[1] / "src" / "penflow"
               / "data" / f"offset_cylinder_lc{args.lc:g}.msh")
        out.parent.mkdir(parents=True, exist_ok=True)
    write_msh(out, pts, simplices, tagged)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
