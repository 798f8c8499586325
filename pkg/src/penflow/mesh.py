"""Conforming triangle meshes: structured unit-square grids and GMSH import.

A :class:`Mesh` stores node coordinates, CCW-oriented triangles, a
deterministic global edge table, and boundary edges with integer tags.
Meshes come from two places: :func:`generate_unit_square` for structured
grids with a fixed diagonal direction, and :func:`parse_gmsh` for MSH
ASCII files (versions 2.2 and 4.1, linear elements only).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Local edge k of a triangle connects local vertices TRI_EDGES_LOCAL[k].
TRI_EDGES_LOCAL = ((0, 1), (1, 2), (2, 0))

_GMSH_LINE = 1
_GMSH_TRIANGLE = 2
_GMSH_POINT = 15


class MeshError(ValueError):
    """Invalid mesh data."""


class EmptyMeshError(MeshError):
    """The source contained no triangles."""


class MeshParseError(MeshError):
    """Malformed mesh file; carries the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedVersionError(MeshParseError):
    """MSH version other than ASCII 2.2 / 4.1."""


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh.

    Attributes
    ----------
    nodes : (V, 2) float array of vertex coordinates.
    triangles : (T, 3) int array, CCW orientation, vertex indices.
    edges : (E, 2) int array of unique edges as sorted pairs, in
        lexicographic order.
    tri_edges : (T, 3) int array mapping local edge k (TRI_EDGES_LOCAL)
        to a row of ``edges``.
    boundary_edges : sorted int array of edge indices adjacent to exactly
        one triangle.
    boundary_tags : tag per boundary edge (same order as
        ``boundary_edges``); 0 where the source provided none.
    h_char : characteristic mesh size when known (1/m for structured
        grids); None for imported meshes.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    h_char: float | None = None

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def boundary_nodes(self) -> np.ndarray:
        """Sorted vertex indices lying on the boundary."""
        return np.unique(self.edges[self.boundary_edges])

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[self.edges[:, 0]] + self.nodes[self.edges[:, 1]])


@dataclass(frozen=True)
class MeshQuality:
    h_max: float
    h_char: float
    min_angle_deg: float
    min_area: float


def triangle_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Signed areas; positive for CCW triangles."""
    a = nodes[triangles[:, 0]]
    b = nodes[triangles[:, 1]]
    c = nodes[triangles[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def build_mesh(nodes, triangles, tagged_edges=None, h_char=None) -> Mesh:
    """Assemble a validated Mesh from raw arrays.

    CW triangles are flipped to CCW; degenerate (zero-area) triangles are
    rejected. ``tagged_edges`` maps sorted vertex pairs to integer tags;
    tags on interior edges are ignored, untagged boundary edges get 0.
    """
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise MeshError("nodes must be an (V, 2) array")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("triangles must be a (T, 3) array")
    if triangles.shape[0] == 0:
        raise EmptyMeshError("mesh contains no triangles")
    if triangles.min(initial=0) < 0 or triangles.max(initial=-1) >= len(nodes):
        raise MeshError("triangle vertex index out of range")

    areas = triangle_areas(nodes, triangles)
    flip = areas < 0
    if flip.any():
        triangles = triangles.copy()
        triangles[flip] = triangles[flip][:, [0, 2, 1]]
        areas = np.abs(areas)
    tiny = np.finfo(np.float64).tiny
    if (areas <= tiny).any():
        bad = int(np.argmax(areas <= tiny))
        raise MeshError(f"triangle {bad} is degenerate (zero area)")

    # Deterministic global edge table: sorted pairs, lexicographic order.
    raw = np.concatenate([triangles[:, list(pair)] for pair in TRI_EDGES_LOCAL])
    raw.sort(axis=1)
    edges, inverse = np.unique(raw, axis=0, return_inverse=True)
    tri_edges = inverse.reshape(3, -1).T.copy()

    counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
    boundary_edges = np.flatnonzero(counts == 1)

    tags = np.zeros(len(boundary_edges), dtype=np.int64)
    if tagged_edges:
        lookup = {(int(a), int(b)): i for i, (a, b) in
                  enumerate(edges[boundary_edges])}
        for pair, tag in tagged_edges.items():
            key = (min(pair), max(pair))
            pos = lookup.get(key)
            if pos is not None:
                tags[pos] = tag

    return Mesh(
        nodes=_freeze(nodes),
        triangles=_freeze(triangles),
        edges=_freeze(edges),
        tri_edges=_freeze(tri_edges),
        boundary_edges=_freeze(boundary_edges),
        boundary_tags=_freeze(tags),
        h_char=h_char,
    )


def generate_unit_square(m: int) -> Mesh:
    """Structured (m+1)^2 grid on [0,1]^2, 2*m^2 triangles.

    Every cell is split along its lower-left to upper-right diagonal.
    All four sides carry boundary tag 1; h_char = 1/m.
    """
    if m < 1:
        raise MeshError(f"subdivision count must be >= 1, got {m}")
    idx = np.arange(m + 1) / m
    X, Y = np.meshgrid(idx, idx, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i + j * (m + 1)

    tris = []
    for j in range(m):
        for i in range(m):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    tagged = {}
    for i in range(m):
        tagged[(nid(i, 0), nid(i + 1, 0))] = 1
        tagged[(nid(i, m), nid(i + 1, m))] = 1
        tagged[(nid(0, i), nid(0, i + 1))] = 1
        tagged[(nid(m, i), nid(m, i + 1))] = 1
    return build_mesh(nodes, np.array(tris), tagged, h_char=1.0 / m)


def mesh_quality(mesh: Mesh) -> MeshQuality:
    """Edge-length and angle quality summary."""
    p = mesh.nodes[mesh.triangles]
    e0 = p[:, 1] - p[:, 0]
    e1 = p[:, 2] - p[:, 1]
    e2 = p[:, 0] - p[:, 2]
    l0 = np.linalg.norm(e0, axis=1)
    l1 = np.linalg.norm(e1, axis=1)
    l2 = np.linalg.norm(e2, axis=1)
    h_max = float(max(l0.max(), l1.max(), l2.max()))

    def angle(u, v, lu, lv):
        cosang = np.clip(-(u * v).sum(axis=1) / (lu * lv), -1.0, 1.0)
        return np.degrees(np.arccos(cosang))

    ang = np.minimum(np.minimum(angle(e2, e0, l2, l0), angle(e0, e1, l0, l1)),
                     angle(e1, e2, l1, l2))
    areas = triangle_areas(mesh.nodes, mesh.triangles)
    h_char = mesh.h_char if mesh.h_char is not None else h_max
    return MeshQuality(h_max=h_max, h_char=float(h_char),
                       min_angle_deg=float(ang.min()),
                       min_area=float(areas.min()))


def boundary_scalar_nodes(mesh: Mesh) -> np.ndarray:
    """Scalar Taylor-Hood node ids on the boundary.

    Scalar nodes are numbered vertices first (0..V-1) then edge midpoints
    (V..V+E-1); boundary nodes are the endpoints and midpoints of
    boundary edges.
    """
    verts = mesh.boundary_nodes()
    mids = mesh.n_nodes + mesh.boundary_edges
    return np.concatenate([verts, mids])


def boundary_nodes_by_tag(mesh: Mesh) -> dict[int, np.ndarray]:
    """Partition boundary scalar nodes by edge tag.

    A vertex shared by edges of different tags appears under each of
    them (happens at corners of the square, never on disjoint closed
    curves).
    """
    out: dict[int, set[int]] = {}
    for edge_idx, tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        a, b = mesh.edges[edge_idx]
        bucket = out.setdefault(int(tag), set())
        bucket.add(int(a))
        bucket.add(int(b))
        bucket.add(mesh.n_nodes + int(edge_idx))
    return {tag: np.array(sorted(ids), dtype=np.int64)
            for tag, ids in sorted(out.items())}


def tag_boundary_by_circles(mesh: Mesh, circles, tol: float = 1e-6) -> Mesh:
    """Re-tag boundary edges by matching endpoints to circles.

    ``circles`` is a sequence of (cx, cy, radius, tag). An edge gets a
    circle's tag when both endpoints lie on it to within ``tol``. Used
    for imported meshes without physical groups.
    """
    tags = mesh.boundary_tags.copy()
    pts = mesh.nodes
    for i, edge_idx in enumerate(mesh.boundary_edges):
        a, b = mesh.edges[edge_idx]
        for cx, cy, r, tag in circles:
            da = abs(np.hypot(pts[a, 0] - cx, pts[a, 1] - cy) - r)
            db = abs(np.hypot(pts[b, 0] - cx, pts[b, 1] - cy) - r)
            if da < tol and db < tol:
                tags[i] = tag
                break
    return Mesh(mesh.nodes, mesh.triangles, mesh.edges, mesh.tri_edges,
                mesh.boundary_edges, _freeze(tags), mesh.h_char)


# ---------------------------------------------------------------------------
# GMSH MSH ASCII import (2.2 and 4.1)
# ---------------------------------------------------------------------------


class _Lines:
    """Line cursor with 1-based positions for error reporting."""

    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self) -> tuple[str, int]:
        while self.pos < len(self.lines):
            self.pos += 1
            stripped = self.lines[self.pos - 1].strip()
            if stripped:
                return stripped, self.pos
        raise MeshParseError("unexpected end of file", len(self.lines))

    def eof(self) -> bool:
        return all(not l.strip() for l in self.lines[self.pos:])


def parse_gmsh(text: str, h_char: float | None = None) -> Mesh:
    """Parse a GMSH MSH ASCII file (version 2.2 or 4.1).

    Only 2-node lines (boundary tags from physical groups) and 3-node
    triangles are accepted; higher-order or other element types raise
    :class:`MeshParseError`. Binary files and other versions raise
    :class:`UnsupportedVersionError`.
    """
    cur = _Lines(text)
    line, lno = cur.next()
    if line != "$MeshFormat":
        raise MeshParseError("expected $MeshFormat", lno)
    header, lno = cur.next()
    parts = header.split()
    if len(parts) != 3:
        raise MeshParseError("malformed $MeshFormat header", lno)
    version, file_type = parts[0], parts[1]
    if file_type != "0":
        raise UnsupportedVersionError("binary MSH files are not supported", lno)
    end, lno = cur.next()
    if end != "$EndMeshFormat":
        raise MeshParseError("expected $EndMeshFormat", lno)

    if version == "2.2":
        return _parse_msh2(cur, h_char)
    if version == "4.1":
        return _parse_msh4(cur, h_char)
    raise UnsupportedVersionError(
        f"MSH version {version} not supported (only 2.2 and 4.1)", lno)


def _skip_section(cur: _Lines, name: str) -> None:
    endmark = "$End" + name[1:]
    while True:
        line, _ = cur.next()
        if line == endmark:
            return


def _int_or_err(tok: str, what: str, lno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise MeshParseError(f"expected integer {what}, got {tok!r}", lno) from None


def _check_element_type(etype: int, lno: int) -> None:
    if etype not in (_GMSH_LINE, _GMSH_TRIANGLE, _GMSH_POINT):
        raise MeshParseError(
            f"unsupported element type {etype}; only 2-node lines and "
            "3-node triangles are handled", lno)


def _parse_msh2(cur: _Lines, h_char: float | None) -> Mesh:
    coords: dict[int, tuple[float, float]] = {}
    triangles: list[tuple[int, int, int]] = []
    tagged: dict[tuple[int, int], int] = {}
    seen_nodes = seen_elements = False

    while not cur.eof():
        section, lno = cur.next()
        if not section.startswith("$"):
            raise MeshParseError(f"expected section header, got {section!r}", lno)
        if section == "$Nodes":
            seen_nodes = True
            count_line, lno = cur.next()
            n = _int_or_err(count_line, "node count", lno)
            for _ in range(n):
                row, lno = cur.next()
                toks = row.split()
                if len(toks) < 4:
                    raise MeshParseError("node line needs 'id x y z'", lno)
                coords[_int_or_err(toks[0], "node id", lno)] = (
                    float(toks[1]), float(toks[2]))
            end, lno = cur.next()
            if end != "$EndNodes":
                raise MeshParseError("expected $EndNodes", lno)
        elif section == "$Elements":
            seen_elements = True
            count_line, lno = cur.next()
            n = _int_or_err(count_line, "element count", lno)
            for _ in range(n):
                row, lno = cur.next()
                toks = [_int_or_err(t, "element field", lno) for t in row.split()]
                if len(toks) < 3:
                    raise MeshParseError("malformed element line", lno)
                etype, ntags = toks[1], toks[2]
                _check_element_type(etype, lno)
                body = toks[3 + ntags:]
                phys = toks[3] if ntags >= 1 else 0
                if etype == _GMSH_LINE:
                    if len(body) != 2:
                        raise MeshParseError("2-node line needs 2 vertices", lno)
                    tagged[(min(body), max(body))] = phys
                elif etype == _GMSH_TRIANGLE:
                    if len(body) != 3:
                        raise MeshParseError("triangle needs 3 vertices", lno)
                    triangles.append(tuple(body))
            end, lno = cur.next()
            if end != "$EndElements":
                raise MeshParseError("expected $EndElements", lno)
        else:
            _skip_section(cur, section)

    if not seen_nodes or not seen_elements:
        raise MeshParseError("missing $Nodes or $Elements section",
                             len(cur.lines))
    return _finish_gmsh(coords, triangles, tagged, h_char)


def _parse_msh4(cur: _Lines, h_char: float | None) -> Mesh:
    coords: dict[int, tuple[float, float]] = {}
    triangles: list[tuple[int, int, int]] = []
    tagged: dict[tuple[int, int], int] = {}
    # curve entity tag -> first physical tag, from $Entities when present
    curve_phys: dict[int, int] = {}
    seen_nodes = seen_elements = False

    while not cur.eof():
        section, lno = cur.next()
        if not section.startswith("$"):
            raise MeshParseError(f"expected section header, got {section!r}", lno)
        if section == "$Entities":
            head, lno = cur.next()
            try:
                npts, ncurves, nsurf, nvol = (int(t) for t in head.split())
            except ValueError:
                raise MeshParseError("malformed $Entities header", lno) from None
            for _ in range(npts):
                cur.next()
            for _ in range(ncurves):
                row, lno = cur.next()
                toks = row.split()
                # tag, 6 bbox floats, numPhysicalTags, tags..., bounding pts
                if len(toks) < 8:
                    raise MeshParseError("malformed curve entity", lno)
                tag = _int_or_err(toks[0], "curve tag", lno)
                nphys = _int_or_err(toks[7], "physical tag count", lno)
                if nphys > 0:
                    curve_phys[tag] = _int_or_err(toks[8], "physical tag", lno)
            for _ in range(nsurf + nvol):
                cur.next()
            end, lno = cur.next()
            if end != "$EndEntities":
                raise MeshParseError("expected $EndEntities", lno)
        elif section == "$Nodes":
            seen_nodes = True
            head, lno = cur.next()
            try:
                nblocks, _ntotal, _mn, _mx = (int(t) for t in head.split())
            except ValueError:
                raise MeshParseError("malformed $Nodes header", lno) from None
            for _ in range(nblocks):
                bhead, lno = cur.next()
                try:
                    _dim, _etag, parametric, nin = (int(t) for t in bhead.split())
                except ValueError:
                    raise MeshParseError("malformed node block header", lno) from None
                if parametric:
                    raise MeshParseError("parametric nodes not supported", lno)
                ids = []
                for _ in range(nin):
                    row, lno = cur.next()
                    ids.append(_int_or_err(row, "node tag", lno))
                for nid in ids:
                    row, lno = cur.next()
                    toks = row.split()
                    if len(toks) < 3:
                        raise MeshParseError("node coordinates need x y z", lno)
                    coords[nid] = (float(toks[0]), float(toks[1]))
            end, lno = cur.next()
            if end != "$EndNodes":
                raise MeshParseError("expected $EndNodes", lno)
        elif section == "$Elements":
            seen_elements = True
            head, lno = cur.next()
            try:
                nblocks, _ntotal, _mn, _mx = (int(t) for t in head.split())
            except ValueError:
                raise MeshParseError("malformed $Elements header", lno) from None
            for _ in range(nblocks):
                bhead, lno = cur.next()
                try:
                    _dim, etag, etype, nin = (int(t) for t in bhead.split())
                except ValueError:
                    raise MeshParseError("malformed element block header",
                                         lno) from None
                _check_element_type(etype, lno)
                for _ in range(nin):
                    row, lno = cur.next()
                    toks = [_int_or_err(t, "element field", lno)
                            for t in row.split()]
                    body = toks[1:]
                    if etype == _GMSH_LINE:
                        if len(body) != 2:
                            raise MeshParseError("2-node line needs 2 vertices",
                                                 lno)
                        tagged[(min(body), max(body))] = curve_phys.get(etag, etag)
                    elif etype == _GMSH_TRIANGLE:
                        if len(body) != 3:
                            raise MeshParseError("triangle needs 3 vertices", lno)
                        triangles.append(tuple(body))
            end, lno = cur.next()
            if end != "$EndElements":
                raise MeshParseError("expected $EndElements", lno)
        else:
            _skip_section(cur, section)

    if not seen_nodes or not seen_elements:
        raise MeshParseError("missing $Nodes or $Elements section",
                             len(cur.lines))
    return _finish_gmsh(coords, triangles, tagged, h_char)


def _finish_gmsh(coords, triangles, tagged, h_char) -> Mesh:
    if not triangles:
        raise EmptyMeshError("MSH file contains no triangles")
    order = sorted(coords)
    remap = {nid: i for i, nid in enumerate(order)}
    nodes = np.array([coords[nid] for nid in order], dtype=np.float64)
    try:
        tris = np.array([[remap[v] for v in t] for t in triangles],
                        dtype=np.int64)
        tagged_edges = {(remap[a], remap[b]): tag
                        for (a, b), tag in tagged.items()}
    except KeyError as exc:
        raise MeshError(f"element references unknown node {exc}") from None
    return build_mesh(nodes, tris, tagged_edges, h_char=h_char)


def load_gmsh(path, h_char: float | None = None) -> Mesh:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_gmsh(fh.read(), h_char=h_char)


# ---------------------------------------------------------------------------
# Plain-text dump format for small test fixtures
# ---------------------------------------------------------------------------


def mesh_to_text(mesh: Mesh) -> str:
    """Serialize to the plain-text fixture format (lossless for topology,
    coordinates and boundary tags)."""
    out = ["penflow-mesh 1", f"nodes {mesh.n_nodes}"]
    out += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.nodes]
    out.append(f"triangles {mesh.n_triangles}")
    out += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"boundary {len(mesh.boundary_edges)}")
    for edge_idx, tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        a, b = mesh.edges[edge_idx]
        out.append(f"{a} {b} {tag}")
    return "\n".join(out) + "\n"


def mesh_from_text(text: str) -> Mesh:
    lines = [l.strip() for l in text.splitlines() if l.strip()]
    if not lines or not lines[0].startswith("penflow-mesh"):
        raise MeshParseError("missing penflow-mesh header", 1)
    pos = 1

    def expect_count(keyword):
        nonlocal pos
        toks = lines[pos].split()
        if len(toks) != 2 or toks[0] != keyword:
            raise MeshParseError(f"expected '{keyword} <count>'", pos + 1)
        pos += 1
        return int(toks[1])

    n = expect_count("nodes")
    nodes = np.array([[float(t) for t in lines[pos + i].split()]
                      for i in range(n)])
    pos += n
    n = expect_count("triangles")
    tris = np.array([[int(t) for t in lines[pos + i].split()]
                     for i in range(n)], dtype=np.int64)
    pos += n
    n = expect_count("boundary")
    tagged = {}
    for i in range(n):
        a, b, tag = (int(t) for t in lines[pos + i].split())
        tagged[(a, b)] = tag
    return build_mesh(nodes, tris, tagged)
