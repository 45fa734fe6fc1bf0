"""Two-subdomain triangulations with tagged boundaries.

The wave lives on subdomain 1 and the plate on subdomain 2. Every exterior
edge of subdomain ``i`` is tagged ``Gamma{i}`` and every edge shared by the
two subdomains is tagged ``Interface``. Interfaces must be straight.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Raised for malformed mesh files and invariant violations."""


class BoundaryTag(enum.IntEnum):
    GAMMA1 = 1
    GAMMA2 = 2
    INTERFACE = 3

    @classmethod
    def parse(cls, text: str) -> "BoundaryTag":
        try:
            return {"gamma1": cls.GAMMA1, "gamma2": cls.GAMMA2, "interface": cls.INTERFACE}[text.lower()]
        except KeyError:
            raise MeshError(f"unknown edge tag {text!r}") from None

    @property
    def label(self) -> str:
        return self.name.lower()


OMEGA1 = 1
OMEGA2 = 2

CORNER_TOL = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable two-subdomain triangulation.

    Attributes
    ----------
    vertices : (N, 2) float array
    triangles : (M, 3) int array, counter-clockwise
    domains : (M,) int array with values in {1, 2}
    edges : (K, 2) int array of tagged edges
    tags : (K,) int array of :class:`BoundaryTag` values
    smooth_vertices : vertices interior to a discretized smooth curve; they
        are never reported as corners.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    domains: np.ndarray
    edges: np.ndarray
    tags: np.ndarray
    smooth_vertices: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        d = np.asarray(self.domains, dtype=np.int64).reshape(-1)
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        g = np.asarray(self.tags, dtype=np.int64).reshape(-1)
        t = _validate_and_orient(v, t, d, e, g)
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))
        object.__setattr__(self, "domains", _frozen(d))
        object.__setattr__(self, "edges", _frozen(e))
        object.__setattr__(self, "tags", _frozen(g))
        object.__setattr__(self, "smooth_vertices", frozenset(int(i) for i in self.smooth_vertices))
        _check_interface(self)

    # -- basic geometry -------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def h(self) -> float:
        """Maximum edge length."""
        p = self.vertices[self.triangles]
        lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return float(lengths.max())

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self, domain: int | None = None) -> float:
        a = self.areas()
        if domain is not None:
            a = a[self.domains == domain]
        return float(a.sum())

    def edges_with(self, tag: BoundaryTag) -> np.ndarray:
        """Indices into :attr:`edges` carrying ``tag``."""
        return np.flatnonzero(self.tags == int(tag))

    def edge_lengths(self, idx: np.ndarray | None = None) -> np.ndarray:
        e = self.edges if idx is None else self.edges[idx]
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def tag_length(self, tag: BoundaryTag) -> float:
        return float(self.edge_lengths(self.edges_with(tag)).sum())

    def diameter(self) -> float:
        v = self.vertices
        span = v.max(axis=0) - v.min(axis=0)
        return float(np.hypot(*span))

    def edge_normals(self, domain: int | None = None) -> np.ndarray:
        """Unit outward normals of the tagged edges.

        Exterior edges use their owning subdomain. Interface edges use
        ``domain`` (default 1, i.e. ``nu_1``).
        """
        own = self._edge_owner(domain or OMEGA1)
        a = self.vertices[self.edges[:, 0]]
        b = self.vertices[self.edges[:, 1]]
        d = b - a
        n = np.column_stack([d[:, 1], -d[:, 0]]) / np.hypot(d[:, 0], d[:, 1])[:, None]
        third = self.vertices[own]
        flip = np.einsum("ij,ij->i", third - a, n) > 0
        n[flip] *= -1.0
        return n

    def _edge_owner(self, interface_side: int) -> np.ndarray:
        """Opposite vertex of the owning triangle for every tagged edge."""
        lookup = _edge_triangles(self.triangles)
        out = np.empty(len(self.edges), dtype=np.int64)
        for k, (a, b) in enumerate(self.edges):
            tris = lookup[_edge_key(int(a), int(b))]
            if self.tags[k] == BoundaryTag.INTERFACE:
                tris = [t for t in tris if self.domains[t] == interface_side]
            tri = self.triangles[tris[0]]
            out[k] = next(int(v) for v in tri if v != a and v != b)
        return out

    def interface_line(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(midpoint, unit tangent, unit normal nu_1) of the straight interface."""
        idx = self.edges_with(BoundaryTag.INTERFACE)
        verts = np.unique(self.edges[idx])
        pts = self.vertices[verts]
        centre = pts.mean(axis=0)
        _, _, vt = np.linalg.svd(pts - centre)
        tangent = vt[0]
        s = (pts - centre) @ tangent
        mid = centre + 0.5 * (s.max() + s.min()) * tangent
        nu = self.edge_normals()[idx[0]]
        # orient tangent as (-nu2, nu1) so that the pair is right-handed
        tangent = np.array([-nu[1], nu[0]])
        return mid, tangent, nu

    def boundary_loops(self, domain: int) -> list[list[int]]:
        """Counter-clockwise vertex loops bounding subdomain ``domain``."""
        tri = self.triangles[self.domains == domain]
        directed = set()
        for a, b, c in tri:
            directed.update([(a, b), (b, c), (c, a)])
        nxt: dict[int, int] = {}
        for a, b in directed:
            if (b, a) not in directed:
                if a in nxt:
                    raise MeshError(f"subdomain {domain} boundary is not a simple curve at vertex {a}")
                nxt[int(a)] = int(b)
        loops = []
        seen: set[int] = set()
        for start in sorted(nxt):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            v = nxt[start]
            while v != start:
                loop.append(v)
                seen.add(v)
                v = nxt[v]
            loops.append(loop)
        return loops

    def submesh_vertices(self, domain: int) -> np.ndarray:
        return np.unique(self.triangles[self.domains == domain])

    def translated(self, shift) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(shift, dtype=float), self.triangles, self.domains,
                       self.edges, self.tags, self.smooth_vertices)


def _edge_triangles(triangles: np.ndarray) -> dict[tuple[int, int], list[int]]:
    lookup: dict[tuple[int, int], list[int]] = {}
    for k, (a, b, c) in enumerate(triangles.tolist()):
        for e in ((a, b), (b, c), (c, a)):
            lookup.setdefault(_edge_key(*e), []).append(k)
    return lookup


def _validate_and_orient(v, t, d, e, g) -> np.ndarray:
    nv = len(v)
    if not np.all(np.isfinite(v)):
        raise MeshError("non-finite vertex coordinates")
    if len(t) == 0:
        raise MeshError("mesh has no triangles")
    if t.min() < 0 or t.max() >= nv:
        bad = int(np.flatnonzero((t < 0) | (t >= nv))[0] // 3)
        raise MeshError(f"triangle {bad} references a missing vertex")
    if len(e) and (e.min() < 0 or e.max() >= nv):
        bad = int(np.flatnonzero((e < 0) | (e >= nv))[0] // 2)
        raise MeshError(f"edge {bad} references a missing vertex")
    if len(d) != len(t) or not np.all(np.isin(d, (OMEGA1, OMEGA2))):
        raise MeshError("triangle domain labels must be 1 or 2")
    if len(g) != len(e) or not np.all(np.isin(g, [int(x) for x in BoundaryTag])):
        raise MeshError("edge tags must be gamma1, gamma2 or interface")
    for k, (a, b, c) in enumerate(t.tolist()):
        if a == b or b == c or a == c:
            raise MeshError(f"triangle {k} repeats a vertex index")

    t = t.copy()
    p = v[t]
    cross = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    h = lengths.max()
    small = np.abs(0.5 * cross) <= 1e-14 * h * h
    if small.any():
        raise MeshError(f"triangle {int(np.flatnonzero(small)[0])} is degenerate")
    neg = cross < 0
    t[neg] = t[neg][:, [0, 2, 1]]

    lookup = _edge_triangles(t)
    tagged: dict[tuple[int, int], int] = {}
    for k, (a, b) in enumerate(e.tolist()):
        key = _edge_key(a, b)
        if a == b:
            raise MeshError(f"edge {k} repeats a vertex index")
        if key in tagged:
            raise MeshError(f"edge {k} duplicates edge {tagged[key]}")
        tagged[key] = k
        owners = lookup.get(key)
        if owners is None:
            raise MeshError(f"edge {k} ({a}, {b}) is not an edge of any triangle")
        doms = sorted(int(d[o]) for o in owners)
        tag = g[k]
        if tag == BoundaryTag.INTERFACE:
            if doms != [OMEGA1, OMEGA2]:
                raise MeshError(f"interface edge {k} must be shared by one Omega1 and one Omega2 triangle, found domains {doms}")
        else:
            want = OMEGA1 if tag == BoundaryTag.GAMMA1 else OMEGA2
            if doms != [want]:
                raise MeshError(f"{BoundaryTag(tag).label} edge {k} must belong to exactly one Omega{want} triangle, found domains {doms}")
    for key, owners in lookup.items():
        if len(owners) > 2:
            raise MeshError(f"edge {key} is shared by {len(owners)} triangles")
        doms = {int(d[o]) for o in owners}
        if (len(owners) == 1 or len(doms) == 2) and key not in tagged:
            raise MeshError(f"boundary edge {key} is not tagged")
    return t


def _check_interface(mesh: TriMesh) -> None:
    idx = mesh.edges_with(BoundaryTag.INTERFACE)
    if len(idx) == 0:
        raise MeshError("mesh has no interface edges")
    pts = mesh.vertices[np.unique(mesh.edges[idx])]
    centre = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centre)
    resid = np.abs((pts - centre) @ vt[1])
    if resid.max() > 1e-9 * mesh.h:
        bad = int(np.unique(mesh.edges[idx])[int(resid.argmax())])
        raise MeshError(f"interface is not straight: vertex {bad} is {resid.max():.3e} off the line")


# -- file format ---------------------------------------------------------

def _content_lines(text: str):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def parse_mesh(text: str) -> TriMesh:
    lines = list(_content_lines(text))
    pos = 0

    def header(name: str) -> int:
        nonlocal pos
        if pos >= len(lines):
            raise MeshError(f"missing '{name}' section")
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshError(f"expected '{name} <count>', got {lines[pos]!r}")
        pos += 1
        try:
            return int(parts[1])
        except ValueError:
            raise MeshError(f"bad count in {lines[pos - 1]!r}") from None

    def rows(name: str, count: int, width: int) -> list[list[str]]:
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(lines):
                raise MeshError(f"{name} section ended early")
            parts = lines[pos].split()
            pos += 1
            if len(parts) != width:
                raise MeshError(f"{name} row {parts[0] if parts else '?'} has {len(parts)} fields, expected {width}")
            out.append(parts)
        ids = [int(r[0]) for r in out]
        if sorted(ids) != list(range(count)):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise MeshError(f"{name} ids must be 0..{count - 1}" + (f"; duplicated {dup}" if dup else ""))
        out.sort(key=lambda r: int(r[0]))
        return out

    nv = header("vertices")
    vrows = rows("vertices", nv, 3)
    nt = header("triangles")
    trows = rows("triangles", nt, 5)
    ne = header("edges")
    erows = rows("edges", ne, 4)
    smooth: list[int] = []
    if pos < len(lines) and lines[pos].split()[0] == "smooth":
        ns = header("smooth")
        for _ in range(ns):
            smooth.append(int(lines[pos]))
            pos += 1
    if pos != len(lines):
        raise MeshError(f"unexpected trailing content: {lines[pos]!r}")

    try:
        verts = np.array([[float(r[1]), float(r[2])] for r in vrows]).reshape(-1, 2)
        tris = np.array([[int(r[1]), int(r[2]), int(r[3])] for r in trows], dtype=np.int64).reshape(-1, 3)
        doms = np.array([int(r[4]) for r in trows], dtype=np.int64)
        edges = np.array([[int(r[1]), int(r[2])] for r in erows], dtype=np.int64).reshape(-1, 2)
    except ValueError as exc:
        raise MeshError(f"bad numeric field: {exc}") from None
    tags = np.array([int(BoundaryTag.parse(r[3])) for r in erows], dtype=np.int64)
    return TriMesh(verts, tris, doms, edges, tags, frozenset(smooth))


def load_mesh(path) -> TriMesh:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    return parse_mesh(path.read_text(encoding="utf-8"))


def format_mesh(mesh: TriMesh) -> str:
    out = [f"vertices {mesh.n_vertices}"]
    out += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.vertices.tolist())]
    out.append(f"triangles {mesh.n_triangles}")
    out += [f"{i} {a} {b} {c} {d}" for i, ((a, b, c), d) in enumerate(zip(mesh.triangles.tolist(), mesh.domains.tolist()))]
    out.append(f"edges {len(mesh.edges)}")
    out += [f"{i} {a} {b} {BoundaryTag(g).label}" for i, ((a, b), g) in enumerate(zip(mesh.edges.tolist(), mesh.tags.tolist()))]
    if mesh.smooth_vertices:
        out.append(f"smooth {len(mesh.smooth_vertices)}")
        out += [str(i) for i in sorted(mesh.smooth_vertices)]
    return "\n".join(out) + "\n"


def save_mesh(mesh: TriMesh, path) -> None:
    Path(path).write_text(format_mesh(mesh), encoding="utf-8")


# -- generators ------------------------------------------------------------

def tag_edges(vertices: np.ndarray, triangles: np.ndarray, domains: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Derive the tagged edge list from a labelled triangulation."""
    lookup = _edge_triangles(np.asarray(triangles))
    edges, tags = [], []
    for key in sorted(lookup):
        owners = lookup[key]
        doms = {int(domains[o]) for o in owners}
        if len(owners) == 1:
            edges.append(key)
            tags.append(BoundaryTag.GAMMA1 if doms == {OMEGA1} else BoundaryTag.GAMMA2)
        elif len(doms) == 2:
            edges.append(key)
            tags.append(BoundaryTag.INTERFACE)
    return np.array(edges, dtype=np.int64), np.array(tags, dtype=np.int64)


def gen_rect_transmission(n: int) -> TriMesh:
    """Structured mesh of [-1, 1] x [0, 1] with the interface at x = 0."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    nx, ny = 2 * n, n
    xs = np.linspace(-1.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    tris, doms = [], []
    for i in range(nx):
        dom = OMEGA1 if i < n else OMEGA2
        for j in range(ny):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris += [(a, b, c), (a, c, d)]
            doms += [dom, dom]
    tris = np.array(tris)
    doms = np.array(doms)
    edges, tags = tag_edges(verts, tris, doms)
    return TriMesh(verts, tris, doms, edges, tags)


def _arc(centre, radius, phi0, phi1, count):
    phi = np.linspace(phi0, phi1, count + 1)
    return np.column_stack([centre[0] + radius * np.cos(phi), centre[1] + radius * np.sin(phi)])


def lens_arcs(alpha1: float, alpha2: float):
    """Circle data (centre, radius, phi0, phi1) of the wave and plate arcs.

    The chord runs from (0, -1) to (0, 1); the wave arc bulges to x < 0.
    """
    r1 = 1.0 / math.sin(alpha1)
    r2 = 1.0 / math.sin(alpha2)
    wave = (np.array([r1 * math.cos(alpha1), 0.0]), r1, math.pi - alpha1, math.pi + alpha1)
    plate = (np.array([-r2 * math.cos(alpha2), 0.0]), r2, -alpha2, alpha2)
    return wave, plate


def gen_lens(alpha1: float, alpha2: float, n: int, min_angle: float = 30.0) -> TriMesh:
    """Two circular segments sharing the chord {0} x [-1, 1].

    ``alpha1``/``alpha2`` are the arc-chord angles (radians) of the wave and
    plate segments, i.e. the interior corner angles at the chord endpoints.
    ``n`` is the number of chord subdivisions; arcs use the same spacing.
    """
    import triangle

    if not (0.0 < alpha2 <= alpha1 < math.pi):
        raise ValueError(f"need 0 < alpha2 <= alpha1 < pi, got alpha1={alpha1!r}, alpha2={alpha2!r}")
    if int(n) != n or n < 2:
        raise ValueError(f"n must be an integer >= 2, got {n!r}")
    n = int(n)
    h = 2.0 / n
    chord = np.column_stack([np.zeros(n + 1), np.linspace(-1.0, 1.0, n + 1)])
    (c1, r1, a1, b1), (c2, r2, a2, b2) = lens_arcs(alpha1, alpha2)
    m1 = max(3, math.ceil(r1 * (b1 - a1) / h))
    m2 = max(3, math.ceil(r2 * (b2 - a2) / h))
    # wave arc runs from (0, 1) through the far side to (0, -1)
    arc1 = _arc(c1, r1, a1, b1, m1)[1:-1]
    arc2 = _arc(c2, r2, a2, b2, m2)[1:-1]
    pts = np.vstack([chord, arc1, arc2])
    nc, na1 = n + 1, len(arc1)
    seg = [(i, i + 1) for i in range(n)]
    loop1 = [n] + list(range(nc, nc + na1)) + [0]
    seg += list(zip(loop1[:-1], loop1[1:]))
    loop2 = [0] + list(range(nc + na1, len(pts))) + [n]
    seg += list(zip(loop2[:-1], loop2[1:]))

    sag1 = r1 * (1.0 - math.cos(alpha1))
    sag2 = r2 * (1.0 - math.cos(alpha2))
    regions = [[-0.5 * sag1, 0.0, OMEGA1, 0.0], [0.5 * sag2, 0.0, OMEGA2, 0.0]]
    max_area = math.sqrt(3.0) / 4.0 * h * h
    opts = f"pq{min_angle:g}a{max_area:.12g}AYYQ"
    out = triangle.triangulate({"vertices": pts, "segments": np.array(seg), "regions": regions}, opts)
    verts = out["vertices"]
    tris = out["triangles"].astype(np.int64)
    doms = out["triangle_attributes"].ravel().round().astype(np.int64)
    edges, tags = tag_edges(verts, tris, doms)
    smooth = frozenset(range(nc, len(pts)))
    return TriMesh(verts, tris, doms, edges, tags, smooth)


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four through its edge midpoints."""
    verts = [tuple(p) for p in mesh.vertices.tolist()]
    mids: dict[tuple[int, int], int] = {}

    def mid(a, b):
        key = _edge_key(a, b)
        if key not in mids:
            mids[key] = len(verts)
            pa, pb = mesh.vertices[a], mesh.vertices[b]
            verts.append(tuple(0.5 * (pa + pb)))
        return mids[key]

    tris, doms = [], []
    for (a, b, c), d in zip(mesh.triangles.tolist(), mesh.domains.tolist()):
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        tris += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        doms += [d] * 4
    edges, tags = [], []
    for (a, b), g in zip(mesh.edges.tolist(), mesh.tags.tolist()):
        m = mids[_edge_key(a, b)]
        edges += [(a, m), (m, b)]
        tags += [g, g]
    return TriMesh(np.array(verts), np.array(tris), np.array(doms), np.array(edges), np.array(tags),
                   mesh.smooth_vertices)


# -- corners ---------------------------------------------------------------

def interior_angle(prev: np.ndarray, vertex: np.ndarray, nxt: np.ndarray) -> float:
    """Interior angle at ``vertex`` of a counter-clockwise boundary, in (0, 2pi]."""
    a = np.asarray(nxt, float) - vertex
    b = np.asarray(prev, float) - vertex
    ang = math.atan2(a[0] * b[1] - a[1] * b[0], a[0] * b[0] + a[1] * b[1])
    if ang <= 0.0:
        ang += 2.0 * math.pi
    return ang


def corner_angles(mesh: TriMesh, domain: int) -> list[tuple[np.ndarray, float]]:
    """Corners of subdomain ``domain`` with their interior angles (radians).

    A boundary vertex is a corner when the boundary turns by more than
    ``CORNER_TOL`` there, unless it lies on a discretized smooth curve.
    Interface endpoints are always reported.
    """
    iface = mesh.edges[mesh.edges_with(BoundaryTag.INTERFACE)]
    counts = np.bincount(iface.ravel(), minlength=mesh.n_vertices)
    endpoints = set(np.flatnonzero(counts == 1).tolist())
    out = []
    for loop in mesh.boundary_loops(domain):
        k = len(loop)
        for i, v in enumerate(loop):
            p, q = loop[i - 1], loop[(i + 1) % k]
            ang = interior_angle(mesh.vertices[p], mesh.vertices[v], mesh.vertices[q])
            turn = abs(math.pi - ang)
            if v in endpoints or (turn > CORNER_TOL and v not in mesh.smooth_vertices):
                out.append((mesh.vertices[v].copy(), ang))
    return out
