"""Finite element forms for the coupled wave/plate system.

The wave field is continuous piecewise linear on the wave subdomain; the
plate field uses Morley triangles (vertex values plus one normal derivative
per edge midpoint). Both live in a single displacement space ``X``: wave
vertices first (interface vertices included, so ``u = w`` there holds by
sharing the index), then the remaining plate vertices, then plate edges.
Every matrix returned here acts on ``X`` or on one of the control spaces
(Gamma1 vertices, Gamma2 edges, Gamma2 vertices).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .linalg import csr_from_triplets
from .mesh import OMEGA1, OMEGA2, BoundaryTag, TriMesh
from .quadrature import map_segment, map_triangle

BLOCKS = ("u", "v", "eta", "w", "z", "xi", "zeta")


class AssemblyError(ValueError):
    pass


# -- degree-of-freedom layout ------------------------------------------------

@dataclass(frozen=True, eq=False)
class DofMap:
    """Index bookkeeping for the displacement space and the control spaces.

    The state vector is laid out as ``[q | p | eta | xi | zeta]`` where ``q``
    and ``p`` are displacement and velocity in ``X``. The seven physical
    blocks are index views: ``u = q[u_index]``, ``w = q[w_index]`` and the
    same for ``v, z`` on ``p``.
    """

    mesh: TriMesh
    n_x: int
    vertex_dof: np.ndarray        # X index per mesh vertex, -1 if unused
    wave_vertices: np.ndarray
    plate_vertices: np.ndarray
    interface_vertices: np.ndarray
    plate_edges: np.ndarray       # (ne, 2) vertex pairs, lower id first
    plate_edge_normals: np.ndarray
    plate_edge_boundary: np.ndarray
    edge_dof: np.ndarray          # X index per plate edge
    wave_tris: np.ndarray         # triangle ids in the wave subdomain
    plate_tris: np.ndarray
    plate_tri_edges: np.ndarray   # (nt2, 3), local edge j joins vertices j and j+1
    gamma1_vertices: np.ndarray
    gamma2_vertices: np.ndarray
    gamma1_edges: np.ndarray      # tagged-edge ids
    gamma2_edges: np.ndarray
    gamma2_plate_edges: np.ndarray

    @property
    def n_eta(self) -> int:
        return len(self.gamma1_vertices)

    @property
    def n_xi(self) -> int:
        return len(self.gamma2_edges)

    @property
    def n_zeta(self) -> int:
        return len(self.gamma2_vertices)

    @property
    def n_state(self) -> int:
        return 2 * self.n_x + self.n_eta + self.n_xi + self.n_zeta

    @cached_property
    def slices(self) -> dict[str, slice]:
        sizes = [("q", self.n_x), ("p", self.n_x), ("eta", self.n_eta), ("xi", self.n_xi), ("zeta", self.n_zeta)]
        out, start = {}, 0
        for name, size in sizes:
            out[name] = slice(start, start + size)
            start += size
        return out

    @cached_property
    def u_index(self) -> np.ndarray:
        return self.vertex_dof[self.wave_vertices]

    @cached_property
    def w_index(self) -> np.ndarray:
        return np.concatenate([self.vertex_dof[self.plate_vertices], self.edge_dof])

    def state_index(self, block: str) -> np.ndarray:
        """Positions of one of the seven blocks inside the state vector."""
        s = self.slices
        if block in ("u", "v", "w", "z"):
            base = s["q"] if block in ("u", "w") else s["p"]
            local = self.u_index if block in ("u", "v") else self.w_index
            return base.start + local
        if block not in s:
            raise KeyError(block)
        return np.arange(s[block].start, s[block].stop)

    def block(self, U: np.ndarray, name: str) -> np.ndarray:
        return U[self.state_index(name)]

    def blocks(self, U: np.ndarray) -> dict[str, np.ndarray]:
        if U.shape[0] != self.n_state:
            raise ValueError(f"state has length {U.shape[0]}, expected {self.n_state}")
        return {name: self.block(U, name) for name in BLOCKS}

    def zero_state(self, dtype=float) -> np.ndarray:
        return np.zeros(self.n_state, dtype=dtype)


def build_dofmap(mesh: TriMesh) -> DofMap:
    nv = mesh.n_vertices
    wave_tris = np.flatnonzero(mesh.domains == OMEGA1)
    plate_tris = np.flatnonzero(mesh.domains == OMEGA2)
    wave_vertices = np.unique(mesh.triangles[wave_tris])
    plate_vertices_all = np.unique(mesh.triangles[plate_tris])
    interface_vertices = np.intersect1d(wave_vertices, plate_vertices_all)
    plate_only = np.setdiff1d(plate_vertices_all, wave_vertices)

    vertex_dof = np.full(nv, -1, dtype=np.int64)
    vertex_dof[wave_vertices] = np.arange(len(wave_vertices))
    vertex_dof[plate_only] = len(wave_vertices) + np.arange(len(plate_only))
    n_vert = len(wave_vertices) + len(plate_only)

    tris = mesh.triangles[plate_tris]
    local = np.stack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=1)  # (nt, 3, 2)
    keyed = np.sort(local.reshape(-1, 2), axis=1)
    plate_edges, inverse, counts = np.unique(keyed, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    plate_tri_edges = inverse.reshape(-1, 3)
    boundary = counts == 1

    a = mesh.vertices[plate_edges[:, 0]]
    b = mesh.vertices[plate_edges[:, 1]]
    d = b - a
    length = np.hypot(d[:, 0], d[:, 1])
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    # boundary edges of the plate: orient outward using the opposite vertex
    opposite = np.empty(len(plate_edges), dtype=np.int64)
    flat_tri = np.repeat(np.arange(len(tris)), 3)
    third = tris[flat_tri, (np.tile([2, 0, 1], len(tris)))]
    opposite[inverse] = third
    inward = np.einsum("ij,ij->i", mesh.vertices[opposite] - a, normals) > 0
    flip = boundary & inward
    normals[flip] *= -1.0

    edge_dof = n_vert + np.arange(len(plate_edges))
    n_x = n_vert + len(plate_edges)

    g1 = mesh.edges_with(BoundaryTag.GAMMA1)
    g2 = mesh.edges_with(BoundaryTag.GAMMA2)
    edge_lookup = {(int(p), int(q)): k for k, (p, q) in enumerate(plate_edges)}
    g2_plate = np.array([edge_lookup[tuple(sorted(map(int, mesh.edges[k])))] for k in g2], dtype=np.int64)

    return DofMap(
        mesh=mesh, n_x=n_x, vertex_dof=vertex_dof,
        wave_vertices=wave_vertices, plate_vertices=plate_vertices_all, interface_vertices=interface_vertices,
        plate_edges=plate_edges, plate_edge_normals=normals, plate_edge_boundary=boundary,
        edge_dof=edge_dof, wave_tris=wave_tris, plate_tris=plate_tris, plate_tri_edges=plate_tri_edges,
        gamma1_vertices=np.unique(mesh.edges[g1]) if len(g1) else np.zeros(0, dtype=np.int64),
        gamma2_vertices=np.unique(mesh.edges[g2]) if len(g2) else np.zeros(0, dtype=np.int64),
        gamma1_edges=g1, gamma2_edges=g2, gamma2_plate_edges=g2_plate,
    )


# -- P1 elements ---------------------------------------------------------------

def p1_gradients(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric gradients (m, 3, 2) and areas (m,) of triangles (m, 3, 2)."""
    e1 = coords[:, 1] - coords[:, 0]
    e2 = coords[:, 2] - coords[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(np.abs(det) <= 0.0):
        raise AssemblyError("degenerate triangle in assembly")
    # rows of inv([e1 e2]) are the gradients of the 2nd and 3rd barycentric coordinates
    g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
    grads = np.stack([-g1 - g2, g1, g2], axis=1)
    return grads, 0.5 * np.abs(det)


def p1_element_stiffness(coords) -> np.ndarray:
    """Stiffness matrix of one linear triangle (or a batch, shape (m, 3, 2))."""
    coords = np.asarray(coords, dtype=float)
    single = coords.ndim == 2
    grads, area = p1_gradients(coords[None] if single else coords)
    K = area[:, None, None] * np.einsum("mik,mjk->mij", grads, grads)
    return K[0] if single else K


P1_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
P1_EDGE_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


def _scatter(n: int, dofs: np.ndarray, local: np.ndarray, shape=None) -> sp.csr_matrix:
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    return csr_from_triplets(n, rows, cols, local.ravel(), shape=shape)


# -- Morley elements -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MorleyBasis:
    """Per-element coefficients of the Morley shape functions.

    Shape function ``k`` of element ``t`` is ``sum_m coef[t, m, k] * P_m``
    with ``P = (1, s, r, s^2, s r, r^2)`` in scaled local coordinates
    ``(s, r) = (x - centre) / scale``. Local DOFs are the three vertex
    values followed by the normal derivatives (global edge normals) at the
    midpoints of edges (v0, v1), (v1, v2), (v2, v0).
    """

    centre: np.ndarray
    scale: np.ndarray
    coef: np.ndarray
    dofs: np.ndarray
    area: np.ndarray

    def hessians(self) -> np.ndarray:
        """Constant (h11, h12, h22) of every shape function, shape (nt, 6, 3)."""
        s2 = self.scale[:, None] ** 2
        return np.stack([2.0 * self.coef[:, 3] / s2, self.coef[:, 4] / s2, 2.0 * self.coef[:, 5] / s2], axis=-1)

    def values(self, pts: np.ndarray) -> np.ndarray:
        """Shape function values at points ``pts`` (nt, q, 2) -> (nt, q, 6)."""
        loc = (pts - self.centre[:, None, :]) / self.scale[:, None, None]
        P = _monomials(loc)
        return np.einsum("tqm,tmk->tqk", P, self.coef)

    def gradients(self, pts: np.ndarray) -> np.ndarray:
        """Shape function gradients at ``pts`` -> (nt, q, 6, 2)."""
        loc = (pts - self.centre[:, None, :]) / self.scale[:, None, None]
        ds, dr = _monomial_derivatives(loc)
        gs = np.einsum("tqm,tmk->tqk", ds, self.coef)
        gr = np.einsum("tqm,tmk->tqk", dr, self.coef)
        return np.stack([gs, gr], axis=-1) / self.scale[:, None, None, None]


def _monomials(loc: np.ndarray) -> np.ndarray:
    s, r = loc[..., 0], loc[..., 1]
    return np.stack([np.ones_like(s), s, r, s * s, s * r, r * r], axis=-1)


def _monomial_derivatives(loc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s, r = loc[..., 0], loc[..., 1]
    zero, one = np.zeros_like(s), np.ones_like(s)
    ds = np.stack([zero, one, zero, 2 * s, r, zero], axis=-1)
    dr = np.stack([zero, zero, one, zero, s, 2 * r], axis=-1)
    return ds, dr


def morley_basis(dm: DofMap) -> MorleyBasis:
    mesh = dm.mesh
    tris = mesh.triangles[dm.plate_tris]
    xy = mesh.vertices[tris]                                  # (nt, 3, 2)
    _, area = p1_gradients(xy)
    centre = xy.mean(axis=1)
    edge_vec = np.roll(xy, -1, axis=1) - xy
    scale = np.hypot(edge_vec[..., 0], edge_vec[..., 1]).max(axis=1)
    loc_v = (xy - centre[:, None]) / scale[:, None, None]
    mids = 0.5 * (xy + np.roll(xy, -1, axis=1))
    loc_m = (mids - centre[:, None]) / scale[:, None, None]
    normals = dm.plate_edge_normals[dm.plate_tri_edges]       # (nt, 3, 2)
    ds, dr = _monomial_derivatives(loc_m)
    D = np.concatenate([
        _monomials(loc_v),
        (normals[..., 0:1] * ds + normals[..., 1:2] * dr) / scale[:, None, None],
    ], axis=1)                                                # (nt, 6 dofs, 6 monomials)
    coef = np.linalg.inv(D)                                   # coef[t, m, k]
    dofs = np.concatenate([dm.vertex_dof[tris], dm.edge_dof[dm.plate_tri_edges]], axis=1)
    return MorleyBasis(centre=centre, scale=scale, coef=coef, dofs=dofs, area=area)


def bending_density(H: np.ndarray, G: np.ndarray, mu: float) -> np.ndarray:
    """Pointwise bending form for Hessians given as (..., 3) = (h11, h12, h22)."""
    return (H[..., 0] * G[..., 0] + H[..., 2] * G[..., 2]
            + mu * (H[..., 0] * G[..., 2] + H[..., 2] * G[..., 0])
            + 2.0 * (1.0 - mu) * H[..., 1] * G[..., 1])


def check_mu(mu: float) -> float:
    mu = float(mu)
    if not 0.0 < mu < 0.5:
        raise ValueError(f"Poisson coefficient must lie in (0, 1/2), got {mu}")
    return mu


# -- assembly ------------------------------------------------------------------

def assemble_wave_forms(mesh: TriMesh, dofmap: DofMap | None = None) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Wave stiffness and mass on the displacement space ``X``."""
    dm = dofmap or build_dofmap(mesh)
    tris = mesh.triangles[dm.wave_tris]
    xy = mesh.vertices[tris]
    grads, area = p1_gradients(xy)
    Ke = area[:, None, None] * np.einsum("mik,mjk->mij", grads, grads)
    Me = area[:, None, None] * P1_MASS[None]
    dofs = dm.vertex_dof[tris]
    return _scatter(dm.n_x, dofs, Ke), _scatter(dm.n_x, dofs, Me)


def assemble_plate_forms(mesh: TriMesh, mu: float, dofmap: DofMap | None = None,
                         basis: MorleyBasis | None = None) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Morley bending form and mass on ``X`` (bending summed element by element)."""
    mu = check_mu(mu)
    dm = dofmap or build_dofmap(mesh)
    mb = basis or morley_basis(dm)
    H = mb.hessians()
    Ke = mb.area[:, None, None] * bending_density(H[:, :, None, :], H[:, None, :, :], mu)
    pts, wts = map_triangle(mesh.vertices[mesh.triangles[dm.plate_tris]], 4)
    V = mb.values(pts)
    Me = np.einsum("tq,tqi,tqj->tij", wts, V, V)
    return _scatter(dm.n_x, mb.dofs, Ke), _scatter(dm.n_x, mb.dofs, Me)


def _boundary_p1_mass(mesh: TriMesh, edge_ids: np.ndarray, vertices: np.ndarray) -> sp.csr_matrix:
    n = len(vertices)
    if len(edge_ids) == 0:
        return sp.csr_matrix((n, n))
    local = np.searchsorted(vertices, mesh.edges[edge_ids])
    L = mesh.edge_lengths(edge_ids)
    return _scatter(n, local, L[:, None, None] * P1_EDGE_MASS[None])


def assemble_boundary_masses(mesh: TriMesh, dofmap: DofMap | None = None):
    """(G1, G2v, G2n): P1 masses on Gamma1 and Gamma2 vertices, edge lengths on Gamma2."""
    dm = dofmap or build_dofmap(mesh)
    G1 = _boundary_p1_mass(mesh, dm.gamma1_edges, dm.gamma1_vertices)
    G2v = _boundary_p1_mass(mesh, dm.gamma2_edges, dm.gamma2_vertices)
    G2n = sp.diags(mesh.edge_lengths(dm.gamma2_edges)).tocsr()
    return G1, G2v, G2n


def assemble_traces(mesh: TriMesh, dofmap: DofMap | None = None):
    """(T1, T2v, T2n) mapping ``X`` to the control spaces.

    ``T2n`` returns the outward normal derivative at Gamma2 edge midpoints.
    """
    dm = dofmap or build_dofmap(mesh)
    n1, nv2, ne2 = dm.n_eta, dm.n_zeta, dm.n_xi
    T1 = csr_from_triplets(0, np.arange(n1), dm.vertex_dof[dm.gamma1_vertices], np.ones(n1), shape=(n1, dm.n_x))
    T2v = csr_from_triplets(0, np.arange(nv2), dm.vertex_dof[dm.gamma2_vertices], np.ones(nv2), shape=(nv2, dm.n_x))
    outward = mesh.edge_normals(OMEGA2)[dm.gamma2_edges]
    sign = np.sign(np.einsum("ij,ij->i", dm.plate_edge_normals[dm.gamma2_plate_edges], outward))
    T2n = csr_from_triplets(0, np.arange(ne2), dm.edge_dof[dm.gamma2_plate_edges], sign, shape=(ne2, dm.n_x))
    return T1, T2v, T2n


def assemble_means(mesh: TriMesh, dofmap: DofMap | None = None, basis: MorleyBasis | None = None) -> np.ndarray:
    """Rows of the functionals int u, int w, int w_x1, int w_x2 on ``X``."""
    dm = dofmap or build_dofmap(mesh)
    mb = basis or morley_basis(dm)
    rows = np.zeros((4, dm.n_x))
    tris = mesh.triangles[dm.wave_tris]
    _, area = p1_gradients(mesh.vertices[tris])
    np.add.at(rows[0], dm.vertex_dof[tris].ravel(), np.repeat(area / 3.0, 3))
    pts, wts = map_triangle(mesh.vertices[mesh.triangles[dm.plate_tris]], 2)
    np.add.at(rows[1], mb.dofs.ravel(), np.einsum("tq,tqk->tk", wts, mb.values(pts)).ravel())
    grad = np.einsum("tq,tqkd->tkd", wts, mb.gradients(pts))
    np.add.at(rows[2], mb.dofs.ravel(), grad[..., 0].ravel())
    np.add.at(rows[3], mb.dofs.ravel(), grad[..., 1].ravel())
    return rows


@dataclass(frozen=True, eq=False)
class FormSet:
    """All assembled forms on one mesh; matrices on ``X`` unless noted."""

    dofmap: DofMap
    mu: float
    K1: sp.csr_matrix
    M1: sp.csr_matrix
    K2: sp.csr_matrix
    M2: sp.csr_matrix
    G1: sp.csr_matrix
    G2v: sp.csr_matrix
    G2n: sp.csr_matrix
    T1: sp.csr_matrix
    T2v: sp.csr_matrix
    T2n: sp.csr_matrix
    means: np.ndarray
    basis: MorleyBasis = field(repr=False)

    @cached_property
    def K(self) -> sp.csr_matrix:
        return (self.K1 + self.K2).tocsr()

    @cached_property
    def M(self) -> sp.csr_matrix:
        return (self.M1 + self.M2).tocsr()

    @cached_property
    def M_H(self) -> sp.csr_matrix:
        return assemble_H_gram(self)


def assemble_forms(mesh: TriMesh, mu: float) -> FormSet:
    mu = check_mu(mu)
    dm = build_dofmap(mesh)
    mb = morley_basis(dm)
    K1, M1 = assemble_wave_forms(mesh, dm)
    K2, M2 = assemble_plate_forms(mesh, mu, dm, mb)
    G1, G2v, G2n = assemble_boundary_masses(mesh, dm)
    T1, T2v, T2n = assemble_traces(mesh, dm)
    return FormSet(dm, mu, K1, M1, K2, M2, G1, G2v, G2n, T1, T2v, T2n, assemble_means(mesh, dm, mb), mb)


def assemble_H_gram(forms: FormSet, dofmap: DofMap | None = None) -> sp.csr_matrix:
    """Energy Gram on the state layout ``[q | p | eta | xi | zeta]``.

    Restricted to the seven physical blocks this is K1 (u), M1 (v), G1 (eta),
    K2 (w), M2 (z), G2n (xi), G2v (zeta); ``1/2 U^T M_H U`` is the energy.
    """
    return sp.block_diag([forms.K, forms.M, forms.G1, forms.G2n, forms.G2v], format="csr")


# -- interpolation and special fields ------------------------------------------

def interpolate(dm: DofMap, wave=None, plate=None, plate_grad=None) -> np.ndarray:
    """Nodal interpolant in ``X`` of a wave field and a plate field.

    Each argument is a callable on an (n, 2) array of points. ``plate_grad``
    returns (n, 2) gradients and feeds the edge normal-derivative DOFs. At
    interface vertices the plate value wins (the two should agree there).
    """
    mesh = dm.mesh
    x = np.zeros(dm.n_x)
    if wave is not None:
        x[dm.vertex_dof[dm.wave_vertices]] = wave(mesh.vertices[dm.wave_vertices])
    if plate is not None:
        x[dm.vertex_dof[dm.plate_vertices]] = plate(mesh.vertices[dm.plate_vertices])
    if plate_grad is not None:
        mids = 0.5 * (mesh.vertices[dm.plate_edges[:, 0]] + mesh.vertices[dm.plate_edges[:, 1]])
        x[dm.edge_dof] = np.einsum("ij,ij->i", plate_grad(mids), dm.plate_edge_normals)
    return x


def signed_interface_distance(mesh: TriMesh):
    """(mid, nu) with ``d(x) = (x - mid) . nu`` positive on the plate side."""
    mid, _, nu = mesh.interface_line()
    return mid, nu


def rigid_basis(dm: DofMap) -> np.ndarray:
    """Two fields in ``X`` spanning the kernel of the bending-plus-wave energy.

    Column 0 is the constant 1 on both subdomains; column 1 is zero on the
    wave and the signed distance to the interface on the plate.
    """
    mid, nu = signed_interface_distance(dm.mesh)
    r1 = interpolate(dm, wave=lambda p: np.ones(len(p)), plate=lambda p: np.ones(len(p)))
    r2 = interpolate(dm, plate=lambda p: (p - mid) @ nu, plate_grad=lambda p: np.tile(nu, (len(p), 1)))
    return np.column_stack([r1, r2])


def rigid_pins(dm: DofMap) -> np.ndarray:
    """Two ``X`` indices whose zero set is complementary to the rigid kernel."""
    mid, nu = signed_interface_distance(dm.mesh)
    wv = dm.wave_vertices
    dw = np.abs((dm.mesh.vertices[wv] - mid) @ nu)
    pv = dm.plate_vertices
    dp = (dm.mesh.vertices[pv] - mid) @ nu
    return np.array([dm.vertex_dof[wv[np.argmax(dw)]], dm.vertex_dof[pv[np.argmax(dp)]]], dtype=np.int64)
