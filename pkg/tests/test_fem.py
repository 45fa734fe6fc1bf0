from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from waveplate.fem import (AssemblyError, assemble_boundary_masses, assemble_forms, assemble_H_gram,
                           assemble_plate_forms, assemble_traces, assemble_wave_forms, build_dofmap,
                           interpolate, morley_basis, p1_element_stiffness)
from waveplate.mesh import BoundaryTag, gen_rect_transmission
from waveplate.quadrature import map_triangle
from waveplate.system import energy

MU = 0.3


@pytest.fixture(scope="module")
def forms4(rect4):
    return assemble_forms(rect4, MU)


def test_reference_element_stiffness():
    K = p1_element_stiffness(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    ref = 0.5 * np.array([[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    assert np.abs(K - ref).max() <= 1e-14


def test_degenerate_element():
    with pytest.raises(AssemblyError):
        p1_element_stiffness(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))


def test_wave_constants_and_mass(rect4, forms4):
    dm = forms4.dofmap
    one = np.zeros(dm.n_x)
    one[dm.u_index] = 1.0
    assert np.abs(forms4.K1 @ one).max() <= 1e-13
    assert abs(forms4.M1.sum() - rect4.area(1)) <= 1e-13


def test_plate_affine_kernel(forms4):
    dm = forms4.dofmap
    x = interpolate(dm, plate=lambda p: 0.3 + 2 * p[:, 0] - p[:, 1],
                    plate_grad=lambda p: np.tile([2.0, -1.0], (len(p), 1)))
    assert abs(x @ forms4.K2 @ x) <= 1e-12


def test_plate_x1_squared(forms4, rect4):
    dm = forms4.dofmap
    x = interpolate(dm, plate=lambda p: p[:, 0] ** 2,
                    plate_grad=lambda p: np.column_stack([2 * p[:, 0], 0 * p[:, 0]]))
    assert abs(x @ forms4.K2 @ x - 4.0 * rect4.area(2)) <= 1e-10


def test_plate_psd(forms4):
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.standard_normal(forms4.dofmap.n_x)
        assert x @ forms4.K2 @ x >= -1e-12


def test_mu_range(rect4):
    with pytest.raises(ValueError):
        assemble_plate_forms(rect4, 0.5)
    with pytest.raises(ValueError):
        assemble_plate_forms(rect4, 0.0)


def test_morley_quadratic_reproduction(lens16):
    dm = build_dofmap(lens16)
    mb = morley_basis(dm)
    a, b, c = 0.7, -1.3, 0.4     # q = a x^2 + b x y + c y^2 + affine
    x = interpolate(dm, plate=lambda p: a * p[:, 0] ** 2 + b * p[:, 0] * p[:, 1] + c * p[:, 1] ** 2 + p[:, 0] - 2,
                    plate_grad=lambda p: np.column_stack([2 * a * p[:, 0] + b * p[:, 1] + 1, b * p[:, 0] + 2 * c * p[:, 1]]))
    H = np.einsum("tkc,tk->tc", mb.hessians(), x[mb.dofs])
    assert np.abs(H - [2 * a, b, 2 * c]).max() <= 1e-12 * max(1.0, np.abs(H).max()) * 100


def test_boundary_masses(rect4):
    G1, G2v, G2n = assemble_boundary_masses(rect4)
    assert abs(G1.sum() - rect4.tag_length(BoundaryTag.GAMMA1)) <= 1e-13
    assert abs(G2v.sum() - rect4.tag_length(BoundaryTag.GAMMA2)) <= 1e-13
    dm = build_dofmap(rect4)
    np.testing.assert_allclose(G2n.diagonal(), rect4.edge_lengths(dm.gamma2_edges), rtol=0, atol=1e-15)
    assert (G2n - np.diag(G2n.diagonal())).__abs__().max() == 0


def test_G1_support(forms4):
    dm = forms4.dofmap
    full = (forms4.T1.T @ forms4.G1 @ forms4.T1).tocsr()
    gamma1 = set(dm.vertex_dof[dm.gamma1_vertices].tolist())
    rows = np.flatnonzero(np.diff(full.indptr))
    assert set(rows.tolist()) <= gamma1


def test_traces(rect4, forms4):
    dm = forms4.dofmap
    T1, T2v, T2n = assemble_traces(rect4)
    one = np.ones(dm.n_x)
    np.testing.assert_array_equal(T1 @ one, 1.0)
    x = interpolate(dm, plate=lambda p: p[:, 0], plate_grad=lambda p: np.tile([1.0, 0.0], (len(p), 1)))
    vals = T2n @ x
    mids = rect4.vertices[rect4.edges[dm.gamma2_edges]].mean(axis=1)
    right = np.isclose(mids[:, 0], 1.0)
    np.testing.assert_allclose(vals[right], 1.0, atol=1e-14)
    np.testing.assert_allclose(vals[~right], 0.0, atol=1e-14)


def test_interface_ids_shared(forms4):
    dm = forms4.dofmap
    shared = np.intersect1d(dm.u_index, dm.w_index)
    np.testing.assert_array_equal(np.sort(shared), np.sort(dm.vertex_dof[dm.interface_vertices]))


def test_symmetry_and_psd(forms4):
    for name in ("K1", "M1", "K2", "M2", "G1", "G2v", "G2n", "M_H"):
        A = getattr(forms4, name)
        scale = max(abs(A).max(), 1e-300)
        assert abs(A - A.T).max() <= 1e-12 * scale, name
    ev = sla.eigh(forms4.M_H.toarray(), eigvals_only=True)
    assert ev.min() >= -1e-10 * np.abs(ev).max()


def test_H_gram_null_space(forms4):
    M_H = assemble_H_gram(forms4)
    ev = sla.eigh(M_H.toarray(), eigvals_only=True)
    assert int(np.sum(np.abs(ev) <= 1e-10 * ev.max())) == 2


def test_energy_of_eta(rect4_sys, rect4):
    s = rect4_sys.dofmap.slices
    U = rect4_sys.dofmap.zero_state()
    assert energy(rect4_sys, U) == 0.0
    U[s["eta"]] = 1.0
    assert abs(energy(rect4_sys, U) - 0.5 * rect4.tag_length(BoundaryTag.GAMMA1)) <= 1e-14


# -- convergence -------------------------------------------------------------------

def _poisson_errors(n):
    """P1 on the wave square with u = x (x + 1) y (1 - y), zero on its boundary."""
    mesh = gen_rect_transmission(n)
    dm = build_dofmap(mesh)
    K1, M1 = assemble_wave_forms(mesh, dm)
    exact = lambda p: p[..., 0] * (p[..., 0] + 1) * p[..., 1] * (1 - p[..., 1])
    grad = lambda p: np.stack([(2 * p[..., 0] + 1) * p[..., 1] * (1 - p[..., 1]),
                               p[..., 0] * (p[..., 0] + 1) * (1 - 2 * p[..., 1])], axis=-1)
    f = lambda p: -2 * (p[..., 1] * (1 - p[..., 1]) - p[..., 0] * (p[..., 0] + 1))
    verts = dm.wave_vertices
    idx = dm.vertex_dof[verts]
    boundary = set(np.concatenate([dm.gamma1_vertices, dm.interface_vertices]).tolist())
    free = np.array([d for v, d in zip(verts, idx) if v not in boundary])
    fI = np.zeros(dm.n_x)
    fI[idx] = f(mesh.vertices[verts])
    rhs = (M1 @ fI)[free]
    u = np.zeros(dm.n_x)
    u[free] = spla.spsolve(K1[free][:, free].tocsc(), rhs)

    tris = mesh.triangles[dm.wave_tris]
    coords = mesh.vertices[tris]
    pts, w = map_triangle(coords, 6)
    e1, e2 = coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    rel = pts - coords[:, None, 0]
    l1 = (rel[..., 0] * e2[:, None, 1] - rel[..., 1] * e2[:, None, 0]) / det[:, None]
    l2 = (e1[:, None, 0] * rel[..., 1] - e1[:, None, 1] * rel[..., 0]) / det[:, None]
    lam = np.stack([1 - l1 - l2, l1, l2], axis=-1)
    uh = np.einsum("tqk,tk->tq", lam, u[dm.vertex_dof[tris]])
    g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
    G = np.stack([-g1 - g2, g1, g2], axis=1)
    guh = np.einsum("tkd,tk->td", G, u[dm.vertex_dof[tris]])
    l2err = np.sqrt(np.sum(w * (exact(pts) - uh) ** 2))
    h1err = np.sqrt(np.sum(w * np.sum((grad(pts) - guh[:, None, :]) ** 2, axis=-1)))
    return l2err, h1err


def _p(t):
    return t ** 2 * (1 - t) ** 2


def _dp(t):
    return 2 * t - 6 * t ** 2 + 4 * t ** 3


def _ddp(t):
    return 2 - 12 * t + 12 * t ** 2


def _biharmonic_errors(n):
    """Clamped Morley on the plate square with w = p(x) p(y), p(t) = t^2 (1 - t)^2."""
    mesh = gen_rect_transmission(n)
    dm = build_dofmap(mesh)
    mb = morley_basis(dm)
    K2, _ = assemble_plate_forms(mesh, MU, dm, mb)
    x, y = lambda p: p[..., 0], lambda p: p[..., 1]
    f = lambda q: 24 * _p(y(q)) + 2 * _ddp(x(q)) * _ddp(y(q)) + 24 * _p(x(q))
    coords = mesh.vertices[mesh.triangles[dm.plate_tris]]
    pts, w = map_triangle(coords, 10)
    V = mb.values(pts)
    rhs = np.zeros(dm.n_x)
    np.add.at(rhs, mb.dofs.ravel(), np.einsum("tq,tq,tqk->tk", w, f(pts), V).ravel())

    bnd_v = set(np.concatenate([dm.gamma2_vertices, dm.interface_vertices]).tolist())
    free_v = [dm.vertex_dof[v] for v in dm.plate_vertices if v not in bnd_v]
    free = np.array(sorted(free_v + dm.edge_dof[~dm.plate_edge_boundary].tolist()))
    wh = np.zeros(dm.n_x)
    wh[free] = spla.spsolve(K2[free][:, free].tocsc(), rhs[free])

    vals = np.einsum("tqk,tk->tq", V, wh[mb.dofs])
    H = np.einsum("tkc,tk->tc", mb.hessians(), wh[mb.dofs])
    ex = _p(x(pts)) * _p(y(pts))
    h11 = _ddp(x(pts)) * _p(y(pts)) - H[:, None, 0]
    h12 = _dp(x(pts)) * _dp(y(pts)) - H[:, None, 1]
    h22 = _p(x(pts)) * _ddp(y(pts)) - H[:, None, 2]
    energy = np.sqrt(np.sum(w * (h11 ** 2 + 2 * h12 ** 2 + h22 ** 2)))
    l2 = np.sqrt(np.sum(w * (ex - vals) ** 2))
    return l2, energy


def _rates(errs):
    e = np.asarray(errs)
    return np.log2(e[:-1] / e[1:])


def test_poisson_rates():
    errs = np.array([_poisson_errors(n) for n in (8, 16, 32, 64)])
    l2_rates, h1_rates = _rates(errs[:, 0]), _rates(errs[:, 1])
    assert l2_rates.min() >= 1.9, l2_rates
    assert h1_rates.min() >= 0.9, h1_rates


def test_morley_rates():
    errs = np.array([_biharmonic_errors(n) for n in (8, 16, 32, 64)])
    l2_rates, en_rates = _rates(errs[:, 0]), _rates(errs[:, 1])
    assert en_rates.min() >= 0.9, en_rates
    assert l2_rates.min() >= 1.7, l2_rates
