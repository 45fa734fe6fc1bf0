"""Geometric checks for the coupled domain and multiplier identities.

Corner-angle validators, the multiplier condition for ``m(x) = x - x0``
and residuals of the Rellich and plate multiplier identities evaluated on
polynomial test fields by quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .fem import build_dofmap, check_mu, morley_basis, assemble_plate_forms, assemble_means
from .mesh import OMEGA1, OMEGA2, BoundaryTag, TriMesh, corner_angles
from .quadrature import map_segment, map_triangle

MAX_DEGREE = 4
TRI_DEGREE = 8     # exact for products of two degree-4 fields
EDGE_DEGREE = 9
PLATE_ANGLE_MU03 = 77.753311   # degrees; only known value of the plate threshold


# -- polynomial test fields ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class PolyField:
    """Real bivariate polynomial ``sum c[i, j] x1^i x2^j`` of total degree <= 4."""

    coef: np.ndarray

    def __post_init__(self):
        c = np.zeros((MAX_DEGREE + 1, MAX_DEGREE + 1))
        src = np.atleast_2d(np.asarray(self.coef, dtype=float))
        if src.shape[0] > MAX_DEGREE + 1 or src.shape[1] > MAX_DEGREE + 1:
            raise ValueError(f"coefficient array {src.shape} exceeds degree {MAX_DEGREE}")
        c[: src.shape[0], : src.shape[1]] = src
        i, j = np.indices(c.shape)
        if np.any(c[i + j > MAX_DEGREE] != 0.0):
            raise ValueError(f"total degree exceeds {MAX_DEGREE}")
        c.setflags(write=False)
        object.__setattr__(self, "coef", c)

    @classmethod
    def from_terms(cls, terms: dict[tuple[int, int], float]) -> "PolyField":
        c = np.zeros((MAX_DEGREE + 1, MAX_DEGREE + 1))
        for (i, j), v in terms.items():
            if i < 0 or j < 0 or i + j > MAX_DEGREE:
                raise ValueError(f"monomial x1^{i} x2^{j} is outside degree {MAX_DEGREE}")
            c[i, j] += v
        return cls(c)

    @classmethod
    def monomial(cls, i: int, j: int, scale: float = 1.0) -> "PolyField":
        return cls.from_terms({(i, j): scale})

    @property
    def degree(self) -> int:
        i, j = np.nonzero(self.coef)
        return int((i + j).max()) if len(i) else 0

    def d(self, i: int = 0, j: int = 0) -> "PolyField":
        """Partial derivative of order ``i`` in x1 and ``j`` in x2."""
        c = self.coef
        if i:
            c = P.polyder(c, i, axis=0)
        if j:
            c = P.polyder(c, j, axis=1)
        return PolyField(c)

    def laplacian(self) -> "PolyField":
        return PolyField(self.d(2, 0).coef + self.d(0, 2).coef)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return P.polyval2d(pts[..., 0], pts[..., 1], self.coef)

    def grad(self, pts: np.ndarray) -> np.ndarray:
        return np.stack([self.d(1, 0)(pts), self.d(0, 1)(pts)], axis=-1)

    def hessian(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(y11, y12, y22) at ``pts``."""
        return self.d(2, 0)(pts), self.d(1, 1)(pts), self.d(0, 2)(pts)


# -- boundary operators on straight edges ---------------------------------------

def boundary_C(y: PolyField, nu: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(C1 y, C2 y) at ``pts`` for a constant unit normal ``nu`` (Cartesian form)."""
    n1, n2 = nu
    y11, y12, y22 = y.hessian(pts)
    c1 = 2.0 * n1 * n2 * y12 - n1 ** 2 * y22 - n2 ** 2 * y11
    c2 = (n1 ** 2 - n2 ** 2) * y12 - n1 * n2 * (y11 - y22)
    return c1, c2


def tangential_C(y: PolyField, nu: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(C1 y, C2 y) from directional derivatives: ``-d_tt y`` and ``d_nt y``.

    Valid only on straight edges, where the curvature terms vanish.
    """
    tau = np.array([-nu[1], nu[0]])
    y11, y12, y22 = y.hessian(pts)

    def dd(a, b):
        return a[0] * b[0] * y11 + (a[0] * b[1] + a[1] * b[0]) * y12 + a[1] * b[1] * y22

    return -dd(tau, tau), dd(nu, tau)


def boundary_B(y: PolyField, nu: np.ndarray, mu: float, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(B1 y, B2 y) at ``pts`` for a constant unit normal ``nu``."""
    n1, n2 = nu
    t1, t2 = -n2, n1
    c1, _ = boundary_C(y, nu, pts)
    b1 = y.laplacian()(pts) + (1.0 - mu) * c1
    # tangential derivative of C2 through third derivatives
    y111, y112, y122, y222 = (y.d(3, 0)(pts), y.d(2, 1)(pts), y.d(1, 2)(pts), y.d(0, 3)(pts))
    dc2_1 = (n1 ** 2 - n2 ** 2) * y112 - n1 * n2 * (y111 - y122)
    dc2_2 = (n1 ** 2 - n2 ** 2) * y122 - n1 * n2 * (y112 - y222)
    dn_lap = n1 * (y111 + y122) + n2 * (y112 + y222)
    b2 = dn_lap + (1.0 - mu) * (t1 * dc2_1 + t2 * dc2_2)
    return b1, b2


def bending_integrand(y: PolyField, mu: float, pts: np.ndarray) -> np.ndarray:
    """``b(y) = y11^2 + y22^2 + 2 mu y11 y22 + 2 (1 - mu) y12^2``."""
    y11, y12, y22 = y.hessian(pts)
    return y11 ** 2 + y22 ** 2 + 2.0 * mu * y11 * y22 + 2.0 * (1.0 - mu) * y12 ** 2


# -- angle checks -----------------------------------------------------------------

@dataclass(frozen=True)
class CornerCheck:
    point: tuple[float, float]
    angle: float           # radians
    passed: bool | None

    @property
    def degrees(self) -> float:
        return math.degrees(self.angle)


@dataclass(frozen=True)
class AngleReport:
    domain: int
    corners: list[CornerCheck]
    threshold: float | None      # radians; None when unknown
    warning: str | None = None

    @property
    def passed(self) -> bool | None:
        if self.threshold is None:
            return None
        return all(c.passed for c in self.corners)

    @property
    def failures(self) -> list[CornerCheck]:
        return [c for c in self.corners if c.passed is False]

    def to_dict(self) -> dict:
        return {
            "threshold_deg": None if self.threshold is None else math.degrees(self.threshold),
            "pass": self.passed,
            "warning": self.warning,
            "corners": [{"point": list(c.point), "angle_deg": c.degrees, "pass": c.passed} for c in self.corners],
        }


def _angle_report(mesh: TriMesh, domain: int, threshold: float | None, warning=None) -> AngleReport:
    corners = []
    for pt, ang in corner_angles(mesh, domain):
        ok = None if threshold is None else bool(ang < threshold)
        corners.append(CornerCheck((float(pt[0]), float(pt[1])), float(ang), ok))
    return AngleReport(domain, corners, threshold, warning)


def check_wave_angles(mesh: TriMesh) -> AngleReport:
    """Every corner of the wave domain must be strictly convex."""
    return _angle_report(mesh, OMEGA1, math.pi)


def check_plate_angles(mesh: TriMesh, mu: float, omega0: float | None = None) -> AngleReport:
    """Plate corners must lie strictly below ``omega0`` (degrees).

    The threshold is only known for ``mu = 0.3``; for other ``mu`` without an
    explicit ``omega0`` the report carries a warning and no verdict.
    """
    if not 0.0 < mu < 0.5:
        raise ValueError(f"Poisson coefficient must lie in (0, 1/2), got {mu}")
    if omega0 is not None:
        if not 0.0 < omega0 <= 360.0:
            raise ValueError(f"omega0 must be an angle in degrees in (0, 360], got {omega0}")
        return _angle_report(mesh, OMEGA2, math.radians(omega0))
    if math.isclose(mu, 0.3, rel_tol=0.0, abs_tol=1e-12):
        return _angle_report(mesh, OMEGA2, math.radians(PLATE_ANGLE_MU03))
    return _angle_report(mesh, OMEGA2, None,
                         warning=f"unknown plate angle threshold for mu={mu}; pass omega0 explicitly")


# -- multiplier condition -----------------------------------------------------------

@dataclass(frozen=True)
class MgcReport:
    delta: float
    R1: float
    R2: float
    interface_residual: float
    violations: list[tuple[int, float]]
    edge_values: np.ndarray = field(repr=False)    # m . nu at every tagged edge midpoint
    tolerance: float = 0.0

    @property
    def passed(self) -> bool:
        return self.interface_residual <= self.tolerance and self.delta > 0.0

    def to_dict(self) -> dict:
        return {
            "delta": self.delta, "R1": self.R1, "R2": self.R2,
            "interface_residual": self.interface_residual,
            "violations": [[int(k), float(v)] for k, v in self.violations],
            "pass": self.passed,
        }


def check_mgc(mesh: TriMesh, x0) -> MgcReport:
    """Evaluate ``m . nu`` with ``m = x - x0`` on every tagged edge.

    Exterior edges use the outward normal of their subdomain and the
    interface uses ``nu_1``. ``delta`` is the smallest exterior value (clipped
    at zero); non-positive exterior values and interface values above
    ``1e-9 * diam`` are listed as violations.
    """
    x0 = np.asarray(x0, dtype=float)
    v, e = mesh.vertices, mesh.edges
    mid = 0.5 * (v[e[:, 0]] + v[e[:, 1]])
    mn = np.einsum("ij,ij->i", mid - x0, mesh.edge_normals(OMEGA1))
    iface = mesh.tags == BoundaryTag.INTERFACE
    tol = 1e-9 * mesh.diameter()

    ext = np.flatnonzero(~iface)
    delta = max(float(mn[ext].min()), 0.0) if len(ext) else 0.0
    iface_res = float(np.abs(mn[iface]).max()) if iface.any() else 0.0
    violations = [(int(k), float(mn[k])) for k in ext if mn[k] <= 0.0]
    violations += [(int(k), float(mn[k])) for k in np.flatnonzero(iface) if abs(mn[k]) > tol]
    violations.sort()

    def radius(tag):
        idx = mesh.edges_with(tag)
        if len(idx) == 0:
            return 0.0
        pts = v[np.unique(e[idx])]
        return float(np.linalg.norm(pts - x0, axis=1).max())

    return MgcReport(delta, radius(BoundaryTag.GAMMA1), radius(BoundaryTag.GAMMA2), iface_res,
                     violations, mn, tol)


# -- multiplier identities ------------------------------------------------------------

def _boundary_edges(mesh: TriMesh, domain: int) -> tuple[np.ndarray, np.ndarray]:
    """Tagged edges bounding ``domain`` and their outward normals."""
    outer = BoundaryTag.GAMMA1 if domain == OMEGA1 else BoundaryTag.GAMMA2
    idx = np.flatnonzero((mesh.tags == outer) | (mesh.tags == BoundaryTag.INTERFACE))
    return idx, mesh.edge_normals(domain)[idx]


def _degrees(degree: int | None) -> tuple[int, int]:
    if degree is None:
        return TRI_DEGREE, EDGE_DEGREE
    if degree < 0:
        raise ValueError(f"quadrature degree must be >= 0, got {degree}")
    return degree, degree


def _m_grad(y: PolyField, x0: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return np.einsum("...d,...d->...", pts - x0, y.grad(pts))


@dataclass(frozen=True)
class IdentityTerms:
    """Both sides of a multiplier identity and the named pieces of the right side."""

    lhs: float
    rhs: float
    parts: dict[str, float]

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def rellich_terms(mesh: TriMesh, y: PolyField, x0, degree: int | None = None) -> IdentityTerms:
    """``-int Delta y (m . grad y)`` against its boundary form on the wave domain."""
    x0 = np.asarray(x0, dtype=float)
    dt, de = _degrees(degree)
    pts, w = map_triangle(mesh.vertices[mesh.triangles[mesh.domains == OMEGA1]], dt)
    lhs = -float(np.sum(w * y.laplacian()(pts) * _m_grad(y, x0, pts)))

    idx, nu = _boundary_edges(mesh, OMEGA1)
    a, b = mesh.vertices[mesh.edges[idx, 0]], mesh.vertices[mesh.edges[idx, 1]]
    q, wq = map_segment(a, b, de)
    g = y.grad(q)
    m_nu = np.einsum("eqd,ed->eq", q - x0, nu)
    dny = np.einsum("eqd,ed->eq", g, nu)
    flux = 0.5 * float(np.sum(wq * m_nu * np.sum(g * g, axis=-1)))
    cross = float(np.sum(wq * dny * _m_grad(y, x0, q)))
    return IdentityTerms(lhs, flux - cross, {"flux": flux, "cross": cross})


def rellich_residual(mesh: TriMesh, y: PolyField, x0, degree: int | None = None) -> float:
    """Absolute defect of the Rellich identity on the wave domain.

    ``degree`` overrides the quadrature degree on both triangles and edges.
    """
    return rellich_terms(mesh, y, x0, degree).residual


def plate_identity_terms(mesh: TriMesh, y: PolyField, x0, mu: float,
                         degree: int | None = None) -> IdentityTerms:
    """``int Delta^2 y (m . grad y)`` against the bending-form decomposition.

    On a polygon the boundary integration by parts of the twisting moment
    leaves point values at the ends of each straight edge; these appear as
    the ``corners`` part (each edge traversed along ``tau = (-nu2, nu1)``).
    """
    mu = check_mu(mu)
    x0 = np.asarray(x0, dtype=float)
    dt, de = _degrees(degree)
    pts, w = map_triangle(mesh.vertices[mesh.triangles[mesh.domains == OMEGA2]], dt)
    bilap = y.laplacian().laplacian()
    lhs = float(np.sum(w * bilap(pts) * _m_grad(y, x0, pts)))
    a_yy = float(np.sum(w * bending_integrand(y, mu, pts)))

    idx, normals = _boundary_edges(mesh, OMEGA2)
    A, B = mesh.vertices[mesh.edges[idx, 0]], mesh.vertices[mesh.edges[idx, 1]]
    q, wq = map_segment(A, B, de)
    # m . grad y and its normal derivative: d_nu (m . grad y) = m . (H nu) + d_nu y
    mg = _m_grad(y, x0, q)
    y11, y12, y22 = y.hessian(q)
    gy = y.grad(q)
    boundary, b_flux, corners = 0.0, 0.0, 0.0
    for k, nu in enumerate(normals):
        qe, we = q[k], wq[k]
        m = qe - x0
        Hn = np.column_stack([y11[k] * nu[0] + y12[k] * nu[1], y12[k] * nu[0] + y22[k] * nu[1]])
        dn_g = np.sum(m * Hn, axis=1) + gy[k] @ nu
        b1, b2 = boundary_B(y, nu, mu, qe)
        boundary += float(np.sum(we * (b1 * dn_g - b2 * mg[k])))
        b_flux += 0.5 * float(np.sum(we * (m @ nu) * bending_integrand(y, mu, qe)))

        tau = np.array([-nu[1], nu[0]])
        start, end = (A[k], B[k]) if (B[k] - A[k]) @ tau > 0 else (B[k], A[k])
        ends = np.array([start, end])
        _, c2 = boundary_C(y, nu, ends)
        g_ends = _m_grad(y, x0, ends)
        corners += (1.0 - mu) * float(c2[1] * g_ends[1] - c2[0] * g_ends[0])

    rhs = a_yy - boundary + b_flux - corners
    return IdentityTerms(lhs, rhs, {"a": a_yy, "boundary": boundary, "b_flux": b_flux, "corners": corners})


def plate_multiplier_residual(mesh: TriMesh, y: PolyField, x0, mu: float,
                              degree: int | None = None) -> float:
    """Absolute defect of the plate multiplier identity on the plate domain."""
    return plate_identity_terms(mesh, y, x0, mu, degree).residual


def rellich_inequality_gap(mesh: TriMesh, y: PolyField, x0, degree: int | None = None) -> float:
    """``LHS - RHS`` of the lower bound that the Rellich identity yields under
    the multiplier condition; non-negative up to quadrature error.

    ``-int Delta y (m . grad y) >= -(R1^2 / delta) int_{Gamma1} |d_nu y|^2
    - int_I d_nu y (m . grad y)``.
    """
    x0 = np.asarray(x0, dtype=float)
    rep = check_mgc(mesh, x0)
    if rep.delta <= 0.0:
        raise ValueError("multiplier condition fails (delta = 0); the bound is undefined")
    lhs = rellich_terms(mesh, y, x0, degree).lhs
    _, de = _degrees(degree)

    def edge_terms(tag):
        idx = mesh.edges_with(tag)
        nu = mesh.edge_normals(OMEGA1)[idx]
        q, wq = map_segment(mesh.vertices[mesh.edges[idx, 0]], mesh.vertices[mesh.edges[idx, 1]], de)
        dny = np.einsum("eqd,ed->eq", y.grad(q), nu)
        return q, wq, dny

    _, w1, dn1 = edge_terms(BoundaryTag.GAMMA1)
    qi, wi, dni = edge_terms(BoundaryTag.INTERFACE)
    rhs = -(rep.R1 ** 2 / rep.delta) * float(np.sum(w1 * dn1 ** 2)) - float(np.sum(wi * dni * _m_grad(y, x0, qi)))
    return lhs - rhs


# -- trace constant surrogate ---------------------------------------------------------

MAX_DENSE_PLATE_DOFS = 4000


def trace_gradient_constant(mesh: TriMesh, mu: float) -> float:
    """Discrete surrogate for the constant in ``|grad w|^2_{L2(Gamma2)} <= M a(w, w)``.

    Largest generalized eigenvalue of the Morley trace-gradient form on the
    outer plate boundary against the bending form, restricted to plate fields
    whose integrals of ``w``, ``w_x1``, ``w_x2`` vanish (this removes the
    affine kernel of the bending form). Dense; meant for coarse meshes.
    """
    import scipy.linalg as sla

    mu = check_mu(mu)
    dm = build_dofmap(mesh)
    mb = morley_basis(dm)
    K2, _ = assemble_plate_forms(mesh, mu, dm, mb)
    L = assemble_means(mesh, dm, mb)[1:]
    plate = np.unique(mb.dofs)
    if len(plate) > MAX_DENSE_PLATE_DOFS:
        raise ValueError(f"{len(plate)} plate unknowns; the dense surrogate is limited to {MAX_DENSE_PLATE_DOFS}")

    # trace-gradient form on Gamma2 edges, each owned by one plate triangle
    owner = {}
    for t, tri in enumerate(mesh.triangles[dm.plate_tris]):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            owner[(min(a, b), max(a, b))] = t
    G = np.zeros((dm.n_x, dm.n_x))
    g2 = dm.gamma2_edges
    if len(g2):
        e = mesh.edges[g2]
        tris = np.array([owner[(min(a, b), max(a, b))] for a, b in e])
        q, wq = map_segment(mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]], 4)
        sub = type(mb)(mb.centre[tris], mb.scale[tris], mb.coef[tris], mb.dofs[tris], mb.area[tris])
        grad = sub.gradients(q)
        Ge = np.einsum("eq,eqid,eqjd->eij", wq, grad, grad)
        for dofs, blk in zip(sub.dofs, Ge):
            G[np.ix_(dofs, dofs)] += blk

    Kp = K2.toarray()[np.ix_(plate, plate)]
    Gp = G[np.ix_(plate, plate)]
    Z = sla.null_space(L[:, plate])
    theta = sla.eigh(Z.T @ Gp @ Z, Z.T @ Kp @ Z, eigvals_only=True)
    return float(theta[-1])
