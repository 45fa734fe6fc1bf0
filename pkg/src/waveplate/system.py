"""First-order generator ``E U' = B U`` for the coupled system.

State layout is ``[q | p | eta | xi | zeta]`` (see ``fem.DofMap``). The
displacement row is the identity pairing ``q' = p``; the velocity row is
mass-weighted and carries the boundary feedback; each control row is
weighted by its own boundary mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .fem import DofMap, FormSet, assemble_forms, interpolate, rigid_basis, rigid_pins, signed_interface_distance
from .linalg import LUFactor, SingularMatrixError
from .mesh import TriMesh

DEFLATION_TOL = 1e-8


class SpectrumHitError(ArithmeticError):
    def __init__(self, lam: complex):
        super().__init__(f"shifted operator is singular at lambda = {lam}")
        self.lam = lam


@dataclass(frozen=True, eq=False)
class GeneratorSystem:
    forms: FormSet
    E: sp.csr_matrix
    B: sp.csr_matrix
    M_H: sp.csr_matrix

    @property
    def dofmap(self) -> DofMap:
        return self.forms.dofmap

    @property
    def mesh(self) -> TriMesh:
        return self.forms.dofmap.mesh

    @property
    def n(self) -> int:
        return self.E.shape[0]

    @cached_property
    def kernel(self) -> np.ndarray:
        """Rigid states (n, 2): displacement in the energy kernel, all else zero."""
        R = np.zeros((self.n, 2))
        R[self.dofmap.slices["q"]] = rigid_basis(self.dofmap)
        return R

    @cached_property
    def pins(self) -> np.ndarray:
        """Two state indices; states vanishing there form a complement of the kernel."""
        return self.dofmap.slices["q"].start + rigid_pins(self.dofmap)

    @cached_property
    def keep(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), self.pins)

    @cached_property
    def _E_lu(self) -> LUFactor:
        return LUFactor(self.E)

    def apply_A(self, U: np.ndarray) -> np.ndarray:
        """Discrete generator ``E^{-1} B U``."""
        return self._E_lu.solve(self.B @ U)

    def inner(self, U: np.ndarray, V: np.ndarray) -> complex:
        """Energy inner product ``<U, V>_H`` (conjugate-linear in ``V``)."""
        return np.vdot(V, self.M_H @ U)

    def norm(self, U: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(U, U).real, 0.0)))

    def means(self, U: np.ndarray) -> np.ndarray:
        """(int u, int w, int w_x1, int w_x2) of the displacement block."""
        return self.forms.means @ U[self.dofmap.slices["q"]]


def build_generator(mesh: TriMesh, mu: float) -> GeneratorSystem:
    f = assemble_forms(mesh, mu)
    n_x = f.dofmap.n_x
    I = sp.identity(n_x, format="csr")
    E = sp.block_diag([I, f.M, f.G1, f.G2n, f.G2v], format="csr")
    G1T1 = f.G1 @ f.T1
    GnTn = f.G2n @ f.T2n
    GvTv = f.G2v @ f.T2v
    B = sp.bmat([
        [None, I, None, None, None],
        [-f.K, None, -G1T1.T, -GnTn.T, -GvTv.T],
        [None, G1T1, -f.G1, None, None],
        [None, GnTn, None, -f.G2n, None],
        [None, GvTv, None, None, -f.G2v],
    ], format="csr")
    return GeneratorSystem(f, E, B, f.M_H)


# -- energy --------------------------------------------------------------------

def _quad(A, x) -> float:
    return float(np.vdot(x, A @ x).real)


def energy_components(sys: GeneratorSystem, U: np.ndarray) -> dict[str, float]:
    f, s = sys.forms, sys.dofmap.slices
    q, p = U[s["q"]], U[s["p"]]
    return {
        "u": 0.5 * _quad(f.K1, q),
        "v": 0.5 * _quad(f.M1, p),
        "eta": 0.5 * _quad(f.G1, U[s["eta"]]),
        "w": 0.5 * _quad(f.K2, q),
        "z": 0.5 * _quad(f.M2, p),
        "xi": 0.5 * _quad(f.G2n, U[s["xi"]]),
        "zeta": 0.5 * _quad(f.G2v, U[s["zeta"]]),
    }


def energy(sys: GeneratorSystem, U: np.ndarray) -> float:
    return 0.5 * _quad(sys.M_H, U)


def dissipation_components(sys: GeneratorSystem, U: np.ndarray) -> tuple[float, float, float]:
    f, s = sys.forms, sys.dofmap.slices
    return _quad(f.G1, U[s["eta"]]), _quad(f.G2n, U[s["xi"]]), _quad(f.G2v, U[s["zeta"]])


def dissipation(sys: GeneratorSystem, U: np.ndarray) -> float:
    """Energy loss rate of the controls, ``-dE/dt`` along the flow."""
    return float(sum(dissipation_components(sys, U)))


# -- resolvent -------------------------------------------------------------------

class ShiftedSolver:
    """Factorization of ``lam E - B`` for repeated solves at one ``lam``.

    For ``|lam| < 1e-8`` the rigid kernel is deflated: the solution is
    pinned to vanish at ``sys.pins`` and the data is shifted by the rigid
    combination that restores solvability.
    """

    def __init__(self, sys: GeneratorSystem, lam: complex):
        self.sys = sys
        self.lam = lam
        self.deflated = abs(lam) < DEFLATION_TOL
        A = self.operator
        try:
            if self.deflated:
                n = sys.n
                ER = sp.csr_matrix(sys.E @ sys.kernel)
                C = sp.csr_matrix((np.ones(2), (sys.pins, [0, 1])), shape=(n, 2))
                self._lu = LUFactor(sp.bmat([[A, ER], [C.T, None]], format="csr"))
            else:
                self._lu = LUFactor(A)
        except SingularMatrixError:
            raise SpectrumHitError(lam) from None

    @cached_property
    def operator(self) -> sp.csr_matrix:
        return (self.lam * self.sys.E - self.sys.B).tocsr()

    def solve_rhs(self, rhs: np.ndarray, trans: str = "N") -> np.ndarray:
        """Solve ``(lam E - B) X = rhs`` directly (``rhs`` already paired)."""
        if self.deflated:
            if trans != "N":
                raise NotImplementedError("adjoint solves are not available on the deflated system")
            x = self._lu.solve(np.concatenate([rhs, np.zeros(2)]))
            return x[: self.sys.n]
        return self._lu.solve(rhs, trans=trans)

    def solve(self, F: np.ndarray) -> np.ndarray:
        """``(lam - A_h)^{-1} F``."""
        return self.solve_rhs(self.sys.E @ F)

    def projected_data(self, F: np.ndarray) -> np.ndarray:
        """The data actually inverted: ``F`` minus the deflation correction."""
        if not self.deflated:
            return F
        x = self._lu.solve(np.concatenate([self.sys.E @ F, np.zeros(2)]))
        return F - self.sys.kernel @ x[self.sys.n:]


def resolvent_solve(sys: GeneratorSystem, lam: complex, F: np.ndarray) -> np.ndarray:
    return ShiftedSolver(sys, lam).solve(F)


def resolvent_residual(sys: GeneratorSystem, lam: complex, U: np.ndarray, F: np.ndarray) -> float:
    """Relative residual ``|(lam E - B) U - E F| / |E F|``."""
    r = lam * (sys.E @ U) - sys.B @ U - sys.E @ F
    scale = np.linalg.norm(sys.E @ F)
    return float(np.linalg.norm(r) / scale) if scale > 0 else float(np.linalg.norm(r))


# -- mean projection and smooth data -------------------------------------------

def mean_correction_fields(dm: DofMap) -> np.ndarray:
    """Four plate-supported (plus constant) fields used to zero the mean functionals.

    Constant, signed distance ``d`` to the interface, ``d^2`` and ``d t`` with
    ``t`` the coordinate along the interface.
    """
    mid, nu = signed_interface_distance(dm.mesh)
    tau = np.array([-nu[1], nu[0]])
    d = lambda p: (p - mid) @ nu
    t = lambda p: (p - mid) @ tau
    R = rigid_basis(dm)
    s1 = interpolate(dm, plate=lambda p: d(p) ** 2, plate_grad=lambda p: 2 * d(p)[:, None] * nu)
    s2 = interpolate(dm, plate=lambda p: d(p) * t(p),
                     plate_grad=lambda p: t(p)[:, None] * nu + d(p)[:, None] * tau)
    return np.column_stack([R, s1, s2])


class MeanProjection:
    """Oblique projection of the displacement and velocity blocks onto the
    zero set of the four mean functionals."""

    def __init__(self, sys: GeneratorSystem):
        self.sys = sys
        self.C = mean_correction_fields(sys.dofmap)
        self.L = sys.forms.means
        self._coupling = np.linalg.inv(self.L @ self.C)

    def project_x(self, x: np.ndarray) -> np.ndarray:
        return x - self.C @ (self._coupling @ (self.L @ x))

    def __call__(self, U: np.ndarray) -> np.ndarray:
        s = self.sys.dofmap.slices
        out = np.array(U, copy=True)
        out[s["q"]] = self.project_x(U[s["q"]])
        out[s["p"]] = self.project_x(U[s["p"]])
        return out


def mean_project(sys: GeneratorSystem, U: np.ndarray) -> np.ndarray:
    return MeanProjection(sys)(U)


def smooth_initial_data(sys: GeneratorSystem, F: np.ndarray, depth: int = 1) -> tuple[np.ndarray, float]:
    """``U0 = (I - A_h)^{-depth} P F`` and its graph norm ``sqrt(|U0|^2 + |A_h U0|^2)``.

    ``P`` subtracts from ``F`` a combination of the mean-correction fields
    (placed in both the displacement and the velocity block) chosen so that
    the four mean functionals of ``U0`` vanish on both blocks. With
    ``V = (I - A_h)^{1-depth} P F`` one has ``A_h U0 = U0 - V`` exactly, so
    the graph norm needs no extra solve. Larger ``depth`` damps the
    mesh-scale content of nodal random data.
    """
    if depth < 1:
        raise ValueError(f"smoothing depth must be >= 1, got {depth}")
    F = np.asarray(F)
    s = sys.dofmap.slices
    fields = mean_correction_fields(sys.dofmap)
    k = fields.shape[1]
    C = np.zeros((sys.n, 2 * k))
    C[s["q"], :k] = fields
    C[s["p"], k:] = fields
    solver = ShiftedSolver(sys, 1.0)
    X = np.column_stack([F, C]).astype(np.result_type(F, float))
    prev = X
    for _ in range(depth):
        prev, X = X, np.column_stack([solver.solve(x) for x in X.T])

    def means(Y):
        return np.vstack([sys.forms.means @ Y[s["q"]], sys.forms.means @ Y[s["p"]]])

    c = np.linalg.solve(means(X[:, 1:]), means(X[:, :1])).ravel()
    U0 = X[:, 0] - X[:, 1:] @ c
    V = prev[:, 0] - prev[:, 1:] @ c
    return U0, float(np.sqrt(sys.norm(U0) ** 2 + sys.norm(U0 - V) ** 2))


def projected_initial_data(sys: GeneratorSystem, F: np.ndarray, U0: np.ndarray, depth: int = 1) -> np.ndarray:
    """The corrected data ``P F`` behind ``U0 = (I - A_h)^{-depth} P F``."""
    PF = U0
    for _ in range(depth):
        PF = PF - sys.apply_A(PF)
    return PF


def random_state(sys: GeneratorSystem, seed: int, dtype=float) -> np.ndarray:
    """Seeded state with coefficients uniform in [-1, 1] on every block."""
    rng = np.random.default_rng(seed)
    U = rng.uniform(-1.0, 1.0, sys.n)
    if np.dtype(dtype).kind == "c":
        U = U + 1j * rng.uniform(-1.0, 1.0, sys.n)
    return U
