"""Sparse storage, LU solves and Lanczos eigen/singular-value routines.

Storage and the LU kernel are scipy's (CSR, SuperLU); the fill-reducing
ordering is reverse Cuthill-McKee applied before factorization. The
eigenvalue and singular-value drivers are Lanczos iterations with full
reorthogonalization in a user-supplied inner product.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-14


class SingularMatrixError(ArithmeticError):
    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def csr_from_triplets(n: int, rows, cols=None, vals=None, shape: tuple[int, int] | None = None) -> sp.csr_matrix:
    """Build a canonical CSR matrix, summing duplicate entries.

    Accepts either parallel ``rows, cols, vals`` arrays or a single sequence
    of ``(row, col, value)`` triplets in ``rows``.
    """
    if cols is None:
        entries = list(rows)
        if entries:
            r, c, v = zip(*entries)
        else:
            r, c, v = (), (), ()
        rows, cols, vals = r, c, v
    shape = shape or (n, n)
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals).ravel()
    if vals.dtype.kind not in "fc":
        vals = vals.astype(float)
    if rows.size and (rows.min() < 0 or rows.max() >= shape[0] or cols.min() < 0 or cols.max() >= shape[1]):
        raise ValueError(f"triplet index out of range for shape {shape}")
    A = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def asymmetry(A) -> float:
    """max |A - A^T|."""
    D = (A - A.T).tocoo()
    return float(np.abs(D.data).max()) if D.nnz else 0.0


def norm_inf(A) -> float:
    return float(abs(A).sum(axis=1).max()) if A.shape[0] else 0.0


class LUFactor:
    """Sparse LU of a square matrix with an RCM pre-ordering.

    The matrix is first equilibrated (rows, then columns, scaled to unit
    max-norm) so that the singular-pivot test ``|u_kk| < 1e-14 |A|`` is
    insensitive to badly scaled but well-posed block structure.
    ``refine`` steps of iterative refinement are applied to every solve;
    one step brings the residual down to roundoff relative to ``|b|``
    when ``b`` is small compared with ``|A| |x|``.

    Immutable after construction; ``solve`` may be called concurrently.
    """

    def __init__(self, A, ordering: str = "rcm", refine: int = 0, equilibrate: bool = True):
        A = sp.csr_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self._A = A
        self.refine = refine
        self.shape = A.shape
        self.dtype = np.result_type(A.dtype, np.float64)
        n = A.shape[0]
        if equilibrate and n:
            rmax = np.asarray(abs(A).max(axis=1).todense()).ravel()
            if np.any(rmax == 0):
                k = int(np.flatnonzero(rmax == 0)[0])
                raise SingularMatrixError(f"zero row {k}", pivot=k)
            self._r = 1.0 / rmax
            Ar = sp.diags(self._r) @ A
            cmax = np.asarray(abs(Ar).max(axis=0).todense()).ravel()
            if np.any(cmax == 0):
                k = int(np.flatnonzero(cmax == 0)[0])
                raise SingularMatrixError(f"zero column {k}", pivot=k)
            self._c = 1.0 / cmax
            As = (Ar @ sp.diags(self._c)).tocsr()
        else:
            self._r = self._c = None
            As = A
        self.norm = norm_inf(As)
        if ordering == "rcm":
            pattern = (abs(As) + abs(As.T)).tocsr()
            self.perm = np.asarray(reverse_cuthill_mckee(pattern, symmetric_mode=True), dtype=np.int64)
            permc = "NATURAL"
        elif ordering == "colamd":
            self.perm = np.arange(n)
            permc = "COLAMD"
        else:
            raise ValueError(f"unknown ordering {ordering!r}")
        Ap = As[self.perm][:, self.perm].tocsc()
        try:
            self._lu = splu(Ap, permc_spec=permc)
        except RuntimeError as exc:
            raise SingularMatrixError(f"factorization failed: {exc}") from None
        diag = np.abs(self._lu.U.diagonal())
        if n and diag.min() < PIVOT_TOL * self.norm:
            k = int(diag.argmin())
            col = self._lu.perm_c[k] if permc != "NATURAL" else k
            raise SingularMatrixError(f"numerically singular pivot {diag[k]:.3e} at index {int(self.perm[col])}",
                                      pivot=int(self.perm[col]))

    def solve(self, b: np.ndarray, trans: str = "N") -> np.ndarray:
        """Solve ``A x = b`` (``trans='T'`` or ``'H'`` for the transposes)."""
        x = self._solve(b, trans)
        if self.refine:
            op = {"N": self._A, "T": self._A.T, "H": self._A.T.conj()}[trans]
            for _ in range(self.refine):
                x = x + self._solve(b - op @ x, trans)
        return x

    def _solve(self, b: np.ndarray, trans: str) -> np.ndarray:
        b = np.asarray(b)
        if self._r is not None:
            pre, post = (self._r, self._c) if trans == "N" else (self._c, self._r)
            b = pre * b
        dtype = np.result_type(self.dtype, b.dtype)
        bp = b[self.perm].astype(dtype, copy=False)
        if dtype.kind == "c" and self.dtype.kind != "c":
            y = self._lu.solve(np.ascontiguousarray(bp.real), trans=trans) \
                + 1j * self._lu.solve(np.ascontiguousarray(bp.imag), trans=trans)
        else:
            y = self._lu.solve(np.ascontiguousarray(bp), trans=trans)
        x = np.empty_like(y)
        x[self.perm] = y
        if self._r is not None:
            x = post * x
        return x


def lu_solve(A, b: np.ndarray) -> np.ndarray:
    return LUFactor(A).solve(b)


# -- symmetric generalized eigenproblem -----------------------------------

class EigResult(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray


def sym_eig_smallest(A, M, k: int, sigma: float | None = None, tol: float = 1e-10,
                     max_dim: int | None = None, seed: int = 0) -> EigResult:
    """Eigenpairs of ``A x = lam M x`` closest to ``sigma`` (default 0).

    For positive semidefinite ``A`` these are the ``k`` smallest. Uses
    shift-invert Lanczos in the M-inner product with full
    reorthogonalization. Eigenvalues are returned ascending with
    M-orthonormal vectors; ``residuals`` are ``|A x - lam M x| / (|A| |x|)``.
    """
    A = sp.csr_matrix(A)
    M = sp.csr_matrix(M)
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    normA = max(norm_inf(A), np.finfo(float).tiny)
    shift = 0.0 if sigma is None else float(sigma)
    try:
        lu = LUFactor(A - shift * M, refine=1)
    except SingularMatrixError:
        if sigma is not None:
            raise
        shift = -1e-6 * normA / max(norm_inf(M), np.finfo(float).tiny)
        lu = LUFactor(A - shift * M, refine=1)

    rng = np.random.default_rng(seed)
    mmax = min(n, max_dim or max(3 * k + 40, 80))
    V = np.zeros((n, mmax))
    MV = np.zeros((n, mmax))
    alpha = np.zeros(mmax)
    beta = np.zeros(mmax)

    def fresh(j):
        w = rng.standard_normal(n)
        for _ in range(2):
            w -= V[:, :j] @ (MV[:, :j].T @ w)
        return w / np.sqrt(w @ (M @ w))

    v = fresh(0)
    best_res = np.inf
    for j in range(mmax):
        V[:, j] = v
        MV[:, j] = M @ v
        w = lu.solve(MV[:, j])
        alpha[j] = MV[:, j] @ w
        for _ in range(2):
            w -= V[:, :j + 1] @ (MV[:, :j + 1].T @ w)
        b = np.sqrt(max(w @ (M @ w), 0.0))
        m = j + 1
        if m >= k and (m % 5 == 0 or m == mmax):
            theta, s = sla.eigh_tridiagonal(alpha[:m], beta[:m - 1])
            order = np.argsort(-np.abs(theta))[:k]
            lam = shift + 1.0 / theta[order]
            X = V[:, :m] @ s[:, order]
            R = A @ X - (M @ X) * lam
            res = np.linalg.norm(R, axis=0) / (normA * np.linalg.norm(X, axis=0))
            best_res = min(best_res, res.max())
            if res.max() <= tol:
                idx = np.argsort(lam)
                return EigResult(lam[idx], X[:, idx], res[idx])
        if m == mmax:
            break
        if b <= 1e-12 * max(abs(alpha[j]), 1e-300) or b == 0.0:
            beta[j] = 0.0
            v = fresh(m)
        else:
            beta[j] = b
            v = w / b
    raise ConvergenceError(f"Lanczos did not converge in {mmax} steps (residual {best_res:.3e})", best_res)


def polish_eigenpairs(A, M, values: np.ndarray, vectors: np.ndarray, steps: int = 1,
                      offset: float = 1e-7) -> EigResult:
    """Refine approximate eigenpairs by shifted inverse iteration.

    Each vector takes ``steps`` inverse-iteration steps at a shift just below
    its eigenvalue; a Rayleigh-Ritz pass on the span of the refined vectors
    restores M-orthonormality when eigenvalues are close.
    """
    A = sp.csr_matrix(A)
    M = sp.csr_matrix(M)
    normA = max(norm_inf(A), np.finfo(float).tiny)
    Y = np.array(vectors, dtype=float, copy=True)
    for j, lam in enumerate(values):
        shift = lam - offset * max(abs(lam), 1.0)
        lu = LUFactor(A - shift * M, refine=1)
        for _ in range(steps):
            y = lu.solve(M @ Y[:, j])
            Y[:, j] = y / np.sqrt(y @ (M @ y))
    Ar = Y.T @ (A @ Y)
    Mr = Y.T @ (M @ Y)
    lam, C = sla.eigh(0.5 * (Ar + Ar.T), 0.5 * (Mr + Mr.T))
    X = Y @ C
    R = A @ X - (M @ X) * lam
    res = np.linalg.norm(R, axis=0) / (normA * np.linalg.norm(X, axis=0))
    return EigResult(lam, X, res)


# -- smallest singular value in a weighted norm ----------------------------

class SingularValue(NamedTuple):
    value: float
    singular: bool
    iterations: int


def smallest_singular_in_norm(C, G, E=None, keep=None, tol: float = 1e-6, max_iter: int = 400,
                              seed: int = 0) -> SingularValue:
    """Smallest singular value of ``E^{-1} C`` measured in the G-(semi)norm.

    ``keep`` lists the coordinates spanning the subspace on which ``G`` is
    positive definite (default: all). When ``C`` maps ``ker G`` into itself
    this is the quotient-space value, and ``1 / value`` is the norm of
    ``C^{-1} E`` in that seminorm. Computed by inverse iteration on
    ``C^# C`` (``#`` the G-adjoint), accelerated with Lanczos, to relative
    tolerance ``tol``.
    """
    C = sp.csr_matrix(C)
    n = C.shape[0]
    G = sp.csr_matrix(G)
    keep = np.arange(n) if keep is None else np.asarray(keep, dtype=np.int64)
    Eop = (lambda x: x) if E is None else (lambda x, E=sp.csr_matrix(E): E @ x)
    EopH = (lambda x: x) if E is None else (lambda x, Et=sp.csr_matrix(E).T.conj().tocsr(): Et @ x)
    try:
        luC = LUFactor(C, refine=1)
    except SingularMatrixError:
        return SingularValue(0.0, True, 0)
    GS = G[keep][:, keep]
    luG = LUFactor(GS)
    m = len(keep)

    def apply(y):
        full = np.zeros(n, dtype=complex)
        full[keep] = y
        x = luC.solve(Eop(full))
        z = EopH(luC.solve(G @ x, trans="H"))
        return luG.solve(z[keep])

    rng = np.random.default_rng(seed)
    mmax = min(m, max_iter)
    V = np.zeros((m, mmax), dtype=complex)
    GV = np.zeros((m, mmax), dtype=complex)
    alpha = np.zeros(mmax)
    beta = np.zeros(mmax)
    v = rng.standard_normal(m) + 0j
    v /= np.sqrt((v.conj() @ (GS @ v)).real)
    theta_max = 0.0
    for j in range(mmax):
        V[:, j] = v
        GV[:, j] = GS @ v
        w = apply(v)
        alpha[j] = (GV[:, j].conj() @ w).real
        for _ in range(2):
            w -= V[:, :j + 1] @ (GV[:, :j + 1].conj().T @ w)
        b = np.sqrt(max((w.conj() @ (GS @ w)).real, 0.0))
        mm = j + 1
        theta, s = sla.eigh_tridiagonal(alpha[:mm], beta[:mm - 1])
        theta_max = theta[-1]
        est = b * abs(s[-1, -1])
        if theta_max <= 0.0:
            return SingularValue(np.inf, False, mm)
        if est <= tol * theta_max or mm == m:
            return SingularValue(float(1.0 / np.sqrt(theta_max)), False, mm)
        if b <= 1e-14 * theta_max:
            # invariant subspace containing the start vector; restart orthogonally
            w = rng.standard_normal(m) + 0j
            for _ in range(2):
                w -= V[:, :mm] @ (GV[:, :mm].conj().T @ w)
            b_new = np.sqrt((w.conj() @ (GS @ w)).real)
            beta[j] = 0.0
            v = w / b_new
        else:
            beta[j] = b
            v = w / b
    raise ConvergenceError(f"singular-value iteration stalled after {mmax} steps", float(est / theta_max))
