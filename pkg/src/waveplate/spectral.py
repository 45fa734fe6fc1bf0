"""Eigenpairs of the boundary-augmented elliptic operator, the witness
sequence built from them, and resolvent norms along the imaginary axis."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import FormSet, assemble_forms
from .linalg import SingularValue, polish_eigenpairs, smallest_singular_in_norm, sym_eig_smallest
from .mesh import TriMesh
from .system import GeneratorSystem, SpectrumHitError

log = logging.getLogger(__name__)

RESOLUTION_LIMIT = 1.0   # frequencies with mu * h above this are unresolved


@dataclass(frozen=True)
class EigenPair:
    mu_sq: float
    x: np.ndarray          # full displacement-space vector
    phi: np.ndarray        # wave part (vertex values)
    psi: np.ndarray        # plate part (vertex values, then edge normal derivatives)
    residual: float

    @property
    def mu(self) -> float:
        return float(np.sqrt(self.mu_sq))


@dataclass(frozen=True)
class WitnessPoint:
    """One member of the witness sequence.

    ``residual`` is the paired shifted-system residual
    ``|(i mu E - B) U - E F|`` (Euclidean). ``residual_H`` is the same defect
    measured as ``|(i mu - A_h) U - F|_H``; it carries the inverse of the
    velocity mass and so has a roundoff floor of order
    ``eps * lambda_max(S, M)``.
    """

    mu: float
    U_norm: float
    F_norm: float
    residual: float
    residual_H: float = 0.0
    resolved: bool = True

    @property
    def ratio(self) -> float:
        return self.U_norm / self.F_norm


def boundary_augmented_stiffness(forms: FormSet) -> sp.csr_matrix:
    """Bending-plus-wave stiffness with the three boundary masses added."""
    f = forms
    S = f.K + f.T1.T @ f.G1 @ f.T1 + f.T2n.T @ f.G2n @ f.T2n + f.T2v.T @ f.G2v @ f.T2v
    return sp.csr_matrix(S)


def eig_ODeltaR(mesh: TriMesh, mu_poisson: float, k: int, forms: FormSet | None = None,
                tol: float = 1e-10, polish: bool = True) -> list[EigenPair]:
    """The ``k`` smallest eigenpairs of ``S x = mu^2 M x`` (M-orthonormal).

    ``polish`` adds one shifted inverse-iteration step per pair, which takes
    the residual from the Lanczos stopping level down to roundoff.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    f = forms or assemble_forms(mesh, mu_poisson)
    S = boundary_augmented_stiffness(f)
    res = sym_eig_smallest(S, f.M, k, tol=tol)
    if polish:
        res = polish_eigenpairs(S, f.M, res.values, res.vectors)
    dm = f.dofmap
    out = []
    for lam, x in zip(res.values, res.vectors.T):
        r = np.linalg.norm(S @ x - lam * (f.M @ x)) / np.linalg.norm(S @ x)
        out.append(EigenPair(float(lam), x, x[dm.u_index], x[dm.w_index], float(r)))
    return out


def resolved(pairs, h: float) -> np.ndarray:
    return np.array([p.mu * h <= RESOLUTION_LIMIT for p in pairs], dtype=bool)


def witness_state(sys: GeneratorSystem, pair: EigenPair) -> tuple[np.ndarray, np.ndarray]:
    """(U, F) with ``(i mu - A_h) U = F`` and F supported on the controls."""
    f, s = sys.forms, sys.dofmap.slices
    x, mu = pair.x, pair.mu
    c = 1.0 / (1j * mu)
    U = np.zeros(sys.n, dtype=complex)
    U[s["q"]] = c * x
    U[s["p"]] = x
    F = np.zeros(sys.n, dtype=complex)
    for name, T in (("eta", f.T1), ("xi", f.T2n), ("zeta", f.T2v)):
        U[s[name]] = F[s[name]] = c * (T @ x)
    return U, F


def witness(pairs, sys: GeneratorSystem) -> list[WitnessPoint]:
    h = sys.mesh.h
    out = []
    for pair in pairs:
        U, F = witness_state(sys, pair)
        r = 1j * pair.mu * (sys.E @ U) - sys.B @ U - sys.E @ F
        res_H = sys.norm(sys._E_lu.solve(r))
        out.append(WitnessPoint(pair.mu, sys.norm(U), sys.norm(F), float(np.linalg.norm(r)), res_H,
                                pair.mu * h <= RESOLUTION_LIMIT))
    return out


def resolvent_singular(sys: GeneratorSystem, beta: float, tol: float = 1e-8) -> SingularValue:
    C = (1j * beta) * sys.E - sys.B
    return smallest_singular_in_norm(C, sys.M_H, E=sys.E, keep=sys.keep, tol=tol)


def resolvent_norm(sys: GeneratorSystem, beta: float, tol: float = 1e-8) -> float:
    """Energy-norm of ``(i beta - A_h)^{-1}`` on the complement of the rigid kernel."""
    if beta == 0.0:
        raise SpectrumHitError(0.0)
    sv = resolvent_singular(sys, beta, tol)
    if sv.singular:
        raise SpectrumHitError(1j * beta)
    return 1.0 / sv.value


def sweep_frequencies(pairs, h: float, count: int = 16) -> np.ndarray:
    """Log-spaced frequencies from the 2nd to the largest resolved eigenfrequency."""
    mus = np.array([p.mu for p in pairs])[resolved(pairs, h)]
    if len(mus) < 3:
        raise ValueError("fewer than three resolved eigenfrequencies; refine the mesh or request more pairs")
    return np.geomspace(mus[1], mus[-1], count)


def frequency_sweep(sys: GeneratorSystem, betas) -> np.ndarray:
    """(beta, resolvent norm) rows."""
    return np.array([(b, resolvent_norm(sys, b)) for b in betas])


@dataclass(frozen=True)
class PowerFit:
    exponent: float
    intercept: float
    rms: float

    def __iter__(self):
        return iter((self.exponent, self.intercept, self.rms))


def loglog_fit(x, y) -> PowerFit:
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    rms = float(np.sqrt(np.mean((A @ coef - ly) ** 2)))
    return PowerFit(float(coef[0]), float(coef[1]), rms)


def bt_exponent_fit(points) -> PowerFit:
    """Least-squares slope of log |R(i beta)| against log beta."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 4:
        raise ValueError("need at least 4 (beta, norm) points")
    beta = np.abs(pts[:, 0])
    if beta.min() <= 0 or beta.max() / beta.min() < 10.0 * (1 - 1e-12):
        raise ValueError("frequencies must be positive and span at least one decade")
    return loglog_fit(beta, pts[:, 1])


HALF_DECADE = np.sqrt(10.0)


@dataclass(frozen=True)
class GrowthReport:
    """Resolvent growth along a sweep against the power bound ``beta^ell``.

    ``top_max`` and ``rest_max`` are the largest values of
    ``beta^-ell |R(i beta)|`` over the top half-decade of the sweep and over
    everything below it. The scaled norm counts as non-increasing at the top
    when ``top_max <= rest_max``. ``top_slope`` is the least-squares log-log
    slope of the scaled norm over the top half-decade, kept as a diagnostic
    because a single near-resonant sample dominates it.
    """

    ell: float
    fit: PowerFit
    fitted_growth: float       # exp(fit slope * log(span))
    envelope_growth: float     # max |R| in top half-decade / max |R| in bottom half-decade
    top_max: float
    rest_max: float
    top_slope: float

    @property
    def grows(self) -> bool:
        return self.fitted_growth >= 2.0 and self.envelope_growth >= 2.0

    @property
    def scaled_nonincreasing(self) -> bool:
        return self.top_max <= self.rest_max

    @property
    def consistent(self) -> bool:
        return self.grows and self.scaled_nonincreasing

    def to_dict(self) -> dict:
        return {
            "ell": self.ell, "exponent": self.fit.exponent, "fit_rms": self.fit.rms,
            "fitted_growth": self.fitted_growth, "envelope_growth": self.envelope_growth,
            "top_max": self.top_max, "rest_max": self.rest_max, "top_slope": self.top_slope,
            "grows": self.grows, "scaled_nonincreasing": self.scaled_nonincreasing,
        }


def growth_report(points, ell: float = 2.0) -> GrowthReport:
    """Summarize a ``(beta, |R(i beta)|)`` sweep spanning at least a decade."""
    fit = bt_exponent_fit(points)
    pts = np.asarray(points, dtype=float)
    order = np.argsort(np.abs(pts[:, 0]))
    beta, R = np.abs(pts[order, 0]), pts[order, 1]
    span = beta[-1] / beta[0]
    top = beta >= beta[-1] / HALF_DECADE
    bottom = beta <= beta[0] * HALF_DECADE
    scaled = R * beta ** (-ell)
    top_slope = loglog_fit(beta[top], scaled[top]).exponent if top.sum() >= 2 else float("nan")
    return GrowthReport(
        ell=ell, fit=fit, fitted_growth=float(np.exp(fit.exponent * np.log(span))),
        envelope_growth=float(R[top].max() / R[bottom].max()),
        top_max=float(scaled[top].max()), rest_max=float(scaled[~top].max()), top_slope=top_slope,
    )
