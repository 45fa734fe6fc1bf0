"""Decay-law fits on energy traces.

The check is one-sided: ``t E(t)`` should stay bounded (no upward trend over
the late window) and the energy should not decay slower than a power law.
An exponential fit is reported alongside for model comparison.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import EnergyTrace

TRUNCATION = 1e-14      # samples below this fraction of E(0) are roundoff
TREND_TOL = 1e-6        # allowed trend slope, relative to the first window value


@dataclass(frozen=True)
class DecayReport:
    loglog_slope: float
    sup_tE: float
    C_over_dAnorm: float
    exp_fit_rms: float
    poly_fit_rms: float
    window: tuple[float, float]
    trend_slope: float = 0.0       # linear-fit slope of t E(t) / |U0|_D(A)^2 per unit time
    trend_initial: float = 0.0     # t E(t) / |U0|_D(A)^2 at the first window sample
    samples: int = 0
    truncated: bool = False

    @property
    def trend_nonincreasing(self) -> bool:
        return self.trend_slope <= TREND_TOL * self.trend_initial

    @property
    def prefers_polynomial(self) -> bool:
        return self.poly_fit_rms < self.exp_fit_rms

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        d["trend_nonincreasing"] = self.trend_nonincreasing
        return d


def _fit_rms(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """(slope, rms residual) of a least-squares line through (x, y)."""
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0]), float(np.sqrt(np.mean((A @ coef - y) ** 2)))


def decay_fit(trace: EnergyTrace, dA_norm: float, window: tuple[float, float] | None = None) -> DecayReport:
    """Fit power-law and exponential decay to ``trace`` over ``window``.

    Parameters
    ----------
    trace : EnergyTrace
    dA_norm : float
        Graph norm ``|U0|_D(A)`` of the initial state (not squared).
    window : (t_min, t_max), optional
        Defaults to ``[T/4, T]`` with ``T`` the last recorded time. The upper
        end is pulled back to the last sample before the energy first drops
        below ``1e-14 E(0)``.
    """
    t = np.asarray(trace.t, dtype=float)
    E = np.asarray(trace.E, dtype=float)
    if len(t) == 0:
        raise ValueError("empty trace")
    if not dA_norm > 0:
        raise ValueError(f"dA_norm must be positive, got {dA_norm}")
    if window is None:
        window = (t[-1] / 4.0, t[-1])
    t_min, t_max = map(float, window)
    if not t_min < t_max:
        raise ValueError(f"empty window ({t_min}, {t_max})")

    truncated = False
    tiny = np.flatnonzero(E < TRUNCATION * E[0])
    if len(tiny):
        cut = t[tiny[0]]
        if cut <= t_max:
            t_max, truncated = float(np.nextafter(cut, -np.inf)), True

    sel = (t >= t_min) & (t <= t_max) & (t > 0) & (E > 0)
    if sel.sum() < 2:
        raise ValueError(f"window ({t_min}, {t_max}) holds fewer than two usable samples")
    tw, Ew = t[sel], E[sel]
    logE = np.log(Ew)
    slope, poly_rms = _fit_rms(np.log(tw), logE)
    _, exp_rms = _fit_rms(tw, logE)

    tE = tw * Ew
    scale = dA_norm ** 2
    trend, _ = _fit_rms(tw, tE / scale)
    return DecayReport(
        loglog_slope=slope, sup_tE=float(tE.max()), C_over_dAnorm=float(tE.max() / scale),
        exp_fit_rms=exp_rms, poly_fit_rms=poly_rms, window=(float(tw[0]), float(tw[-1])),
        trend_slope=trend, trend_initial=float(tE[0] / scale), samples=int(sel.sum()), truncated=truncated,
    )
