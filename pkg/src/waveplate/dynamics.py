"""Implicit midpoint time stepping and energy traces."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .linalg import LUFactor
from .system import GeneratorSystem, dissipation, dissipation_components, energy

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("t", "E", "D_eta", "D_xi", "D_zeta", "mean_u", "mean_w", "mean_wx1", "mean_wx2")


class NonFiniteStateError(FloatingPointError):
    def __init__(self, t_last: float):
        super().__init__(f"state became non-finite after t = {t_last}")
        self.t_last = t_last


def default_dt(h: float) -> float:
    return min(1e-2, h / 4.0)


class MidpointStepper:
    """Implicit midpoint rule ``(E - dt/2 B) U+ = (E + dt/2 B) U``.

    The left-hand factorization is built once per ``dt``.
    """

    def __init__(self, sys: GeneratorSystem, dt: float):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.sys = sys
        self.dt = float(dt)
        self._rhs = (sys.E + 0.5 * dt * sys.B).tocsr()
        self._lu = LUFactor(sys.E - 0.5 * dt * sys.B)

    def step(self, U: np.ndarray) -> np.ndarray:
        return self._lu.solve(self._rhs @ U)


_steppers: dict[tuple[int, float], MidpointStepper] = {}


def step_cn(sys: GeneratorSystem, U: np.ndarray, dt: float) -> np.ndarray:
    """One implicit midpoint step; the factorization is cached per (system, dt)."""
    key = (id(sys), float(dt))
    stepper = _steppers.get(key)
    if stepper is None or stepper.sys is not sys:
        stepper = _steppers[key] = MidpointStepper(sys, dt)
    return stepper.step(U)


@dataclass
class EnergyTrace:
    t: np.ndarray
    E: np.ndarray
    D: np.ndarray          # (rows, 3): eta, xi, zeta
    means: np.ndarray      # (rows, 4)
    dt: float = 0.0
    dissipated: float = 0.0           # dt * sum of midpoint dissipation over all steps
    max_step_defect: float = 0.0      # max |dE + dt D(mid)| over all steps
    max_step_increase: float = 0.0    # max E(k+1) - E(k) over all steps
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def rows(self) -> np.ndarray:
        return np.column_stack([self.t, self.E, self.D, self.means])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for row in self.rows():
                w.writerow([f"{x:.17g}" for x in row])

    @classmethod
    def from_csv(cls, path) -> "EnergyTrace":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != TRACE_COLUMNS:
                raise ValueError(f"{path}: expected header {','.join(TRACE_COLUMNS)}")
            data = np.array([[float(x) for x in row] for row in reader if row], dtype=float)
        if data.size == 0:
            raise ValueError(f"{path}: no data rows")
        return cls(t=data[:, 0], E=data[:, 1], D=data[:, 2:5], means=data[:, 5:9])


def run(sys: GeneratorSystem, U0: np.ndarray, dt: float, T: float, stride: int = 1,
        callback=None) -> EnergyTrace:
    """Integrate from ``U0`` to ``T`` and record every ``stride``-th step.

    The per-step energy defect ``|E(k+1) - E(k) + dt D(midpoint)|`` and the
    largest single-step energy increase are tracked over all steps.
    ``callback(k, U)``, if given, is called after every step.
    """
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    U0 = np.asarray(U0)
    if not np.all(np.isfinite(U0)):
        raise ValueError("initial state is not finite")
    stepper = MidpointStepper(sys, dt)
    n_steps = int(np.floor(T / dt + 1e-9))
    n_rows = n_steps // stride + 1

    t = np.zeros(n_rows)
    E = np.zeros(n_rows)
    D = np.zeros((n_rows, 3))
    means = np.zeros((n_rows, 4))

    def record(row, k, U):
        t[row] = k * dt
        E[row] = energy(sys, U)
        D[row] = dissipation_components(sys, U)
        means[row] = np.real(sys.means(U))

    U = U0
    e_prev = energy(sys, U)
    record(0, 0, U)
    total, defect, increase = 0.0, 0.0, 0.0
    for k in range(1, n_steps + 1):
        U_new = stepper.step(U)
        if not np.all(np.isfinite(U_new)):
            raise NonFiniteStateError((k - 1) * dt)
        e_new = energy(sys, U_new)
        d_mid = dt * dissipation(sys, 0.5 * (U + U_new))
        total += d_mid
        defect = max(defect, abs(e_new - e_prev + d_mid))
        increase = max(increase, e_new - e_prev)
        U, e_prev = U_new, e_new
        if k % stride == 0:
            record(k // stride, k, U)
        if callback is not None:
            callback(k, U)
    trace = EnergyTrace(t, E, D, means, dt=float(dt), dissipated=total,
                        max_step_defect=defect, max_step_increase=increase)
    trace.meta["final_state"] = U
    return trace
