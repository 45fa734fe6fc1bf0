from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg as sla

from waveplate.dynamics import (TRACE_COLUMNS, EnergyTrace, MidpointStepper, NonFiniteStateError, default_dt, run,
                                step_cn)
from waveplate.system import dissipation, energy, random_state


def test_zero_step(rect4_sys):
    U = rect4_sys.dofmap.zero_state()
    assert np.all(step_cn(rect4_sys, U, 1e-2) == 0)


def test_step_energy_balance(rect8_sys):
    U = random_state(rect8_sys, 0)
    dt = 1e-2
    V = step_cn(rect8_sys, U, dt)
    d = energy(rect8_sys, V) - energy(rect8_sys, U) + dt * dissipation(rect8_sys, 0.5 * (U + V))
    assert abs(d) <= 1e-9 * energy(rect8_sys, U)


def test_amplification_factor(rect4_sys):
    E, B = rect4_sys.E.toarray(), rect4_sys.B.toarray()
    lam, X = sla.eig(B, E)
    k = np.argmax(np.where(np.abs(lam) > 1.0, np.abs(lam.imag), -1))
    x = X[:, k]
    dt = 0.05
    y = MidpointStepper(rect4_sys, dt).step(x)
    g = (1 + dt * lam[k] / 2) / (1 - dt * lam[k] / 2)
    assert np.linalg.norm(y - g * x) <= 1e-10 * np.linalg.norm(x)


def test_run_rows_and_monotone(rect4_sys):
    U0 = random_state(rect4_sys, 1)
    tr = run(rect4_sys, U0, 0.01, 1.0, stride=7)
    assert len(tr) == int(np.floor(1.0 / (7 * 0.01))) + 1
    assert tr.t[0] == 0.0 and np.all(np.diff(tr.t) > 0)
    assert np.all(np.diff(tr.E) <= 1e-12 * tr.E[0])
    assert tr.max_step_increase <= 1e-12 * tr.E[0]
    assert np.all(tr.D >= 0)
    # rows are strided, the balance runs to the last step
    e_end = energy(rect4_sys, tr.meta["final_state"])
    assert abs(tr.E[0] - e_end - tr.dissipated) <= 1e-8 * tr.E[0]


def test_run_zero(rect4_sys):
    tr = run(rect4_sys, rect4_sys.dofmap.zero_state(), 0.1, 1.0)
    assert np.all(tr.E == 0) and np.all(tr.D == 0)


def test_run_rejects_bad_input(rect4_sys):
    U = rect4_sys.dofmap.zero_state()
    with pytest.raises(ValueError):
        run(rect4_sys, U, 0.1, 0.0)
    U[0] = np.nan
    with pytest.raises(ValueError):
        run(rect4_sys, U, 0.1, 1.0)


def test_non_finite_abort(rect4_sys, monkeypatch):
    U = random_state(rect4_sys, 2)
    calls = {"n": 0}
    orig = MidpointStepper.step

    def bad(self, V):
        calls["n"] += 1
        out = orig(self, V)
        if calls["n"] == 3:
            out[0] = np.inf
        return out

    monkeypatch.setattr(MidpointStepper, "step", bad)
    with pytest.raises(NonFiniteStateError) as err:
        run(rect4_sys, U, 0.1, 1.0)
    assert err.value.t_last == pytest.approx(0.2)


def test_csv_round_trip(tmp_path, rect4_sys):
    tr = run(rect4_sys, random_state(rect4_sys, 3), 0.01, 0.2)
    path = tmp_path / "e.csv"
    tr.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)
    back = EnergyTrace.from_csv(path)
    assert np.array_equal(back.rows(), tr.rows())


def test_csv_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        EnergyTrace.from_csv(p)


def test_default_dt():
    assert default_dt(1.0) == 1e-2
    assert default_dt(0.02) == 0.005
