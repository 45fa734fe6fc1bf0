from __future__ import annotations

import numpy as np
import pytest

from waveplate.analysis import decay_fit
from waveplate.dynamics import EnergyTrace


def trace(t, E):
    t, E = np.asarray(t, float), np.asarray(E, float)
    return EnergyTrace(t, E, np.zeros((len(t), 3)), np.zeros((len(t), 4)))


def test_inverse_law():
    t = np.linspace(1, 100, 400)
    r = decay_fit(trace(t, 1 / t), 1.0, (1, 100))
    assert r.loglog_slope == pytest.approx(-1.0, abs=1e-12)
    assert r.sup_tE == pytest.approx(1.0, abs=1e-12)
    assert r.poly_fit_rms <= 1e-12
    assert r.trend_nonincreasing


def test_exponential_law():
    t = np.linspace(0, 20, 401)
    r = decay_fit(trace(t, np.exp(-t)), 1.0)
    assert r.exp_fit_rms < 1e-3 * r.poly_fit_rms
    assert not r.prefers_polynomial


def test_scale_equivariance():
    t = np.linspace(0, 50, 201)
    E = (1 + t) ** -1.3
    a, b = decay_fit(trace(t, E), 2.0), decay_fit(trace(t, 7.5 * E), 2.0)
    assert abs(a.loglog_slope - b.loglog_slope) <= 1e-12
    assert b.sup_tE == pytest.approx(7.5 * a.sup_tE)
    assert a.C_over_dAnorm == pytest.approx(a.sup_tE / 4.0)


def test_default_window_and_sup_attained():
    t = np.linspace(0, 40, 81)
    E = 3.0 / (1 + t)
    r = decay_fit(trace(t, E), 1.0)
    assert r.window == (10.0, 40.0)
    sel = (t >= 10) & (t <= 40)
    assert r.sup_tE in (t * E)[sel]


def test_truncation():
    t = np.linspace(0, 10, 101)
    E = np.exp(-5 * t)
    r = decay_fit(trace(t, E), 1.0, (1, 10))
    assert r.truncated
    assert r.window[1] < 10 and np.exp(-5 * r.window[1]) >= 1e-14


def test_growing_trend_flagged():
    t = np.linspace(1, 10, 50)
    r = decay_fit(trace(t, 1 / np.sqrt(t)), 1.0, (1, 10))
    assert not r.trend_nonincreasing


def test_empty_window():
    t = np.linspace(0, 10, 11)
    with pytest.raises(ValueError):
        decay_fit(trace(t, 1 / (1 + t)), 1.0, (5, 5))
    with pytest.raises(ValueError):
        decay_fit(trace(t, 1 / (1 + t)), 1.0, (20, 30))
