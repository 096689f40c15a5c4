import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from wavestab.errors import NotHurwitz
from wavestab.model import CoupledSystem, LtiPlant, WaveChannel
from wavestab.smallgain import SmallGainVerdict, cmin_curve, hinf_norm, small_gain_verdict
from wavestab.systems import POCKETS, STABLE, UNSTABLE


def gain(plant, w):
    return abs(plant.K[0] @ np.linalg.solve(1j * w * np.eye(plant.n) - plant.A, plant.B[:, 0]))


def scanned_peak(plant):
    """Dense log scan plus bounded scalar refinement around the best sample."""
    ws = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 4000)])
    g = np.array([gain(plant, w) for w in ws])
    k = int(np.argmax(g))
    lo, hi = ws[max(k - 1, 0)], ws[min(k + 1, len(ws) - 1)]
    res = minimize_scalar(lambda w: -gain(plant, w), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return max(g[k], -res.fun)


def test_stable_example_norm():
    t0 = time.perf_counter()
    h = hinf_norm(STABLE)
    assert time.perf_counter() - t0 < 1.0
    assert h.norm == pytest.approx(20 / 21, rel=1e-6)
    assert h.peak_frequency == pytest.approx(0.0, abs=1e-4)


@st.composite
def hurwitz_plants(draw):
    n = draw(st.integers(1, 4))
    rng = np.random.default_rng(draw(st.integers(0, 2**31)))
    M = rng.normal(size=(n, n))
    A = M - (np.max(np.linalg.eigvals(M).real) + draw(st.floats(0.05, 2.0))) * np.eye(n)
    return LtiPlant(A, rng.normal(size=n), rng.normal(size=n))


@settings(max_examples=25)
@given(hurwitz_plants())
def test_norm_matches_frequency_scan(plant):
    h = hinf_norm(plant)
    peak = scanned_peak(plant)
    assert peak <= h.norm * (1 + 1e-6)
    assert h.norm <= peak * (1 + 2e-6)
    assert gain(plant, h.peak_frequency) == pytest.approx(h.norm, rel=1e-5)


def test_not_hurwitz_and_zero_gain():
    with pytest.raises(NotHurwitz):
        hinf_norm(UNSTABLE)
    assert hinf_norm(LtiPlant([[-1.0]], [1.0], [0.0])).norm == 0.0


def test_verdicts():
    h = hinf_norm(STABLE)
    assert small_gain_verdict(CoupledSystem(STABLE, WaveChannel(2.0, 1.0)), h) is SmallGainVerdict.STABLE
    assert small_gain_verdict(CoupledSystem(STABLE, WaveChannel(1.0, 0.5)), h) is SmallGainVerdict.INCONCLUSIVE
    assert small_gain_verdict(CoupledSystem(STABLE, WaveChannel(1.0, 0.0)), h) is SmallGainVerdict.INAPPLICABLE
    for p in (UNSTABLE, POCKETS):
        assert small_gain_verdict(CoupledSystem(p, WaveChannel(2.0, 1.0))) is SmallGainVerdict.INAPPLICABLE
    big = LtiPlant([[-1.0]], [1.0], [2.0])
    assert small_gain_verdict(CoupledSystem(big, WaveChannel(5.0, 5.0))) is SmallGainVerdict.INAPPLICABLE


@given(st.floats(0.05, 20))
def test_cmin_curve_bound(c0):
    h = hinf_norm(STABLE)
    ((c0_out, cmin),) = cmin_curve(STABLE, [c0], h)
    assert cmin == pytest.approx((20 / 21) / c0, rel=1e-6)
    ch = WaveChannel(cmin * (1 + 1e-5), c0)
    assert small_gain_verdict(CoupledSystem(STABLE, ch), h) is SmallGainVerdict.STABLE
