import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from wavestab.ctcr import (
    count_unstable_at_zero,
    crossing_set,
    delays_for_crossing,
    root_tendency,
    stable_intervals,
    sweep_crossings,
)
from wavestab.model import WaveChannel
from wavestab.systems import POCKETS, STABLE, UNSTABLE
from wavestab.transfer import build_ceq


def magnitude_oracle(plant):
    """Real positive roots x = w^2 of |D(iw)|^2 - |N(iw)|^2 (retarded case c1 = 1)."""
    s, w = sp.Symbol("s"), sp.Symbol("w", real=True)
    M = s * sp.eye(plant.n) - sp.Matrix(plant.A.tolist())
    D = M.det()
    N = (sp.Matrix(plant.K.tolist()) * M.adjugate() * sp.Matrix(plant.B.tolist()))[0]
    Dw, Nw = sp.expand(D.subs(s, sp.I * w)), sp.expand(N.subs(s, sp.I * w))
    f = sp.expand(sp.re(Dw) ** 2 + sp.im(Dw) ** 2 - sp.re(Nw) ** 2 - sp.im(Nw) ** 2)
    x = sp.symbols("x")
    g = sp.Poly(sp.expand(f.subs(w, sp.sqrt(x))), x)
    roots = np.roots([float(cf) for cf in g.all_coeffs()])
    return sorted(r.real for r in roots if abs(r.imag) < 1e-12 and r.real > 0)


def test_retarded_crossings_match_quadratic_oracle():
    xs = magnitude_oracle(UNSTABLE)
    assert xs == pytest.approx([1.00503, 2.98497], abs=1e-5)
    got = sorted(c.omega**2 for c in crossing_set(UNSTABLE, 1.0))
    assert got == pytest.approx(xs, abs=1e-9)


def test_unstable_roots_at_zero_delay():
    assert count_unstable_at_zero(UNSTABLE) == 2
    assert count_unstable_at_zero(STABLE) == 0
    assert count_unstable_at_zero(POCKETS) == 0


def test_delay_formula_reproduces_exponential():
    for cr in crossing_set(POCKETS, 0.8):
        for tau in delays_for_crossing(cr.omega, cr.T, 20.0):
            lhs = np.exp(-1j * cr.omega * tau)
            rhs = (1 - 1j * cr.omega * cr.T) / (1 + 1j * cr.omega * cr.T)
            assert lhs == pytest.approx(rhs, abs=1e-10)


def newton_root(q, s, tau, iters=50):
    for _ in range(iters):
        h = 1e-7 * max(1.0, abs(s))
        ds = (q(s + h, tau) - q(s - h, tau)) / (2 * h)
        step = q(s, tau) / ds
        s = s - step
        if abs(step) < 1e-14 * max(1.0, abs(s)):
            break
    return s


@pytest.mark.parametrize("plant,c1", [(UNSTABLE, 1.0), (UNSTABLE, 0.6), (POCKETS, 1.0), (POCKETS, 0.5), (STABLE, 0.3)])
def test_root_tendency_by_root_tracking(plant, c1):
    for cr in crossing_set(plant, c1):
        tend = root_tendency(plant, c1, cr.omega, cr.T)
        for tau in delays_for_crossing(cr.omega, cr.T, 6.0)[:3]:
            q = build_ceq(plant, WaveChannel.from_delay(c1, tau), reduced=True)
            eps = 1e-5 * tau
            s_plus = newton_root(q, 1j * cr.omega, tau + eps)
            s_minus = newton_root(q, 1j * cr.omega, tau - eps)
            assert abs(q(1j * cr.omega, tau)) < 1e-8 * max(1, abs(cr.omega)) ** 4
            assert np.sign(s_plus.real - s_minus.real) == tend


@settings(max_examples=15)
@given(st.sampled_from([UNSTABLE, POCKETS, STABLE]), st.floats(0.2, 2.0))
def test_resultant_agrees_with_frequency_sweep(plant, c1):
    res = crossing_set(plant, c1)
    sw = sweep_crossings(plant, c1)
    assert len(res) == len(sw)
    for cr, (w, tau0) in zip(sorted(res, key=lambda c: c.omega), sorted(sw)):
        assert cr.omega == pytest.approx(w, rel=1e-7)
        assert delays_for_crossing(cr.omega, cr.T, 4 * math.pi / cr.omega)[0] == pytest.approx(tau0, rel=1e-6)


def test_intervals_for_examples():
    acc = stable_intervals(UNSTABLE, 1.0, 3.0)
    assert acc.nu_at_zero == 2
    ((lo, hi),) = acc.stable_intervals
    assert lo == pytest.approx(0.100168, abs=1e-5) and hi == pytest.approx(1.717858, abs=1e-5)
    assert not acc.is_stable(0.05) and acc.is_stable(1.0) and not acc.is_stable(2.5)

    acc = stable_intervals(POCKETS, 1.0, 5.0)
    assert len(acc.stable_intervals) >= 2

    acc = stable_intervals(STABLE, 2.0, 10.0)
    assert acc.events == () and acc.stable_intervals == [(0.0, 10.0)]
    acc = stable_intervals(STABLE, 0.3, 10.0)
    assert acc.stable_intervals[0][1] == pytest.approx(0.5901, abs=1e-4)


def test_counts_change_by_two():
    for plant in (UNSTABLE, POCKETS):
        acc = stable_intervals(plant, 0.7, 8.0)
        counts = [k for _, _, k in acc.intervals]
        assert all(k >= 0 and k % 2 == 0 for k in counts)
        assert all(abs(a - b) % 2 == 0 for a, b in zip(counts, counts[1:]))
        assert acc.intervals[0][0] == 0.0 and acc.intervals[-1][1] == 8.0
