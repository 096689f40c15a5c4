import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from wavestab.errors import GateError
from wavestab.model import WaveChannel
from wavestab.qs import (
    QsVerdict,
    SeparatorParams,
    _delta_quadrature,
    _delta_recurrence,
    assemble_matrices,
    assemble_problem,
    build_lmi,
    delta_N,
    legendre_bundle,
    lmi_margin,
    nabla,
    qs_feasible,
    separator_form,
    separator_negativity_check,
    shifted_legendre,
    shifted_legendre_derivative,
)
from wavestab.systems import POCKETS, STABLE, UNSTABLE


def order_zero_reference(plant):
    """Order-0 descriptor matrices written out block by block."""
    n = plant.n
    K = plant.K
    E = np.zeros((n + 4, n + 3))
    E[:n, :n] = np.eye(n)
    E[n, n] = 1
    E[n + 1, n + 1] = 1
    E[n + 2, :n] = -K
    E[n + 2, n + 2] = 1
    E[n + 3, n] = 1
    E[n + 3, n + 1] = -1
    A = np.zeros((n + 4, n + 3))
    A[:n, :n] = plant.A
    A[:n, n + 1] = plant.B[:, 0]
    A[n, :n] = K
    A[n + 1, n] = 1
    A[n + 3, n + 2] = 1
    return E, A


@pytest.mark.parametrize("plant", [STABLE, UNSTABLE, POCKETS])
def test_order_zero_matches_reference(plant):
    E, A = assemble_matrices(0, plant, WaveChannel.from_delay(0.7, 1.3))
    Er, Ar = order_zero_reference(plant)
    assert np.array_equal(E, Er) and np.array_equal(A, Ar)


@pytest.mark.parametrize("N", [0, 1, 3])
def test_shapes_and_kernel(N):
    ch = WaveChannel.from_delay(1.0, 1.0)
    pr = assemble_problem(N, POCKETS, ch)
    n = POCKETS.n
    assert pr.E.shape == (n + 2 * N + 4, n + N + 3)
    assert pr.A.shape == (n + 2 * N + 4, n + 2 * N + 3)
    assert np.allclose(pr.kernel @ pr.V, 0, atol=1e-10)
    assert np.allclose(pr.V.T @ pr.V, np.eye(pr.V.shape[1]), atol=1e-10)
    assert np.linalg.matrix_rank(pr.E) == pr.E.shape[1]


@pytest.mark.parametrize("N", [0, 2, 4])
def test_loop_identity_on_kernel(N):
    """E z = A Nabla(s) z must hold for the true signals; check it via the closed-loop solve."""
    ch = WaveChannel.from_delay(0.8, 0.9)
    E, A = assemble_matrices(N, UNSTABLE, ch)
    s = 0.3 + 0.8j
    M = E - A @ nabla(s, UNSTABLE.n, N, ch)
    # away from characteristic roots the only solution is z = 0
    assert np.linalg.matrix_rank(M) == M.shape[1]


def test_legendre_basis_properties():
    tau = 1.7
    for k in range(6):
        assert shifted_legendre(k, 0.0, tau) == pytest.approx(1.0)
        assert shifted_legendre(k, -tau, tau) == pytest.approx((-1) ** k)
        for j in range(6):
            val, _ = quad(lambda t: shifted_legendre(k, t, tau) * shifted_legendre(j, t, tau), -tau, 0)
            assert val == pytest.approx(tau / (2 * k + 1) if j == k else 0.0, abs=1e-10)
    # derivative matrix: L_k' = sum_i L[k, i] L_i
    N = 6
    b = legendre_bundle(N, tau)
    th = np.linspace(-tau, 0, 9)
    for k in range(N + 1):
        lhs = shifted_legendre_derivative(k, th, tau)
        rhs = sum(b.L[k, i] * shifted_legendre(i, th, tau) for i in range(N + 1))
        assert np.allclose(lhs, rhs, atol=1e-9)


def test_delta_order_zero_closed_form():
    for s in (0.3 + 2j, 5j, 40 + 0.1j, 1e-3j):
        tau = 0.8
        assert delta_N(s, tau, 0)[0] == pytest.approx((1 - np.exp(-tau * s)) / s, rel=1e-10)


@given(st.floats(-50, 50), st.floats(0.05, 5), st.integers(0, 7))
def test_delta_by_adaptive_quadrature(w, tau, N):
    s = complex(0.1, w)
    got = delta_N(s, tau, N)
    for k in (0, N):
        re, _ = quad(lambda t: (np.exp(t * s) * shifted_legendre(k, t, tau)).real, -tau, 0, limit=400)
        im, _ = quad(lambda t: (np.exp(t * s) * shifted_legendre(k, t, tau)).imag, -tau, 0, limit=400)
        assert got[k] == pytest.approx(math.sqrt(2 * k + 1) * complex(re, im), abs=1e-8 * tau)


def test_quadrature_and_recurrence_agree_in_overlap():
    for N in (0, 3, 7):
        for s in (70j, 120 + 5j, 300j):
            a, b = _delta_quadrature(s, 1.0, N), _delta_recurrence(s, 1.0, N)
            assert np.allclose(a, b, atol=1e-10)


@settings(max_examples=30)
@given(st.floats(0, 1e3), st.floats(0.01, 10), st.integers(0, 7), st.floats(0, 5))
def test_bessel_bound_in_closed_right_half_plane(w, tau, N, sigma):
    d = delta_N(complex(sigma, w), tau, N)
    assert tau**2 - np.vdot(d, d).real >= -1e-12 * max(1.0, tau**2)


def random_params(rng, m):
    M = rng.normal(size=(m, m))
    return SeparatorParams(M @ M.T, *rng.uniform(0, 2, size=3))


@pytest.mark.parametrize("N", [0, 2])
def test_separator_negative_inside_half_plane(N):
    rng = np.random.default_rng(5)
    ch = WaveChannel.from_delay(0.6, 1.1)
    for _ in range(5):
        p = random_params(rng, UNSTABLE.n + N)
        assert separator_negativity_check(N, ch, p, sample_count=200)
        s = complex(rng.uniform(0.01, 3), rng.uniform(-5, 5))
        assert np.linalg.eigvalsh(separator_form(s, N, ch, p))[-1] <= 1e-8


def test_negativity_check_detects_bad_sign():
    ch = WaveChannel.from_delay(0.6, 1.1)
    p = SeparatorParams(np.eye(2), -1.0, 0.0, 0.0)
    assert not separator_negativity_check(0, ch, p, sample_count=100)


def test_stable_example_order_zero(backend):
    r = qs_feasible(0, STABLE, WaveChannel(2.0, 1.0), backend)
    assert r.verdict is QsVerdict.STABLE
    w = r.witness
    assert np.linalg.eigvalsh(w.P)[0] > 0 and min(w.Q, w.R, w.S) >= -1e-9
    assert lmi_margin(assemble_problem(0, STABLE, WaveChannel(2.0, 1.0)), w) > 0
    assert separator_negativity_check(0, WaveChannel(2.0, 1.0), w)


def test_unstable_example_orders(backend):
    inside = WaveChannel.from_delay(1.0, 1.0)  # within the exact stability interval
    assert qs_feasible(0, UNSTABLE, inside, backend).verdict is QsVerdict.UNKNOWN
    assert qs_feasible(2, UNSTABLE, inside, backend).verdict is QsVerdict.STABLE
    outside = WaveChannel.from_delay(1.0, 3.0)
    for N in range(4):
        assert qs_feasible(N, UNSTABLE, outside, backend).verdict is QsVerdict.UNKNOWN


def test_gate_and_failures(backend):
    r = qs_feasible(0, STABLE, WaveChannel(2.0, 0.0), backend)
    assert r.verdict is QsVerdict.UNKNOWN and "gate" in r.status
    with pytest.raises(GateError):
        assemble_problem(0, STABLE, WaveChannel(2.0, 0.0))

    class Broken:
        name = "broken"

        def solve(self, problem):
            raise RuntimeError("boom")

    assert qs_feasible(0, STABLE, WaveChannel(2.0, 1.0), Broken()).verdict is QsVerdict.UNKNOWN


def test_lmi_variables_decode():
    pr = assemble_problem(1, POCKETS, WaveChannel.from_delay(1.0, 1.0))
    lp, decode = build_lmi(pr)
    m = POCKETS.n + 1
    assert lp.nvars == m * (m + 1) // 2 + 4
    x = np.arange(lp.nvars, dtype=float)
    p = decode(x)
    assert np.array_equal(p.P, p.P.T) and (p.Q, p.R, p.S) == (x[-4], x[-3], x[-2])
