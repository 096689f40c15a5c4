"""Exact delay-interval stability by imaginary-axis crossing enumeration.

For a fixed ``c1 = c c0`` the characteristic quasipolynomial

    (1 + c1) D(s) - 2 N(s) e^{-tau s} + (1 - c1) D(s) e^{-2 tau s}

has delay-independent coefficients.  The substitution
``e^{-tau s} = (1 - T s) / (1 + T s)``, exact on ``s = i w``, turns it into
the polynomial

    cbar(s, T) = (1 + 2 c1 T s + T^2 s^2) D(s) - N(s) (1 - T^2 s^2)

(half the cleared quasipolynomial).  Its imaginary roots are found by
eliminating ``T`` between the real and imaginary parts with a resultant.
Each crossing has a delay-invariant direction, so the number of right
half-plane roots is tracked from ``tau = 0`` through the sorted crossing
delays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import DegenerateFamily, DegenerateTendency, MarginalAtZero, WavestabError
from .model import LtiPlant
from .transfer import RationalTf, plant_tf, quasi_polynomial

MERGE_RTOL = 1e-6
RESIDUAL_RTOL = 1e-8
TENDENCY_RTOL = 1e-9
AXIS_TOL = 1e-9
DELAY_MERGE_TOL = 1e-9


def reduced_tf(obj) -> RationalTf:
    """Plant (or transfer function) with common pole/zero factors removed."""
    tf = plant_tf(obj) if isinstance(obj, LtiPlant) else obj
    return tf.cancel()[0]


@dataclass(frozen=True)
class TransformedPoly:
    """``cbar(s, T) = sum_k sum_j coef[k, j] s^k T^j`` with ``j <= 2``."""

    coef: np.ndarray
    c1: float

    @property
    def degree(self) -> int:
        return self.coef.shape[0] - 1

    def b(self, T: float) -> np.ndarray:
        """Coefficients ``b_k(T)`` of the polynomial in ``s``."""
        return self.coef @ np.array([1.0, T, T * T])

    def __call__(self, s, T):
        s = np.asarray(s, dtype=complex)
        return P.polyval(s, self.b(T))

    def ds(self, s, T):
        return P.polyval(s, P.polyder(self.b(T)))

    def dT(self, s, T):
        return P.polyval(s, self.coef @ np.array([0.0, 1.0, 2.0 * T]))

    def scale(self, s, T) -> float:
        """Magnitude sum of the terms, the yardstick for residuals."""
        return float(np.sum(np.abs(self.coef @ np.abs([1.0, T, T * T])) * np.abs(s) ** np.arange(self.degree + 1)))


def transformed_poly(plant, c1: float) -> TransformedPoly:
    tf = reduced_tf(plant)
    D, N = tf.den, tf.num
    deg = len(D) + 1
    coef = np.zeros((deg + 1, 3))
    t0 = P.polysub(D, N)
    t1 = 2.0 * c1 * P.polymulx(D)
    t2 = P.polymulx(P.polymulx(P.polyadd(D, N)))
    for j, t in enumerate((t0, t1, t2)):
        coef[: len(t), j] = t
    return TransformedPoly(coef, float(c1))


def _axis_parts(tp: TransformedPoly):
    """Real part ``R(x, T)`` and ``Im/w`` part ``I(x, T)`` with ``x = w^2``.

    Returns two lists ``[p_0, p_1, p_2]`` of ascending polynomials in ``x``
    such that ``R = sum_j p_j(x) T^j``.
    """
    coef = tp.coef / np.max(np.abs(tp.coef))
    re = [np.zeros(1)] * 3
    im = [np.zeros(1)] * 3
    for j in range(3):
        ev = coef[0::2, j] * (-1.0) ** np.arange(len(coef[0::2]))
        od = coef[1::2, j] * (-1.0) ** np.arange(len(coef[1::2]))
        re[j], im[j] = ev, od
    return re, im


def _resultant(re, im) -> np.ndarray:
    r0, r1, r2 = re
    i0, i1, i2 = im
    a = P.polysub(P.polymul(r2, i0), P.polymul(r0, i2))
    b = P.polysub(P.polymul(r2, i1), P.polymul(r1, i2))
    c = P.polysub(P.polymul(r1, i0), P.polymul(r0, i1))
    return P.polysub(P.polymul(a, a), P.polymul(b, c))


def _solve_T(re, im, x):
    """Real ``T`` values (possibly ``inf``) shared by ``R(x, .)`` and ``I(x, .)``."""
    rv = [P.polyval(x, p) for p in re]
    iv = [P.polyval(x, p) for p in im]
    scale = max(max(abs(v) for v in rv), max(abs(v) for v in iv), 1e-300)
    cands = []
    if abs(rv[2]) <= 1e-9 * scale and abs(iv[2]) <= 1e-9 * scale:
        cands.append(math.inf)
    for coeffs in (rv, iv):
        c = np.array(coeffs)
        if np.max(np.abs(c)) <= 1e-12 * scale:
            continue
        for t in P.polyroots(np.trim_zeros(c, "b")) if np.any(c[1:]) else []:
            if abs(t.imag) <= 1e-6 * max(1.0, abs(t)):
                cands.append(float(t.real))
    return cands


@dataclass(frozen=True)
class Crossing:
    omega: float
    T: float


def _polish(tp: TransformedPoly, omega: float, T: float, iters: int = 30):
    """Newton refinement of ``cbar(i w, T) = 0`` in the two real unknowns."""
    if not math.isfinite(T):
        return omega, T
    for _ in range(iters):
        s = 1j * omega
        g = tp(s, T)
        gw = 1j * tp.ds(s, T)
        gT = tp.dT(s, T)
        J = np.array([[gw.real, gT.real], [gw.imag, gT.imag]])
        try:
            step = np.linalg.solve(J, [-g.real, -g.imag])
        except np.linalg.LinAlgError:
            break
        omega, T = omega + step[0], T + step[1]
        if abs(step[0]) <= 1e-15 * max(1.0, abs(omega)) and abs(step[1]) <= 1e-15 * max(1.0, abs(T)):
            break
    return float(omega), float(T)


def _infinite_T_residual(tp: TransformedPoly, omega: float) -> float:
    # cbar / T^2 -> s^2 (D + N) as T -> inf
    s = 1j * omega
    lead = tp.coef[:, 2]
    return abs(P.polyval(s, lead)) / max(np.sum(np.abs(lead) * omega ** np.arange(len(lead))), 1e-300)


def crossing_set(plant, c1: float) -> list[Crossing]:
    """All ``(w > 0, T real)`` with ``cbar(i w, T) = 0``, sorted by ``w``."""
    tp = transformed_poly(plant, c1)
    re, im = _axis_parts(tp)
    res = _resultant(re, im)
    if not np.any(np.abs(res) > 1e-13 * max(1.0, np.max(np.abs(np.concatenate(re + im))))):
        raise DegenerateFamily(f"resultant vanishes identically for c1={c1!r}")
    res = np.trim_zeros(res / np.max(np.abs(res)), "b")
    if len(res) < 2:
        return []
    xs = [x.real for x in P.polyroots(res) if x.real > 0 and abs(x.imag) <= 1e-5 * (1.0 + abs(x))]
    found: list[Crossing] = []
    for x in sorted(xs):
        omega0 = math.sqrt(x)
        for T0 in _solve_T(re, im, x):
            omega, T = _polish(tp, omega0, T0)
            if omega <= 0:
                continue
            if math.isfinite(T):
                resid = abs(tp(1j * omega, T)) / tp.scale(1j * omega, T)
            else:
                resid = _infinite_T_residual(tp, omega)
            if resid > RESIDUAL_RTOL:
                continue
            dup = any(
                abs(cr.omega - omega) <= MERGE_RTOL * max(1.0, omega)
                and (cr.T == T or abs(cr.T - T) <= MERGE_RTOL * max(1.0, abs(T)))
                for cr in found
            )
            if not dup:
                found.append(Crossing(omega, T))
    return sorted(found, key=lambda cr: (cr.omega, cr.T))


def delays_for_crossing(omega: float, T: float, tau_max: float) -> list[float]:
    """Delays ``tau in (0, tau_max]`` with ``e^{-i w tau} = (1 - i w T)/(1 + i w T)``."""
    base = math.pi / 2 if T == math.inf else (-math.pi / 2 if T == -math.inf else math.atan(omega * T))
    period = 2.0 * math.pi / omega
    out = []
    ell = 0
    while True:
        tau = 2.0 / omega * (base + ell * math.pi)
        if tau > tau_max:
            break
        if tau > 0:
            out.append(tau)
        ell += 1
    assert all(abs((b - a) - period) <= 1e-9 * period for a, b in zip(out, out[1:]))
    return out


def tendency_value(plant, c1: float, omega: float, tau: float) -> complex:
    """``ds/dtau`` at the imaginary root ``s = i w`` for delay ``tau``."""
    qp = quasi_polynomial(reduced_tf(plant), c1, tau)
    s = 1j * omega
    (a0, a1, a2), (d0, d1, d2) = qp.coefficients(s)
    z = np.exp(-tau * s)
    num = s * (a1 * z + 2.0 * a2 * z * z)
    den = d0 + (d1 - tau * a1) * z + (d2 - 2.0 * tau * a2) * z * z
    return complex(num / den)


def root_tendency(plant, c1: float, omega: float, T: float, checks: int = 2) -> int:
    """Sign of ``Re ds/dtau`` at the crossing: ``+1`` destabilizing, ``-1`` stabilizing.

    Evaluated at the first delay of the crossing and confirmed at the next
    ``checks`` delays; raises :class:`DegenerateTendency` when the real
    part is negligible.
    """
    first = delays_for_crossing(omega, T, 2.0 * math.pi / omega * 1.5)[0]
    signs = []
    for ell in range(checks + 1):
        tau = first + ell * 2.0 * math.pi / omega
        v = tendency_value(plant, c1, omega, tau)
        if abs(v.real) <= TENDENCY_RTOL * abs(v) or not np.isfinite(v):
            raise DegenerateTendency(omega, T)
        signs.append(1 if v.real > 0 else -1)
    if len(set(signs)) != 1:
        raise WavestabError(f"root tendency changes sign across delays at omega={omega!r}, T={T!r}")
    return signs[0]


def count_unstable_at_zero(plant, c1: float | None = None) -> int:
    """Right half-plane roots of ``D - N`` (the zero-delay closed loop)."""
    tf = reduced_tf(plant)
    poly = P.polysub(tf.den, tf.num)
    roots = P.polyroots(np.trim_zeros(poly, "b")) if len(np.trim_zeros(poly, "b")) > 1 else np.array([])
    if np.any(np.abs(roots.real) <= AXIS_TOL):
        raise MarginalAtZero(f"zero-delay characteristic root on the imaginary axis: {roots}")
    return int(np.sum(roots.real > 0))


@dataclass(frozen=True)
class CrossingEvent:
    omega: float
    T: float
    tendency: int
    delays: tuple

    def to_dict(self) -> dict:
        return {"omega": self.omega, "T": self.T, "tendency": self.tendency, "delays": list(self.delays)}


@dataclass(frozen=True)
class StabilityAccount:
    """Unstable-root count along the delay axis for one ``c1``."""

    c1: float
    tau_max: float
    nu_at_zero: int
    events: tuple
    intervals: tuple  # (tau_lo, tau_hi, unstable_count)
    cancelled: tuple = field(default=())

    @property
    def stable_intervals(self) -> list[tuple]:
        return [(lo, hi) for lo, hi, k in self.intervals if k == 0]

    @property
    def crossing_delays(self) -> list[float]:
        return [lo for lo, _, _ in self.intervals[1:]]

    def count_at(self, tau: float) -> int:
        for lo, hi, k in self.intervals:
            if lo <= tau <= hi:
                return k
        raise ValueError(f"tau={tau!r} outside (0, {self.tau_max!r}]")

    def is_stable(self, tau: float) -> bool:
        return self.count_at(tau) == 0

    def distance_to_crossing(self, tau: float) -> float:
        ds = self.crossing_delays
        return min((abs(tau - d) for d in ds), default=math.inf)

    def to_dict(self) -> dict:
        return {
            "c1": self.c1,
            "tau_max": self.tau_max,
            "nu_at_zero": self.nu_at_zero,
            "events": [e.to_dict() for e in self.events],
            "intervals": [list(iv) for iv in self.intervals],
            "stable_intervals": [list(iv) for iv in self.stable_intervals],
            "cancelled_roots": [[z.real, z.imag] for z in self.cancelled],
        }


def account_from_events(nu0: int, events, tau_max: float) -> list[tuple]:
    """Walk the sorted crossing delays and return ``(lo, hi, count)`` intervals."""
    steps = sorted((tau, 2 * ev.tendency) for ev in events for tau in ev.delays)
    merged: list[list] = []
    for tau, inc in steps:
        if merged and tau - merged[-1][0] <= DELAY_MERGE_TOL * max(1.0, tau):
            merged[-1][1] += inc
        else:
            merged.append([tau, inc])
    intervals = []
    lo, count = 0.0, nu0
    for tau, inc in merged:
        intervals.append((lo, tau, count))
        lo, count = tau, count + inc
        if count < 0:
            raise WavestabError(f"unstable root count became negative at tau={tau!r}")
    intervals.append((lo, tau_max, count))
    return intervals


def stable_intervals(plant, c1: float, tau_max: float) -> StabilityAccount:
    """Full crossing account for the family ``c0 = c1 tau`` on ``(0, tau_max]``."""
    if c1 <= 0:
        raise WavestabError("c1 must be positive (c0 = 0 is not small-delay stabilizable)")
    tf_full = plant_tf(plant) if isinstance(plant, LtiPlant) else plant
    tf, cancelled = tf_full.cancel()
    nu0 = count_unstable_at_zero(tf)
    events = []
    for cr in crossing_set(tf, c1):
        tend = root_tendency(tf, c1, cr.omega, cr.T)
        events.append(CrossingEvent(cr.omega, cr.T, tend, tuple(delays_for_crossing(cr.omega, cr.T, tau_max))))
    intervals = account_from_events(nu0, events, tau_max)
    return StabilityAccount(float(c1), float(tau_max), nu0, tuple(events), tuple(intervals), tuple(cancelled))


def _sweep_values(ws, a0p, a1p, a2p) -> np.ndarray:
    """Vectorised ``prod log|z_j(w)|`` over the roots of the quadratic in ``z``."""
    s = 1j * ws
    a0, a1, a2 = P.polyval(s, a0p), P.polyval(s, a1p), P.polyval(s, a2p)
    with np.errstate(divide="ignore", invalid="ignore"):
        if not np.any(a2p):
            return np.log(np.abs(a0 / a1))
        disc = np.sqrt(a1 * a1 - 4.0 * a0 * a2)
        # pick the sign avoiding cancellation, then use Vieta for the other root
        q = -0.5 * (a1 + np.where((np.conj(a1) * disc).real >= 0, disc, -disc))
        z1, z2 = q / a2, a0 / q
        return np.log(np.abs(z1)) * np.log(np.abs(z2))


def sweep_crossings(plant, c1: float, samples: int = 20000, omega_max: float | None = None) -> list[tuple]:
    """Crossing pairs ``(w, tau_0)`` by a direct frequency sweep.

    Independent of the substitution and the resultant: at each ``w`` the
    quasipolynomial is a quadratic in ``z = e^{-i w tau}``; a crossing
    exists where one of its roots has unit modulus.  ``tau_0`` is the
    smallest positive delay producing it.
    """
    tf = reduced_tf(plant)
    a0p, a1p, a2p = (1.0 + c1) * tf.den, -2.0 * tf.num, (1.0 - c1) * tf.den

    def roots(w):
        s = 1j * w
        a0, a1, a2 = P.polyval(s, a0p), P.polyval(s, a1p), P.polyval(s, a2p)
        if abs(a2) <= 1e-14 * max(abs(a0), 1.0):
            return np.array([-a0 / a1]) if a1 != 0 else np.array([np.inf])
        return np.roots([a2, a1, a0])

    def g(w):
        return float(np.prod(np.log(np.abs(roots(w)))))

    if omega_max is None:
        omega_max = 1.0
        for w in np.geomspace(1.0, 1e6, 2000):
            s = 1j * w
            lhs = ((1.0 + c1) - abs(1.0 - c1)) * abs(P.polyval(s, tf.den))
            if lhs <= 2.0 * abs(P.polyval(s, tf.num)):
                omega_max = w
        omega_max *= 1.5
    ws = np.linspace(0.0, omega_max, samples + 1)[1:]
    vals = _sweep_values(ws, a0p, a1p, a2p)
    out = []
    for k in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
        lo, hi = ws[k], ws[k + 1]
        glo = vals[k]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            gm = g(mid)
            if np.sign(gm) == np.sign(glo):
                lo, glo = mid, gm
            else:
                hi = mid
            if hi - lo <= 1e-15 * hi:
                break
        w = 0.5 * (lo + hi)
        z = min(roots(w), key=lambda r: abs(abs(r) - 1.0))
        tau0 = (-np.angle(z)) % (2.0 * math.pi) / w
        if tau0 == 0.0:
            tau0 = 2.0 * math.pi / w
        out.append((float(w), float(tau0)))
    return out
