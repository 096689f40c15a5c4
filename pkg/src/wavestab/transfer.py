"""Transfer functions of the plant, the string and the closed loop.

Polynomials are stored as coefficient arrays in ascending degree order
everywhere in the package (``p[k]`` multiplies ``s**k``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import NoChannelPoles, PoleEvaluationError
from .model import LtiPlant, WaveChannel

log = logging.getLogger(__name__)

CANCEL_TOL = 1e-7
POLE_TOL = 1e-14
_COEF_RTOL = 1e-13


def _trim(p: np.ndarray) -> np.ndarray:
    """Drop trailing zero coefficients, keeping at least one entry."""
    p = np.asarray(p, dtype=float)
    nz = np.flatnonzero(p)
    if nz.size == 0:
        return np.zeros(1)
    return p[: nz[-1] + 1].copy()


def _real_poly_from_roots(roots) -> np.ndarray:
    return np.real(np.poly(np.asarray(roots)))[::-1].copy() if len(roots) else np.ones(1)


@dataclass(frozen=True)
class RationalTf:
    """``N(s) / D(s)`` with ``deg N < deg D``."""

    num: np.ndarray
    den: np.ndarray

    @property
    def order(self) -> int:
        return len(self.den) - 1

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        return P.polyval(s, self.num) / P.polyval(s, self.den)

    def cancel(self, tol: float = CANCEL_TOL):
        """Remove common roots of ``N`` and ``D``.

        Returns the reduced transfer function and the list of cancelled
        roots.  With ``N = 0`` nothing is cancelled.
        """
        num, den = _trim(self.num), _trim(self.den)
        if not np.any(num) or len(num) == 1:
            return RationalTf(num, den), []
        droots = list(P.polyroots(den))
        nroots = list(P.polyroots(num))
        cancelled = []
        for r in sorted(nroots, key=lambda z: (z.real, abs(z.imag))):
            if r.imag < -tol:
                continue  # handled with its conjugate
            match = [d for d in droots if abs(d - r) <= tol]
            if not match:
                continue
            d = match[0]
            if abs(r.imag) > tol:
                factor = np.array([abs(r) ** 2, -2.0 * r.real, 1.0])
                conj = [z for z in droots if abs(z - np.conj(d)) <= tol and z is not d]
                if not conj:
                    continue
                droots.remove(d)
                droots.remove(conj[0])
                cancelled += [complex(r), complex(np.conj(r))]
            else:
                factor = np.array([-r.real, 1.0])
                droots.remove(d)
                cancelled.append(complex(r.real, 0.0))
            num = _trim(P.polydiv(num, factor)[0])
            den = _trim(P.polydiv(den, factor)[0])
        if cancelled:
            log.info("cancelled common pole/zero pairs at %s", cancelled)
        return RationalTf(num, den), cancelled


def plant_tf(plant: LtiPlant) -> RationalTf:
    """``K (sI - A)^{-1} B`` as ``N/D``.

    ``D`` is the characteristic polynomial of ``A``.  ``N`` follows from
    ``det(sI - A - BK) = D(s) (1 - H(s))``, i.e. ``N = D - charpoly(A + BK)``,
    so both come from eigenvalue computations.
    """
    n = plant.n
    den = _real_poly_from_roots(np.linalg.eigvals(plant.A))
    closed = _real_poly_from_roots(np.linalg.eigvals(plant.closed_loop()))
    num = den - closed
    num[n] = 0.0  # both are monic of degree n
    scale = max(np.max(np.abs(den)), np.max(np.abs(closed)))
    num[np.abs(num) <= _COEF_RTOL * scale] = 0.0
    num = _trim(num[:n]) if n else np.zeros(1)
    den[np.abs(den) <= _COEF_RTOL * np.max(np.abs(den))] = 0.0
    return RationalTf(num, den)


def wave_tf(x: float, s: complex, channel: WaveChannel) -> complex:
    """Transfer ``U(x, s) / U(0, s)`` of the damped string."""
    a, c = channel.alpha, channel.c
    den = 1.0 + a * np.exp(-2.0 * s / c)
    if abs(den) < POLE_TOL:
        raise PoleEvaluationError(s)
    return complex((np.exp(-s / c * x) + a * np.exp(s / c * (x - 2.0))) / den)


def wave_tf_boundary(s: complex, channel: WaveChannel) -> complex:
    """``W(1, s)`` written with ``c c0``; independent of the ``alpha`` form."""
    c1, c = channel.c1, channel.c
    den = (1.0 + c1) + (1.0 - c1) * np.exp(-2.0 * s / c)
    if abs(den) < POLE_TOL:
        raise PoleEvaluationError(s)
    return complex(2.0 * np.exp(-s / c) / den)


def wave_pole_abscissa(channel: WaveChannel) -> float:
    a = channel.alpha
    if a == 0.0:
        raise NoChannelPoles("alpha = 0: the string acts as a pure delay")
    if a == 1.0:
        return 0.0
    return 0.5 * channel.c * math.log(abs(a))


def wave_hinf(channel: WaveChannel) -> float:
    """``sup_w |W(1, iw)| = max(1/(c c0), 1)`` (infinite when ``c0 = 0``)."""
    c1 = channel.c1
    return math.inf if c1 == 0 else max(1.0 / c1, 1.0)


@dataclass(frozen=True)
class QuasiPolynomial:
    """``a0(s) + a1(s) e^{-tau s} + a2(s) e^{-2 tau s}``."""

    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    tau: float

    def __call__(self, s, tau=None):
        tau = self.tau if tau is None else tau
        s = np.asarray(s, dtype=complex)
        z = np.exp(-tau * s)
        return P.polyval(s, self.a0) + P.polyval(s, self.a1) * z + P.polyval(s, self.a2) * z * z

    def coefficients(self, s):
        """Values of ``a0, a1, a2`` and their ``s``-derivatives at ``s``."""
        vals = [P.polyval(s, a) for a in (self.a0, self.a1, self.a2)]
        ders = [P.polyval(s, P.polyder(a)) for a in (self.a0, self.a1, self.a2)]
        return vals, ders


def quasi_polynomial(tf: RationalTf, c1: float, tau: float) -> QuasiPolynomial:
    a0 = (1.0 + c1) * tf.den
    a1 = -2.0 * tf.num
    a2 = (1.0 - c1) * tf.den
    if c1 == 1.0:
        a2 = np.zeros(1)
    return QuasiPolynomial(a0, a1, a2, tau)


def build_ceq(plant: LtiPlant, channel: WaveChannel, reduced: bool = False) -> QuasiPolynomial:
    """Characteristic quasipolynomial of the closed loop.

    With ``reduced=True`` common pole/zero factors of the plant are removed
    first; the zero sets then differ only by those (delay-independent) roots.
    """
    tf = plant_tf(plant)
    if reduced:
        tf, _ = tf.cancel()
    return quasi_polynomial(tf, channel.c1, channel.tau)


def closed_loop_tf(s: complex, plant: LtiPlant, channel: WaveChannel) -> complex:
    """``F(s) = H / (1 - H W)``, the map from the reference to ``Y = K X``."""
    tf = plant_tf(plant)
    h = tf(s)
    return complex(h / (1.0 - h * wave_tf(1.0, s, channel)))
