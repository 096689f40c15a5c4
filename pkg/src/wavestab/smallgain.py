"""Small-gain stability test and H-infinity norm of the plant."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import GateError, NotHurwitz
from .model import CoupledSystem, LtiPlant, require_stabilizable
from .transfer import wave_hinf

HURWITZ_MARGIN = 1e-10
AXIS_RTOL = 1e-8


@dataclass(frozen=True)
class HinfResult:
    norm: float
    peak_frequency: float
    iterations: int


def _gain(plant: LtiPlant, w: np.ndarray) -> np.ndarray:
    n = plant.n
    I = np.eye(n)
    out = np.empty(len(w))
    for k, wk in enumerate(w):
        x = np.linalg.solve(1j * wk * I - plant.A, plant.B[:, 0])
        out[k] = abs(plant.K[0] @ x)
    return out


def _imaginary_eigs(plant: LtiPlant, gamma: float) -> np.ndarray:
    """Imaginary-axis eigenvalue frequencies of the Hamiltonian at level ``gamma``."""
    A, B, K = plant.A, plant.B, plant.K
    H = np.block([[A, B @ B.T / gamma], [-K.T @ K / gamma, -A.T]])
    ev = np.linalg.eigvals(H)
    tol = AXIS_RTOL * max(np.linalg.norm(H, 2), 1.0)
    return np.sort(np.abs(ev[np.abs(ev.real) <= tol].imag))


def hinf_norm(plant: LtiPlant, rtol: float = 1e-6) -> HinfResult:
    """``max_w |K (iw - A)^{-1} B|`` by Hamiltonian bisection.

    ``gamma`` exceeds the norm iff the Hamiltonian
    ``[[A, B B^T / gamma], [-K^T K / gamma, -A^T]]`` has no imaginary
    eigenvalue.  The bracket starts from a log-spaced frequency sweep.
    """
    eig = np.linalg.eigvals(plant.A)
    if np.any(eig.real >= -HURWITZ_MARGIN):
        raise NotHurwitz(f"A has eigenvalues {eig} (not Hurwitz)")
    if not np.any(plant.K) or not np.any(plant.B):
        return HinfResult(0.0, 0.0, 0)
    scale = max(np.max(np.abs(eig)), 1e-3)
    w = np.concatenate([[0.0], np.geomspace(1e-4 * scale, 1e4 * scale, 1999)])
    g = _gain(plant, w)
    k = int(np.argmax(g))
    lo, peak = float(g[k]), float(w[k])
    hi = 2.0 * lo + 1e-300
    while _imaginary_eigs(plant, hi).size:
        hi *= 2.0
    it = 0
    while hi - lo > 0.5 * rtol * lo:
        it += 1
        mid = 0.5 * (lo + hi)
        freqs = _imaginary_eigs(plant, mid)
        if freqs.size:
            lo = mid
            # the gain at the Hamiltonian crossing frequencies sharpens the bound
            gains = _gain(plant, freqs)
            j = int(np.argmax(gains))
            if gains[j] > lo:
                lo, peak = float(gains[j]), float(freqs[j])
            if len(freqs) >= 2:
                centre = 0.5 * (freqs[0] + freqs[-1])
                gc = _gain(plant, np.array([centre]))[0]
                if gc > lo:
                    lo, peak = float(gc), float(centre)
        else:
            hi = mid
        if it > 200:
            break
    # refine the peak location on a local grid around the current estimate
    span = max(peak, 1e-3 * scale)
    local = np.linspace(max(0.0, peak - span), peak + span, 2001)
    gl = _gain(plant, local)
    j = int(np.argmax(gl))
    if gl[j] >= _gain(plant, np.array([peak]))[0]:
        peak = float(local[j])
    return HinfResult(float(hi), peak, it)


class SmallGainVerdict(enum.Enum):
    STABLE = "stable"
    INCONCLUSIVE = "inconclusive"
    INAPPLICABLE = "inapplicable"


def small_gain_verdict(sys: CoupledSystem, hinf: HinfResult | None = None) -> SmallGainVerdict:
    """Small-gain verdict for one channel point.

    Requires ``A`` Hurwitz with ``||H||_inf < 1``; then the loop is stable
    whenever ``||H||_inf < c c0`` (equivalently ``||H|| ||W|| < 1``).
    """
    try:
        require_stabilizable(sys.channel)
        if hinf is None:
            hinf = hinf_norm(sys.plant)
    except (GateError, NotHurwitz):
        return SmallGainVerdict.INAPPLICABLE
    if hinf.norm >= 1.0:
        return SmallGainVerdict.INAPPLICABLE
    if hinf.norm * wave_hinf(sys.channel) < 1.0:
        return SmallGainVerdict.STABLE
    return SmallGainVerdict.INCONCLUSIVE


def cmin_curve(plant: LtiPlant, c0_list, hinf: HinfResult | None = None) -> list[tuple]:
    """Guaranteed bound ``c_min(c0) <= ||H||_inf / c0`` for each ``c0``."""
    hinf = hinf or hinf_norm(plant)
    if hinf.norm >= 1.0:
        raise NotHurwitz("small-gain test inapplicable: ||H||_inf >= 1")
    out = []
    for c0 in c0_list:
        if not (c0 > 0 and math.isfinite(c0)):
            raise ValueError(f"c0 must be positive, got {c0!r}")
        out.append((float(c0), hinf.norm / c0))
    return out
