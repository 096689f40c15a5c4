"""Time-domain integration of the neutral delay form of the coupled loop.

Eliminating the string gives

    X'(t) + alpha X'(t - 2 tau) = A X(t) + (1 + alpha) B K X(t - tau)
                                  + alpha A X(t - 2 tau) + B r(t) + alpha B r(t - 2 tau)

with ``1 + alpha = 2 / (1 + c c0)``.  It is integrated by the method of
steps: RK4 over macro steps of length ``2h`` whose stages all land on the
``h``-grid, so every delayed read is an exact grid lookup (``h`` divides
``tau``).  The midpoint state comes from cubic Hermite interpolation and
all derivatives are evaluated from the equation itself.  ``X'`` may jump
at multiples of ``tau``: both one-sided values are kept while integrating
and the returned trajectory carries the left limits.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError
from .model import CoupledSystem, require_stabilizable

DIVERGENCE_CAP = 1e12
NORM_FLOOR = 1e-12
MIN_SPAN_DELAYS = 20


@dataclass(frozen=True)
class SimConfig:
    """Integration settings.

    ``steps_per_delay`` (``m``) fixes ``h = tau / m``; it must be even and at
    least 20.  ``x0`` is the constant initial history (zero derivative
    history).  ``history`` instead maps ``theta`` in ``[-2 tau, 0]`` to the
    pair ``(X(theta), X'(theta))`` and overrides ``x0``.  ``r`` is an
    optional input signal ``r(t)``, zero before ``t = 0``.
    """

    t_end: float
    steps_per_delay: int = 20
    x0: tuple | None = None
    r: Callable[[float], float] | None = None
    history: Callable[[float], tuple] | None = None

    def __post_init__(self):
        m = self.steps_per_delay
        if m < 20 or m % 2:
            raise DomainError(f"steps_per_delay must be an even integer >= 20, got {m!r}")
        if not self.t_end > 0:
            raise DomainError("t_end must be positive")


def default_config(sys: CoupledSystem, periods: float = 40.0, x0=None) -> SimConfig:
    """Settings used for stability classification.

    The step resolves the fastest plant mode and the horizon covers at
    least ``periods`` delays and about 60 plant time constants.
    """
    tau = sys.channel.tau
    rho = max(np.max(np.abs(np.linalg.eigvals(sys.plant.A))), np.max(np.abs(np.linalg.eigvals(sys.plant.closed_loop()))), 1e-3)
    m = max(20, int(math.ceil(tau * rho / 0.05)))
    m += m % 2
    t_end = max(periods * tau, 60.0 / min(rho, 1.0) if rho < 1 else 60.0)
    return SimConfig(t_end=t_end, steps_per_delay=m, x0=x0)


class Outcome(enum.Enum):
    COMPLETED = "completed"
    DIVERGED = "diverged"


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    outcome: Outcome
    tau: float

    @property
    def norm_series(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["norm"])
            for t, x, nm in zip(self.times, self.states, self.norm_series):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in x] + [f"{nm:.17g}"])


def simulate(sys: CoupledSystem, cfg: SimConfig) -> Trajectory:
    require_stabilizable(sys.channel)
    plant, ch = sys.plant, sys.channel
    n = plant.n
    A = plant.A
    BK = (1.0 + ch.alpha) * (plant.B @ plant.K)
    b = plant.B[:, 0]
    a = ch.alpha
    aA = a * A
    tau = ch.tau
    m = cfg.steps_per_delay
    h = tau / m
    total = int(math.ceil(cfg.t_end / h))
    total += total % 2
    if cfg.history is not None:
        past = [cfg.history(-k * h) for k in range(2 * m, 0, -1)]
        hx = np.array([np.asarray(p[0], dtype=float).reshape(n) for p in past])
        hd = np.array([np.asarray(p[1], dtype=float).reshape(n) for p in past])
        x0 = np.asarray(cfg.history(0.0)[0], dtype=float).reshape(n)
        d0 = np.asarray(cfg.history(0.0)[1], dtype=float).reshape(n)
    else:
        if cfg.x0 is not None and np.size(cfg.x0) != n:
            raise DomainError(f"x0 needs {n} entries, got {np.size(cfg.x0)}")
        x0 = np.ones(n) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float).reshape(n)
        hx = np.tile(x0, (2 * m, 1))
        hd = np.zeros((2 * m, n))
        d0 = np.zeros(n)
    r = cfg.r

    X = np.empty((total + 1, n))
    dl = np.empty((total + 1, n))  # X' limit from the left
    dr = np.empty((total + 1, n))  # X' limit from the right
    X[0] = x0
    dl[0] = d0

    # negative indices k in [-2m, -1] live in the history tables at k + 2m
    def hist_x(k):
        return X[k] if k >= 0 else hx[k + 2 * m]

    def hist_d(k, right):
        if k < 0:
            return hd[k + 2 * m]
        return dr[k] if right else dl[k]

    def rhs(k, x, right, t):
        # derivative at grid index k for state x; delayed indices are k - m, k - 2m
        out = A @ x + BK @ hist_x(k - m) + aA @ hist_x(k - 2 * m) - a * hist_d(k - 2 * m, right)
        if r is not None:
            out = out + b * r(t)
            if t >= 2 * tau:  # input history before t = 0 is zero
                out = out + a * b * r(t - 2 * tau)
        return out

    dr[0] = rhs(0, x0, True, 0.0)
    outcome = Outcome.COMPLETED
    last = total
    for k in range(0, total, 2):
        t = k * h
        x = X[k]
        k1 = dr[k]
        k2 = rhs(k + 1, x + h * k1, True, t + h)
        k3 = rhs(k + 1, x + h * k2, True, t + h)
        k4 = rhs(k + 2, x + 2 * h * k3, False, t + 2 * h)
        xn = x + (h / 3.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        X[k + 2] = xn
        dl[k + 2] = rhs(k + 2, xn, False, t + 2 * h)
        dr[k + 2] = rhs(k + 2, xn, True, t + 2 * h) if (k + 2) % m == 0 else dl[k + 2]
        # cubic Hermite midpoint, then its derivative from the equation
        X[k + 1] = 0.5 * (x + xn) + 0.5 * h * (dr[k] - dl[k + 2]) / 2.0
        dl[k + 1] = dr[k + 1] = rhs(k + 1, X[k + 1], True, t + h)
        if not np.all(np.isfinite(xn)) or np.linalg.norm(xn) > DIVERGENCE_CAP:
            outcome = Outcome.DIVERGED
            last = k + 2
            break
    times = np.arange(last + 1) * h
    return Trajectory(times, X[: last + 1].copy(), dl[: last + 1].copy(), outcome, tau)


class TrajectoryClass(enum.Enum):
    DECAYING = "decaying"
    GROWING = "growing"
    INCONCLUSIVE = "inconclusive"


def growth_rate(traj: Trajectory, tail_fraction: float = 0.5) -> float:
    """Least-squares slope of ``log ||X(t)||`` over the trailing part of the run."""
    nm = np.clip(traj.norm_series, NORM_FLOOR, DIVERGENCE_CAP)
    t = traj.times
    start = t[-1] * (1.0 - tail_fraction)
    sel = t >= start
    if sel.sum() < 3:
        sel = slice(-3, None)
    return float(np.polyfit(t[sel], np.log(nm[sel]), 1)[0])


def classify_trajectory(traj: Trajectory, tail_fraction: float = 0.5, tol_rate: float | None = None) -> TrajectoryClass:
    if traj.outcome is Outcome.DIVERGED:
        return TrajectoryClass.GROWING
    if traj.times[-1] < MIN_SPAN_DELAYS * traj.tau * (1 - 1e-12):
        raise DomainError(f"classification needs at least {MIN_SPAN_DELAYS} delays of trajectory")
    if not np.any(traj.states):
        return TrajectoryClass.DECAYING
    if np.all(traj.norm_series[-max(3, len(traj.times) // 20) :] <= NORM_FLOOR):
        return TrajectoryClass.DECAYING
    tol = 1e-3 / traj.tau if tol_rate is None else tol_rate
    slope = growth_rate(traj, tail_fraction)
    if slope < -tol:
        return TrajectoryClass.DECAYING
    if slope > tol:
        return TrajectoryClass.GROWING
    return TrajectoryClass.INCONCLUSIVE
