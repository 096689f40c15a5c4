"""System description: an LTI plant coupled to a damped string.

The plant ``X' = A X + B (u(1, t) + r(t))`` drives the string through the
Dirichlet condition ``u(0, t) = K X(t)``; the far end is damped with
``u_x(1, t) = -c0 u_t(1, t)``.  Everything downstream only needs the plant
matrices and the two channel numbers ``c`` (wave speed) and ``c0``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, GateError, SystemFormatError

RETARDED_TOL = 1e-12
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class LtiPlant:
    """Finite-dimensional subsystem ``(A, B, K)`` with scalar input/output."""

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    name: str = ""

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        K = np.array(self.K, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise SystemFormatError("A", f"must be a non-empty square matrix, got shape {A.shape}")
        n = A.shape[0]
        B = B.reshape(-1, 1) if B.ndim == 1 else B
        if B.shape != (n, 1):
            raise SystemFormatError("B", f"must be a column of length {n}, got shape {B.shape}")
        K = K.reshape(1, -1) if K.ndim == 1 else K
        if K.shape != (1, n):
            raise SystemFormatError("K", f"must be a single row of length {n}, got shape {K.shape}")
        for label, M in (("A", A), ("B", B), ("K", K)):
            if not np.all(np.isfinite(M)):
                raise SystemFormatError(label, "entries must be finite")
            M.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "K", K)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def closed_loop(self) -> np.ndarray:
        """``A + B K``, the zero-delay closed-loop matrix."""
        return self.A + self.B @ self.K

    def to_dict(self) -> dict:
        out = {"A": self.A.tolist(), "B": self.B.ravel().tolist(), "K": self.K.ravel().tolist()}
        if self.name:
            out["name"] = self.name
        return out


@dataclass(frozen=True)
class WaveChannel:
    """Wave speed ``c`` and boundary damping ``c0`` with derived quantities."""

    c: float
    c0: float

    def __post_init__(self):
        c, c0 = float(self.c), float(self.c0)
        if not math.isfinite(c) or c <= 0:
            raise DomainError(f"wave speed c must be finite and positive, got {self.c!r}")
        if not math.isfinite(c0) or c0 < 0:
            raise DomainError(f"damping c0 must be finite and nonnegative, got {self.c0!r}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "c0", c0)

    @classmethod
    def from_delay(cls, c1: float, tau: float) -> "WaveChannel":
        """Build the channel from ``c1 = c c0`` and the delay ``tau = 1/c``."""
        if not math.isfinite(tau) or tau <= 0:
            raise DomainError(f"delay tau must be finite and positive, got {tau!r}")
        if not math.isfinite(c1) or c1 < 0:
            raise DomainError(f"c1 must be finite and nonnegative, got {c1!r}")
        return cls(1.0 / tau, c1 * tau)

    @property
    def tau(self) -> float:
        return 1.0 / self.c

    @property
    def c1(self) -> float:
        return self.c * self.c0

    @property
    def alpha(self) -> float:
        """Reflection coefficient of the damped end, in ``(-1, 1]``."""
        c1 = self.c1
        return (1.0 - c1) / (1.0 + c1)

    @property
    def gamma(self) -> float:
        """Centre of the disk containing the neutral uncertainty ``delta``."""
        a = self.alpha
        if a == 1.0:
            return math.inf
        # (1 + a) / (1 - a^2) simplified; exact in the invariant gamma (1 - a) = 1
        return 1.0 / (1.0 - a)


def make_channel(c: float, c0: float) -> WaveChannel:
    return WaveChannel(c, c0)


@dataclass(frozen=True)
class CoupledSystem:
    plant: LtiPlant
    channel: WaveChannel


class Kind(enum.Enum):
    RETARDED = "retarded"
    NEUTRAL = "neutral"


@dataclass(frozen=True)
class SystemClass:
    kind: Kind
    small_tau_stabilizable: bool

    @property
    def analyzable(self) -> bool:
        return self.small_tau_stabilizable


def classify_channel(channel: WaveChannel) -> SystemClass:
    if abs(channel.c1 - 1.0) <= RETARDED_TOL:
        return SystemClass(Kind.RETARDED, True)
    return SystemClass(Kind.NEUTRAL, channel.c0 > 0)


def classify(sys: CoupledSystem) -> SystemClass:
    """Neutral/retarded type and small-delay stabilizability.

    The difference operator ``X(t) + alpha X(t - 2 tau)`` is stable iff
    ``|alpha| < 1``, i.e. iff ``c0 > 0``.
    """
    return classify_channel(sys.channel)


def require_stabilizable(channel: WaveChannel) -> None:
    """Raise :class:`GateError` for channels no analyzer may handle."""
    if not classify_channel(channel).small_tau_stabilizable:
        raise GateError(
            f"channel c={channel.c:g}, c0={channel.c0:g} has |alpha| = 1: the difference "
            "operator is not stable and no finite-dimensional analysis applies"
        )


@dataclass(frozen=True)
class Equilibria:
    """Kernel of ``A + B K``; an empty basis means the origin is the only equilibrium."""

    basis: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def unique(self) -> bool:
        return self.basis.size == 0


def equilibria(sys: CoupledSystem) -> Equilibria:
    M = sys.plant.closed_loop()
    _, sv, vt = np.linalg.svd(M)
    smax = sv[0] if sv.size else 0.0
    null = sv <= RANK_RTOL * smax if smax > 0 else np.ones_like(sv, dtype=bool)
    if not null.any():
        return Equilibria()
    return Equilibria(vt[null].T.copy())


def _matrix(obj, key, rows=None):
    if key not in obj:
        raise SystemFormatError(key, "missing")
    value = obj[key]
    if not isinstance(value, list) or not value:
        raise SystemFormatError(key, "must be a non-empty array")
    if all(isinstance(v, list) for v in value):
        widths = {len(v) for v in value}
        if len(widths) != 1:
            raise SystemFormatError(key, f"ragged array (row lengths {sorted(widths)})")
        flat = [x for row in value for x in row]
    elif any(isinstance(v, list) for v in value):
        raise SystemFormatError(key, "mixes scalars and arrays")
    else:
        flat = value
    if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in flat):
        raise SystemFormatError(key, "entries must be numbers")
    return np.array(value, dtype=float)


def plant_from_dict(obj: dict) -> LtiPlant:
    """Parse ``{"A": [[..]], "B": [..], "K": [..], "name": ..}``."""
    if not isinstance(obj, dict):
        raise SystemFormatError("<root>", "system description must be a JSON object")
    A = _matrix(obj, "A")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SystemFormatError("A", f"must be square, got shape {A.shape}")
    n = A.shape[0]
    B = _matrix(obj, "B")
    if B.size != n or (B.ndim == 2 and B.shape[1] != 1):
        raise SystemFormatError("B", f"must hold {n} entries (one column), got shape {B.shape}")
    K = _matrix(obj, "K")
    if K.size != n or (K.ndim == 2 and K.shape[0] != 1):
        raise SystemFormatError("K", f"must hold {n} entries (one row), got shape {K.shape}")
    name = obj.get("name", "")
    if not isinstance(name, str):
        raise SystemFormatError("name", "must be a string")
    return LtiPlant(A, B.reshape(n, 1), K.reshape(1, n), name=name)


def load_plant(path) -> LtiPlant:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SystemFormatError("<json>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return plant_from_dict(obj)
