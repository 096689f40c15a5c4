"""Quadratic-separation stability tests with Legendre projections.

The loop is rewritten as ``E z = A w`` closed by ``w = Nabla(s) z`` with

    Nabla_N(s) = diag(s^{-1} I_{n+N}, e^{-tau s}, delta(s), delta_N(s)),

where ``delta = (1 + alpha)/(1 + alpha e^{-2 tau s})`` carries the
reflections and ``delta_N`` stacks the normalized projections of
``theta -> e^{theta s}`` on the first ``N + 1`` shifted Legendre
polynomials over ``[-tau, 0]``.  A separator ``Theta`` that is negative on
the graph of ``Nabla`` over the closed right half-plane and positive on the
kernel of ``[E, -A]`` certifies input/output stability.  ``N = 0`` gives
the Jensen-type test; increasing ``N`` gives a nested hierarchy.

Signal layout (``n`` plant states)::

    z = [X', Xi_N', K X, K X(t - tau), K X']                 (n + N + 3)
    w = [X, Xi_N, K X(t - tau), u(1, t), V_N]               (n + 2N + 3)

with ``Xi_N = [chi_0 .. chi_{N-1}]`` the projections and
``V_N = delta_N(s) s K X``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg

from .errors import AssemblyError, GateError, WavestabError
from .model import LtiPlant, WaveChannel, require_stabilizable
from .sdp import LmiBlock, LmiProblem, Status, get_backend, verify_witness

NULL_RTOL = 1e-10
EPS_P = 1e-8
# strict-feasibility margin on the projected LMI (after trace normalization)
EPS_M = 1e-7
WITNESS_TOL = 1e-9


@dataclass(frozen=True)
class LegendreBundle:
    """Derivative matrix, boundary signs and norm scaling for order ``N``."""

    N: int
    tau: float
    L: np.ndarray
    ones: np.ndarray
    Itilde: np.ndarray


def legendre_bundle(N: int, channel: WaveChannel | float) -> LegendreBundle:
    """Row ``i`` of ``L`` expresses the derivative of the ``i``-th shifted
    polynomial on ``[-tau, 0]`` in the basis: ``(2k+1)(1-(-1)^{k+i}) c`` for
    ``k < i``, zero otherwise."""
    if N < 0:
        raise ValueError("order N must be nonnegative")
    tau = channel.tau if isinstance(channel, WaveChannel) else float(channel)
    c = 1.0 / tau
    L = np.zeros((N + 1, N + 1))
    for i in range(N + 1):
        for k in range(i):
            L[i, k] = (2 * k + 1) * (1 - (-1) ** (k + i)) * c
    ones = np.array([(-1.0) ** k for k in range(N + 1)])
    Itilde = np.diag([1.0 / math.sqrt(2 * k + 1) for k in range(N + 1)])
    return LegendreBundle(N, tau, L, ones, Itilde)


def shifted_legendre(k: int, theta, tau: float):
    """``L_k(theta)`` on ``[-tau, 0]`` with ``L_k(0) = 1`` and ``L_k(-tau) = (-1)^k``."""
    x = 2.0 * (np.asarray(theta, dtype=float) + tau) / tau - 1.0
    return npleg.legval(x, [0] * k + [1])


def shifted_legendre_derivative(k: int, theta, tau: float):
    x = 2.0 * (np.asarray(theta, dtype=float) + tau) / tau - 1.0
    return npleg.legval(x, npleg.legder([0] * k + [1])) * 2.0 / tau


def _delta_quadrature(s: complex, tau: float, N: int) -> np.ndarray:
    m = int(abs(s) * tau) + N + 40
    x, w = npleg.leggauss(m)
    theta = 0.5 * tau * (x - 1.0)
    e = np.exp(theta * s) * w * 0.5 * tau
    P = npleg.legvander(x, N)
    return (e @ P) * np.sqrt(2 * np.arange(N + 1) + 1.0)


def _delta_recurrence(s: complex, tau: float, N: int) -> np.ndarray:
    L = legendre_bundle(N, tau).L
    ez = np.exp(-tau * s)
    J = np.zeros(N + 1, dtype=complex)
    for k in range(N + 1):
        J[k] = (1.0 - (-1) ** k * ez - L[k, :k] @ J[:k]) / s
    return J * np.sqrt(2 * np.arange(N + 1) + 1.0)


def delta_N(s: complex, tau: float, N: int) -> np.ndarray:
    """Normalized Legendre moments ``sqrt(2k+1) int_{-tau}^0 e^{theta s} L_k(theta) dtheta``.

    Uses the integration-by-parts recurrence when ``|s| tau`` is large and
    Gauss-Legendre quadrature otherwise (the recurrence loses digits for
    small ``|s| tau``; ``s = 0`` gives ``[tau, 0, ..., 0]``).
    """
    s = complex(s)
    if abs(s) * tau > max(60.0, 4.0 * (N + 1) ** 2):
        return _delta_recurrence(s, tau, N)
    return _delta_quadrature(s, tau, N)


def delta_neutral(s: complex, channel: WaveChannel) -> complex:
    """``(1 + alpha) / (1 + alpha e^{-2 tau s})``."""
    a = channel.alpha
    return (1.0 + a) / (1.0 + a * np.exp(-2.0 * channel.tau * s))


@dataclass(frozen=True)
class Layout:
    n: int
    N: int

    @property
    def nz(self) -> int:
        return self.n + self.N + 3

    @property
    def nw(self) -> int:
        return self.n + 2 * self.N + 3

    @property
    def rows(self) -> int:
        return self.n + 2 * self.N + 4

    # positions inside z
    @property
    def z_kx(self) -> int:
        return self.n + self.N

    @property
    def z_kxd(self) -> int:
        return self.n + self.N + 1

    @property
    def z_kxdot(self) -> int:
        return self.n + self.N + 2

    # positions inside w
    @property
    def w_kxd(self) -> int:
        return self.n + self.N

    @property
    def w_u1(self) -> int:
        return self.n + self.N + 1

    @property
    def w_v(self) -> slice:
        return slice(self.n + self.N + 2, self.n + 2 * self.N + 3)


@dataclass(frozen=True)
class QsProblem:
    N: int
    layout: Layout
    E: np.ndarray
    A: np.ndarray
    V: np.ndarray
    channel: WaveChannel

    @property
    def kernel(self) -> np.ndarray:
        return np.hstack([self.E, -self.A])


def assemble_matrices(N: int, plant: LtiPlant, channel: WaveChannel) -> tuple[np.ndarray, np.ndarray]:
    n = plant.n
    lay = Layout(n, N)
    leg = legendre_bundle(N, channel)
    E = np.zeros((lay.rows, lay.nz))
    A = np.zeros((lay.rows, lay.nw))
    r = 0
    E[r : r + n, :n] = np.eye(n)
    A[r : r + n, :n] = plant.A
    A[r : r + n, lay.w_u1] = plant.B[:, 0]
    r += n
    E[r : r + N, n : n + N] = np.eye(N)
    A[r : r + N, lay.w_v] = leg.Itilde[:N, :]
    r += N
    E[r, lay.z_kx] = 1.0
    A[r, :n] = plant.K[0]
    r += 1
    E[r, lay.z_kxd] = 1.0
    A[r, lay.w_kxd] = 1.0
    r += 1
    E[r, :n] = -plant.K[0]
    E[r, lay.z_kxdot] = 1.0
    r += 1
    E[r : r + N + 1, lay.z_kx] = 1.0
    E[r : r + N + 1, lay.z_kxd] = -leg.ones
    A[r : r + N + 1, n : n + N] = leg.L[:, :N]
    A[r : r + N + 1, lay.w_v] = leg.Itilde
    return E, A


def nullspace(M: np.ndarray, rtol: float = NULL_RTOL) -> np.ndarray:
    """Orthonormal kernel basis from the SVD."""
    _, sv, vt = np.linalg.svd(M)
    smax = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > rtol * smax)) if smax > 0 else 0
    return vt[rank:].T.copy()


def assemble_problem(N: int, plant: LtiPlant, channel: WaveChannel) -> QsProblem:
    require_stabilizable(channel)
    E, A = assemble_matrices(N, plant, channel)
    sv = np.linalg.svd(E, compute_uv=False)
    if sv[-1] <= NULL_RTOL * sv[0]:
        raise AssemblyError(f"E_{N} is not full column rank")
    V = nullspace(np.hstack([E, -A]))
    return QsProblem(N, Layout(plant.n, N), E, A, V, channel)


@dataclass(frozen=True)
class SeparatorParams:
    P: np.ndarray
    Q: float
    R: float
    S: float

    def to_dict(self) -> dict:
        return {"P": np.asarray(self.P).tolist(), "Q": self.Q, "R": self.R, "S": self.S}


def _theta(lay: Layout, channel: WaveChannel, P, Q, R, S) -> np.ndarray:
    a, g, tau = channel.alpha, channel.gamma, channel.tau
    m = lay.n + lay.N
    nz, nw = lay.nz, lay.nw
    T = np.zeros((nz + nw, nz + nw))
    # z-z block
    T[lay.z_kx, lay.z_kx] = -Q
    T[lay.z_kxd, lay.z_kxd] = R * (1.0 - a * a) * g * g
    T[lay.z_kxdot, lay.z_kxdot] = -tau * tau * S
    # z-w block
    T[:m, nz : nz + m] = -P
    T[lay.z_kxd, nz + lay.w_u1] = -R * g
    # w-w block
    T[nz + lay.w_kxd, nz + lay.w_kxd] = Q
    T[nz + lay.w_u1, nz + lay.w_u1] = R
    v = np.arange(nw)[lay.w_v] + nz
    T[v, v] = S
    # mirror the off-diagonal block
    T[nz:, :nz] = T[:nz, nz:].T
    return T


def assemble_separator(N: int, plant: LtiPlant, channel: WaveChannel, params: SeparatorParams) -> np.ndarray:
    """Symmetric ``Theta_N``, affine in ``(P, Q, R, S)``."""
    lay = Layout(plant.n, N)
    P = np.asarray(params.P, dtype=float)
    if P.shape != (lay.n + N, lay.n + N):
        raise ValueError(f"P must be {(lay.n + N,) * 2}, got {P.shape}")
    return _theta(lay, channel, 0.5 * (P + P.T), params.Q, params.R, params.S)


def nabla(s: complex, n: int, N: int, channel: WaveChannel) -> np.ndarray:
    lay = Layout(n, N)
    M = np.zeros((lay.nw, lay.nz), dtype=complex)
    m = n + N
    M[:m, :m] = np.eye(m) / s
    M[lay.w_kxd, lay.z_kx] = np.exp(-channel.tau * s)
    M[lay.w_u1, lay.z_kxd] = delta_neutral(s, channel)
    M[lay.w_v, lay.z_kxdot] = delta_N(s, channel.tau, N)
    return M


def separator_form(s: complex, N: int, channel: WaveChannel, params: SeparatorParams) -> np.ndarray:
    """``[I; Nabla(s)]^* Theta [I; Nabla(s)]`` (Hermitian)."""
    n = params.P.shape[0] - N
    lay = Layout(n, N)
    T = _theta(lay, channel, np.asarray(params.P, dtype=float), params.Q, params.R, params.S)
    G = np.vstack([np.eye(lay.nz), nabla(s, n, N, channel)])
    F = G.conj().T @ T @ G
    return 0.5 * (F + F.conj().T)


def separator_negativity_check(
    N: int,
    channel: WaveChannel,
    params: SeparatorParams,
    sample_count: int = 1000,
    tol: float = 1e-8,
    interior: bool = True,
) -> bool:
    """Numerically confirm the separator is negative on the uncertainty graph.

    Samples ``sample_count`` points ``s = i w`` on a log grid, plus half as
    many points slightly inside the right half-plane when ``interior``.  A
    validation tool only; the feasibility path relies on the analytic
    argument.
    """
    tau = channel.tau
    w = np.geomspace(1e-3 / tau, 1e3 / tau, sample_count)
    pts = list(1j * w)
    if interior:
        w2 = np.geomspace(1e-2 / tau, 1e2 / tau, max(1, sample_count // 2))
        pts += list(0.05 / tau + 1j * w2)
    scale = max(1.0, float(np.max(np.abs(params.P))), params.Q, params.R, params.S * tau * tau)
    for s in pts:
        lam = np.linalg.eigvalsh(separator_form(s, N, channel, params))[-1]
        if lam > tol * scale:
            return False
    return True


def _sym_basis(m: int):
    out = []
    for i in range(m):
        for j in range(i, m):
            E = np.zeros((m, m))
            E[i, j] = E[j, i] = 1.0
            out.append(E)
    return out


def build_lmi(problem: QsProblem) -> tuple[LmiProblem, callable]:
    """LMI: maximize ``t`` with ``V^T Theta V >= t I``, ``P >= eps I``,
    ``Q, R, S >= 0`` and ``trace P + Q + R + S = 1``.

    Variables are the upper triangle of ``P`` followed by ``Q, R, S, t``.
    Returns the problem and a decoder from the solution vector to
    :class:`SeparatorParams`.
    """
    lay, V, ch = problem.layout, problem.V, problem.channel
    m = lay.n + lay.N
    basis = _sym_basis(m)
    nP = len(basis)
    zeros = np.zeros((m, m))
    mats = []
    for Eij in basis:
        mats.append(V.T @ _theta(lay, ch, Eij, 0.0, 0.0, 0.0) @ V)
    for q, r, s in ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)):
        mats.append(V.T @ _theta(lay, ch, zeros, q, r, s) @ V)
    k = V.shape[1]
    mats.append(-np.eye(k))
    nv = nP + 4
    lmi = LmiBlock(np.zeros((k, k)), [0.5 * (M + M.T) for M in mats])
    pblock = LmiBlock(-EPS_P * np.eye(m), basis + [np.zeros((m, m))] * 4)
    G = np.zeros((3, nv))
    G[0, nP], G[1, nP + 1], G[2, nP + 2] = -1.0, -1.0, -1.0
    h = np.zeros(3)
    Aeq = np.zeros((1, nv))
    for idx, Eij in enumerate(basis):
        Aeq[0, idx] = np.trace(Eij)
    Aeq[0, nP : nP + 3] = 1.0
    c = np.zeros(nv)
    c[-1] = -1.0
    lp = LmiProblem(c, [lmi, pblock], G, h, Aeq, np.ones(1))

    def decode(x) -> SeparatorParams:
        P = sum(xi * Eij for xi, Eij in zip(x[:nP], basis))
        return SeparatorParams(np.asarray(P, dtype=float), float(x[nP]), float(x[nP + 1]), float(x[nP + 2]))

    return lp, decode


class QsVerdict(enum.Enum):
    STABLE = "stable"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class QsResult:
    verdict: QsVerdict
    N: int
    status: str
    margin: float = math.nan
    witness: SeparatorParams | None = None
    eigen_margins: tuple = ()

    @property
    def stable(self) -> bool:
        return self.verdict is QsVerdict.STABLE

    def witness_json(self) -> dict | None:
        if self.witness is None:
            return None
        out = self.witness.to_dict()
        out["eigen_margins"] = list(self.eigen_margins)
        return out


def lmi_margin(problem: QsProblem, params: SeparatorParams) -> float:
    """Smallest eigenvalue of the projected LMI at ``params``."""
    lay = problem.layout
    T = _theta(lay, problem.channel, np.asarray(params.P, dtype=float), params.Q, params.R, params.S)
    M = problem.V.T @ T @ problem.V
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def qs_feasible(N: int, plant: LtiPlant, channel: WaveChannel, backend=None) -> QsResult:
    """Order-``N`` quadratic-separation test; ``STABLE`` is a proof, ``UNKNOWN`` is not."""
    try:
        require_stabilizable(channel)
    except GateError as exc:
        return QsResult(QsVerdict.UNKNOWN, N, f"gate: {exc}")
    backend = backend or get_backend()
    problem = assemble_problem(N, plant, channel)
    lp, decode = build_lmi(problem)
    try:
        res = backend.solve(lp)
    except WavestabError:
        raise
    except Exception as exc:  # solver crashes must never become a verdict
        return QsResult(QsVerdict.UNKNOWN, N, f"backend failure: {exc!r}")
    if res.x is None:
        return QsResult(QsVerdict.UNKNOWN, N, f"{res.status.value}: {res.detail}")
    params = decode(res.x)
    ok, margins = verify_witness(lp, res.x, tol=1e-7)
    lmi_min = lmi_margin(problem, params)
    p_min = float(np.linalg.eigvalsh(params.P)[0]) if params.P.size else math.inf
    sign_ok = min(params.Q, params.R, params.S) >= -WITNESS_TOL and p_min > 0
    if ok and sign_ok and lmi_min >= EPS_M:
        return QsResult(QsVerdict.STABLE, N, res.detail, lmi_min, params, (lmi_min, p_min))
    return QsResult(QsVerdict.UNKNOWN, N, f"{res.status.value}: {res.detail}", lmi_min, None, (lmi_min, p_min))
