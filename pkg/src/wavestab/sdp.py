"""Narrow LMI feasibility interface, solver backends and SDPA export.

An :class:`LmiProblem` asks to minimize ``c @ x`` subject to

* ``F0 + sum_i x_i F_i >= 0`` for every block (semidefinite),
* ``G @ x <= h`` (componentwise),
* ``Aeq @ x == beq``.

Backends return a :class:`SdpResult`; a feasible witness is never trusted
without :func:`verify_witness`.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverUnavailable


@dataclass
class LmiBlock:
    F0: np.ndarray
    F: list  # one symmetric matrix per decision variable

    @property
    def size(self) -> int:
        return self.F0.shape[0]

    def value(self, x) -> np.ndarray:
        M = self.F0.copy()
        for xi, Fi in zip(x, self.F):
            if xi:
                M += xi * Fi
        return 0.5 * (M + M.T)


@dataclass
class LmiProblem:
    c: np.ndarray
    blocks: list
    G: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    h: np.ndarray = field(default_factory=lambda: np.zeros(0))
    Aeq: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    beq: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def nvars(self) -> int:
        return len(self.c)


class Status(enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNKNOWN = "unknown"


@dataclass
class SdpResult:
    status: Status
    x: np.ndarray | None = None
    detail: str = ""


def verify_witness(problem: LmiProblem, x, tol: float = 1e-7) -> tuple[bool, list]:
    """Substitute ``x`` and check every constraint; returns (ok, block min-eigenvalues)."""
    x = np.asarray(x, dtype=float)
    margins = [float(np.linalg.eigvalsh(b.value(x))[0]) for b in problem.blocks]
    ok = all(m >= -tol for m in margins)
    if problem.G.size:
        ok = ok and bool(np.all(problem.G @ x - problem.h <= tol))
    if problem.Aeq.size:
        ok = ok and bool(np.all(np.abs(problem.Aeq @ x - problem.beq) <= tol))
    return ok, margins


class CvxoptBackend:
    """Interior-point solve with :func:`cvxopt.solvers.sdp`."""

    name = "cvxopt"

    def __init__(self, **options):
        try:
            import cvxopt  # noqa: F401
        except ImportError as exc:  # pragma: no cover - depends on environment
            raise SolverUnavailable("cvxopt is not installed") from exc
        self.options = {"show_progress": False, "abstol": 1e-9, "reltol": 1e-9, "feastol": 1e-9, "maxiters": 100}
        self.options.update(options)

    def solve(self, problem: LmiProblem) -> SdpResult:
        from cvxopt import matrix, solvers

        m = problem.nvars
        Gs, hs = [], []
        for b in problem.blocks:
            # cvxopt wants h - G x >= 0, so G = -F_i and h = F0
            Gs.append(matrix(np.column_stack([-Fi.ravel(order="F") for Fi in b.F]).reshape(-1, m)))
            hs.append(matrix(b.F0.astype(float)))
        kw = {}
        if problem.G.size:
            kw["Gl"] = matrix(problem.G.astype(float))
            kw["hl"] = matrix(problem.h.astype(float))
        if problem.Aeq.size:
            kw["A"] = matrix(problem.Aeq.astype(float))
            kw["b"] = matrix(problem.beq.astype(float))
        opts = dict(solvers.options)
        try:
            solvers.options.clear()
            solvers.options.update(self.options)
            sol = solvers.sdp(matrix(problem.c.astype(float)), Gs=Gs, hs=hs, **kw)
        except (ValueError, ArithmeticError) as exc:
            return SdpResult(Status.UNKNOWN, detail=f"cvxopt error: {exc}")
        finally:
            solvers.options.clear()
            solvers.options.update(opts)
        status = sol["status"]
        x = np.array(sol["x"]).ravel() if sol["x"] is not None else None
        if status == "optimal":
            return SdpResult(Status.FEASIBLE, x, status)
        if status == "primal infeasible":
            return SdpResult(Status.INFEASIBLE, None, status)
        # "unknown": the last iterate may still be usable; the caller verifies it
        return SdpResult(Status.UNKNOWN, x, status)


class CvxpyBackend:
    """Delegates to cvxpy with any installed conic solver."""

    def __init__(self, solver: str | None = None):
        try:
            import cvxpy  # noqa: F401
        except ImportError as exc:  # pragma: no cover
            raise SolverUnavailable("cvxpy is not installed") from exc
        self.solver = solver
        self.name = "cvxpy" + (f":{solver}" if solver else "")

    def solve(self, problem: LmiProblem) -> SdpResult:
        import cvxpy as cp

        x = cp.Variable(problem.nvars)
        cons = []
        for b in problem.blocks:
            expr = b.F0 + sum(x[i] * Fi for i, Fi in enumerate(b.F))
            cons.append(0.5 * (expr + expr.T) >> 0)
        if problem.G.size:
            cons.append(problem.G @ x <= problem.h)
        if problem.Aeq.size:
            cons.append(problem.Aeq @ x == problem.beq)
        prob = cp.Problem(cp.Minimize(problem.c @ x), cons)
        try:
            prob.solve(solver=self.solver)
        except cp.error.SolverError as exc:
            return SdpResult(Status.UNKNOWN, detail=str(exc))
        if prob.status in ("optimal", "optimal_inaccurate"):
            return SdpResult(Status.FEASIBLE, np.asarray(x.value, dtype=float), prob.status)
        if prob.status in ("infeasible", "infeasible_inaccurate"):
            return SdpResult(Status.INFEASIBLE, None, prob.status)
        return SdpResult(Status.UNKNOWN, None, prob.status)


def get_backend(name: str | None = None):
    """Backend by name; defaults to ``$WAVESTAB_SOLVER`` and then ``cvxopt``.

    Names: ``cvxopt``, ``cvxpy`` or ``cvxpy:<SOLVER>`` (e.g. ``cvxpy:SCS``).
    """
    name = name or os.environ.get("WAVESTAB_SOLVER") or "cvxopt"
    key = name.lower()
    if key == "cvxopt":
        return CvxoptBackend()
    if key == "cvxpy":
        return CvxpyBackend()
    if key.startswith("cvxpy:"):
        return CvxpyBackend(name.split(":", 1)[1].upper())
    raise SolverUnavailable(f"unknown SDP backend {name!r}")


def _fmt(v: float) -> str:
    return repr(float(v))


def to_sdpa(problem: LmiProblem) -> str:
    """Sparse SDPA text for ``problem`` (see README for the field layout).

    The SDPA primal reads ``min c.x  s.t.  sum_i x_i F_i - F_0 >= 0``; so the
    block constant is written negated.  Linear inequalities and both halves
    of each equality go into one trailing diagonal block.
    """
    m = problem.nvars
    lin_rows, lin_rhs = [], []
    for g, hv in zip(problem.G, problem.h):
        lin_rows.append(-g)
        lin_rhs.append(-hv)  # h - g x >= 0  ->  (-g) x - (-h) >= 0
    for a, bv in zip(problem.Aeq, problem.beq):
        lin_rows += [a, -a]
        lin_rhs += [bv, -bv]
    sizes = [b.size for b in problem.blocks]
    if lin_rows:
        sizes.append(-len(lin_rows))
    lines = [f"{m}", f"{len(sizes)}", " ".join(str(s) for s in sizes), " ".join(_fmt(v) for v in problem.c)]
    entries = []
    for bi, b in enumerate(problem.blocks, start=1):
        mats = [-b.F0] + list(b.F)
        for k, M in enumerate(mats):
            for i in range(b.size):
                for j in range(i, b.size):
                    if M[i, j] != 0.0:
                        entries.append((k, bi, i + 1, j + 1, M[i, j]))
    if lin_rows:
        bi = len(problem.blocks) + 1
        for r, (row, rhs) in enumerate(zip(lin_rows, lin_rhs), start=1):
            if rhs != 0.0:
                entries.append((0, bi, r, r, rhs))
            for k in range(m):
                if row[k] != 0.0:
                    entries.append((k + 1, bi, r, r, row[k]))
    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    lines += [f"{k} {b} {i} {j} {_fmt(v)}" for k, b, i, j, v in entries]
    return "\n".join(lines) + "\n"


def from_sdpa(text: str) -> LmiProblem:
    """Parse the output of :func:`to_sdpa` back into a problem (linear block as ``G x <= h``)."""
    rows = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith(("*", '"'))]
    m = int(rows[0])
    nblocks = int(rows[1])
    sizes = [int(v) for v in rows[2].replace(",", " ").split()][:nblocks]
    c = np.array([float(v) for v in rows[3].replace(",", " ").split()][:m])
    mats = [[np.zeros((abs(s), abs(s))) for s in sizes] for _ in range(m + 1)]
    for ln in rows[4:]:
        k, b, i, j, v = ln.split()
        k, b, i, j = int(k), int(b) - 1, int(i) - 1, int(j) - 1
        mats[k][b][i, j] = float(v)
        mats[k][b][j, i] = float(v)
    blocks, G, h = [], [], []
    for bi, s in enumerate(sizes):
        if s > 0:
            blocks.append(LmiBlock(-mats[0][bi], [mats[k][bi] for k in range(1, m + 1)]))
        else:
            for r in range(-s):
                G.append([-mats[k][bi][r, r] for k in range(1, m + 1)])
                h.append(-mats[0][bi][r, r])
    return LmiProblem(c, blocks, np.array(G).reshape(-1, m), np.array(h))
