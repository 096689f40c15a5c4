"""Parameter-plane sweeps.

A grid lives either in ``(c1, tau)`` coordinates or in the ``(c0, c)``
coordinates of the physical channel; every cell is mapped to the pair
``(c1, tau) = (c c0, 1/c)`` before any analyzer runs.  Columns (fixed first
coordinate) are the unit of parallel work and results are merged by index,
so output never depends on completion order.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NotHurwitz, WavestabError
from .model import CoupledSystem, LtiPlant, WaveChannel
from .smallgain import hinf_norm, small_gain_verdict

METHODS = ("ctcr", "smallgain", "qs", "sim")
COORDS = ("c1tau", "c0c")
CSV_HEADER = ["c1", "tau", "method", "order", "verdict", "detail"]

# verdict strings that count as a stability proof / evidence per method
STABLE_WORDS = {"ctcr": "stable", "smallgain": "stable", "qs": "stable", "sim": "decaying"}


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not 0 < self.lo < self.hi:
            raise DomainError(f"axis range must satisfy 0 < lo < hi, got {self.lo!r}:{self.hi!r}")
        if int(self.count) != self.count or self.count < 2:
            raise DomainError(f"axis count must be an integer >= 2, got {self.count!r}")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, int(self.count))

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.count - 1)


@dataclass(frozen=True)
class GridSpec:
    """Sweep definition.

    ``first`` / ``second`` are the ``c1`` and ``tau`` axes in ``c1tau`` mode
    and the ``c0`` and ``c`` axes in ``c0c`` mode.
    """

    first: Axis
    second: Axis
    methods: tuple = ()
    orders: tuple = (0,)
    coords: str = "c1tau"

    def __post_init__(self):
        if self.coords not in COORDS:
            raise DomainError(f"coords must be one of {COORDS}, got {self.coords!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise DomainError(f"unknown methods {bad}; choose from {METHODS}")
        if any(int(N) != N or N < 0 for N in self.orders):
            raise DomainError(f"QS orders must be nonnegative integers, got {self.orders!r}")
        object.__setattr__(self, "methods", tuple(m for m in METHODS if m in self.methods))
        object.__setattr__(self, "orders", tuple(sorted({int(N) for N in self.orders})))

    @classmethod
    def parse(cls, text: str, methods=(), orders=(0,), coords: str = "c1tau") -> "GridSpec":
        """Parse ``c1=lo:hi:n,tau=lo:hi:n`` (or ``c0=...,c=...``)."""
        names = ("c1", "tau") if coords == "c1tau" else ("c0", "c")
        parts = {}
        for item in text.split(","):
            key, _, rng = item.partition("=")
            try:
                lo, hi, n = rng.split(":")
                parts[key.strip()] = Axis(float(lo), float(hi), int(n))
            except ValueError as exc:
                raise DomainError(f"bad grid axis {item!r}: expected name=lo:hi:n") from exc
        if set(parts) != set(names):
            raise DomainError(f"grid for coords={coords} needs axes {names}, got {sorted(parts)}")
        return cls(parts[names[0]], parts[names[1]], tuple(methods), tuple(orders), coords)

    def point(self, i: int, j: int) -> tuple[float, float]:
        """``(c1, tau)`` of cell ``(i, j)``."""
        a, b = float(self.first.values[i]), float(self.second.values[j])
        if self.coords == "c1tau":
            return a, b
        return b * a, 1.0 / b

    def tau_halfwidth(self, j: int) -> float:
        if self.coords == "c1tau":
            return 0.5 * self.second.step
        c = float(self.second.values[j])
        return 0.5 * self.second.step / (c * c)

    def to_dict(self) -> dict:
        return {
            "coords": self.coords,
            "first": [self.first.lo, self.first.hi, self.first.count],
            "second": [self.second.lo, self.second.hi, self.second.count],
            "methods": list(self.methods),
            "orders": list(self.orders),
        }


@dataclass
class Verdict:
    verdict: str
    detail: str = ""


@dataclass
class MapCell:
    i: int
    j: int
    c1: float
    tau: float
    verdicts: dict = field(default_factory=dict)  # key: method or "qs:<N>"
    boundary: bool = False

    @property
    def qs_min_order(self):
        orders = sorted(int(k.split(":")[1]) for k in self.verdicts if k.startswith("qs:"))
        for N in orders:
            if self.verdicts[f"qs:{N}"].verdict == "stable":
                return N
        return math.inf

    def is_stable(self, key: str) -> bool | None:
        v = self.verdicts.get(key)
        if v is None or v.verdict == "error":
            return None
        return v.verdict == STABLE_WORDS[key.split(":")[0]]


def _ctcr_cell(plant, c1, tau, halfwidth, cache, tau_max):
    from .ctcr import stable_intervals

    acc = cache.get(c1)
    if acc is None:
        acc = cache[c1] = stable_intervals(plant, c1, tau_max)
    k = acc.count_at(tau)
    near = acc.distance_to_crossing(tau) <= halfwidth
    return Verdict("stable" if k == 0 else "unstable", f"count={k}"), near


def _sim_cell(plant, c1, tau):
    from .ndde_sim import classify_trajectory, default_config, growth_rate, simulate

    sys = CoupledSystem(plant, WaveChannel.from_delay(c1, tau))
    traj = simulate(sys, default_config(sys))
    return Verdict(classify_trajectory(traj).value, f"rate={growth_rate(traj)!r}")


def _column(plant: LtiPlant, grid: GridSpec, i: int, skip: dict) -> list:
    """All cells of column ``i``; cells present in ``skip`` are reused as-is."""
    from .qs import qs_feasible
    from .sdp import get_backend

    backend = None
    hinf = None
    hinf_error = None
    if "smallgain" in grid.methods:
        try:
            hinf = hinf_norm(plant)
        except NotHurwitz as exc:
            hinf_error = str(exc)
    cache: dict = {}
    tau_max = max(grid.point(i, j)[1] for j in range(grid.second.count))
    cells = []
    for j in range(grid.second.count):
        c1, tau = grid.point(i, j)
        if (i, j) in skip:
            cells.append(skip[(i, j)])
            continue
        cell = MapCell(i, j, c1, tau)
        for method in grid.methods:
            try:
                if method == "ctcr":
                    v, near = _ctcr_cell(plant, c1, tau, grid.tau_halfwidth(j), cache, tau_max)
                    cell.verdicts["ctcr"] = v
                    cell.boundary = cell.boundary or near
                elif method == "smallgain":
                    if hinf is None:
                        cell.verdicts["smallgain"] = Verdict("inapplicable", hinf_error or "")
                    else:
                        sg = small_gain_verdict(CoupledSystem(plant, WaveChannel.from_delay(c1, tau)), hinf)
                        cell.verdicts["smallgain"] = Verdict(sg.value, f"hinf={hinf.norm!r}")
                elif method == "qs":
                    backend = backend or get_backend()
                    for N in grid.orders:
                        try:
                            r = qs_feasible(N, plant, WaveChannel.from_delay(c1, tau), backend)
                            cell.verdicts[f"qs:{N}"] = Verdict(r.verdict.value, f"margin={r.margin!r}")
                        except WavestabError as exc:
                            cell.verdicts[f"qs:{N}"] = Verdict("error", f"{type(exc).__name__}: {exc}")
                elif method == "sim":
                    cell.verdicts["sim"] = _sim_cell(plant, c1, tau)
            except (WavestabError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                cell.verdicts[method] = Verdict("error", f"{type(exc).__name__}: {exc}")
        cells.append(cell)
    return cells


class MapTable:
    """Swept cells indexed by ``(i, j)`` plus the grid that produced them."""

    def __init__(self, grid: GridSpec, cells: list, system: str = ""):
        self.grid = grid
        self.system = system
        self.cells = sorted(cells, key=lambda c: (c.i, c.j))
        self._index = {(c.i, c.j): c for c in self.cells}

    def __getitem__(self, ij) -> MapCell:
        return self._index[ij]

    def __len__(self) -> int:
        return len(self.cells)

    def keys(self) -> list:
        """Verdict keys in canonical output order."""
        out = []
        for m in self.grid.methods:
            if m == "qs":
                out += [f"qs:{N}" for N in self.grid.orders]
            else:
                out.append(m)
        return out

    def stable_set(self, key: str) -> set:
        return {(c.i, c.j) for c in self.cells if c.is_stable(key)}

    def mark_boundaries(self) -> None:
        """Flag cells whose CTCR verdict differs from a 4-neighbour."""
        if "ctcr" not in self.grid.methods:
            return
        for c in self.cells:
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nb = self._index.get((c.i + di, c.j + dj))
                if nb is not None and "ctcr" in nb.verdicts and nb.verdicts["ctcr"].verdict != c.verdicts["ctcr"].verdict:
                    c.boundary = True

    # -- output ----------------------------------------------------------
    def rows(self):
        for c in self.cells:
            for key in self.keys():
                v = c.verdicts.get(key)
                if v is None:
                    continue
                method, _, order = key.partition(":")
                detail = v.detail
                if method == "ctcr":
                    detail = f"{detail};boundary={int(c.boundary)}"
                yield [repr(c.c1), repr(c.tau), method, order, v.verdict, detail]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(self.rows())
        return buf.getvalue()

    def to_json(self) -> str:
        methods: dict = {}
        for key in self.keys():
            method, _, order = key.partition(":")
            entries = []
            for c in self.cells:
                v = c.verdicts.get(key)
                if v is None:
                    continue
                e = {"i": c.i, "j": c.j, "c1": c.c1, "tau": c.tau, "verdict": v.verdict, "detail": v.detail}
                if method == "ctcr":
                    e["boundary"] = c.boundary
                entries.append(e)
            if order:
                methods.setdefault("qs", {})[order] = entries
            else:
                methods[method] = entries
        out = {"system": self.system, "grid": self.grid.to_dict(), "methods": methods}
        if "qs" in self.grid.methods:
            out["qs_min_order"] = [
                {"i": c.i, "j": c.j, "c1": c.c1, "tau": c.tau, "order": None if math.isinf(c.qs_min_order) else c.qs_min_order}
                for c in self.cells
            ]
        return json.dumps(out, indent=1, sort_keys=False)

    def to_gnuplot(self, key: str) -> str:
        """Nonuniform-matrix text: first row is the first-axis values.

        Cell codes: 1 stable, 0 not stable, -1 error or missing.  For the key
        ``qs_min_order`` the value is the smallest proving order (-1 if none).
        """
        g = self.grid
        xs, ys = g.first.values, g.second.values
        lines = [" ".join([str(len(xs))] + [repr(float(x)) for x in xs])]
        for j, y in enumerate(ys):
            vals = []
            for i in range(len(xs)):
                c = self._index.get((i, j))
                if c is None:
                    vals.append("-1")
                elif key == "qs_min_order":
                    m = c.qs_min_order
                    vals.append("-1" if math.isinf(m) else str(m))
                else:
                    s = c.is_stable(key)
                    vals.append("-1" if s is None else str(int(s)))
            lines.append(" ".join([repr(float(y))] + vals))
        return "\n".join(lines) + "\n"


def _cells_from_csv(path, grid: GridSpec) -> dict:
    """Completed cells from an earlier CSV run of the same grid."""
    lookup = {}
    for i in range(grid.first.count):
        for j in range(grid.second.count):
            c1, tau = grid.point(i, j)
            lookup[(repr(c1), repr(tau))] = (i, j, c1, tau)
    partial: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise DomainError(f"{path}: not a sweep CSV (header {header!r})")
        for row in reader:
            if len(row) != 6 or (row[0], row[1]) not in lookup:
                continue
            i, j, c1, tau = lookup[(row[0], row[1])]
            cell = partial.setdefault((i, j), MapCell(i, j, c1, tau))
            method, order, verdict, detail = row[2:]
            key = f"{method}:{order}" if order else method
            if method == "ctcr":
                detail, _, b = detail.rpartition(";boundary=")
                cell.boundary = b == "1"
            cell.verdicts[key] = Verdict(verdict, detail)
    wanted = MapTable(grid, []).keys()
    return {ij: c for ij, c in partial.items() if all(k in c.verdicts for k in wanted)}


def sweep(plant: LtiPlant, grid: GridSpec, jobs: int | None = 1, resume_from=None, progress=None) -> MapTable:
    """Run every requested analyzer on every cell of ``grid``.

    ``resume_from`` names an earlier CSV output; cells it fully covers are
    not recomputed.  ``progress`` is called with ``(done, total)`` columns.
    """
    skip = _cells_from_csv(resume_from, grid) if resume_from and os.path.exists(resume_from) else {}
    ncol = grid.first.count
    results: dict = {}
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1 or ncol == 1:
        for i in range(ncol):
            results[i] = _column(plant, grid, i, {k: v for k, v in skip.items() if k[0] == i})
            if progress:
                progress(i + 1, ncol)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {i: pool.submit(_column, plant, grid, i, {k: v for k, v in skip.items() if k[0] == i}) for i in range(ncol)}
            for done, i in enumerate(sorted(futs), start=1):
                results[i] = futs[i].result()
                if progress:
                    progress(done, ncol)
    cells = [c for i in sorted(results) for c in results[i]]
    table = MapTable(grid, cells, plant.name)
    table.mark_boundaries()
    return table


def cmin_extraction(table: MapTable, key: str = "smallgain") -> list[tuple]:
    """Per ``c0`` column, the smallest ``c`` above which every sampled cell is stable.

    Columns whose top cell is not stable give ``inf`` (above the range).
    """
    g = table.grid
    if g.coords != "c0c":
        raise DomainError("c_min extraction needs a (c0, c) grid")
    cs = g.second.values
    out = []
    for i, c0 in enumerate(g.first.values):
        cmin = math.inf
        for j in range(len(cs) - 1, -1, -1):
            if table[(i, j)].is_stable(key):
                cmin = float(cs[j])
            else:
                break
        out.append((float(c0), cmin))
    return out


@dataclass
class Violation:
    kind: str
    cell: tuple
    c1: float
    tau: float
    detail: str = ""


def containment_violations(table: MapTable) -> list[Violation]:
    """Check smallgain ⊆ ctcr and qs(N) ⊆ qs(N+1) ⊆ ctcr away from boundary cells."""
    out = []
    keys = table.keys()
    qs_keys = [k for k in keys if k.startswith("qs:")]
    for c in table.cells:
        # the order hierarchy is pointwise, so boundary cells are checked too
        for a, b in zip(qs_keys, qs_keys[1:]):
            if c.is_stable(a) and c.is_stable(b) is False:
                out.append(Violation(f"{a} not within {b}", (c.i, c.j), c.c1, c.tau))
        if c.boundary or "ctcr" not in keys or c.is_stable("ctcr") is not False:
            continue
        for k in (["smallgain"] if "smallgain" in keys else []) + qs_keys:
            if c.is_stable(k):
                out.append(Violation(f"{k} not within ctcr", (c.i, c.j), c.c1, c.tau))
    return out


def stratified_sample(table: MapTable, count: int, seed: int = 0) -> list[MapCell]:
    """Up to ``count`` cells split evenly between CTCR-stable and -unstable strata.

    Non-boundary cells are drawn first; the seed only changes which cells are
    picked.  The result is sorted by cell index.
    """
    rng = np.random.default_rng(seed)
    strata = {True: [], False: []}
    for c in table.cells:
        s = c.is_stable("ctcr")
        if s is not None:
            strata[s].append(c)
    picked = []
    quota = {True: count // 2, False: count - count // 2}
    for key in (True, False):
        other = strata[not key]
        # hand unused quota to the other stratum
        quota[key] = min(len(strata[key]), quota[key] + max(0, quota[not key] - len(other)))
    for key in (True, False):
        pool = sorted(strata[key], key=lambda c: (c.boundary, c.i, c.j))
        inner = [c for c in pool if not c.boundary]
        edge = [c for c in pool if c.boundary]
        order = list(rng.permutation(len(inner))) + [len(inner) + k for k in rng.permutation(len(edge))]
        both = inner + edge
        picked += [both[k] for k in order[: quota[key]]]
    return sorted(picked, key=lambda c: (c.i, c.j))


def simulator_disagreements(plant: LtiPlant, cells: list[MapCell]) -> list[Violation]:
    """Simulate each cell and report sound contradictions with its CTCR verdict.

    Boundary cells, inconclusive runs and errors are never counted as
    contradictions.
    """
    out = []
    for c in cells:
        if "sim" not in c.verdicts:
            try:
                c.verdicts["sim"] = _sim_cell(plant, c.c1, c.tau)
            except WavestabError as exc:
                c.verdicts["sim"] = Verdict("error", f"{type(exc).__name__}: {exc}")
        sim = c.verdicts["sim"].verdict
        ctcr = c.is_stable("ctcr")
        if c.boundary or ctcr is None or sim not in ("decaying", "growing"):
            continue
        if (sim == "decaying") != ctcr:
            out.append(Violation("sim disagrees with ctcr", (c.i, c.j), c.c1, c.tau, f"sim={sim}"))
    return out
