import json
import math

import numpy as np
import pytest

import wavestab.qs
from wavestab.errors import DomainError, WavestabError
from wavestab.mapper import (
    Axis,
    GridSpec,
    cmin_extraction,
    containment_violations,
    stratified_sample,
    sweep,
)
from wavestab.systems import POCKETS, STABLE, UNSTABLE

HINF = 20 / 21


def test_grid_parsing():
    g = GridSpec.parse("c1=0.2:2:5,tau=0.1:3:4", methods=["qs", "ctcr"], orders=[2, 0, 2])
    assert g.methods == ("ctcr", "qs") and g.orders == (0, 2)
    assert g.point(4, 3) == (2.0, 3.0)
    g = GridSpec.parse("c0=0.5:1:2,c=2:4:3", coords="c0c")
    assert g.point(1, 2) == (4.0, 0.25)
    for bad in ("c1=0.2:2:5", "c1=2:1:5,tau=0.1:1:3", "c1=0:1:5,tau=0.1:1:3", "c1=1:2:1,tau=0.1:1:3", "c1=a:b:c,tau=1:2:3"):
        with pytest.raises(DomainError):
            GridSpec.parse(bad)
    with pytest.raises(DomainError):
        GridSpec(Axis(1, 2, 2), Axis(1, 2, 2), methods=("magic",))


def test_empty_methods_and_minimal_grid():
    t = sweep(STABLE, GridSpec.parse("c1=0.5:1:2,tau=0.5:1:2"))
    assert len(t) == 4 and all(c.verdicts == {} for c in t.cells)
    assert t.to_csv() == "c1,tau,method,order,verdict,detail\n"
    t = sweep(STABLE, GridSpec.parse("c1=0.5:1:2,tau=0.5:1:2", methods=["ctcr"]))
    assert len(t.to_csv().splitlines()) == 5


def test_smallgain_region_is_analytic():
    t = sweep(STABLE, GridSpec.parse("c1=0.1:3:40,tau=0.1:3:5", methods=["smallgain"]))
    for c in t.cells:
        if abs(c.c1 - HINF) > 1e-9:
            assert c.is_stable("smallgain") == (c.c1 > HINF)


def stable_runs(flags):
    return sum(1 for a, b in zip([False] + flags, flags) if b and not a)


def test_pockets_column():
    t = sweep(POCKETS, GridSpec.parse("c1=0.2:2:10,tau=0.05:4:80", methods=["ctcr"]))
    col = [t[(4, j)] for j in range(80)]
    assert col[0].c1 == pytest.approx(1.0)
    assert stable_runs([c.is_stable("ctcr") for c in col]) >= 2
    # every boundary cell is next to a verdict change or a crossing delay
    assert any(c.boundary for c in col)


def test_containment_on_stable_example(backend):
    t = sweep(STABLE, GridSpec.parse("c1=0.3:2:6,tau=0.2:3:6", methods=["ctcr", "smallgain", "qs"], orders=[0, 1]))
    assert containment_violations(t) == []
    assert t.stable_set("smallgain") <= t.stable_set("ctcr") | {(c.i, c.j) for c in t.cells if c.boundary}


def test_qs_curve_above_ctcr_curve_in_c0c_plane():
    t = sweep(STABLE, GridSpec.parse("c0=0.2:2:6,c=0.2:3:8", methods=["ctcr", "qs"], orders=[0], coords="c0c"))
    ctcr = dict(cmin_extraction(t, "ctcr"))
    qs = dict(cmin_extraction(t, "qs:0"))
    for c0 in ctcr:
        assert qs[c0] >= ctcr[c0]


def test_cmin_extraction():
    t = sweep(STABLE, GridSpec.parse("c0=0.5:3:6,c=0.5:3:11", methods=["smallgain"], coords="c0c"))
    curve = cmin_extraction(t, "smallgain")
    cs = t.grid.second.values
    for c0, cmin in curve:
        if c0 * cs[0] > HINF:
            assert cmin == cs[0]  # fully stable column
        elif c0 * cs[-1] <= HINF:
            assert math.isinf(cmin)
        else:
            assert HINF / c0 < cmin <= HINF / c0 + t.grid.second.step
    with pytest.raises(DomainError):
        cmin_extraction(sweep(STABLE, GridSpec.parse("c1=1:2:2,tau=1:2:2")), "smallgain")


def test_parallel_matches_serial():
    g = GridSpec.parse("c1=0.3:2:4,tau=0.1:3:6", methods=["ctcr", "smallgain"])
    assert sweep(UNSTABLE, g, jobs=2).to_csv() == sweep(UNSTABLE, g, jobs=1).to_csv()


def test_resume_skips_completed_cells(tmp_path, monkeypatch):
    g = GridSpec.parse("c1=0.8:1.2:2,tau=0.5:1.5:3", methods=["ctcr", "qs"], orders=[1])
    full = sweep(UNSTABLE, g).to_csv()
    path = tmp_path / "map.csv"
    lines = full.splitlines(keepends=True)
    path.write_text("".join(lines[:-2]))  # drop the last cell
    real = wavestab.qs.qs_feasible
    calls = []

    def counting(*args, **kw):
        calls.append(args[2].tau)
        return real(*args, **kw)

    monkeypatch.setattr(wavestab.qs, "qs_feasible", counting)
    again = sweep(UNSTABLE, g, resume_from=path).to_csv()
    assert again == full
    assert len(calls) == 1


def test_cell_errors_are_recorded(monkeypatch):
    def boom(*args, **kw):
        raise WavestabError("solver exploded")

    monkeypatch.setattr(wavestab.qs, "qs_feasible", boom)
    t = sweep(STABLE, GridSpec.parse("c1=1:2:2,tau=1:2:2", methods=["ctcr", "qs"]))
    assert all(c.verdicts["qs:0"].verdict == "error" for c in t.cells)
    assert all(c.verdicts["ctcr"].verdict == "stable" for c in t.cells)


def test_outputs():
    t = sweep(UNSTABLE, GridSpec.parse("c1=0.8:1.2:3,tau=0.5:2:4", methods=["ctcr", "qs"], orders=[0, 1]))
    data = json.loads(t.to_json())
    assert set(data["methods"]) == {"ctcr", "qs"} and set(data["methods"]["qs"]) == {"0", "1"}
    assert len(data["methods"]["ctcr"]) == 12 and len(data["qs_min_order"]) == 12
    rows = t.to_gnuplot("ctcr").splitlines()
    assert rows[0].split()[0] == "3" and len(rows) == 5 and all(len(r.split()) == 4 for r in rows)
    mins = t.to_gnuplot("qs_min_order")
    codes = {v for l in mins.splitlines()[1:] for v in l.split()[1:]}
    assert codes <= {"-1", "0", "1"} and "-1" in codes


def test_stratified_sample():
    t = sweep(UNSTABLE, GridSpec.parse("c1=0.2:2:12,tau=0.05:2:12", methods=["ctcr"]))
    a = stratified_sample(t, 20, seed=1)
    assert len(a) == 20 and a == stratified_sample(t, 20, seed=1)
    n_stable = sum(c.is_stable("ctcr") for c in a)
    assert n_stable == 10
    assert stratified_sample(t, 0) == []
    assert len(stratified_sample(t, 10_000)) == len(t)
