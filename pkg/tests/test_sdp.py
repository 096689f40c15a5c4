import numpy as np
import pytest

from wavestab.errors import SolverUnavailable
from wavestab.model import WaveChannel
from wavestab.qs import assemble_problem, build_lmi
from wavestab.sdp import (
    CvxoptBackend,
    CvxpyBackend,
    LmiBlock,
    LmiProblem,
    Status,
    from_sdpa,
    get_backend,
    to_sdpa,
    verify_witness,
)
from wavestab.systems import UNSTABLE


def tiny():
    # minimise x subject to [[x, 1], [1, x]] >= 0 and x <= 5: optimum x = 1
    F0 = np.array([[0.0, 1.0], [1.0, 0.0]])
    return LmiProblem(np.array([1.0]), [LmiBlock(F0, [np.eye(2)])], np.array([[1.0]]), np.array([5.0]))


def backends():
    out = [CvxoptBackend()]
    try:
        out.append(CvxpyBackend("CLARABEL"))
    except SolverUnavailable:
        pass
    return out


@pytest.mark.parametrize("be", backends(), ids=lambda b: b.name)
def test_known_optimum(be):
    res = be.solve(tiny())
    assert res.status is Status.FEASIBLE
    assert res.x[0] == pytest.approx(1.0, abs=1e-6)
    ok, margins = verify_witness(tiny(), res.x)
    assert ok and margins[0] == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("be", backends(), ids=lambda b: b.name)
def test_infeasible(be):
    # x >= 1 from the block but x == 0 from the equality
    p = LmiProblem(np.array([0.0]), [LmiBlock(-np.eye(2), [np.eye(2)])], Aeq=np.array([[1.0]]), beq=np.array([0.0]))
    res = be.solve(p)
    assert res.status is not Status.FEASIBLE or not verify_witness(p, res.x)[0]


def test_verify_rejects_bad_witness():
    assert not verify_witness(tiny(), np.array([0.5]))[0]
    assert not verify_witness(tiny(), np.array([6.0]))[0]


def test_backends_agree_on_qs_instance():
    bes = backends()
    if len(bes) < 2:
        pytest.skip("second backend not installed")
    lp, _ = build_lmi(assemble_problem(1, UNSTABLE, WaveChannel.from_delay(1.0, 1.0)))
    vals = [-(be.solve(lp).x[-1]) for be in bes]
    assert vals[0] == pytest.approx(vals[1], abs=1e-6)


def test_get_backend(monkeypatch):
    assert get_backend("cvxopt").name == "cvxopt"
    monkeypatch.setenv("WAVESTAB_SOLVER", "cvxpy:SCS")
    assert get_backend().name == "cvxpy:SCS"
    with pytest.raises(SolverUnavailable):
        get_backend("nonexistent")


def test_sdpa_roundtrip_and_determinism():
    lp, _ = build_lmi(assemble_problem(2, UNSTABLE, WaveChannel.from_delay(0.8, 1.2)))
    text = to_sdpa(lp)
    assert text == to_sdpa(lp)
    head = text.splitlines()
    assert int(head[0]) == lp.nvars and int(head[1]) == len(lp.blocks) + 1
    back = from_sdpa(text)
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.normal(size=lp.nvars)
        for b0, b1 in zip(lp.blocks, back.blocks):
            assert np.allclose(b0.value(x), b1.value(x), atol=1e-12)
        # equalities arrive as two inequalities
        lin0 = np.concatenate([lp.h - lp.G @ x, lp.Aeq @ x - lp.beq, lp.beq - lp.Aeq @ x])
        lin1 = back.h - back.G @ x
        assert np.allclose(np.sort(lin0), np.sort(lin1), atol=1e-12)
