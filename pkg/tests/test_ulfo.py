import numpy as np
import pytest
from oracles import bisect_qss
from scipy.linalg import expm

from scaleinv.kinetics import Circuit, Term, build_rhs, fd_jacobian, linear_ffl, load_fixture, ratio_ffl
from scaleinv.integrate import step_response
from scaleinv.ulfo import (
    TABLE_HEADERS,
    ReductionError,
    c_term_split,
    fast_output_ratio,
    homogeneity_deviation,
    linear_response,
    qss_solve,
    ratio_invariance,
    reduce,
    reduced_steady_state,
    selfloop_contribution,
    sigma_table,
    table3_row,
    ulfo_verdict,
    write_table,
)


def symmetric_output():
    terms = (
        Term("UA", "A", 1, "u", 1.0, 1.0),
        Term("FA-A", "A", -1, "FA", 1.0, 1.0),
        Term("AB", "B", 1, "A", 1.0, 1.0),
        Term("FB-B", "B", -1, "FB", 1.0, 1.0),
        Term("AC", "C", 1, "A", 2.0, 0.3),
        Term("BC", "C", -1, "B", 2.0, 0.3),
    )
    return Circuit(terms, {"FA": 0.5, "FB": 0.5})


def test_symmetric_root_is_one_half():
    fld = build_rhs(symmetric_output())
    for x in (0.1, 0.4, 0.9):
        assert qss_solve(fld, x, x) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("name", ["circuit-01", "circuit-12", "circuit-18", "eq2-example"])
def test_qss_matches_bisection(name):
    c = load_fixture(name)
    r = reduce(c)
    xa, xb = np.meshgrid(np.linspace(0.02, 0.98, 12), np.linspace(0.02, 0.98, 12))
    np.testing.assert_allclose(r.h(xa, xb), bisect_qss(c, xa, xb), atol=1e-10)


def test_ratio_ffl_reduction_is_exact():
    k = (1.0, 1.0, 1.0, 1.0, 3.0, 2.0)
    r = reduce(ratio_ffl(k))
    for xa, xb in ((0.2, 0.5), (1.0, 1.0), (3.0, 0.7)):
        assert r.h(xa, xb) == pytest.approx(3.0 * xa / (2.0 * xb), rel=1e-10)
    assert homogeneity_deviation(r) < 1e-8


@pytest.mark.parametrize("name", ["circuit-01", "circuit-07", "circuit-21"])
def test_reduced_jacobians_match_finite_differences(name):
    r = reduce(load_fixture(name))
    for u in (0.3, 0.6):
        x = reduced_steady_state(r, u)
        A, B = r.jacobians(x, u)
        A_fd = fd_jacobian(lambda z: r(z, u), x, step=1e-5)
        B_fd = (r(x, u + 1e-5) - r(x, u - 1e-5)) / 2e-5
        np.testing.assert_allclose(A, A_fd, rtol=1e-5, atol=1e-6 * np.max(np.abs(A)))
        np.testing.assert_allclose(B, B_fd, rtol=1e-5, atol=1e-6 * np.max(np.abs(B)))


def test_reduced_steady_state_is_full_steady_state():
    r = reduce(load_fixture("circuit-01"))
    x = reduced_steady_state(r, 0.4)
    assert np.max(np.abs(r.full(r.lift(x, 0.4), 0.4))) < 1e-10


def test_circuit_one_sigma_table():
    r = reduce(load_fixture("circuit-01"))
    row = table3_row("circuit-01", sigma_table(r))
    assert row[1:7] == ["0.195", "0.239", "0.193", "0.237", "0.192", "0.236"]


def test_linear_response_closed_form():
    A = np.array([[-1.0, 0.0], [0.5, -2.0]])
    B = np.array([1.0, 0.0])
    t = np.linspace(0, 5, 200)
    xi = linear_response(A, B, 0.1, t)
    np.testing.assert_allclose(xi[:, 0], 0.1 * (1 - np.exp(-t)), atol=1e-12)
    M = np.zeros((3, 3))
    M[:2, :2] = A
    M[:2, 2] = 0.1 * B
    np.testing.assert_allclose(xi[37], expm(M * t[37])[:2, 2], atol=1e-12)


def test_ratio_invariance_trivial_scale():
    assert ratio_invariance(load_fixture("circuit-01"), 0.3, 0.36, p=1.0) == 0.0


def test_ratio_invariance_exact_for_linear_core():
    assert ratio_invariance(ratio_ffl(), 0.3, 0.36) < 1e-6


def test_c_term_split_sums_to_rate():
    c = load_fixture("eq2-example")
    fld = build_rhs(c)
    states = np.random.default_rng(3).uniform(0, 1, size=(10, 3))
    a, b, k = c_term_split(c, states)
    np.testing.assert_allclose(a + b + k, [fld(s, 0.5)[2] for s in states], atol=1e-13)


def test_no_selfloop_terms_give_zero():
    c = load_fixture("circuit-01")
    assert selfloop_contribution(c, step_response(build_rhs(c), 0.5, 0.6)) == 0.0


@pytest.mark.parametrize("k6", [0.01, 10.0])
def test_fast_output_ratio_closed_form(k6):
    # x_B = u, so dC'/dC = -k6 u; the (A, B) block has eigenvalues of modulus 1
    ratio = fast_output_ratio(reduce(linear_ffl((1, 1, 1, 1, k6, k6))), 0.5)
    assert ratio == pytest.approx(k6 * 0.5, rel=1e-8)


def test_reduce_rejects_non_planar_models():
    from scaleinv.casestudy import TakedaModel

    with pytest.raises(ReductionError):
        reduce(TakedaModel())


def test_verdict_exact_fcd():
    rep = ulfo_verdict(ratio_ffl((1, 1, 1, 1, 10, 10)))
    assert rep.verdict, rep.flags


def test_verdict_slow_output_control():
    rep = ulfo_verdict(linear_ffl((1, 1, 1, 1, 0.01, 0.01)))
    assert not rep.verdict and not rep.flags["fast_output"]


def test_verdict_selfloop_control():
    c = load_fixture("eq2-example")
    p = c.param_dict()
    for name, k in (("CC", 100.0), ("AC", 0.1), ("BC", 0.1)):
        p[name] = (k, p[name][1])
    rep = ulfo_verdict(c.with_params(p))
    assert not rep.verdict and not rep.flags["selfloop"]
    assert rep.selfloop_fraction > 0.5


def test_report_serialises(tmp_path):
    import json

    rep = ulfo_verdict(load_fixture("circuit-01"))
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["verdict"] is True and len(d["sigma_table"]) == 4


def test_write_table(tmp_path):
    write_table(3, [table3_row("x", [(0.3, np.array([0.1, 0.2]))])], tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].split(",") == TABLE_HEADERS[3]
    assert lines[1] == "x,0.100,0.200"
