import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scaleinv.kinetics import (
    FIXTURE_NAMES,
    REFERENCE_CIRCUITS,
    Circuit,
    CircuitError,
    Term,
    build_rhs,
    circuit_from_topology,
    edge_names,
    fd_jacobian,
    linear_ffl,
    linear_ffl_steady_state,
    load_circuit,
    load_fixture,
    mm_term,
    ratio_ffl,
    required_edges,
    save_circuit,
)
from scaleinv.topology import Topology

unit = st.floats(0.0, 1.0)


def python_rhs(c: Circuit, x, u):
    dx = np.zeros(3)
    for t in c.terms:
        if t.modulator in "ABC" and len(t.modulator) == 1:
            mod = x["ABC".index(t.modulator)]
        elif t.modulator == "u":
            mod = u
        else:
            mod = c.constitutive[t.modulator]
        i = "ABC".index(t.target)
        sub = 1.0 - x[i] if t.sign > 0 else x[i]
        dx[i] += t.sign * mm_term(mod, sub, t.k, t.K)
    return dx


def test_mm_term_examples():
    assert mm_term(1.0, 1.0, 1.0, 1.0) == pytest.approx(0.5)
    assert mm_term(0.5, 0.2, 2.0, 0.3) == pytest.approx(2 * 0.5 * 0.2 / 0.5)
    assert mm_term(0.0, 0.7, 3.0, 0.1) == 0.0


def test_eq2_example_term_split():
    c = load_fixture("eq2-example")
    assert [len(c.terms_on(n)) for n in "ABC"] == [3, 2, 3]


@pytest.mark.parametrize("name", REFERENCE_CIRCUITS + ("eq2-example",))
def test_compiled_field_matches_term_sum(name):
    c = load_fixture(name)
    fld = build_rhs(c)
    rng = np.random.default_rng(1)
    for x in rng.uniform(0, 1, size=(20, 3)):
        u = rng.uniform(0.1, 1.0)
        np.testing.assert_allclose(fld(x, u), python_rhs(c, x, u), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("name", REFERENCE_CIRCUITS)
def test_analytic_jacobians(name):
    fld = build_rhs(load_fixture(name))
    rng = np.random.default_rng(2)
    for x in rng.uniform(0.05, 0.95, size=(5, 3)):
        np.testing.assert_allclose(fld.jacobian(x, 0.4), fd_jacobian(lambda z: fld(z, 0.4), x), atol=1e-7)
        fd_u = (fld(x, 0.4 + 1e-6) - fld(x, 0.4 - 1e-6)) / 2e-6
        np.testing.assert_allclose(fld.du(x, 0.4), fd_u, atol=1e-7)


def test_circuit_one_parameters():
    c = load_fixture("circuit-01")
    p = c.param_dict()
    assert p["UA"] == pytest.approx((11.447219, 0.093918))
    assert p["AC"][1] == pytest.approx(0.113697)


@given(st.tuples(unit, unit, unit), st.integers(0, 2), st.booleans(), st.floats(0.01, 2.0))
@settings(max_examples=200, deadline=None)
def test_unit_cube_forward_invariant(x, axis, upper, u):
    x = list(x)
    x[axis] = 1.0 if upper else 0.0
    for name in ("circuit-01", "circuit-12", "circuit-23"):
        dx = build_rhs(load_fixture(name))(x, u)
        assert (dx[axis] <= 0) if upper else (dx[axis] >= 0)


def test_linear_ffl_limits():
    k = (1.0, 2.0, 0.5, 1.5, 3.0, 0.7)
    fld = linear_ffl(k).field()
    for u in (0.3, 0.6, 1.0, 3.0):
        s = linear_ffl_steady_state(k, u)
        np.testing.assert_allclose(fld(s, u), 0.0, atol=1e-14)
        assert s[2] == pytest.approx(k[3] * k[4] / (k[2] * k[5]))


def test_ratio_ffl_output_depends_on_ratio_only():
    fld = ratio_ffl((1, 1, 1, 1, 2, 1)).field()
    assert fld([0.4, 0.2, 0.9], 0.5)[2] == pytest.approx(2 * 0.4 / 0.2 - 0.9)
    assert fld([1.2, 0.6, 0.9], 1.5)[2] == pytest.approx(fld([0.4, 0.2, 0.9], 0.5)[2])


def test_required_edges_and_names():
    t = Topology.from_spec("A->C, A->B, B-|C")
    names = [e[0] for e in required_edges(t)]
    assert names[0] == "UA"
    assert {"AB", "AC", "BC", "FA-A", "FB-B"} <= set(names)
    assert "FC-C" not in names and "EC-C" not in names
    assert edge_names(t) == sorted(names)


def test_parameters_must_match_topology():
    t = Topology.from_spec("A->C")
    params = {n: (1.0, 0.5) for n in edge_names(t)}
    c = circuit_from_topology(t, params, 0.5)
    assert {term.modulator for term in c.terms if term.constitutive} == set(c.constitutive)
    with pytest.raises(CircuitError):
        circuit_from_topology(t, {**params, "BA": (1.0, 1.0)})
    params.pop("AC")
    with pytest.raises(CircuitError):
        circuit_from_topology(t, params)


def test_term_validation():
    with pytest.raises(CircuitError):
        Term("AB", "B", 1, "A", -1.0, 1.0)
    with pytest.raises(CircuitError):
        Term("AB", "D", 1, "A", 1.0, 1.0)
    with pytest.raises(CircuitError):
        Circuit((Term("FB-B", "B", -1, "FB", 1.0, 1.0),), {})


@pytest.mark.parametrize("name", ["circuit-01", "circuit-12", "eq2-example"])
def test_json_roundtrip(name, tmp_path):
    c = load_fixture(name)
    save_circuit(c, tmp_path / "c.json")
    back = load_circuit(tmp_path / "c.json")
    assert back.param_dict() == c.param_dict()
    np.testing.assert_array_equal(back.table(), c.table())


def test_constitutive_fraction_override():
    c = load_fixture("circuit-01", constitutive_fraction=1.0)
    assert set(c.constitutive.values()) == {1.0}


def test_all_fixtures_load():
    for name in FIXTURE_NAMES:
        assert load_fixture(name) is not None
    with pytest.raises(KeyError):
        load_fixture("circuit-99")
