"""Michaelis-Menten vector fields for three-node enzymatic circuits.

Every regulatory interaction contributes one saturating term to the equation
of its target node::

    activation:    + k * v * (1 - x) / (1 - x + K)
    deactivation:  - k * w * x / (x + K)

where ``v``/``w`` is the active fraction of the modulating enzyme (a state
variable, the input ``u`` or a buffered constitutive enzyme).

A circuit is stored as a numeric term table so that fields compiled with
numba can evaluate it without Python overhead; the rows are

    [target, sign, modulator, k, K, constant]

with ``modulator`` an index 0..2 (x_A, x_B, x_C), ``MOD_INPUT`` for the input
or ``MOD_CONST`` for a constitutive enzyme whose active fraction is
``constant``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import numpy as np
from numba import njit

from .topology import EDGE_ORDER, NODES, EdgeAction, Topology, constitutive_flags

MOD_INPUT = 3
MOD_CONST = 4

DEFAULT_CONSTITUTIVE_FRACTION = 0.5

_MODULATOR_CODES = {"A": 0, "B": 1, "C": 2, "u": MOD_INPUT}


class CircuitError(ValueError):
    """Parameters do not match the circuit's set of interactions."""


def mm_term(modulator: float, substrate: float, k: float, K: float) -> float:
    """Michaelis-Menten rate ``k * modulator * substrate / (substrate + K)``."""
    return k * modulator * substrate / (substrate + K)


@njit(cache=True)
def mm_rhs(x, u, table):
    dx = np.zeros(3)
    for i in range(table.shape[0]):
        target = int(table[i, 0])
        m = int(table[i, 2])
        if m == MOD_INPUT:
            mod = u
        elif m == MOD_CONST:
            mod = table[i, 5]
        else:
            mod = x[m]
        if table[i, 1] > 0:
            s = 1.0 - x[target]
            dx[target] += table[i, 3] * mod * s / (s + table[i, 4])
        else:
            s = x[target]
            dx[target] -= table[i, 3] * mod * s / (s + table[i, 4])
    return dx


@njit(cache=True)
def mm_jac(x, u, table):
    """Analytic state Jacobian of :func:`mm_rhs`."""
    J = np.zeros((3, 3))
    for i in range(table.shape[0]):
        target = int(table[i, 0])
        m = int(table[i, 2])
        k = table[i, 3]
        K = table[i, 4]
        if m == MOD_INPUT:
            mod = u
        elif m == MOD_CONST:
            mod = table[i, 5]
        else:
            mod = x[m]
        if table[i, 1] > 0:
            s = 1.0 - x[target]
            sat = s / (s + K)
            # d/dx of s/(s+K) with s = 1 - x
            J[target, target] -= k * mod * K / (s + K) ** 2
            if m < 3:
                J[target, m] += k * sat
        else:
            s = x[target]
            sat = s / (s + K)
            J[target, target] -= k * mod * K / (s + K) ** 2
            if m < 3:
                J[target, m] -= k * sat
    return J


@njit(cache=True)
def mm_input_derivative(x, u, table):
    """d(rhs)/du; only input-modulated terms contribute."""
    du = np.zeros(3)
    for i in range(table.shape[0]):
        if int(table[i, 2]) == MOD_INPUT:
            target = int(table[i, 0])
            s = 1.0 - x[target] if table[i, 1] > 0 else x[target]
            du[target] += table[i, 1] * table[i, 3] * s / (s + table[i, 4])
    return du


@dataclass(frozen=True)
class Field:
    """A vector field ``dx/dt = rhs(x, u, params)``.

    ``rhs`` must be a numba-compiled function so that the integrator can
    call it from compiled code. ``bounded`` marks fields whose states are
    active fractions confined to [0, 1].
    """

    rhs: Callable
    params: np.ndarray
    dim: int
    state_names: tuple[str, ...]
    bounded: bool = True
    jac: Callable | None = None
    input_derivative: Callable | None = None
    output_index: int = 2

    def __call__(self, x, u) -> np.ndarray:
        return self.rhs(np.asarray(x, dtype=float), float(u), self.params)

    def jacobian(self, x, u, step: float = 1e-6) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            return self.jac(x, float(u), self.params)
        return fd_jacobian(lambda z: self(z, u), x, step)

    def du(self, x, u, step: float = 1e-6) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.input_derivative is not None:
            return self.input_derivative(x, float(u), self.params)
        h = step * max(1.0, abs(u))
        return (self(x, u + h) - self(x, u - h)) / (2 * h)


def fd_jacobian(fun, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with step ``step * max(1, |x_j|)``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        J[:, j] = (np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h)
    return J


@dataclass(frozen=True)
class Term:
    """One Michaelis-Menten interaction.

    ``name`` follows the usual subscript convention: source then target
    (``"BA"`` is B acting on A, ``"UA"`` the input on A, ``"FB-B"`` the
    constitutive deactivator of B).
    """

    name: str
    target: str
    sign: int
    modulator: str
    k: float
    K: float

    def __post_init__(self):
        if self.target not in NODES:
            raise CircuitError(f"term {self.name}: bad target {self.target!r}")
        if self.sign not in (1, -1):
            raise CircuitError(f"term {self.name}: sign must be +1 or -1")
        if not (self.k > 0 and self.K > 0):
            raise CircuitError(f"term {self.name}: k and K must be positive")

    @property
    def constitutive(self) -> bool:
        return self.modulator not in _MODULATOR_CODES


@dataclass(frozen=True)
class Circuit:
    """A set of interactions with concrete rate constants.

    ``constitutive`` maps constitutive enzyme names (``"EB"``, ``"FC"``...)
    to their buffered active fraction.
    """

    terms: tuple[Term, ...]
    constitutive: dict = field(default_factory=dict)
    topology: Topology | None = None
    label: str = ""
    notes: str = ""

    def __post_init__(self):
        for term in self.terms:
            if term.constitutive:
                frac = self.constitutive.get(term.modulator)
                if frac is None:
                    raise CircuitError(f"no active fraction for constitutive enzyme {term.modulator}")
                if not 0 < frac <= 1:
                    raise CircuitError(f"constitutive fraction {term.modulator}={frac} outside (0, 1]")
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise CircuitError(f"duplicate term names in {names}")

    def table(self) -> np.ndarray:
        rows = []
        for t in self.terms:
            if t.constitutive:
                mod, const = MOD_CONST, self.constitutive[t.modulator]
            else:
                mod, const = _MODULATOR_CODES[t.modulator], 0.0
            rows.append([NODES.index(t.target), t.sign, mod, t.k, t.K, const])
        return np.array(rows, dtype=float).reshape(-1, 6)

    def terms_on(self, node: str) -> list[Term]:
        return [t for t in self.terms if t.target == node]

    def param_dict(self) -> dict[str, tuple[float, float]]:
        return {t.name: (t.k, t.K) for t in self.terms}

    def with_params(self, params: dict[str, tuple[float, float]]) -> "Circuit":
        """Copy with some (k, K) pairs replaced."""
        unknown = set(params) - {t.name for t in self.terms}
        if unknown:
            raise CircuitError(f"unknown terms {sorted(unknown)}")
        terms = tuple(
            Term(t.name, t.target, t.sign, t.modulator, *params[t.name]) if t.name in params else t
            for t in self.terms
        )
        return Circuit(terms, dict(self.constitutive), self.topology, self.label, self.notes)


def required_edges(t: Topology) -> list[tuple[str, str, int, str]]:
    """(name, target, sign, modulator) for every interaction a topology implies."""
    out = [("UA", "A", 1, "u")]
    for s, d in EDGE_ORDER:
        action = t.edges[s, d]
        if action != EdgeAction.NONE:
            sign = 1 if action == EdgeAction.ACTIVATE else -1
            out.append((NODES[s] + NODES[d], NODES[d], sign, NODES[s]))
    for node, (e_flag, f_flag) in zip(NODES, constitutive_flags(t)):
        if e_flag:
            out.append((f"E{node}-{node}", node, 1, f"E{node}"))
        if f_flag:
            out.append((f"F{node}-{node}", node, -1, f"F{node}"))
    return out


def edge_names(t: Topology) -> list[str]:
    """Sorted names of the free (k, K) pairs of a topology."""
    return sorted(name for name, *_ in required_edges(t))


def circuit_from_topology(
    t: Topology,
    params: dict[str, tuple[float, float]],
    constitutive_fraction: float = DEFAULT_CONSTITUTIVE_FRACTION,
    label: str = "",
) -> Circuit:
    """Bind rate constants to a topology; ``params`` must cover exactly its edges."""
    edges = required_edges(t)
    expected = {e[0] for e in edges}
    if set(params) != expected:
        missing = sorted(expected - set(params))
        extra = sorted(set(params) - expected)
        raise CircuitError(f"params do not match topology {t.code}: missing {missing}, extra {extra}")
    terms = tuple(Term(name, target, sign, mod, *params[name]) for name, target, sign, mod in edges)
    constitutive = {mod: constitutive_fraction for _, _, _, mod in edges if mod not in _MODULATOR_CODES}
    return Circuit(terms, constitutive, t, label)


def build_rhs(c: Circuit) -> Field:
    """Compiled vector field of a circuit."""
    return Field(
        rhs=mm_rhs,
        params=c.table(),
        dim=3,
        state_names=("x_A", "x_B", "x_C"),
        bounded=True,
        jac=mm_jac,
        input_derivative=mm_input_derivative,
    )


# --- explicit (non Michaelis-Menten) models ---------------------------------


@njit(cache=True)
def linear_ffl_rhs(x, u, p):
    # p = k1..k6
    return np.array([
        p[0] * u - p[1] * x[1],
        p[2] * x[0] - p[3] * x[1],
        p[4] * x[0] - p[5] * x[1] * x[2],
    ])


@njit(cache=True)
def ratio_ffl_rhs(x, u, p):
    # output driven by x_A / x_B: exactly fold-change detecting
    return np.array([
        p[0] * u - p[1] * x[1],
        p[2] * x[0] - p[3] * x[1],
        p[4] * x[0] / x[1] - p[5] * x[2],
    ])


@dataclass(frozen=True)
class ExplicitModel:
    """A hand-written three-variable model with named constants."""

    name: str
    rhs: Callable
    params: np.ndarray
    notes: str = ""

    def field(self) -> Field:
        return Field(self.rhs, self.params, 3, ("x_A", "x_B", "x_C"), bounded=False)


def linear_ffl(k=(1, 1, 1, 1, 1, 1)) -> ExplicitModel:
    """Perfectly adapting but not scale-invariant feedforward loop.

    x_A' = k1 u - k2 x_B,  x_B' = k3 x_A - k4 x_B,  x_C' = k5 x_A - k6 x_B x_C
    """
    return ExplicitModel("eq3-linear", linear_ffl_rhs, np.array(k, dtype=float))


def ratio_ffl(k=(1, 1, 1, 1, 1, 1)) -> ExplicitModel:
    """Variant with x_C' = k5 x_A / x_B - k6 x_C, which is exactly scale invariant."""
    return ExplicitModel("eq3-ratio", ratio_ffl_rhs, np.array(k, dtype=float))


def linear_ffl_steady_state(k, u) -> np.ndarray:
    k1, k2, k3, k4, k5, k6 = k
    return np.array([k1 * k4 * u / (k2 * k3), k1 * u / k2, k4 * k5 / (k3 * k6)])


# --- JSON circuit files --------------------------------------------------------


def circuit_to_dict(c: Circuit) -> dict:
    return {
        "label": c.label,
        "topology": c.topology.code if c.topology is not None else None,
        "params": {t.name: {"k": t.k, "K": t.K} for t in c.terms},
        "terms": [
            {"name": t.name, "target": t.target, "sign": "+" if t.sign > 0 else "-", "modulator": t.modulator}
            for t in c.terms
        ],
        "constitutive": dict(c.constitutive),
        "notes": c.notes,
    }


def circuit_from_dict(d: dict, constitutive_fraction: float | None = None) -> Circuit:
    """Rebuild a circuit from its JSON form.

    When ``terms`` is present the listed interactions are used verbatim;
    otherwise they are derived from ``topology``.
    """
    topo = Topology.from_code(d["topology"]) if d.get("topology") else None
    params = {name: (float(v["k"]), float(v["K"])) for name, v in d["params"].items()}
    constitutive = dict(d.get("constitutive") or {})
    if constitutive_fraction is not None:
        constitutive = {name: constitutive_fraction for name in constitutive}
    if d.get("terms"):
        terms = []
        for item in d["terms"]:
            name = item["name"]
            if name not in params:
                raise CircuitError(f"term {name} has no parameters")
            sign = 1 if item["sign"] in ("+", 1) else -1
            terms.append(Term(name, item["target"], sign, item["modulator"], *params[name]))
        unused = set(params) - {t.name for t in terms}
        if unused:
            raise CircuitError(f"parameters without a term: {sorted(unused)}")
        for t in terms:
            if t.constitutive:
                constitutive.setdefault(t.modulator, constitutive_fraction or DEFAULT_CONSTITUTIVE_FRACTION)
        return Circuit(tuple(terms), constitutive, topo, d.get("label", ""), d.get("notes", ""))
    if topo is None:
        raise CircuitError("circuit needs either a topology or an explicit term list")
    frac = constitutive_fraction if constitutive_fraction is not None else (
        next(iter(constitutive.values()), DEFAULT_CONSTITUTIVE_FRACTION))
    return circuit_from_topology(topo, params, frac, d.get("label", ""))


def save_circuit(c: Circuit, path) -> None:
    with open(path, "w") as fh:
        json.dump(circuit_to_dict(c), fh, indent=2)
        fh.write("\n")


def load_circuit(path, constitutive_fraction: float | None = None) -> Circuit:
    with open(path) as fh:
        return circuit_from_dict(json.load(fh), constitutive_fraction)


# --- bundled fixtures ------------------------------------------------------------

REFERENCE_CIRCUITS = tuple(f"circuit-{i:02d}" for i in range(1, 26))
FIXTURE_NAMES = REFERENCE_CIRCUITS + ("eq2-example", "eq3-linear", "eq3-ratio", "takeda")


def _fixture_data() -> dict:
    text = resources.files("scaleinv").joinpath("data/circuits.json").read_text()
    return json.loads(text)


def load_fixture(name: str, constitutive_fraction: float | None = None):
    """Bundled model by name: ``circuit-01`` .. ``circuit-25``, ``eq2-example``,
    ``eq3-linear``, ``eq3-ratio`` or ``takeda``."""
    if name == "eq3-linear":
        return linear_ffl()
    if name == "eq3-ratio":
        return ratio_ffl()
    if name == "takeda":
        from .casestudy import TakedaModel

        return TakedaModel()
    data = _fixture_data()
    if name not in data:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURE_NAMES)}")
    return circuit_from_dict(data[name], constitutive_fraction)
