"""Network structure, parameterizations and Dirichlet priors.

Conditional probability tables are stored densely, one numpy array per
variable with shape ``parent_cards + (card,)``; the last axis indexes the
child value and the leading axes index the parent instantiation in the
order the parents are declared.  A single row ``table[u]`` is one
parameter set.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

SIMPLEX_ATOL = 1e-9
INTERIOR_FLOOR = 1e-6


class ModelFormatError(ValueError):
    """A network, parameterization or prior file could not be parsed."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class Variable:
    id: str
    states: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        if len(self.states) < 2:
            raise ValueError(f"variable {self.id!r} needs at least 2 states")
        if len(set(self.states)) != len(self.states):
            raise ValueError(f"variable {self.id!r} has duplicate state labels")

    @property
    def cardinality(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class Network:
    """A DAG over discrete variables.

    ``parents[i]`` lists the parent ids of ``variables[i]``.  Construction
    does not check acyclicity; use :func:`validate` for a full report.
    """

    variables: tuple[Variable, ...]
    parents: tuple[tuple[str, ...], ...]
    name: str = "network"

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "parents", tuple(tuple(p) for p in self.parents))
        if len(self.parents) != len(self.variables):
            raise ValueError("one parent list per variable is required")
        ids = [v.id for v in self.variables]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate variable ids")

    @classmethod
    def from_edges(cls, variables: Sequence[Variable], parents: Mapping[str, Sequence[str]],
                   name: str = "network") -> "Network":
        return cls(tuple(variables), tuple(tuple(parents.get(v.id, ())) for v in variables), name)

    def __len__(self):
        return len(self.variables)

    @cached_property
    def ids(self) -> tuple[str, ...]:
        return tuple(v.id for v in self.variables)

    @cached_property
    def index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.ids)}

    @cached_property
    def cards(self) -> tuple[int, ...]:
        return tuple(v.cardinality for v in self.variables)

    @cached_property
    def parent_indices(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(self.index[p] for p in ps) for ps in self.parents)

    def parent_cards(self, i: int) -> tuple[int, ...]:
        return tuple(self.cards[p] for p in self.parent_indices[i])

    def family_shape(self, i: int) -> tuple[int, ...]:
        return self.parent_cards(i) + (self.cards[i],)

    @cached_property
    def topological_order(self) -> tuple[int, ...]:
        order = _toposort(self)
        if order is None:
            raise ValueError(f"network {self.name!r} is cyclic")
        return order


def _toposort(network: Network) -> tuple[int, ...] | None:
    n = len(network)
    pidx = [[network.index[p] for p in ps if p in network.index] for ps in network.parents]
    indeg = [len(ps) for ps in pidx]
    children = [[] for _ in range(n)]
    for i, ps in enumerate(pidx):
        for p in ps:
            children[p].append(i)
    ready = [i for i in range(n) if indeg[i] == 0]
    order = []
    while ready:
        ready.sort()
        i = ready.pop(0)
        order.append(i)
        for c in children[i]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    return tuple(order) if len(order) == n else None


class ParameterSet(NamedTuple):
    child: str
    parent_instantiation: tuple[tuple[str, str], ...]
    probabilities: np.ndarray


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class _FamilyTables:
    """Shared storage for per-family arrays aligned with a network."""

    def __init__(self, network: Network, tables: Mapping[str, object] | Sequence[object]):
        self.network = network
        if isinstance(tables, Mapping):
            self.tables = {k: _frozen(v) for k, v in tables.items()}
        else:
            self.tables = {v: _frozen(t) for v, t in zip(network.ids, tables)}

    def __getitem__(self, var: str) -> np.ndarray:
        return self.tables[var]

    def table(self, i: int) -> np.ndarray:
        return self.tables[self.network.ids[i]]

    def rows(self, i: int) -> np.ndarray:
        """The family table of variable ``i`` flattened to (instantiations, card)."""
        return self.table(i).reshape(-1, self.network.cards[i])

    @property
    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(self.tables[v] for v in self.network.ids)

    def _rows_dict(self) -> dict[str, list[list[float]]]:
        return {v: self.rows(i).tolist() for i, v in enumerate(self.network.ids)}


class Parameterization(_FamilyTables):
    """One conditional distribution per family instantiation."""

    def parameter_sets(self) -> Iterator[ParameterSet]:
        net = self.network
        for i, var in enumerate(net.ids):
            table = self.table(i)
            pstates = [net.variables[p].states for p in net.parent_indices[i]]
            for u in itertools.product(*[range(len(s)) for s in pstates]):
                inst = tuple((net.parents[i][k], pstates[k][j]) for k, j in enumerate(u))
                yield ParameterSet(var, inst, table[u])

    def max_abs_diff(self, other: "Parameterization") -> float:
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.arrays, other.arrays))

    def to_dict(self) -> dict:
        return {"cpts": self._rows_dict()}

    @classmethod
    def from_dict(cls, network: Network, data: Mapping) -> "Parameterization":
        return cls(network, _tables_from_rows(network, data["cpts"], "cpts"))


class DirichletPrior(_FamilyTables):
    """Dirichlet exponents, one per network parameter."""

    @classmethod
    def uniform(cls, network: Network, exponent: float = 2.0) -> "DirichletPrior":
        return cls(network, [np.full(network.family_shape(i), float(exponent))
                             for i in range(len(network))])

    def to_dict(self) -> dict:
        return {"exponents": self._rows_dict()}

    @classmethod
    def from_dict(cls, network: Network, data: Mapping) -> "DirichletPrior":
        ex = data["exponents"]
        if isinstance(ex, (int, float)):
            return cls.uniform(network, float(ex))
        return cls(network, _tables_from_rows(network, ex, "exponents"))


def _tables_from_rows(network: Network, rows: Mapping, what: str) -> list[np.ndarray]:
    out = []
    for i, var in enumerate(network.ids):
        if var not in rows:
            raise ModelFormatError(f"{what}: missing table for {var!r}")
        arr = np.asarray(rows[var], dtype=np.float64)
        shape = network.family_shape(i)
        if arr.size != int(np.prod(shape)):
            raise ModelFormatError(f"{what}: table for {var!r} has {arr.size} entries, "
                                   f"expected {int(np.prod(shape))}")
        out.append(arr.reshape(shape))
    return out


def validate(network: Network, params: Parameterization | None = None) -> list[str]:
    """Return a list of violated invariants; empty means valid."""
    report = []
    ids = set(network.ids)
    for var, ps in zip(network.ids, network.parents):
        for p in ps:
            if p not in ids:
                report.append(f"{var}: parent {p!r} is not a declared variable")
        if len(set(ps)) != len(ps):
            report.append(f"{var}: duplicate parent")
    if _toposort(network) is None:
        report.append("parent relation is cyclic")
    if params is None or report:
        return report
    for i, var in enumerate(network.ids):
        if var not in params.tables:
            report.append(f"{var}: missing parameter sets")
            continue
        table = params.tables[var]
        if table.shape != network.family_shape(i):
            report.append(f"{var}: table shape {table.shape}, expected {network.family_shape(i)}")
            continue
        rows = table.reshape(-1, network.cards[i])
        if np.any(~np.isfinite(rows)) or np.any(rows < 0) or np.any(rows > 1):
            report.append(f"{var}: probability outside [0, 1]")
        sums = rows.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > SIMPLEX_ATOL)
        for r in bad:
            report.append(f"{var}: parameter set {int(r)} sums to {sums[r]!r}")
    for extra in sorted(set(params.tables) - ids):
        report.append(f"{extra}: table for undeclared variable")
    return report


def uniform_parameterization(network: Network) -> Parameterization:
    return Parameterization(network, [np.full(network.family_shape(i), 1.0 / network.cards[i])
                                      for i in range(len(network))])


def random_parameterization(network: Network, seed: int) -> Parameterization:
    """Parameter sets drawn uniformly from the simplex, kept at least
    ``INTERIOR_FLOOR`` away from its boundary."""
    rng = np.random.default_rng(seed)
    tables = []
    for i in range(len(network)):
        k = network.cards[i]
        shape = network.family_shape(i)
        draw = rng.dirichlet(np.ones(k), size=shape[:-1] or None).reshape(shape)
        tables.append(INTERIOR_FLOOR + (1.0 - k * INTERIOR_FLOOR) * draw)
    return Parameterization(network, tables)


def dirichlet_mode(prior: DirichletPrior) -> Parameterization:
    net = prior.network
    tables = []
    for i in range(len(net)):
        psi = prior.table(i)
        if np.any(psi <= 1):
            raise ValueError(f"{net.ids[i]}: Dirichlet mode needs all exponents > 1")
        tables.append((psi - 1.0) / (psi.sum(axis=-1, keepdims=True) - net.cards[i]))
    return Parameterization(net, tables)


def log_prior_density(prior: DirichletPrior, params: Parameterization) -> float:
    """Unnormalized log Dirichlet density, ``sum (psi - 1) log theta``."""
    total = 0.0
    for psi, theta in zip(prior.arrays, params.arrays):
        w = psi - 1.0
        with np.errstate(divide="ignore"):
            logs = np.where(w != 0, np.log(theta), 0.0)
        if np.any(np.isneginf(logs) & (w > 0)):
            return float("-inf")
        total += float(np.sum(w * logs))
    return total


# -- serialization ----------------------------------------------------------

def network_to_dict(network: Network, params: Parameterization | None = None) -> dict:
    out = {
        "name": network.name,
        "variables": [{"id": v.id, "states": list(v.states)} for v in network.variables],
        "parents": {v: list(ps) for v, ps in zip(network.ids, network.parents)},
    }
    if params is not None:
        out.update(params.to_dict())
    return out


def network_from_dict(data: Mapping) -> tuple[Network, Parameterization | None]:
    try:
        variables = [Variable(v["id"], tuple(v["states"])) for v in data["variables"]]
        parents = data.get("parents", {})
        net = Network.from_edges(variables, parents, data.get("name", "network"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed network: {exc}") from exc
    params = Parameterization.from_dict(net, data) if "cpts" in data else None
    return net, params


def save_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n")


def _read_json(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(exc.msg, path, exc.lineno) from exc


def load_network(path) -> tuple[Network, Parameterization | None]:
    """Load a network from JSON, or from BIF when the suffix is ``.bif``."""
    path = Path(path)
    if path.suffix.lower() == ".bif":
        from .bif import read_bif
        return read_bif(path)
    try:
        return network_from_dict(_read_json(path))
    except ModelFormatError as exc:
        if exc.path is None:
            raise ModelFormatError(str(exc), path) from exc
        raise


def save_network(path, network: Network, params: Parameterization | None = None) -> None:
    save_json(network_to_dict(network, params), path)


def load_parameterization(path, network: Network) -> Parameterization:
    return Parameterization.from_dict(network, _read_json(path))


def load_prior(path, network: Network) -> DirichletPrior:
    return DirichletPrior.from_dict(network, _read_json(path))


def random_network(n_vars: int, seed: int, max_parents: int = 3,
                   cardinalities: Sequence[int] = (2, 3), name: str = "random") -> Network:
    """A random DAG; variable ``k`` draws its parents from variables ``0..k-1``."""
    rng = np.random.default_rng(seed)
    variables = []
    parents = []
    for k in range(n_vars):
        card = int(rng.choice(cardinalities))
        variables.append(Variable(f"X{k}", tuple(f"s{j}" for j in range(card))))
        m = int(rng.integers(0, min(max_parents, k) + 1))
        ps = sorted(rng.choice(k, size=m, replace=False).tolist()) if m else []
        parents.append(tuple(f"X{p}" for p in ps))
    return Network(tuple(variables), tuple(parents), name)
