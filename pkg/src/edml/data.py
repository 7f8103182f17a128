"""Synthetic datasets: forward sampling, hiding, and CSV input/output."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelFormatError, Network, Parameterization

MISSING = "?"
HIDDEN_VARIABLES = "hidden-variables"
PER_CELL = "per-cell"


@dataclass(frozen=True)
class HidingPolicy:
    mode: str = HIDDEN_VARIABLES
    percentage: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (HIDDEN_VARIABLES, PER_CELL):
            raise ValueError(f"unknown hiding mode {self.mode!r}")
        if not 0.0 <= self.percentage <= 1.0:
            raise ValueError("hiding percentage must lie in [0, 1]")


@dataclass(eq=False)
class Dataset:
    """N examples over the variables of a network.

    ``values[i, j]`` is the observed value index of variable ``j`` in
    example ``i``, or -1 when missing.
    """

    network: Network
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.int64).reshape(-1, len(self.network))
        if np.any(v >= np.asarray(self.network.cards)[None, :]) or np.any(v < -1):
            raise ValueError("observed value outside a variable's cardinality")
        v.setflags(write=False)
        self.values = v
        self._patterns = None

    def __len__(self):
        return self.values.shape[0]

    @property
    def is_complete(self) -> bool:
        return bool(np.all(self.values >= 0))

    def evidence(self, i: int) -> dict[str, int]:
        return {self.network.ids[j]: int(x) for j, x in enumerate(self.values[i]) if x >= 0}

    def patterns(self):
        """Distinct example rows, their multiplicities, and the map from
        example index to pattern index."""
        if self._patterns is None:
            if len(self) == 0:
                empty = np.zeros((0, len(self.network)), dtype=np.int64)
                self._patterns = (empty, np.zeros(0), np.zeros(0, dtype=np.int64))
            else:
                rows, inverse, counts = np.unique(self.values, axis=0, return_inverse=True,
                                                  return_counts=True)
                self._patterns = (rows, counts.astype(np.float64), inverse.reshape(-1))
        return self._patterns

    @classmethod
    def from_evidence(cls, network: Network, examples, provenance=None) -> "Dataset":
        from .infer import evidence_row
        rows = [evidence_row(network, e) for e in examples]
        values = np.array(rows, dtype=np.int64).reshape(-1, len(network))
        return cls(network, values, dict(provenance or {}))


def forward_sample(network: Network, params: Parameterization, n: int, seed: int) -> Dataset:
    """Draw ``n`` complete examples by ancestral sampling."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    values = np.zeros((n, len(network)), dtype=np.int64)
    for i in network.topological_order:
        rows = params.rows(i)
        pidx = network.parent_indices[i]
        if pidx:
            u = np.ravel_multi_index(tuple(values[:, p] for p in pidx), network.parent_cards(i))
        else:
            u = np.zeros(n, dtype=np.int64)
        cdf = np.cumsum(rows, axis=1)
        cdf[:, -1] = 1.0
        r = rng.random(n)
        values[:, i] = (r[:, None] >= cdf[u]).sum(axis=1)
    return Dataset(network, values, {"generator": "forward_sample", "seed": int(seed), "n": int(n)})


def hidden_variable_count(percentage: float, n_vars: int) -> int:
    return int(np.floor(percentage * n_vars + 0.5))


def hide(dataset: Dataset, policy: HidingPolicy) -> Dataset:
    """Remove observed values according to ``policy``."""
    rng = np.random.default_rng(policy.seed)
    values = dataset.values.copy()
    n_vars = len(dataset.network)
    prov = dict(dataset.provenance)
    prov.update(hiding_mode=policy.mode, hiding_percentage=float(policy.percentage),
                hiding_seed=int(policy.seed))
    if policy.mode == HIDDEN_VARIABLES:
        k = hidden_variable_count(policy.percentage, n_vars)
        hidden = np.sort(rng.choice(n_vars, size=k, replace=False))
        values[:, hidden] = -1
        prov["hidden_variables"] = [dataset.network.ids[j] for j in hidden]
    else:
        mask = rng.random(values.shape) < policy.percentage
        values[mask] = -1
    return Dataset(dataset.network, values, prov)


def write_csv(dataset: Dataset, path) -> None:
    net = dataset.network
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(net.ids)
        for row in dataset.values:
            w.writerow([net.variables[j].states[x] if x >= 0 else MISSING
                        for j, x in enumerate(row)])


def read_csv(path, network: Network) -> Dataset:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ModelFormatError(str(exc), path) from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ModelFormatError("empty dataset file", path, 1) from None
        header = [h.strip() for h in header]
        unknown = [h for h in header if h not in network.index]
        if unknown:
            raise ModelFormatError(f"unknown variables {unknown}", path, 1)
        cols = [network.index[h] for h in header]
        lookup = [{s: k for k, s in enumerate(network.variables[c].states)} for c in cols]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ModelFormatError(f"expected {len(header)} fields, found {len(rec)}", path, lineno)
            row = np.full(len(network), -1, dtype=np.int64)
            for c, table, cell in zip(cols, lookup, rec):
                cell = cell.strip()
                if cell == MISSING or cell == "":
                    continue
                if cell not in table:
                    raise ModelFormatError(f"unknown state {cell!r} for {network.ids[c]!r}", path, lineno)
                row[c] = table[cell]
            rows.append(row)
    values = np.array(rows, dtype=np.int64).reshape(-1, len(network))
    return Dataset(network, values, {"source": str(path)})
