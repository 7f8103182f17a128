"""Exact inference by clique-tree calibration.

A clique tree is compiled once per network from a min-fill elimination
order.  Calibration is batched: every clique potential carries a leading
axis over examples, so a single two-pass propagation yields the family
marginals of a whole set of evidence patterns.  Tables stay in linear
space; each message is normalized per example and its normalizer is
accumulated as a log scale, which keeps ``Pr(d)`` representable.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .model import DirichletPrior, Network, Parameterization, log_prior_density

BRUTE_FORCE_LIMIT = 2 ** 22


class ImpossibleEvidenceError(ValueError):
    """An example has probability zero under the current parameters."""

    def __init__(self, index: int, message: str | None = None):
        super().__init__(message or f"example {index} has zero probability")
        self.index = index


@dataclass(frozen=True)
class Factor:
    """A table over ``scope`` with a log-scale accumulator.

    The represented function is ``exp(log_scale) * table``; ``table`` has one
    axis per scope variable (plus an optional leading batch axis).
    """

    scope: tuple[int, ...]
    table: np.ndarray
    log_scale: float | np.ndarray = 0.0

    def normalized(self) -> "Factor":
        axes = tuple(range(self.table.ndim - len(self.scope), self.table.ndim))
        z = self.table.sum(axis=axes, keepdims=True)
        with np.errstate(divide="ignore"):
            logz = np.log(z.reshape(z.shape[: self.table.ndim - len(self.scope)]))
        safe = np.where(z > 0, z, 1.0)
        return Factor(self.scope, self.table / safe, self.log_scale + logz)


@dataclass
class FamilyMarginals:
    """Posterior family marginals for one example or a batch of examples.

    ``joint[i]`` has shape ``batch + parent_cards + (card,)`` and holds
    ``Pr(xu|d)``; ``parent[i]`` is the same summed over the child axis.
    """

    joint: tuple[np.ndarray, ...]
    log_evidence: float | np.ndarray

    @property
    def parent(self) -> tuple[np.ndarray, ...]:
        return tuple(j.sum(axis=-1) for j in self.joint)

    @property
    def evidence_probability(self):
        return np.exp(self.log_evidence)


def _expand(arr: np.ndarray, scope: Sequence[int], target: Sequence[int], batched: bool) -> np.ndarray:
    """Broadcast a table over ``scope`` to the axes of ``target`` (sorted)."""
    lead = 1 if batched else 0
    perm = np.argsort(scope, kind="stable")
    arr = np.transpose(arr, tuple(range(lead)) + tuple(lead + int(p) for p in perm))
    kept = set(scope)
    shape = list(arr.shape[:lead]) if batched else [1]
    it = iter(arr.shape[lead:])
    shape += [next(it) if v in kept else 1 for v in target]
    return arr.reshape(shape)


def _sum_to(arr: np.ndarray, clique: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Sum a batched clique table down to the (sorted) variables ``keep``."""
    keep = set(keep)
    axes = tuple(1 + j for j, v in enumerate(clique) if v not in keep)
    return arr.sum(axis=axes) if axes else arr


class CliqueTree:
    """Compiled junction tree for a network (structure only, no numbers)."""

    def __init__(self, network: Network):
        self.network = network
        n = len(network)
        adj = [set() for _ in range(n)]
        for i, ps in enumerate(network.parent_indices):
            fam = list(ps) + [i]
            for a in fam:
                for b in fam:
                    if a != b:
                        adj[a].add(b)
        self.elimination_order = _min_fill_order(adj)
        cliques = []
        work = [set(s) for s in adj]
        alive = set(range(n))
        for v in self.elimination_order:
            nb = work[v] & alive
            cliques.append(frozenset(nb | {v}))
            for a in nb:
                work[a] |= nb - {a}
            alive.discard(v)
        uniq = list(dict.fromkeys(cliques))
        maximal = [c for c in uniq if not any(c < d for d in uniq)]
        self.cliques = [tuple(sorted(c)) for c in maximal]
        self._build_tree()
        self.family_clique = []
        for i, ps in enumerate(network.parent_indices):
            fam = set(ps) | {i}
            cands = [k for k, c in enumerate(self.cliques) if fam <= set(c)]
            self.family_clique.append(min(cands, key=lambda k: (len(self.cliques[k]), k)))
        self.assigned = [[] for _ in self.cliques]
        for i, k in enumerate(self.family_clique):
            self.assigned[k].append(i)

    def _build_tree(self):
        m = len(self.cliques)
        edges = sorted(((-len(set(self.cliques[a]) & set(self.cliques[b])), a, b)
                        for a in range(m) for b in range(a + 1, m)))
        root = list(range(m))

        def find(x):
            while root[x] != x:
                root[x] = root[root[x]]
                x = root[x]
            return x

        nbrs = [[] for _ in range(m)]
        for _, a, b in edges:
            ra, rb = find(a), find(b)
            if ra != rb:
                root[ra] = rb
                nbrs[a].append(b)
                nbrs[b].append(a)
        self.neighbors = [sorted(x) for x in nbrs]
        # breadth-first from clique 0
        self.parent = [-1] * m
        order = [0]
        seen = {0}
        for c in order:
            for d in self.neighbors[c]:
                if d not in seen:
                    seen.add(d)
                    self.parent[d] = c
                    order.append(d)
        self.preorder = order
        self.children = [[d for d in self.neighbors[c] if self.parent[d] == c] for c in range(m)]

    def separator(self, a: int, b: int) -> tuple[int, ...]:
        return tuple(sorted(set(self.cliques[a]) & set(self.cliques[b])))

    def _potentials(self, params: Parameterization, indicators: list[np.ndarray]) -> list[np.ndarray]:
        net = self.network
        b = indicators[0].shape[0]
        pots = []
        for k, clique in enumerate(self.cliques):
            pot = np.ones((b,) + tuple(net.cards[v] for v in clique))
            for i in self.assigned[k]:
                pot = pot * _expand(params.table(i), net.parent_indices[i] + (i,), clique, False)
                pot = pot * _expand(indicators[i], (i,), clique, True)
            pots.append(pot)
        return pots

    def calibrate_batch(self, params: Parameterization, evidence: np.ndarray,
                        rescale: bool = True) -> FamilyMarginals:
        """Family marginals for every row of ``evidence`` (value index or -1)."""
        net = self.network
        evidence = np.asarray(evidence, dtype=np.int64)
        if evidence.ndim != 2 or evidence.shape[1] != len(net):
            raise ValueError("evidence must have shape (examples, variables)")
        b = evidence.shape[0]
        if b == 0:
            return FamilyMarginals(tuple(np.zeros((0,) + net.family_shape(i)) for i in range(len(net))),
                                   np.zeros(0))
        indicators = []
        for i, k in enumerate(net.cards):
            col = evidence[:, i]
            if np.any(col >= k):
                bad = int(np.flatnonzero(col >= k)[0])
                raise ValueError(f"example {bad}: value index out of range for {net.ids[i]!r}")
            ind = np.ones((b, k))
            obs = col >= 0
            ind[obs] = 0.0
            ind[np.flatnonzero(obs), col[obs]] = 1.0
            indicators.append(ind)
        pots = self._potentials(params, indicators)
        cliques = self.cliques

        def expanded(f: Factor, c: int) -> np.ndarray:
            return _expand(f.table, f.scope, cliques[c], True)

        def message(src: int, dst: int, product: np.ndarray) -> Factor:
            sep = self.separator(src, dst)
            f = Factor(sep, _sum_to(product, cliques[src], sep), 0.0)
            return f.normalized() if rescale else f

        up: dict[int, Factor] = {}
        log_scale = np.zeros(b)
        for c in reversed(self.preorder):
            if self.parent[c] < 0:
                continue
            product = pots[c]
            for d in self.children[c]:
                product = product * expanded(up[d], c)
            up[c] = message(c, self.parent[c], product)
            log_scale = log_scale + up[c].log_scale

        down: dict[int, Factor] = {}
        beliefs = [None] * len(cliques)
        for c in self.preorder:
            kids = self.children[c]
            inbound = [expanded(up[d], c) for d in kids]
            base = pots[c] if self.parent[c] < 0 else pots[c] * expanded(down[c], c)
            # prefix/suffix products give each child the product of all other inbound messages
            prefix = [base]
            for m in inbound:
                prefix.append(prefix[-1] * m)
            beliefs[c] = prefix[-1]
            suffix = None
            for j in range(len(kids) - 1, -1, -1):
                excl = prefix[j] if suffix is None else prefix[j] * suffix
                down[kids[j]] = message(c, kids[j], excl)
                suffix = inbound[j] if suffix is None else suffix * inbound[j]

        root = beliefs[self.preorder[0]]
        z_root = root.reshape(b, -1).sum(axis=1)
        with np.errstate(divide="ignore"):
            log_evidence = np.log(z_root) + log_scale
        joint = []
        for i in range(len(net)):
            k = self.family_clique[i]
            bel = beliefs[k]
            z = bel.reshape(b, -1).sum(axis=1)
            safe = np.where(z > 0, z, 1.0)
            fam = net.parent_indices[i] + (i,)
            marg = _sum_to(bel, cliques[k], fam) / safe.reshape((b,) + (1,) * len(fam))
            order = sorted(fam)
            joint.append(np.transpose(marg, (0,) + tuple(1 + order.index(v) for v in fam)))
        return FamilyMarginals(tuple(joint), log_evidence)


def _min_fill_order(adj: list[set[int]]) -> list[int]:
    work = [set(s) for s in adj]
    alive = set(range(len(adj)))
    order = []
    while alive:
        best = None
        for v in sorted(alive):
            nb = sorted(work[v] & alive)
            fill = sum(1 for x in range(len(nb)) for y in range(x + 1, len(nb))
                       if nb[y] not in work[nb[x]])
            key = (fill, len(nb), v)
            if best is None or key < best[0]:
                best = (key, v)
        v = best[1]
        nb = work[v] & alive
        for a in nb:
            work[a] |= nb - {a}
        alive.discard(v)
        order.append(v)
    return order


@lru_cache(maxsize=64)
def clique_tree(network: Network) -> CliqueTree:
    return CliqueTree(network)


def evidence_row(network: Network, evidence: Mapping[str, int | str] | None) -> np.ndarray:
    """Encode an evidence mapping (value index or state label) as a row."""
    row = np.full(len(network), -1, dtype=np.int64)
    for var, val in (evidence or {}).items():
        i = network.index[var]
        if isinstance(val, str):
            val = network.variables[i].states.index(val)
        if not 0 <= int(val) < network.cards[i]:
            raise ValueError(f"value {val} out of range for {var!r}")
        row[i] = int(val)
    return row


def _single(fm: FamilyMarginals) -> FamilyMarginals:
    return FamilyMarginals(tuple(j[0] for j in fm.joint), float(fm.log_evidence[0]))


def calibrate(network: Network, params: Parameterization, evidence=None,
              rescale: bool = True) -> FamilyMarginals:
    """Exact family marginals ``Pr(xu|d)`` for one example."""
    fm = clique_tree(network).calibrate_batch(params, evidence_row(network, evidence)[None, :], rescale)
    if np.isneginf(fm.log_evidence[0]):
        raise ImpossibleEvidenceError(0)
    return _single(fm)


def brute_force_marginals(network: Network, params: Parameterization, evidence=None) -> FamilyMarginals:
    """Family marginals by enumerating the full joint distribution."""
    cards = network.cards
    if int(np.prod(cards, dtype=np.float64)) > BRUTE_FORCE_LIMIT:
        raise ValueError("state space too large for enumeration")
    n = len(network)
    joint = np.ones(cards)
    for i in range(n):
        fam = network.parent_indices[i] + (i,)
        t = params.table(i)
        perm = np.argsort(fam)
        shape = [1] * n
        for v in fam:
            shape[v] = cards[v]
        joint = joint * np.transpose(t, perm).reshape(shape)
    row = evidence_row(network, evidence)
    for i in range(n):
        if row[i] >= 0:
            mask = np.zeros(cards[i])
            mask[row[i]] = 1.0
            shape = [1] * n
            shape[i] = cards[i]
            joint = joint * mask.reshape(shape)
    pd = joint.sum()
    if pd <= 0:
        raise ImpossibleEvidenceError(0)
    joint = joint / pd
    out = []
    for i in range(n):
        fam = network.parent_indices[i] + (i,)
        drop = tuple(v for v in range(n) if v not in fam)
        m = joint.sum(axis=drop)
        kept = sorted(fam)
        out.append(np.transpose(m, [kept.index(v) for v in fam]))
    return FamilyMarginals(tuple(out), float(np.log(pd)))


def log_evidence(network: Network, params: Parameterization, patterns: np.ndarray) -> np.ndarray:
    """``log Pr(d)`` for each evidence row; raises on impossible rows."""
    fm = clique_tree(network).calibrate_batch(params, patterns)
    bad = np.flatnonzero(np.isneginf(fm.log_evidence))
    if bad.size:
        raise ImpossibleEvidenceError(int(bad[0]))
    return fm.log_evidence


def log_likelihood(network: Network, params: Parameterization, dataset) -> float:
    """``sum_i log Pr(d_i)`` over the examples of ``dataset``."""
    patterns, counts, inverse = dataset.patterns()
    fm = clique_tree(network).calibrate_batch(params, patterns)
    bad = np.flatnonzero(np.isneginf(fm.log_evidence))
    if bad.size:
        first = int(np.flatnonzero(np.isin(inverse, bad))[0])
        raise ImpossibleEvidenceError(first)
    return float(np.dot(counts, fm.log_evidence))


def log_posterior(network: Network, params: Parameterization, dataset,
                  prior: DirichletPrior) -> float:
    """Unnormalized log posterior: log prior density plus log likelihood.

    Returns ``-inf`` when a parameter with exponent above one is zero.
    """
    lp = log_prior_density(prior, params)
    if np.isneginf(lp):
        return lp
    return lp + log_likelihood(network, params, dataset)
