"""EM, EDML and hybrid EDML/EM learners for MAP parameters.

All three learners consume the same per-example quantities, the family
marginals ``Pr(xu|d_i)`` computed under the current parameters.  Examples
are processed as distinct evidence patterns with multiplicities, so every
sum over examples is a weighted sum over patterns.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import kernels
from .data import Dataset
from .infer import ImpossibleEvidenceError, clique_tree
from .model import (
    DirichletPrior,
    Network,
    Parameterization,
    log_prior_density,
    random_parameterization,
)

log = logging.getLogger(__name__)

EM = "em"
EDML = "edml"
HYBRID = "hybrid"
ALGORITHMS = (EM, EDML, HYBRID)

THETA_GUARD = 1e-12
NEGATIVE_SLACK = 1e-9


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: str = EDML
    prior: DirichletPrior | float = 2.0
    max_iterations: int = 1000
    logpost_tolerance: float = 1e-7
    param_tolerance: float = 1e-6
    local_max_iterations: int = 512
    local_tolerance: float = 1e-8
    damping: float = 0.5
    seed: int = 0
    local_seeding: str = "previous"
    backend: str | None = None
    clock: str = "wall"
    record_params: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        for name in ("logpost_tolerance", "param_tolerance", "local_tolerance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.local_seeding not in ("previous", "uniform"):
            raise ValueError("local_seeding must be 'previous' or 'uniform'")
        if self.clock not in ("wall", "none"):
            raise ValueError("clock must be 'wall' or 'none'")

    def prior_for(self, network: Network) -> DirichletPrior:
        if isinstance(self.prior, DirichletPrior):
            return self.prior
        return DirichletPrior.uniform(network, float(self.prior))

    @property
    def label(self) -> str:
        return self.algorithm


@dataclass
class Statistics:
    """Per-pattern family marginals under one parameterization.

    ``joint[i]`` has shape (B, U, K): pattern, parent instantiation, child
    value.  ``weights`` are pattern multiplicities.
    """

    joint: tuple[np.ndarray, ...]
    weights: np.ndarray
    log_evidence: np.ndarray

    @property
    def n(self) -> float:
        return float(self.weights.sum())

    def parent(self, i: int) -> np.ndarray:
        return self.joint[i].sum(axis=-1)

    @property
    def log_likelihood(self) -> float:
        return float(np.dot(self.weights, self.log_evidence))


def compute_statistics(network: Network, params: Parameterization, dataset: Dataset) -> Statistics:
    patterns, counts, inverse = dataset.patterns()
    fm = clique_tree(network).calibrate_batch(params, patterns)
    bad = np.flatnonzero(np.isneginf(fm.log_evidence))
    if bad.size:
        first = int(np.flatnonzero(np.isin(inverse, bad))[0])
        raise ImpossibleEvidenceError(first)
    b = patterns.shape[0]
    joint = tuple(j.reshape(b, -1, network.cards[i]) for i, j in enumerate(fm.joint))
    return Statistics(joint, counts, fm.log_evidence)


def _log_posterior(prior: DirichletPrior, params: Parameterization, stats: Statistics) -> float:
    lp = log_prior_density(prior, params)
    return lp if np.isneginf(lp) else lp + stats.log_likelihood


# -- EM ---------------------------------------------------------------------

def _em_tables(network: Network, stats: Statistics, prior: DirichletPrior) -> list[np.ndarray]:
    out = []
    for i in range(len(network)):
        k = network.cards[i]
        psi = prior.rows(i)
        num = psi - 1.0 + np.einsum("b,buk->uk", stats.weights, stats.joint[i])
        den = psi.sum(axis=1) - k + np.einsum("b,bu->u", stats.weights, stats.parent(i))
        if np.any(den <= 0):
            raise ValueError(f"{network.ids[i]}: EM update has a non-positive denominator; "
                             "use Dirichlet exponents > 1")
        out.append((num / den[:, None]).reshape(network.family_shape(i)))
    return out


def em_update(network: Network, params: Parameterization, dataset: Dataset,
              prior: DirichletPrior) -> Parameterization:
    """One EM update for MAP parameters."""
    stats = compute_statistics(network, params, dataset)
    return Parameterization(network, _em_tables(network, stats, prior))


def em_fixed_point_residual(network: Network, params: Parameterization, dataset: Dataset,
                            prior: DirichletPrior) -> float:
    """Largest violation of the EM fixed-point equations at ``params``."""
    stats = compute_statistics(network, params, dataset)
    return max(float(np.max(np.abs(t - params.table(i))))
               for i, t in enumerate(_em_tables(network, stats, prior)))


# -- soft evidence ----------------------------------------------------------

@dataclass
class SoftEvidence:
    """Soft evidence vectors per family and evidence pattern.

    ``lambdas[i]`` has shape (B, U, K).  ``inverse`` maps example index to
    pattern index, so ``lambdas[i][inverse]`` is the per-example view.
    """

    network: Network
    lambdas: tuple[np.ndarray, ...]
    weights: np.ndarray
    inverse: np.ndarray | None = None

    def __getitem__(self, var: str) -> np.ndarray:
        return self.lambdas[self.network.index[var]]

    def per_example(self, var: str) -> np.ndarray:
        lam = self[var]
        return lam if self.inverse is None else lam[self.inverse]


def _other_rows_mass(pu: np.ndarray) -> np.ndarray:
    """``out[b, u] = sum of pu[b, v] for v != u`` without subtraction."""
    before = np.zeros_like(pu)
    before[:, 1:] = np.cumsum(pu, axis=1)[:, :-1]
    after = np.zeros_like(pu)
    after[:, :-1] = np.cumsum(pu[:, ::-1], axis=1)[:, ::-1][:, 1:]
    return before + after


def _soft_evidence_tables(network: Network, params: Parameterization,
                          stats: Statistics) -> tuple[np.ndarray, ...]:
    out = []
    for i in range(len(network)):
        theta = params.rows(i)[None, :, :]
        joint = stats.joint[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            quotient = np.where(theta < THETA_GUARD, 0.0, joint / theta)
        # 1 - Pr(u|d) as the mass on the other parent instantiations, so that
        # certain parents give an exact zero instead of a rounding residue
        lam = quotient + _other_rows_mass(stats.parent(i))[:, :, None]
        if np.any(lam < -NEGATIVE_SLACK) or not np.all(np.isfinite(lam)):
            raise FloatingPointError(f"{network.ids[i]}: inconsistent soft evidence")
        out.append(np.maximum(lam, 0.0))
    return tuple(out)


def soft_evidence(network: Network, params: Parameterization, dataset: Dataset) -> SoftEvidence:
    """Soft evidence contributed by each example to each parameter set."""
    stats = compute_statistics(network, params, dataset)
    _, _, inverse = dataset.patterns()
    return SoftEvidence(network, _soft_evidence_tables(network, params, stats), stats.weights, inverse)


def binary_bayes_factor(lam: np.ndarray) -> np.ndarray:
    """Odds form ``lambda_x / lambda_xbar`` of binary soft evidence.

    ``lam`` has a trailing axis of length 2.  A zero denominator gives
    ``inf`` (or ``nan`` when both entries vanish).
    """
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape[-1] != 2:
        raise ValueError("Bayes factors are defined for binary variables only")
    with np.errstate(divide="ignore", invalid="ignore"):
        return lam[..., 0] / lam[..., 1]


# -- EDML -------------------------------------------------------------------

class IslandSolution(NamedTuple):
    theta: np.ndarray
    iterations: int
    converged: bool


def _island_inputs(lambdas, weights):
    lam = np.asarray(lambdas, dtype=np.float64)
    if lam.ndim == 1:
        lam = lam[None, :]
    w = np.ones(lam.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    return lam, w


def edml_local_update(theta, lambdas, psi, n: float, weights=None) -> np.ndarray:
    """One synchronous application of the island fixed-point update.

    ``lambdas`` is (examples, K); examples beyond those listed, up to
    ``n``, are treated as neutral.
    """
    theta = np.asarray(theta, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    lam, w = _island_inputs(lambdas, weights)
    dots = lam @ theta
    if np.any(dots <= 0):
        raise ValueError("soft evidence contradicts the current estimate")
    acc = (w / dots) @ lam * theta + (n - w.sum()) * theta
    return (psi - 1.0 + acc) / (psi.sum() - theta.size + n)


def island_log_objective(theta, lambdas, psi, weights=None) -> float:
    """Log of the island posterior, up to an additive constant."""
    theta = np.asarray(theta, dtype=np.float64)
    lam, w = _island_inputs(lambdas, weights)
    with np.errstate(divide="ignore"):
        return float(np.sum((np.asarray(psi) - 1.0) * np.log(theta)) + np.dot(w, np.log(lam @ theta)))


def solve_island(theta0, lambdas, psi, n: float, tolerance: float = 1e-8,
                 max_iterations: int = 512, weights=None, backend: str | None = None) -> IslandSolution:
    """Iterate :func:`edml_local_update` until the largest parameter change
    drops below ``tolerance`` or ``max_iterations`` updates were made."""
    lam, w = _island_inputs(lambdas, weights)
    theta0 = np.asarray(theta0, dtype=np.float64)
    th, it, st = kernels.solve_islands(theta0[None, :], lam[None, :, :], w,
                                       np.asarray(psi, dtype=np.float64)[None, :], n,
                                       tolerance, max_iterations, backend)
    if st[0] == kernels.ZERO_DENOMINATOR:
        raise ValueError("soft evidence contradicts the current estimate")
    return IslandSolution(th[0], int(it[0]), bool(st[0] == kernels.CONVERGED))


class EDMLStep(NamedTuple):
    params: Parameterization
    local_iterations: tuple[np.ndarray, ...]
    lambdas: tuple[np.ndarray, ...]


def _normalize_lambdas(lam: np.ndarray) -> np.ndarray:
    k = lam.shape[-1]
    return lam * (k / lam.sum(axis=-1, keepdims=True))


def _edml_from_stats(network: Network, params: Parameterization, stats: Statistics,
                     prior: DirichletPrior, config: LearnerConfig,
                     previous_lambdas=None) -> EDMLStep:
    soft = _soft_evidence_tables(network, params, stats)
    gamma = config.damping
    tables, counts, lambdas = [], [], []
    n = stats.n
    for i in range(len(network)):
        k = network.cards[i]
        lam = _normalize_lambdas(soft[i])
        if previous_lambdas is not None and gamma > 0:
            lam = (1.0 - gamma) * lam + gamma * previous_lambdas[i]
        lambdas.append(lam)
        theta = params.rows(i)
        seed = theta if config.local_seeding == "previous" else np.full_like(theta, 1.0 / k)
        island, iters, status = kernels.solve_islands(
            seed, np.transpose(lam, (1, 0, 2)), stats.weights, prior.rows(i), n,
            config.local_tolerance, config.local_max_iterations, config.backend)
        if np.any(status == kernels.ZERO_DENOMINATOR):
            raise FloatingPointError(f"{network.ids[i]}: soft evidence contradicts the estimate")
        if gamma > 0:
            island = (1.0 - gamma) * island + gamma * theta
        island = island / island.sum(axis=1, keepdims=True)
        tables.append(island.reshape(network.family_shape(i)))
        counts.append(iters)
    return EDMLStep(Parameterization(network, tables), tuple(counts), tuple(lambdas))


def edml_global_iteration(network: Network, params: Parameterization, dataset: Dataset,
                          prior: DirichletPrior, config: LearnerConfig | None = None,
                          previous_lambdas=None) -> EDMLStep:
    """Soft evidence from every example, then one island solve per parameter set.

    ``previous_lambdas`` (the ``lambdas`` of the previous step) enables
    damping of the soft evidence.
    """
    config = config or LearnerConfig()
    stats = compute_statistics(network, params, dataset)
    return _edml_from_stats(network, params, stats, prior, config, previous_lambdas)


class HybridStep(NamedTuple):
    params: Parameterization
    branch: str
    log_posterior: float
    edml: EDMLStep


def _hybrid_from_stats(network, params, stats, prior, config, dataset, previous_lambdas=None):
    em_params = Parameterization(network, _em_tables(network, stats, prior))
    edml = _edml_from_stats(network, params, stats, prior, config, previous_lambdas)
    em_stats = compute_statistics(network, em_params, dataset)
    edml_stats = compute_statistics(network, edml.params, dataset)
    lp_em = _log_posterior(prior, em_params, em_stats)
    lp_edml = _log_posterior(prior, edml.params, edml_stats)
    if lp_edml > lp_em:
        return HybridStep(edml.params, EDML, lp_edml, edml), edml_stats
    return HybridStep(em_params, EM, lp_em, edml), em_stats


def hybrid_step(network: Network, params: Parameterization, dataset: Dataset,
                prior: DirichletPrior, config: LearnerConfig | None = None,
                previous_lambdas=None) -> HybridStep:
    """Compute both the EM and the EDML update and keep the better one."""
    config = config or LearnerConfig(algorithm=HYBRID)
    stats = compute_statistics(network, params, dataset)
    step, _ = _hybrid_from_stats(network, params, stats, prior, config, dataset, previous_lambdas)
    return step


# -- driver -----------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    log_posterior: float
    elapsed: float
    params: list | None = None
    local_iterations: dict | None = None
    branch: str | None = None

    def to_dict(self) -> dict:
        d = {"iteration": self.iteration, "log_posterior": self.log_posterior, "elapsed": self.elapsed}
        if self.branch is not None:
            d["branch"] = self.branch
        if self.local_iterations is not None:
            d["local_iterations"] = self.local_iterations
        if self.params is not None:
            d["params"] = self.params
        return d


@dataclass
class LearningTrace:
    algorithm: str
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "running"
    message: str = ""
    final_params: Parameterization | None = None

    @property
    def log_posteriors(self) -> np.ndarray:
        return np.array([r.log_posterior for r in self.records])

    @property
    def elapsed(self) -> np.ndarray:
        return np.array([r.elapsed for r in self.records])

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    @property
    def branches(self) -> list[str | None]:
        return [r.branch for r in self.records[1:]]

    def to_dict(self) -> dict:
        out = {"algorithm": self.algorithm, "status": self.status, "message": self.message,
               "iterations": [r.to_dict() for r in self.records]}
        if self.final_params is not None:
            out["final_params"] = self.final_params.to_dict()["cpts"]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, data: dict, network: Network | None = None) -> "LearningTrace":
        recs = [IterationRecord(r["iteration"], r["log_posterior"], r["elapsed"], r.get("params"),
                                r.get("local_iterations"), r.get("branch"))
                for r in data["iterations"]]
        final = None
        if network is not None and "final_params" in data:
            final = Parameterization.from_dict(network, {"cpts": data["final_params"]})
        return cls(data["algorithm"], recs, data["status"], data.get("message", ""), final)


def run(network: Network, dataset: Dataset, config: LearnerConfig,
        initial: Parameterization | None = None) -> LearningTrace:
    """Iterate the configured learner until convergence or the iteration cap."""
    prior = config.prior_for(network)
    params = initial if initial is not None else random_parameterization(network, config.seed)
    trace = LearningTrace(config.algorithm)
    ids = network.ids
    clock = time.perf_counter if config.clock == "wall" else (lambda: 0.0)
    if config.algorithm != EM:
        kernels.warmup()

    def snapshot(p):
        return [p.rows(i).tolist() for i in range(len(network))] if config.record_params else None

    t0 = clock()
    try:
        stats = compute_statistics(network, params, dataset)
    except ImpossibleEvidenceError as exc:
        trace.status, trace.message = "impossible-evidence", str(exc)
        return trace
    lp = _log_posterior(prior, params, stats)
    trace.records.append(IterationRecord(0, lp, clock() - t0, snapshot(params)))
    lambdas = None
    trace.status = "max-iterations"
    try:
        for k in range(1, config.max_iterations + 1):
            counts = branch = None
            if config.algorithm == EM:
                new = Parameterization(network, _em_tables(network, stats, prior))
                new_stats = compute_statistics(network, new, dataset)
                new_lp = _log_posterior(prior, new, new_stats)
            elif config.algorithm == EDML:
                step = _edml_from_stats(network, params, stats, prior, config, lambdas)
                new, counts, lambdas = step.params, step.local_iterations, step.lambdas
                new_stats = compute_statistics(network, new, dataset)
                new_lp = _log_posterior(prior, new, new_stats)
            else:
                step, new_stats = _hybrid_from_stats(network, params, stats, prior, config,
                                                     dataset, lambdas)
                new, new_lp, branch = step.params, step.log_posterior, step.branch
                counts, lambdas = step.edml.local_iterations, step.edml.lambdas
            change = new.max_abs_diff(params)
            delta = new_lp - lp
            params, stats, lp = new, new_stats, new_lp
            trace.records.append(IterationRecord(
                k, lp, clock() - t0, snapshot(params),
                None if counts is None else {v: c.tolist() for v, c in zip(ids, counts)},
                branch))
            if abs(delta) < config.logpost_tolerance and change < config.param_tolerance:
                trace.status = "converged"
                break
    except ImpossibleEvidenceError as exc:
        trace.status, trace.message = "impossible-evidence", str(exc)
    trace.final_params = params
    log.debug("%s finished: %s after %d iterations", config.algorithm, trace.status, trace.iterations)
    return trace


def run_to_fixed_point(network: Network, dataset: Dataset, config: LearnerConfig,
                       initial: Parameterization | None = None, tolerance: float = 1e-12,
                       max_iterations: int = 100000) -> LearningTrace:
    """Run with tight stopping rules and no per-iteration snapshots."""
    cfg = replace(config, logpost_tolerance=tolerance, param_tolerance=tolerance,
                  max_iterations=max_iterations, record_params=False, clock="none")
    return run(network, dataset, cfg, initial)


__all__ = [
    "ALGORITHMS", "EDML", "EM", "HYBRID", "EDMLStep", "HybridStep", "IslandSolution",
    "IterationRecord", "LearnerConfig", "LearningTrace", "SoftEvidence", "Statistics",
    "binary_bayes_factor", "compute_statistics", "edml_global_iteration", "edml_local_update",
    "em_fixed_point_residual", "em_update", "hybrid_step", "island_log_objective", "run",
    "run_to_fixed_point", "soft_evidence", "solve_island",
]
