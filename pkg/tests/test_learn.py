import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edml.data import Dataset, HidingPolicy, forward_sample, hide
from edml.infer import brute_force_marginals, log_posterior
from edml.learn import (
    EDML,
    EM,
    HYBRID,
    LearnerConfig,
    LearningTrace,
    binary_bayes_factor,
    edml_global_iteration,
    edml_local_update,
    em_fixed_point_residual,
    em_update,
    hybrid_step,
    island_log_objective,
    run,
    run_to_fixed_point,
    soft_evidence,
    solve_island,
)
from edml.model import (
    DirichletPrior,
    Network,
    Parameterization,
    dirichlet_mode,
    random_network,
    random_parameterization,
)

from conftest import binary, exact_bayes_factors, small_problem

TIGHT = dict(local_tolerance=1e-14, local_max_iterations=100_000)


def counts_map(net, data, psi):
    """Closed-form MAP estimate from complete data."""
    tables = []
    for i in range(len(net)):
        counts = np.zeros(net.family_shape(i))
        for row in data.values:
            counts[tuple(row[p] for p in net.parent_indices[i]) + (row[i],)] += 1
        num = counts + psi - 1
        tables.append(num / num.sum(axis=-1, keepdims=True))
    return Parameterization(net, tables)


def brute_em(net, params, data, prior):
    """EM update with expected counts from full-joint enumeration."""
    tables = []
    expected = [np.zeros(net.family_shape(i)) for i in range(len(net))]
    for k in range(len(data)):
        fm = brute_force_marginals(net, params, data.evidence(k))
        for i in range(len(net)):
            expected[i] += fm.joint[i]
    for i in range(len(net)):
        num = prior.table(i) - 1 + expected[i]
        tables.append(num / num.sum(axis=-1, keepdims=True))
    return Parameterization(net, tables)


# -- EM ---------------------------------------------------------------------

def test_em_counts_example():
    net = Network.from_edges([binary("X")], {})
    data = Dataset(net, np.array([[0], [0], [0], [1]]))
    new = em_update(net, random_parameterization(net, 0), data, DirichletPrior.uniform(net, 2.0))
    np.testing.assert_allclose(new["X"], [4 / 6, 2 / 6], atol=1e-15)


def test_em_with_flat_prior_is_maximum_likelihood():
    net = Network.from_edges([binary("X")], {})
    data = Dataset(net, np.array([[0], [0], [0], [1]]))
    new = em_update(net, random_parameterization(net, 0), data, DirichletPrior.uniform(net, 1.0))
    np.testing.assert_allclose(new["X"], [0.75, 0.25], atol=1e-15)


@pytest.mark.parametrize("seed", range(8))
def test_em_matches_enumeration(seed):
    net, data, prior = small_problem(seed, n_vars=(3, 4), n=(20, 40), hiding=0.4)
    rng = np.random.default_rng(seed)
    prior = DirichletPrior(net, [1.0 + 2 * rng.random(net.family_shape(i)) for i in range(len(net))])
    params = random_parameterization(net, seed + 10)
    assert em_update(net, params, data, prior).max_abs_diff(brute_em(net, params, data, prior)) < 1e-12


def test_em_residual_vanishes_on_closed_form(asia):
    net, params = asia
    data = forward_sample(net, params, 300, 0)
    prior = DirichletPrior.uniform(net, 2.0)
    assert em_fixed_point_residual(net, counts_map(net, data, 2.0), data, prior) < 1e-14
    assert em_fixed_point_residual(net, random_parameterization(net, 1), data, prior) > 1e-3


# -- soft evidence ----------------------------------------------------------

def test_soft_evidence_cases(chain):
    params = Parameterization(chain, {"A": [0.3, 0.7], "B": [[0.9, 0.1], [0.2, 0.8]]})
    data = Dataset.from_evidence(chain, [{}, {"A": 0, "B": 1}])
    lam = soft_evidence(chain, params, data)
    b = lam.per_example("B")
    # an empty example is neutral everywhere
    np.testing.assert_allclose(b[0], 1.0, atol=1e-14)
    # hard evidence: 1/theta on the observed value under the observed parents
    np.testing.assert_allclose(b[1][0], [0.0, 1 / 0.1], rtol=1e-12)
    # parent instantiation ruled out by the evidence: irrelevant, hence neutral
    np.testing.assert_allclose(b[1][1], 1.0, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_soft_evidence_normalization(seed):
    net, data, _ = small_problem(seed, n_vars=(3, 6), n=(10, 30))
    params = random_parameterization(net, seed)
    lam = soft_evidence(net, params, data)
    for i, v in enumerate(net.ids):
        l = lam[v]
        assert np.all(l >= 0)
        np.testing.assert_allclose((l * params.rows(i)[None]).sum(axis=-1), 1.0, atol=1e-12)


def test_bayes_factor_special_values():
    assert binary_bayes_factor([1.0, 1.0]) == 1.0
    assert binary_bayes_factor([2.0, 0.0]) == np.inf
    assert np.isnan(binary_bayes_factor([0.0, 0.0]))
    with pytest.raises(ValueError):
        binary_bayes_factor([1.0, 1.0, 1.0])


@pytest.mark.parametrize("seed", range(5))
def test_bayes_factor_matches_binary_form(seed):
    rng = np.random.default_rng(seed)
    net = random_network(int(rng.integers(2, 7)), seed, cardinalities=(2,))
    params = random_parameterization(net, seed + 1)
    data = hide(forward_sample(net, params, 20, seed), HidingPolicy("per-cell", 0.5, seed))
    lam = soft_evidence(net, params, data)
    for i, v in enumerate(net.ids):
        got = binary_bayes_factor(lam.per_example(v))
        for k in range(len(data)):
            np.testing.assert_allclose(got[k], exact_bayes_factors(net, params, data.evidence(k), i),
                                       rtol=1e-12)


# -- islands ----------------------------------------------------------------

def test_local_update_neutral_evidence_gives_mode():
    th = solve_island([0.5, 0.5], np.ones((5, 2)), [3.0, 2.0], 5, tolerance=1e-15,
                      max_iterations=100_000).theta
    np.testing.assert_allclose(th, [2 / 3, 1 / 3], atol=1e-12)


def test_local_update_hard_counts():
    # three examples observe x0, one observes x1, two say nothing about this island
    lam = np.array([[2.0, 0.0]] * 3 + [[0.0, 2.0]])
    th = solve_island([0.5, 0.5], lam, [2.0, 2.0], 6, tolerance=1e-15, max_iterations=100_000).theta
    np.testing.assert_allclose(th, [4 / 6, 2 / 6], atol=1e-12)


def test_local_update_stays_on_simplex():
    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(2, 6))
        theta = rng.dirichlet(np.ones(k))
        new = edml_local_update(theta, rng.random((7, k)) + 0.1, 1 + 4 * rng.random(k), 10)
        assert new.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(new > 0)


def random_island(rng, k=None):
    k = k or int(rng.integers(2, 6))
    n = int(rng.integers(1, 65))
    b = int(rng.integers(1, n + 1))
    lam = rng.random((b, k)) * rng.choice([0.5, 3.0, 10.0])
    lam[rng.random((b, k)) < 0.2] = 0.0
    lam[lam.sum(axis=1) == 0, 0] = 1.0
    psi = 1.0 + 4.0 * (1.0 - rng.random(k))
    return lam, psi, n


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_local_updates_are_monotone(seed):
    rng = np.random.default_rng(seed)
    lam, psi, n = random_island(rng)
    theta = rng.dirichlet(np.ones(lam.shape[1]))
    prev = island_log_objective(theta, lam, psi)
    for _ in range(30):
        theta = edml_local_update(theta, lam, psi, n)
        cur = island_log_objective(theta, lam, psi)
        assert cur >= prev - 1e-12
        prev = cur


def grid_argmax(lam, psi, step=1e-5):
    p = np.arange(step, 1.0, step)
    obj = (psi[0] - 1) * np.log(p) + (psi[1] - 1) * np.log1p(-p)
    with np.errstate(divide="ignore"):
        obj = obj + np.log(np.outer(p, lam[:, 0]) + np.outer(1 - p, lam[:, 1])).sum(axis=1)
    return p[np.argmax(obj)]


@pytest.mark.parametrize("seed", range(10))
def test_binary_island_matches_grid_search(seed):
    rng = np.random.default_rng(seed)
    lam, psi, n = random_island(rng, k=2)
    sol = solve_island([0.5, 0.5], lam, psi, lam.shape[0], tolerance=1e-14, max_iterations=200_000)
    assert sol.converged
    assert sol.theta[0] == pytest.approx(grid_argmax(lam, psi), abs=2e-5)


def test_solve_island_at_fixed_point_takes_one_step():
    rng = np.random.default_rng(3)
    lam, psi, n = random_island(rng)
    k = lam.shape[1]
    fixed = solve_island(np.full(k, 1 / k), lam, psi, n, tolerance=1e-15, max_iterations=200_000)
    again = solve_island(fixed.theta, lam, psi, n, tolerance=1e-12)
    assert again.iterations == 1
    np.testing.assert_allclose(again.theta, fixed.theta, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_island_solution_independent_of_start(seed):
    rng = np.random.default_rng(seed)
    lam, psi, n = random_island(rng)
    k = lam.shape[1]
    sols = [solve_island(rng.dirichlet(np.ones(k)), lam, psi, n, tolerance=1e-14,
                         max_iterations=200_000).theta for _ in range(5)]
    for s in sols[1:]:
        np.testing.assert_allclose(s, sols[0], atol=1e-8)


def test_solve_island_rejects_contradiction():
    with pytest.raises(ValueError):
        solve_island([1.0, 0.0], [[0.0, 2.0]], [2.0, 2.0], 1)


# -- global steps -----------------------------------------------------------

def test_edml_step_on_complete_data_gives_closed_form(asia):
    net, params = asia
    data = forward_sample(net, params, 500, 0)
    cfg = LearnerConfig(damping=0.0, **TIGHT)
    step = edml_global_iteration(net, random_parameterization(net, 3), data,
                                 DirichletPrior.uniform(net, 2.0), cfg)
    assert step.params.max_abs_diff(counts_map(net, data, 2.0)) < 1e-10


def test_edml_step_without_evidence_gives_prior_mode(chain):
    rng = np.random.default_rng(0)
    prior = DirichletPrior(chain, [1.5 + 3 * rng.random(chain.family_shape(i)) for i in range(2)])
    data = Dataset.from_evidence(chain, [{}] * 7)
    step = edml_global_iteration(chain, random_parameterization(chain, 1), data, prior,
                                 LearnerConfig(damping=0.0, **TIGHT))
    assert step.params.max_abs_diff(dirichlet_mode(prior)) < 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_em_fixed_point_is_edml_fixed_point(seed):
    net, data, prior = small_problem(seed)
    cfg = LearnerConfig(algorithm=EM, prior=prior)
    em = run_to_fixed_point(net, data, cfg, tolerance=1e-14).final_params
    assert em_fixed_point_residual(net, em, data, prior) < 1e-10
    step = edml_global_iteration(net, em, data, prior, LearnerConfig(damping=0.0, **TIGHT))
    assert step.params.max_abs_diff(em) < 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_edml_fixed_point_is_em_fixed_point(seed):
    net, data, prior = small_problem(seed)
    cfg = LearnerConfig(algorithm=EDML, prior=prior, damping=0.0, **TIGHT)
    edml = run_to_fixed_point(net, data, cfg, tolerance=1e-14, max_iterations=5000).final_params
    assert em_update(net, edml, data, prior).max_abs_diff(edml) < 1e-8


def test_damping_keeps_parameters_between(asia):
    net, params = asia
    data = hide(forward_sample(net, params, 200, 0), HidingPolicy(seed=1, percentage=0.25))
    prior = DirichletPrior.uniform(net, 2.0)
    start = random_parameterization(net, 2)
    free = edml_global_iteration(net, start, data, prior, LearnerConfig(damping=0.0)).params
    damped = edml_global_iteration(net, start, data, prior, LearnerConfig(damping=0.5)).params
    for i in range(len(net)):
        mid = 0.5 * free.rows(i) + 0.5 * start.rows(i)
        np.testing.assert_allclose(damped.rows(i), mid / mid.sum(axis=1, keepdims=True), atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_hybrid_step_keeps_better_candidate(seed):
    net, data, prior = small_problem(seed, hiding=0.5)
    params = random_parameterization(net, seed)
    cfg = LearnerConfig(algorithm=HYBRID)
    step = hybrid_step(net, params, data, prior, cfg)
    lp_em = log_posterior(net, em_update(net, params, data, prior), data, prior)
    lp_edml = log_posterior(net, step.edml.params, data, prior)
    assert step.log_posterior == pytest.approx(max(lp_em, lp_edml), abs=1e-9)
    assert step.branch == (EDML if lp_edml > lp_em else EM)


# -- driver -----------------------------------------------------------------

@pytest.fixture(scope="module")
def asia_problem():
    from edml import load_network
    from edml.networks import network_path
    net, params = load_network(network_path("asia"))
    data = hide(forward_sample(net, params, 256, 4), HidingPolicy("hidden-variables", 0.25, 5))
    return net, data


@pytest.fixture(scope="module")
def asia_traces(asia_problem):
    net, data = asia_problem
    return {a: run(net, data, LearnerConfig(algorithm=a, seed=9)) for a in (EM, EDML, HYBRID)}


def test_em_and_hybrid_traces_monotone(asia_traces):
    for a in (EM, HYBRID):
        lp = asia_traces[a].log_posteriors
        assert np.all(np.diff(lp) >= -1e-9)


def test_traces_share_starting_point(asia_traces):
    starts = {t.records[0].log_posterior for t in asia_traces.values()}
    assert len(starts) == 1


def test_learners_reach_the_same_optimum(asia_traces):
    finals = [t.log_posteriors[-1] for t in asia_traces.values()]
    for t in asia_traces.values():
        assert t.status == "converged"
    assert max(finals) - min(finals) < 1e-3


def test_hybrid_records_branches(asia_traces):
    branches = asia_traces[HYBRID].branches
    assert set(branches) <= {EM, EDML}
    assert all(b is None for b in asia_traces[EM].branches)
    assert asia_traces[EDML].records[1].local_iterations is not None


def test_trace_json_round_trip(asia_problem, asia_traces):
    net, _ = asia_problem
    t = asia_traces[HYBRID]
    back = LearningTrace.from_dict(json.loads(t.to_json()), net)
    assert back.to_json() == t.to_json()
    assert back.final_params.max_abs_diff(t.final_params) == 0.0


def test_clock_none_gives_zero_times(asia_problem):
    net, data = asia_problem
    t = run(net, data, LearnerConfig(algorithm=EM, clock="none", max_iterations=5))
    assert np.all(t.elapsed == 0.0)
    assert t.status == "max-iterations"
    assert t.iterations == 5


def test_impossible_evidence_status(chain):
    params = Parameterization(chain, {"A": [1.0, 0.0], "B": [[0.5, 0.5], [0.5, 0.5]]})
    data = Dataset.from_evidence(chain, [{"A": 1}])
    t = run(chain, data, LearnerConfig(algorithm=EM), initial=params)
    assert t.status == "impossible-evidence"
    assert "example 0" in t.message


def test_config_validation():
    with pytest.raises(ValueError):
        LearnerConfig(algorithm="gibbs")
    with pytest.raises(ValueError):
        LearnerConfig(damping=1.0)
    with pytest.raises(ValueError):
        replace(LearnerConfig(), local_tolerance=0.0)
