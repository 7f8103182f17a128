"""Experiment harness: learning problems, learner races, error curves and
summary tables.

A learning problem is a network, a hiding percentage and one sampled
dataset.  Every learner on a problem starts from the same random
parameterization.  The error of a learner at a global iteration is the
best log posterior reached by any learner on that problem minus its own
current log posterior.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .data import HIDDEN_VARIABLES, Dataset, HidingPolicy, forward_sample, hide
from .learn import EDML, EM, HYBRID, LearnerConfig, LearningTrace, run
from .model import Network, load_network, random_parameterization
from .networks import network_path

log = logging.getLogger(__name__)

DEFAULT_HIDING = (0.10, 0.25, 0.35, 0.50, 0.70)
ERROR_THRESHOLD = 1e-4
UNDEFINED = "—"


def default_learners(**overrides) -> tuple[LearnerConfig, ...]:
    overrides.setdefault("record_params", False)
    return tuple(LearnerConfig(algorithm=a, **overrides) for a in (EM, EDML, HYBRID))


@dataclass(frozen=True)
class ExperimentSpec:
    networks: tuple[str, ...]
    dataset_size: int = 2 ** 10
    hiding: tuple[float, ...] = DEFAULT_HIDING
    replicates: int = 3
    learners: tuple[LearnerConfig, ...] = field(default_factory=default_learners)
    master_seed: int = 0
    hiding_mode: str = HIDDEN_VARIABLES

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if any(not 0.0 <= h <= 1.0 for h in self.hiding):
            raise ValueError("hiding percentages must lie in [0, 1]")
        labels = [c.algorithm for c in self.learners]
        if len(set(labels)) != len(labels):
            raise ValueError("at most one learner per algorithm")


@dataclass
class Problem:
    name: str
    network: str
    hiding: float
    replicate: int
    seeds: dict
    hidden: list
    traces: dict[str, LearningTrace] = field(default_factory=dict)

    @property
    def best(self) -> float:
        return max(float(t.log_posteriors.max()) for t in self.traces.values() if t.records)

    def errors(self, learner: str) -> np.ndarray:
        return self.best - self.traces[learner].log_posteriors

    def meta(self) -> dict:
        return {"name": self.name, "network": self.network, "hiding": self.hiding,
                "replicate": self.replicate, "seeds": self.seeds, "hidden": self.hidden,
                "best_log_posterior": self.best,
                "learners": {k: {"status": t.status, "iterations": t.iterations}
                             for k, t in self.traces.items()}}


@dataclass
class ExperimentResult:
    problems: list[Problem]
    spec: dict = field(default_factory=dict)

    @property
    def learners(self) -> list[str]:
        return list(self.problems[0].traces) if self.problems else []


def problem_seeds(master_seed: int, network: str, hiding: float, replicate: int) -> dict:
    key = [int(master_seed), zlib.crc32(network.encode()), int(round(hiding * 1000)), int(replicate)]
    data, hiding_seed, init = np.random.SeedSequence(key).generate_state(3)
    return {"data": int(data), "hiding": int(hiding_seed), "init": int(init)}


def make_problem(network: Network, true_params, name: str, hiding: float, replicate: int,
                 spec: ExperimentSpec) -> tuple[Problem, Dataset]:
    seeds = problem_seeds(spec.master_seed, name, hiding, replicate)
    if true_params is None:
        true_params = random_parameterization(network, seeds["data"])
    complete = forward_sample(network, true_params, spec.dataset_size, seeds["data"])
    data = hide(complete, HidingPolicy(spec.hiding_mode, hiding, seeds["hiding"]))
    label = f"{name}-h{int(round(hiding * 100)):02d}-r{replicate}"
    return Problem(label, name, hiding, replicate, seeds, data.provenance.get("hidden_variables", [])), data


def run_problem(network: Network, problem: Problem, data: Dataset,
                learners: tuple[LearnerConfig, ...]) -> Problem:
    seed_params = random_parameterization(network, problem.seeds["init"])
    for cfg in learners:
        problem.traces[cfg.algorithm] = run(network, data, cfg, initial=seed_params)
        log.info("%s %s: %s in %d iterations", problem.name, cfg.algorithm,
                 problem.traces[cfg.algorithm].status, problem.traces[cfg.algorithm].iterations)
    return problem


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Generate every learning problem of ``spec`` and race its learners."""
    kernels.warmup()
    problems = []
    for path in spec.networks:
        network, true_params = load_network(network_path(path))
        name = network.name
        for h in spec.hiding:
            for rep in range(spec.replicates):
                problem, data = make_problem(network, true_params, name, h, rep, spec)
                problems.append(run_problem(network, problem, data, spec.learners))
    return ExperimentResult(problems, spec_to_dict(spec))


def spec_to_dict(spec: ExperimentSpec) -> dict:
    d = asdict(spec)
    d["learners"] = [{k: v for k, v in asdict(c).items() if k != "prior"} | {"prior": _prior_repr(c.prior)}
                     for c in spec.learners]
    return d


def _prior_repr(prior):
    return prior if isinstance(prior, (int, float)) else prior.to_dict()


# -- tables -----------------------------------------------------------------

def _padded(a: np.ndarray, length: int) -> np.ndarray:
    if a.size >= length:
        return a[:length]
    return np.concatenate([a, np.full(length - a.size, a[-1])])


def _compare_iterations(ea: np.ndarray, eb: np.ndarray, threshold: float):
    """Per-iteration comparison of two error curves from iteration 1 until
    both errors are below ``threshold``."""
    length = max(ea.size, eb.size)
    ea, eb = _padded(ea, length), _padded(eb, length)
    below = np.flatnonzero((ea < threshold) & (eb < threshold))
    below = below[below >= 1]
    stop = int(below[0]) if below.size else length
    return ea[1:stop], eb[1:stop]


@dataclass
class _Tally:
    counted: int = 0
    wins_a: int = 0
    wins_b: int = 0
    gain_a: float = 0.0
    gain_b: float = 0.0

    def add(self, ea, eb):
        self.counted += ea.size
        a = ea < eb
        b = eb < ea
        self.wins_a += int(a.sum())
        self.wins_b += int(b.sum())
        self.gain_a += float(np.sum((eb[a] - ea[a]) / eb[a]))
        self.gain_b += float(np.sum((ea[b] - eb[b]) / ea[b]))

    def row(self, category):
        def pct(x, n):
            return 100.0 * x / n if n else None
        return {"category": category,
                "share_a": pct(self.wins_a, self.counted), "share_b": pct(self.wins_b, self.counted),
                "r_b": pct(self.gain_b, self.wins_b), "r_a": pct(self.gain_a, self.wins_a),
                "iterations": self.counted}


def _categories(result: ExperimentResult):
    cats = {}
    for p in result.problems:
        cats.setdefault(p.network, []).append(p)
    for h in sorted({p.hiding for p in result.problems}):
        cats[f"hiding {int(round(h * 100))}%"] = [p for p in result.problems if p.hiding == h]
    cats["average"] = list(result.problems)
    return cats


def iteration_speedup_table(result: ExperimentResult, a: str = EDML, b: str = EM,
                            threshold: float = ERROR_THRESHOLD) -> dict:
    """Share of global iterations in which each learner has strictly less
    error, and the mean relative error reduction over the iterations it
    leads (``r`` for ``b``, ``r'`` for ``a``), as percentages."""
    rows = []
    for cat, problems in _categories(result).items():
        t = _Tally()
        for p in problems:
            t.add(*_compare_iterations(p.errors(a), p.errors(b), threshold))
        rows.append(t.row(cat))
    return {"a": a, "b": b, "kind": "iterations", "rows": rows}


def race_times(problem: Problem, challenger: str = HYBRID, baseline: str = EM,
               tolerance: float = ERROR_THRESHOLD) -> tuple[float, float, bool]:
    """Time of the baseline to finish, time of the challenger to match the
    baseline's final log posterior (or its full run time if it never
    does), and whether it matched."""
    base = problem.traces[baseline]
    chal = problem.traces[challenger]
    t_base = float(base.elapsed[-1])
    target = float(base.log_posteriors[-1]) - tolerance
    hit = np.flatnonzero(chal.log_posteriors >= target)
    if hit.size:
        return t_base, float(chal.elapsed[hit[0]]), True
    return t_base, float(chal.elapsed[-1]), False


def time_speedup_table(result: ExperimentResult, a: str = HYBRID, b: str = EM,
                       tolerance: float = ERROR_THRESHOLD) -> dict:
    """Share of problems each learner finishes first, and the mean
    relative time reduction when it does (``s`` for ``a``, ``s'`` for ``b``)."""
    rows = []
    cats = {k: v for k, v in _categories(result).items() if not k.startswith("hiding")}
    for cat, problems in cats.items():
        wins_a = wins_b = 0
        red_a, red_b = [], []
        for p in problems:
            t_b, t_a, matched = race_times(p, a, b, tolerance)
            if matched and t_a < t_b:
                wins_a += 1
                red_a.append((t_b - t_a) / t_b)
            elif not matched:
                # counts as a loss, but there is no matching time to compare
                wins_b += 1
            elif t_b < t_a:
                wins_b += 1
                red_b.append((t_a - t_b) / t_a)
        n = len(problems)
        rows.append({"category": cat, "share_a": 100.0 * wins_a / n, "share_b": 100.0 * wins_b / n,
                     "s_a": 100.0 * float(np.mean(red_a)) if red_a else None,
                     "s_b": 100.0 * float(np.mean(red_b)) if red_b else None,
                     "problems": n})
    return {"a": a, "b": b, "kind": "time", "rows": rows}


def _fmt(x) -> str:
    return UNDEFINED if x is None else f"{x:.2f}%"


def table_columns(table: dict) -> list[str]:
    a, b = table["a"], table["b"]
    if table["kind"] == "iterations":
        return ["category", f"% {a}", f"% {b}", f"r ({b})", f"r' ({a})"]
    return ["category", f"% {a}", f"% {b}", f"s ({a})", f"s' ({b})"]


def table_cells(table: dict) -> list[list[str]]:
    keys = ("share_a", "share_b", "r_b", "r_a") if table["kind"] == "iterations" else \
        ("share_a", "share_b", "s_a", "s_b")
    return [[r["category"]] + [_fmt(r[k]) for k in keys] for r in table["rows"]]


def format_table(table: dict) -> str:
    cols = table_columns(table)
    cells = table_cells(table)
    widths = [max(len(c), *(len(row[j]) for row in cells)) if cells else len(c)
              for j, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def table_csv(table: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table_columns(table))
    w.writerows(table_cells(table))
    return buf.getvalue()


# -- output -----------------------------------------------------------------

def curve_rows(problem: Problem, learner: str):
    trace = problem.traces[learner]
    err = problem.errors(learner)
    for r, e in zip(trace.records, err):
        yield r.iteration, r.elapsed * 1000.0, r.log_posterior, float(e)


def emit_curves(result: ExperimentResult, out_dir) -> list[Path]:
    """Write one CSV per (problem, learner) with the error curve."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for p in result.problems:
        for learner in p.traces:
            path = out / f"{p.name}__{learner}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["iteration", "elapsed_ms", "log_posterior", "error"])
                for it, ms, lp, e in curve_rows(p, learner):
                    w.writerow([it, repr(ms), repr(lp), repr(e)])
            paths.append(path)
    return paths


def write_bundle(result: ExperimentResult, out_dir, with_time_table: bool = True) -> Path:
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    emit_curves(result, out / "curves")
    for p in result.problems:
        for learner, trace in p.traces.items():
            (out / "traces" / f"{p.name}__{learner}.json").write_text(trace.to_json())
    (out / "experiment.json").write_text(json.dumps(
        {"spec": result.spec, "problems": [p.meta() for p in result.problems]}, indent=1) + "\n")
    write_tables(result, out, with_time_table)
    return out


def write_tables(result: ExperimentResult, out_dir, with_time_table: bool = True) -> list[dict]:
    out = Path(out_dir)
    tables = []
    learners = set(result.learners)
    if {EDML, EM} <= learners:
        tables.append(("iterations", iteration_speedup_table(result)))
    if with_time_table and {HYBRID, EM} <= learners:
        tables.append(("time", time_speedup_table(result)))
    for name, table in tables:
        (out / f"table_{name}.txt").write_text(format_table(table))
        (out / f"table_{name}.csv").write_text(table_csv(table))
    return [t for _, t in tables]


def load_bundle(out_dir) -> ExperimentResult:
    out = Path(out_dir)
    meta = json.loads((out / "experiment.json").read_text())
    problems = []
    for m in meta["problems"]:
        p = Problem(m["name"], m["network"], m["hiding"], m["replicate"], m["seeds"], m["hidden"])
        for learner in m["learners"]:
            data = json.loads((out / "traces" / f"{p.name}__{learner}.json").read_text())
            p.traces[learner] = LearningTrace.from_dict(data)
        problems.append(p)
    return ExperimentResult(problems, meta["spec"])


__all__ = [
    "ExperimentResult", "ExperimentSpec", "Problem", "default_learners", "emit_curves",
    "format_table", "iteration_speedup_table", "load_bundle", "make_problem", "race_times",
    "run_experiment", "run_problem", "time_speedup_table", "write_bundle", "write_tables",
]
