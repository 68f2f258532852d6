"""Experiment harness: synthesize, simulate, learn, score, emit curve data.

A run sweeps a sample-count grid times a seed list (times a hidden-node
count list for missing-data studies).  Each cell redraws injection
statistics and samples, runs the selected learner, and scores the result
against the ground truth.  Learner failures are recorded per cell, never
fatal.  Identical configs produce byte-identical curves.csv files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridForestError, InfeasibleSpec
from .fileio import save_curves
from .lines import learn_structure_and_params
from .missing import MissingSpec, learn_with_missing
from .moments import MomentSet
from .network import RadialForest, line_param_map
from .powerflow import InjectionModel, analytic_moments, sample_voltages
from .structure import estimate_injection_stats, learn_structure
from .synth import FeederSpec, choose_hidden, draw_injections, synth_layout

TASKS = ("learn", "learn-params", "learn-missing")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    feeder: FeederSpec
    m_grid: tuple[int, ...]
    seeds: tuple[int, ...]
    layout_seed: int = 7
    missing_counts: tuple[int, ...] = ()
    analytic: bool = False
    tol_rel: float | None = None

    def validate(self):
        if self.task not in TASKS:
            raise InfeasibleSpec(f"unknown task {self.task!r}")
        if not self.m_grid or any(m < 2 for m in self.m_grid):
            raise InfeasibleSpec("sample grid must be non-empty with all m >= 2")
        if not self.seeds:
            raise InfeasibleSpec("need at least one seed")
        if self.task == "learn-missing" and not self.missing_counts:
            raise InfeasibleSpec("learn-missing needs missing_counts")


@dataclass
class MetricsReport:
    rows: list[tuple] = field(default_factory=list)  # (task, m, seed, metric, value)
    failures: list[tuple] = field(default_factory=list)

    def add(self, task, m, seed, metric, value):
        self.rows.append((task, int(m), int(seed), metric, float(value)))

    def aggregate(self, task, m, metric) -> float:
        vals = [
            v
            for (t, mm, _s, met, v) in self.rows
            if t == task and mm == m and met == metric
        ]
        if not vals:
            raise KeyError(f"no rows for ({task}, {m}, {metric})")
        return float(np.mean(vals))

    def aggregates(self) -> dict:
        keys = sorted({(t, m, met) for (t, m, _s, met, _v) in self.rows})
        return {f"{t}|m={m}|{met}": self.aggregate(t, m, met) for (t, m, met) in keys}


# -- metrics -------------------------------------------------------------------------


def structural_error(truth: RadialForest, recovered_parent: dict[int, int]) -> float:
    """Fraction of load nodes whose recovered parent differs from the truth.

    Nodes absent from the recovery count as wrong.
    """
    wrong = 0
    for a in truth.load_ids:
        if recovered_parent.get(a) != truth.parent[a]:
            wrong += 1
    return wrong / truth.n_loads


def fractional_error(estimate: np.ndarray, truth: np.ndarray, floor: float = 1e-300) -> float:
    """Mean |estimate - truth| / |truth| over entries."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return float(np.mean(np.abs(estimate - truth) / np.maximum(np.abs(truth), floor)))


def injection_errors(inj_hat: InjectionModel, inj: InjectionModel) -> dict[str, float]:
    inj = inj.for_nodes(inj_hat.node_ids)
    return {
        "mu_p_err": fractional_error(inj_hat.mu_p, inj.mu_p),
        "mu_q_err": fractional_error(inj_hat.mu_q, inj.mu_q),
        "omega_p_err": fractional_error(inj_hat.var_p, inj.var_p),
        "omega_q_err": fractional_error(inj_hat.var_q, inj.var_q),
        "omega_pq_err": fractional_error(inj_hat.cov_pq, inj.cov_pq),
    }


def line_errors(estimates, truth: RadialForest) -> dict[str, float]:
    params = line_param_map(truth.lines)
    rerrs, xerrs = [], []
    for (a, b), est in estimates.items():
        key = (a, b) if a < b else (b, a)
        if key not in params:
            continue
        r, x = params[key]
        rerrs.append(abs(est.r_hat - r) / r)
        xerrs.append(abs(est.x_hat - x) / x)
    return {
        "r_err": float(np.mean(rerrs)) if rerrs else 1.0,
        "x_err": float(np.mean(xerrs)) if xerrs else 1.0,
    }


# -- cells ------------------------------------------------------------------------------


def _cell_seed(base_seed: int, m: int, extra: int = 0) -> np.random.Generator:
    return np.random.default_rng([base_seed, m, extra])


def _momset_for(forest, inj, m, seed, analytic, observed=None):
    if analytic:
        am = analytic_moments(forest, inj)
        ms = MomentSet.from_analytic(am, zero_ids=forest.slack_ids)
        if observed is not None:
            raise ValueError("analytic mode does not support masking")
        return ms
    samples = sample_voltages(forest, inj, m, seed)
    if observed is not None:
        samples = samples.restrict(observed)
    return MomentSet.from_samples(samples, zero_ids=forest.slack_ids)


def run_experiment(config: ExperimentConfig, outdir=None) -> MetricsReport:
    """Sweep the grid, score each cell, optionally write curves.csv."""
    config.validate()
    forest = synth_layout(config.feeder, config.layout_seed)
    declared = forest.substation_children()
    params = line_param_map(forest.lines)
    report = MetricsReport()

    for m in config.m_grid:
        for seed in config.seeds:
            inj = draw_injections(config.feeder, forest.load_ids, [config.layout_seed, seed])
            if config.task == "learn-missing":
                for count in config.missing_counts:
                    _run_missing_cell(
                        config, forest, declared, params, inj, m, seed, count, report
                    )
            else:
                _run_full_cell(config, forest, declared, params, inj, m, seed, report)

    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        save_curves(outdir / "curves.csv", sorted(report.rows))
    return report


def _run_full_cell(config, forest, declared, params, inj, m, seed, report):
    sample_seed = [config.layout_seed, seed, m]
    momset = _momset_for(forest, inj, m, sample_seed, config.analytic)
    task = config.task
    try:
        if task == "learn":
            recovered = learn_structure(momset, declared, line_params=params)
            report.add(task, m, seed, "struct_err", structural_error(forest, recovered.parent))
            inj_hat = estimate_injection_stats(momset, recovered)
            for name, val in injection_errors(inj_hat, inj).items():
                report.add(task, m, seed, name, val)
        else:  # learn-params
            vp, vq, _ = inj.as_maps()
            recovered, estimates = learn_structure_and_params(
                momset, vp, vq, declared, rel_tol=1e-6 if not config.analytic else 1e-9
            )
            report.add(task, m, seed, "struct_err", structural_error(forest, recovered.parent))
            for name, val in line_errors(estimates, forest).items():
                report.add(task, m, seed, name, val)
    except GridForestError as exc:
        parent_map = getattr(exc, "parent_map", {})
        report.add(task, m, seed, "struct_err", structural_error(forest, parent_map))
        report.add(task, m, seed, "failed", 1.0)
        report.failures.append((task, m, seed, repr(exc)))


def _run_missing_cell(config, forest, declared, params, inj, m, seed, count, report):
    task = f"learn-missing/h{count}"
    hidden_ids = choose_hidden(forest, count, [config.layout_seed, seed, count])
    spec = MissingSpec.from_injections(hidden_ids, inj)
    observed = tuple(i for i in forest.load_ids if i not in set(hidden_ids))
    if config.analytic:
        # population matrices cover all nodes; restrict the view to observed
        am = analytic_moments(forest, inj)
        keep = [forest.load_index(i) for i in observed]
        momset = MomentSet(
            observed,
            am.mu_eps[keep],
            am.mu_theta[keep],
            am.omega_eps[np.ix_(keep, keep)],
            am.omega_theta[np.ix_(keep, keep)],
            am.omega_eps_theta[np.ix_(keep, keep)],
            zero_ids=forest.slack_ids,
        )
    else:
        sample_seed = [config.layout_seed, seed, m, count]
        momset = _momset_for(forest, inj, m, sample_seed, False, observed=observed)
    vp, vq, s = inj.as_maps()
    try:
        recovered = learn_with_missing(
            momset, spec, vp, vq, s, params, declared, tol_rel=config.tol_rel
        )
        report.add(task, m, seed, "struct_err", structural_error(forest, recovered.parent))
    except GridForestError as exc:
        parent_map = getattr(exc, "parent_map", {})
        report.add(task, m, seed, "struct_err", structural_error(forest, parent_map))
        report.add(task, m, seed, "failed", 1.0)
        report.failures.append((task, m, seed, repr(exc)))


# -- canned reproductions ------------------------------------------------------------------


def fig4_config(seeds=tuple(range(24)), analytic=False) -> ExperimentConfig:
    """Error-decay study on the 13-load / 3-substation synthetic feeder."""
    from .synth import preset

    return ExperimentConfig(
        task="learn",
        feeder=preset("bus_13_3"),
        m_grid=(400, 1600, 6400, 25600),
        seeds=tuple(seeds),
        layout_seed=7,
        analytic=analytic,
    )


def fig5_config(seeds=tuple(range(24)), analytic=False) -> ExperimentConfig:
    """Missing-data study on the 29-load single-tree synthetic feeder."""
    from .synth import preset

    return ExperimentConfig(
        task="learn-missing",
        feeder=preset("bus_29_1"),
        m_grid=(400, 1600, 6400),
        seeds=tuple(seeds),
        layout_seed=11,
        missing_counts=(1, 2, 3),
        analytic=analytic,
    )


def reproduce_fig4(outdir, seeds=tuple(range(24))) -> MetricsReport:
    return run_experiment(fig4_config(seeds), outdir=outdir)


def reproduce_fig5(outdir, seeds=tuple(range(24))) -> MetricsReport:
    return run_experiment(fig5_config(seeds), outdir=outdir)
