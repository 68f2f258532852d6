"""Forest recovery and injection-statistics estimation from voltage moments.

Structure recovery uses two ordering facts about radial grids under
uncorrelated nodal injections:

* voltage-deviation variance strictly increases moving away from the slack,
  so processing nodes in decreasing variance visits every node only after
  all of its descendants; and
* among a node's non-descendants, the centered squared difference of
  voltage deviations is minimized exactly at its parent.

The learner therefore pops nodes by decreasing variance and attaches each
previously-popped node to the pop that minimizes its squared difference.
Loads directly attached to substations must be declared up front: slack
channels are identically zero, which makes all slacks indistinguishable as
parents.

Only voltage magnitudes drive the structure.  Phase data and line
parameters enter solely in the statistics estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IncompleteCover,
    NegativeVarianceEstimate,
    SingularSystem,
    UnobservedNode,
)
from .moments import MomentSet
from .network import ROLE_LOAD, ROLE_SUBSTATION, Line, Node, RadialForest, build_forest
from .powerflow import InjectionModel


@dataclass
class EdgeDecision:
    """Outcome of one parent selection."""

    child: int
    parent: int
    margin: float  # runner-up sqdiff minus chosen sqdiff
    runner_up: int | None
    ambiguous: bool


@dataclass
class StructureDiagnostics:
    pop_order: list[int] = field(default_factory=list)
    decisions: list[EdgeDecision] = field(default_factory=list)
    variance_margins: list[tuple[int, float]] = field(default_factory=list)

    @property
    def ambiguous_edges(self) -> list[EdgeDecision]:
        return [d for d in self.decisions if d.ambiguous]


@dataclass
class EstimationDiagnostics:
    mode: str = "sequential"
    clamped_variances: list[tuple[int, str, float]] = field(default_factory=list)
    clamped_covariances: list[tuple[int, float]] = field(default_factory=list)


@dataclass
class LearnResult:
    forest: RadialForest
    inj_hat: InjectionModel | None
    structure_diagnostics: StructureDiagnostics
    estimation_diagnostics: EstimationDiagnostics | None = None


def _declared_map(substation_children) -> dict[int, int]:
    """child -> slack, validated for duplicates."""
    out: dict[int, int] = {}
    for slack, children in substation_children.items():
        for c in children:
            if c in out:
                raise ValueError(f"node {c} declared under two substations")
            out[int(c)] = int(slack)
    return out


def recover_parent_map(
    momset: MomentSet,
    substation_children,
    *,
    tie_rtol: float = 1e-9,
    diagnostics: StructureDiagnostics | None = None,
) -> dict[int, int]:
    """Core pass shared by all structure learners.

    Returns child -> parent over the observed loads; declared substation
    children map to their slack.  Raises IncompleteCover when a node runs
    out of candidates (its parent would have to be an undeclared slack).
    """
    declared = _declared_map(substation_children)
    loads = sorted(set(momset.observed) - momset.zero_ids)
    unknown = [c for c in declared if c not in set(loads)]
    if unknown:
        raise UnobservedNode(f"declared substation children {unknown} not observed")

    var = {a: momset.var_eps(a) for a in loads}
    order = sorted(loads, key=lambda a: (-var[a], a))
    if diagnostics is not None:
        diagnostics.pop_order = list(order)
        for i in range(len(order) - 1):
            diagnostics.variance_margins.append(
                (order[i], var[order[i]] - var[order[i + 1]])
            )

    parent: dict[int, int] = {}
    for i, a in enumerate(order):
        if a in declared:
            parent[a] = declared[a]
            continue
        candidates = order[i + 1 :]
        if not candidates:
            raise IncompleteCover(
                f"node {a} has no remaining parent candidates", parent_map=parent
            )
        vals = np.array([momset.sqdiff("eps", a, c) for c in candidates])
        best_val = vals.min()
        ties = [c for c, v in zip(candidates, vals) if v == best_val]
        chosen = min(ties)
        parent[a] = chosen
        if diagnostics is not None:
            others = [(v, c) for c, v in zip(candidates, vals) if c != chosen]
            if others:
                runner_val, runner = min(others)
                margin = float(runner_val - best_val)
                scale = max(abs(best_val), abs(runner_val), 1e-300)
                ambiguous = bool(margin <= tie_rtol * scale)
            else:
                runner, margin, ambiguous = None, float("inf"), False
            diagnostics.decisions.append(
                EdgeDecision(a, chosen, margin, runner, ambiguous)
            )
    return parent


def forest_from_parent_map(
    parent: dict[int, int], slack_ids, *, line_params=None
) -> RadialForest:
    """Materialize a recovered parent map as a forest.

    Line parameters come from ``line_params`` (keyed by unordered endpoint
    pair) when available, unit impedance otherwise.
    """
    line_params = line_params or {}
    slack_ids = set(slack_ids)
    node_ids = set(parent) | set(parent.values()) | slack_ids
    nodes = [
        Node(i, ROLE_SUBSTATION if i in slack_ids else ROLE_LOAD)
        for i in sorted(node_ids)
    ]
    lines = []
    for child, par in sorted(parent.items()):
        key = (child, par) if child < par else (par, child)
        r, x = line_params.get(key, (1.0, 1.0))
        lines.append(Line(child, par, r=r, x=x))
    return build_forest(nodes, lines)


def learn_structure(
    momset: MomentSet,
    substation_children,
    *,
    line_params=None,
    tie_rtol: float = 1e-9,
    return_diagnostics: bool = False,
):
    """Recover the operational forest from voltage-magnitude moments alone."""
    diag = StructureDiagnostics()
    parent = recover_parent_map(
        momset, substation_children, tie_rtol=tie_rtol, diagnostics=diag
    )
    forest = forest_from_parent_map(
        parent, substation_children.keys(), line_params=line_params
    )
    if return_diagnostics:
        return forest, diag
    return forest


_EDGE_SYSTEM_COND_LIMIT = 1e13


def solve_edge_system(r: float, x: float, a_stat: float, b_stat: float, c_stat: float):
    """Per-edge linear system tying the three pairwise statistics to the
    subtree sums of (var_p, var_q, cov_pq).

    Well-posed for any r, x > 0 (determinant -(r^2 + x^2)^3).
    """
    mat = np.array(
        [
            [r * r, x * x, 2.0 * r * x],
            [x * x, r * r, -2.0 * r * x],
            [r * x, -r * x, x * x - r * r],
        ]
    )
    rhs = np.array([a_stat, b_stat, c_stat])
    if np.linalg.cond(mat) > _EDGE_SYSTEM_COND_LIMIT:
        raise SingularSystem(f"edge system ill-conditioned for r={r}, x={x}")
    return np.linalg.solve(mat, rhs)


def estimate_injection_stats(
    momset: MomentSet,
    forest: RadialForest,
    *,
    mode: str = "sequential",
    clamp_floor: float = 0.0,
    strict: bool = False,
    return_diagnostics: bool = False,
):
    """Recover per-node injection means and second moments on a known forest.

    Sequential mode walks edges leaf-upward: each edge's three pairwise
    statistics determine the subtree sums of (var_p, var_q, cov_pq), and the
    already-estimated descendant sums are subtracted off.  Direct mode
    recovers the same quantities in one shot by mapping voltage moments back
    through the complex reduced Laplacian; it is kept as a cross-check.

    Negative solved variances are clamped to ``clamp_floor`` and reported
    (raised when ``strict``).  Covariances are clamped into the
    Cauchy-Schwarz bound the model requires.
    """
    if not momset.has_theta:
        raise UnobservedNode("statistics estimation needs the theta channel")
    momset = momset.with_zero_ids(forest.slack_ids)
    missing = [a for a in forest.load_ids if a not in set(momset.observed)]
    if missing:
        raise UnobservedNode(f"moments missing for nodes {missing}")

    diag = EstimationDiagnostics(mode=mode)
    n = forest.n_loads
    ids = forest.load_ids

    if mode == "sequential":
        var_p = np.zeros(n)
        var_q = np.zeros(n)
        cov_pq = np.zeros(n)
        desc = {a: np.zeros(3) for a in ids}
        by_depth = sorted(ids, key=lambda a: (-forest.depth[a], a))
        for a in by_depth:
            b = forest.parent[a]
            r, x = forest.edge_params[a]
            a_stat = momset.sqdiff("eps", a, b)
            b_stat = momset.sqdiff("theta", a, b)
            c_stat = momset.sqdiff("cross", a, b)
            sums = solve_edge_system(r, x, a_stat, b_stat, c_stat)
            own = sums - desc[a]
            k = forest.load_index(a)
            var_p[k], var_q[k], cov_pq[k] = own
            for j, name in enumerate(("var_p", "var_q")):
                if own[j] < clamp_floor:
                    if strict:
                        raise NegativeVarianceEstimate(
                            f"{name}[{a}] solved to {own[j]:.3e}"
                        )
                    diag.clamped_variances.append((a, name, float(own[j])))
            var_p[k] = max(var_p[k], clamp_floor)
            var_q[k] = max(var_q[k], clamp_floor)
            p = forest.parent[a]
            if forest.is_load(p):
                desc[p] += np.array([var_p[k], var_q[k], cov_pq[k]]) + desc[a]
    elif mode == "direct":
        hz = forest.reduced_laplacian("z")
        g, bm = hz.real, hz.imag
        cov_e = _aligned_matrix(momset, ids, "eps")
        cov_t = _aligned_matrix(momset, ids, "theta")
        cov_et = _aligned_matrix(momset, ids, "eps_theta")
        cov_te = cov_et.T
        var_p = np.diag(g @ cov_e @ g.T - g @ cov_et @ bm.T - bm @ cov_te @ g.T + bm @ cov_t @ bm.T).copy()
        var_q = np.diag(bm @ cov_e @ bm.T + bm @ cov_et @ g.T + g @ cov_te @ bm.T + g @ cov_t @ g.T).copy()
        cov_pq = np.diag(-g @ cov_e @ bm.T - g @ cov_et @ g.T + bm @ cov_te @ bm.T + bm @ cov_t @ g.T).copy()
        for k, a in enumerate(ids):
            for name, arr in (("var_p", var_p), ("var_q", var_q)):
                if arr[k] < clamp_floor:
                    if strict:
                        raise NegativeVarianceEstimate(f"{name}[{a}] solved to {arr[k]:.3e}")
                    diag.clamped_variances.append((a, name, float(arr[k])))
        var_p = np.maximum(var_p, clamp_floor)
        var_q = np.maximum(var_q, clamp_floor)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    bound = np.sqrt(var_p * var_q)
    for k, a in enumerate(ids):
        if abs(cov_pq[k]) > bound[k]:
            diag.clamped_covariances.append((a, float(cov_pq[k])))
            cov_pq[k] = np.sign(cov_pq[k]) * bound[k]

    # Means: stacked linear system in (mu_p, mu_q) built from the two
    # path-sum matrices (both nonsingular on trees).
    tr = forest.h_inverse_matrix("r")
    tx = forest.h_inverse_matrix("x")
    mu_theta, mu_eps = momset.mean_vectors(ids)
    block = np.block([[tx, -tr], [tr, tx]])
    sol = np.linalg.solve(block, np.concatenate([mu_theta, mu_eps]))
    mu_p, mu_q = sol[:n], sol[n:]

    inj = InjectionModel(
        node_ids=ids,
        mu_p=mu_p,
        mu_q=mu_q,
        var_p=var_p,
        var_q=var_q,
        cov_pq=cov_pq,
    )
    if return_diagnostics:
        return inj, diag
    return inj


def _aligned_matrix(momset: MomentSet, ids, channel: str) -> np.ndarray:
    mat = momset.full_cov(channel)
    pos = {i: k for k, i in enumerate(momset.node_ids)}
    idx = np.array([pos[i] for i in ids], dtype=int)
    return mat[np.ix_(idx, idx)]


def learn(
    momset: MomentSet,
    substation_children,
    *,
    line_params=None,
    estimate: bool = True,
    tie_rtol: float = 1e-9,
    clamp_floor: float = 0.0,
) -> LearnResult:
    """Full pipeline: structure first, then injection statistics on it."""
    forest, sdiag = learn_structure(
        momset,
        substation_children,
        line_params=line_params,
        tie_rtol=tie_rtol,
        return_diagnostics=True,
    )
    inj_hat = None
    ediag = None
    if estimate:
        inj_hat, ediag = estimate_injection_stats(
            momset, forest, clamp_floor=clamp_floor, return_diagnostics=True
        )
    return LearnResult(
        forest=forest,
        inj_hat=inj_hat,
        structure_diagnostics=sdiag,
        estimation_diagnostics=ediag,
    )
