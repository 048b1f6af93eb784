"""Safe exploration: pruning to a nonviolating sub-product, cycle selection and
the outer learn-abstract-synthesise loop."""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .abstraction import Imdp, NoiseModel, Partition, build_imdp, build_partition
from .checker import AdversaryMode, Mec, Policy, mec_decompose, satisfaction_bounds, value_iterate
from .gp import BetaParams, Dataset, MultiOutputGp, SqExpKernel, beta_bound, kernel_eval
from .model import Pimdp, SubPimdp, failure_states, product
from .scltl import NONE_OBS, OUT_OBS, Fsa, atoms, parse, to_fsa
from .sim import GroundTruth, identity, make_ground_truth

log = logging.getLogger(__name__)

# Probabilities within this distance of a threshold count as meeting it.
PROB_TOL = 1e-6


class ExplorationImpossible(RuntimeError):
    pass


def nonviolating_subgraph(p: Pimdp, failures) -> SubPimdp:
    """Iteratively drop actions that may enter a failure state, then states left
    without actions, until nothing changes."""
    removed = set(int(i) for i in failures)
    fresh = set(removed)
    acts = [list(a) for a in p.actions]
    loops = 0
    while fresh:
        loops += 1
        bad = np.zeros(p.n_states, dtype=bool)
        bad[list(removed)] = True
        for i in range(p.n_states):
            if i in removed:
                continue
            acts[i] = [a for a in acts[i]
                       if not np.any(bad[p.rows[(i, a)].succ] & (p.rows[(i, a)].hi > 0))]
        fresh = {i for i in range(p.n_states) if i not in removed and not acts[i]}
        removed |= fresh
    for i in removed:
        acts[i] = []
    retained = frozenset(range(p.n_states)) - frozenset(removed)
    return SubPimdp(p, retained, acts, loops)


def total_uncertainty(imdp: Imdp) -> float:
    return math.fsum(float(np.sum(row.hi - row.lo)) for row in imdp.rows.values())


@dataclass
class CyclePlan:
    """Approach policy towards a selected end component plus a round-robin
    schedule over the component's actions."""

    mec: Mec
    approach: Policy
    rotation: dict[int, list[int]]
    reach: list[float] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    candidates: list[int] = field(default_factory=list)
    index: int = 0
    cursor: dict[int, int] = field(default_factory=dict)

    def next_action(self, state: int) -> int | None:
        acts = self.rotation.get(state)
        if acts:
            k = self.cursor.get(state, 0)
            self.cursor[state] = (k + 1) % len(acts)
            return acts[k]
        a = self.approach[state] if 0 <= state < len(self.approach.actions) else -1
        return a if a >= 0 else None


def select_cycle(sub: SubPimdp, kernel: SqExpKernel, partition: Partition,
                 accepting_regions, start: int | None = None) -> CyclePlan:
    """Pick the end component to sample in.

    Components reachable with probability one from ``start`` are scored by
    the summed kernel between their regions and the accepting regions; if
    none is surely reachable the most reachable one is taken.
    """
    start = sub.initial if start is None else start
    if start not in sub.retained:
        raise ExplorationImpossible("start state was pruned from the sub-graph")
    mecs = [m for m in mec_decompose(sub) if not m.states <= sub.accepting]
    if not mecs:
        raise ExplorationImpossible("no end component in the nonviolating sub-graph")
    reach, policies = [], []
    for m in mecs:
        vals, pol = value_iterate(sub, m.states, AdversaryMode.MINIMIZING)
        reach.append(float(vals[start]))
        policies.append(pol)
    cands = [k for k, r in enumerate(reach) if r >= 1.0 - PROB_TOL]
    centers = partition.centers()
    goal_centers = [centers[q] for q in sorted(set(accepting_regions))]
    scores = []
    for m in mecs:
        regions = sorted({sub.region(i) for i in m.states if sub.region(i) < len(centers)})
        scores.append(math.fsum(kernel_eval(kernel, centers[q], c) for q in regions for c in goal_centers))
    if cands:
        best = max(cands, key=lambda k: (scores[k], -k))
    else:
        best = max(range(len(mecs)), key=lambda k: (reach[k], -k))
    mec = mecs[best]
    rotation = {i: sorted(mec.act[i]) for i in mec.states}
    return CyclePlan(mec, policies[best], rotation, reach, scores, cands, best)


class Outcome(enum.Enum):
    SATISFIED = "satisfied"
    IMPOSSIBLE = "impossible"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass
class IterationReport:
    iteration: int
    m: int
    p_low: float
    p_high: float
    t_unc_total: float
    wall_seconds: float
    cycle_regions: list[int] = field(default_factory=list)
    violations: int = 0


@dataclass
class TrajectoryRow:
    step: int
    x: np.ndarray
    region: int
    automaton_state: int
    action: int
    y: np.ndarray


@dataclass
class SynthesisResult:
    outcome: Outcome
    reports: list[IterationReport]
    policy: dict[tuple[int, int], int] | None = None
    trajectory: list[TrajectoryRow] = field(default_factory=list)
    diagnostic: str = ""
    fsa: Fsa | None = None
    product: Pimdp | None = None
    data: Dataset | None = None

    @property
    def iterations(self) -> int:
        return self.reports[-1].iteration if self.reports else 0

    @property
    def initial_uncertainty(self) -> float:
        return self.reports[0].t_unc_total

    @property
    def final_uncertainty(self) -> float:
        return self.reports[-1].t_unc_total


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment run."""

    bounds: list[tuple[float, float]]
    divisions: list[int]
    labels: dict[tuple[int, ...], str]
    initial: tuple[int, ...]
    formula: str
    p_sat: float = 1.0
    noise_sigma: float = 0.1
    noise_support: float = 0.2
    sigma_g: float = 0.45
    length_scale: float = 1.75
    gp_noise_var: float | None = None
    beta: float | None = 2.0
    beta_params: dict | None = None
    eta: int | None = 250
    steps_per_iteration: int = 250
    max_iterations: int = 40
    samples_per_axis: int = 10
    eps: float = 1e-6
    boundary: str = "wall"
    include_stay: bool = True
    truth_support: float = 0.4
    truth_grid: int = 50
    truth_sigma_g: float | None = None
    truth_length_scale: float | None = None
    seed_truth: int = 0
    seed_noise: int = 1
    seed_explore: int = 2

    def __post_init__(self):
        if not 0 < self.p_sat <= 1:
            raise ValueError("p_sat must lie in (0, 1]")
        if self.steps_per_iteration < 1:
            raise ValueError("steps_per_iteration must be >= 1")
        if self.beta is None and not self.beta_params:
            raise ValueError("either beta or beta_params must be given")

    @property
    def n(self) -> int:
        return len(self.divisions)

    def kernel(self) -> SqExpKernel:
        return SqExpKernel(self.sigma_g, self.length_scale)

    def truth_kernel(self) -> SqExpKernel:
        return SqExpKernel(self.truth_sigma_g or self.sigma_g, self.truth_length_scale or self.length_scale)

    def noise(self) -> NoiseModel:
        return NoiseModel.iid(self.noise_sigma, self.noise_support, self.n)

    def partition(self) -> Partition:
        return build_partition(self.bounds, self.divisions, self.labels, self.boundary)

    def noise_var(self) -> float:
        return self.gp_noise_var if self.gp_noise_var is not None else self.noise_sigma ** 2

    def beta_for(self, m: int) -> float:
        if self.beta is not None:
            return float(self.beta)
        bp = dict(self.beta_params)
        bp.setdefault("sigma_nu", self.noise_sigma)
        return beta_bound(BetaParams(m=max(m, 1), **bp))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        from dataclasses import replace
        return replace(self, seed_truth=seed, seed_noise=seed + 10_000, seed_explore=seed + 20_000)


def make_truth(cfg: ExperimentConfig, f: Callable = identity) -> GroundTruth:
    return make_ground_truth(cfg.seed_truth, cfg.truth_kernel(), cfg.truth_support, cfg.truth_grid,
                             cfg.partition(), cfg.noise(), f, noise_seed=cfg.seed_noise)


def _fallback_action(imdp: Imdp, partition: Partition, q: int, plan: CyclePlan, sub: SubPimdp) -> int:
    """Region-level move towards the selected component, for states the plan does not cover."""
    centers = partition.centers()
    goal = [centers[sub.region(i)] for i in plan.mec.states if sub.region(i) < len(centers)]
    acts = imdp.actions[q]
    if not goal:
        return acts[0]
    dist = [min(float(np.linalg.norm(centers[a] - g)) for g in goal) for a in acts]
    return acts[int(np.argmin(dist))]


class _Abstraction:
    def __init__(self, cfg, partition, fsa, q0):
        self.cfg, self.partition, self.fsa, self.q0 = cfg, partition, fsa, q0

    def build(self, gp, m):
        cfg = self.cfg
        self.imdp = build_imdp(self.partition, gp, cfg.beta_for(m), cfg.noise(), cfg.samples_per_axis,
                               cfg.include_stay, [self.q0])
        self.prod = product(self.imdp, self.fsa, self.q0)
        self.low, self.high, self.low_policy = satisfaction_bounds(self.prod, self.prod.accepting, cfg.eps)
        return self

    @property
    def p_low(self) -> float:
        return float(self.low[self.prod.initial])

    @property
    def p_high(self) -> float:
        return float(self.high[self.prod.initial])


def make_fsa(cfg: ExperimentConfig) -> Fsa:
    phi = parse(cfg.formula)
    letters = set(cfg.labels.values()) | atoms(phi) | {NONE_OBS, OUT_OBS}
    return to_fsa(phi, letters)


def iterative_synthesis(cfg: ExperimentConfig, truth: GroundTruth | None = None,
                        f: Callable = identity, keep_trajectory: bool = True) -> SynthesisResult:
    truth = truth if truth is not None else make_truth(cfg, f)
    partition = cfg.partition()
    fsa = make_fsa(cfg)
    q0 = partition.index(cfg.initial)
    kernel = cfg.kernel()
    data = Dataset.empty(cfg.n)
    gp = MultiOutputGp.fit(data, kernel, cfg.noise_var(), cfg.eta)

    t0 = time.perf_counter()
    ab = _Abstraction(cfg, partition, fsa, q0).build(gp, data.m)
    reports = [IterationReport(0, 0, ab.p_low, ab.p_high, total_uncertainty(ab.imdp),
                               time.perf_counter() - t0)]
    x = partition.regions[q0].center.copy()
    q, s = q0, ab.prod.states[ab.prod.initial][1]
    trajectory: list[TrajectoryRow] = []
    step_no = 0

    def finish(outcome, diagnostic="", policy=None):
        return SynthesisResult(outcome, reports, policy, trajectory, diagnostic, fsa, ab.prod, data)

    it = 0
    while ab.p_low < cfg.p_sat - PROB_TOL and it < cfg.max_iterations:
        if ab.p_high < cfg.p_sat - PROB_TOL:
            return finish(Outcome.IMPOSSIBLE, f"best-case probability {ab.p_high:.6g} < {cfg.p_sat}")
        t_start = time.perf_counter()
        prod = ab.prod
        sub = nonviolating_subgraph(prod, failure_states(prod, ab.high))
        cur = prod.state_id(q, s)
        acc_regions = {prod.region(i) for i in prod.accepting}
        try:
            if cur is None:
                raise ExplorationImpossible(f"current product state {(q, s)} is not in the product")
            plan = select_cycle(sub, kernel, partition, acc_regions, cur)
        except ExplorationImpossible as exc:
            log.warning("iteration %d: %s", it + 1, exc)
            return finish(Outcome.BUDGET_EXHAUSTED, f"exploration impossible: {exc}")

        violations = 0
        new_z, new_y = [], []
        for _ in range(cfg.steps_per_iteration):
            i = prod.state_id(q, s)
            a = None
            if i is not None and i in sub.retained and i not in prod.accepting:
                a = plan.next_action(i)
            if a is None or a not in ab.imdp.actions[q]:
                a = _fallback_action(ab.imdp, partition, q, plan, sub)
            u = partition.regions[a].center - f(x) - gp.mean(x)
            x_next, rec = truth.step(x, u)
            q_next = partition.locate(x_next)
            s_next = fsa.step(s, ab.imdp.labels[q_next])
            if keep_trajectory:
                trajectory.append(TrajectoryRow(step_no, x.copy(), q, s, a, rec.y))
            step_no += 1
            if not rec.clipped:
                new_z.append(rec.x)
                new_y.append(rec.y)
            if q_next == partition.sink:
                log.error("plant left the state space at step %d", step_no)
                data = data.extend(np.array(new_z), np.array(new_y)) if new_z else data
                return finish(Outcome.BUDGET_EXHAUSTED, "plant left the state space")
            if fsa.is_trap(s_next):
                violations += 1
                log.warning("specification violated during exploration at step %d", step_no)
            if s_next in fsa.accepting or fsa.is_trap(s_next):
                # run finished (accepted or violated); monitor a fresh run from here
                s_next = fsa.step(fsa.initial, ab.imdp.labels[q_next])
            x, q, s = x_next, q_next, s_next

        if new_z:
            data = data.extend(np.array(new_z), np.array(new_y))
        gp = MultiOutputGp.fit(data, kernel, cfg.noise_var(), cfg.eta)
        ab = _Abstraction(cfg, partition, fsa, q0).build(gp, data.m)
        it += 1
        regions = sorted({prod.region(i) for i in plan.mec.states})
        reports.append(IterationReport(it, data.m, ab.p_low, ab.p_high, total_uncertainty(ab.imdp),
                                       time.perf_counter() - t_start, regions, violations))
        log.info("iteration %d: m=%d P_low=%.4f P_high=%.4f T_unc=%.3f", it, data.m,
                 ab.p_low, ab.p_high, reports[-1].t_unc_total)

    if ab.p_low >= cfg.p_sat - PROB_TOL:
        policy = {ab.prod.states[i]: int(a) for i, a in ab.low_policy.as_dict().items()}
        return finish(Outcome.SATISFIED, policy=policy)
    return finish(Outcome.BUDGET_EXHAUSTED, f"no decision after {cfg.max_iterations} iterations")
