"""Interval value iteration and maximal end component decomposition."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .model import reaches_positively


class AdversaryMode(enum.Enum):
    MINIMIZING = "min"
    MAXIMIZING = "max"


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, values: "ValueVector"):
        super().__init__(message)
        self.values = values


@dataclass(frozen=True)
class ValueVector:
    values: np.ndarray
    iterations: int
    residual: float

    def __getitem__(self, i):
        return self.values[i]

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class Policy:
    """Memoryless choice per product state; ``-1`` where no action exists."""

    actions: np.ndarray

    def __getitem__(self, i) -> int:
        return int(self.actions[i])

    def as_dict(self) -> dict[int, int]:
        return {i: int(a) for i, a in enumerate(self.actions) if a >= 0}


@dataclass(frozen=True)
class Mec:
    states: frozenset[int]
    act: dict[int, frozenset[int]]


class _Dense:
    """Row-stacked interval table of the active (state, action) pairs."""

    def __init__(self, p, actions=None):
        n = p.n_states
        acts = actions if actions is not None else p.actions
        owner, act = [], []
        for i in sorted(p.active):
            for a in acts[i]:
                owner.append(i)
                act.append(a)
        self.owner = np.array(owner, dtype=int)
        self.act = np.array(act, dtype=int)
        self.lo = np.zeros((len(owner), n))
        self.hi = np.zeros((len(owner), n))
        for r, (i, a) in enumerate(zip(owner, act)):
            row = p.rows[(i, a)]
            self.lo[r, row.succ] = row.lo
            self.hi[r, row.succ] = row.hi

    def extremal(self, values: np.ndarray, mode: AdversaryMode, check: bool = False) -> np.ndarray:
        """Per-row distribution inside the intervals that extremises E[values]."""
        if mode is AdversaryMode.MAXIMIZING:
            order = np.argsort(-values, kind="stable")
        else:
            order = np.argsort(values, kind="stable")
        lo = self.lo[:, order]
        cap = self.hi[:, order] - lo
        rem = np.maximum(1.0 - lo.sum(axis=1), 0.0)
        before = np.cumsum(cap, axis=1) - cap
        alloc = np.clip(rem[:, None] - before, 0.0, cap)
        dist = np.empty_like(lo)
        dist[:, order] = lo + alloc
        if check:
            assert np.all(dist >= self.lo - 1e-12) and np.all(dist <= self.hi + 1e-12)
            assert np.allclose(dist.sum(axis=1), 1.0, atol=1e-9)
        return dist

    def q_values(self, values, mode, check=False) -> np.ndarray:
        return self.extremal(values, mode, check) @ values


def _best_per_state(n: int, owner: np.ndarray, q: np.ndarray, fill: np.ndarray) -> np.ndarray:
    out = fill.copy()
    if len(owner):
        best = np.full(n, -np.inf)
        np.maximum.at(best, owner, q)
        has = np.isfinite(best)
        out[has] = best[has]
    return out


def value_iterate(p, target: Iterable[int], mode: AdversaryMode = AdversaryMode.MINIMIZING,
                  eps: float = 1e-6, max_iter: int = 10_000, actions=None,
                  check: bool = False, min_iter: int = 0) -> tuple[ValueVector, Policy]:
    """Maximal probability of reaching ``target`` against the given adversary.

    ``actions`` optionally restricts the action sets (used to evaluate a
    fixed policy).  States with no positive-probability path to the target
    are pinned to 0 before iterating.  At least ``min_iter`` sweeps are made.
    """
    n = p.n_states
    target = np.array(sorted(set(int(t) for t in target)), dtype=int)
    is_target = np.zeros(n, dtype=bool)
    is_target[target] = True
    view = p if actions is None else _Restricted(p, actions)
    can_reach = reaches_positively(view, target)

    dense = _Dense(view)
    keep = ~is_target[dense.owner] & can_reach[dense.owner]
    owner, lo, hi, act = dense.owner[keep], dense.lo[keep], dense.hi[keep], dense.act[keep]
    dense.owner, dense.lo, dense.hi, dense.act = owner, lo, hi, act

    v = is_target.astype(float)
    base = v.copy()
    residual = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        q = dense.q_values(v, mode, check)
        new = _best_per_state(n, owner, q, base)
        new[is_target] = 1.0
        new[~can_reach] = 0.0
        residual = float(np.max(np.abs(new - v))) if n else 0.0
        v = new
        if residual < eps and it >= min_iter:
            break
    else:
        raise ConvergenceError(f"no convergence after {max_iter} sweeps (residual {residual:.3g})",
                               ValueVector(v, it, residual))

    values = ValueVector(v, it, residual)
    return values, _extract_policy(p, view, dense, v, is_target, mode, eps)


def satisfaction_bounds(p, target, eps: float = 1e-6, max_iter: int = 10_000
                        ) -> tuple[ValueVector, ValueVector, Policy]:
    """Lower and upper reachability bounds plus the lower-bound policy.

    Both iterations start from the same vector and are run for the same
    number of sweeps, so the truncated lower bound never exceeds the
    truncated upper bound.
    """
    low, policy = value_iterate(p, target, AdversaryMode.MINIMIZING, eps, max_iter)
    high, _ = value_iterate(p, target, AdversaryMode.MAXIMIZING, eps, max_iter, min_iter=low.iterations)
    while high.iterations != low.iterations:
        low, policy = value_iterate(p, target, AdversaryMode.MINIMIZING, eps, max_iter,
                                    min_iter=high.iterations)
        if low.iterations != high.iterations:
            high, _ = value_iterate(p, target, AdversaryMode.MAXIMIZING, eps, max_iter,
                                    min_iter=low.iterations)
    return low, high, policy


def _extract_policy(p, view, dense: _Dense, v, is_target, mode, eps) -> Policy:
    """Optimal actions, preferring ones that make guaranteed progress.

    Among near-optimal actions a state picks, at the earliest possible rank,
    the lowest-id action with positive mass into already ranked states (lower
    bounds against the minimising adversary, upper bounds otherwise).
    """
    n = p.n_states
    chosen = np.full(n, -1, dtype=int)
    for i in view.active:
        if view.actions[i]:
            chosen[i] = min(view.actions[i])
    if len(dense.owner) == 0:
        return Policy(chosen)
    q = dense.q_values(v, mode)
    tol = max(10 * eps, 1e-9)
    optimal = q >= v[dense.owner] - tol
    mass = dense.lo if mode is AdversaryMode.MINIMIZING else dense.hi
    ranked = is_target.copy()
    pending = set(int(i) for i in np.unique(dense.owner[optimal]))
    for bounds in (mass, dense.hi):
        while pending:
            into = bounds @ ranked.astype(float)
            ok = optimal & (into > 0) & ~ranked[dense.owner]
            if not ok.any():
                break
            newly = {}
            for r in np.nonzero(ok)[0]:
                i = int(dense.owner[r])
                a = int(dense.act[r])
                if i not in newly or a < newly[i]:
                    newly[i] = a
            for i, a in newly.items():
                chosen[i] = a
                ranked[i] = True
                pending.discard(i)
    for i in pending:
        rows = np.nonzero((dense.owner == i) & optimal)[0]
        chosen[i] = int(min(dense.act[rows]))
    return Policy(chosen)


class _Restricted:
    def __init__(self, p, actions):
        self.p = p
        self.n_states = p.n_states
        self.rows = p.rows
        self.actions = actions
        self.active = frozenset(i for i in p.active if actions[i])


def evaluate_policy(p, policy: Policy, target, mode: AdversaryMode, eps: float = 1e-6,
                    max_iter: int = 10_000) -> ValueVector:
    acts = [[policy[i]] if policy[i] >= 0 and policy[i] in p.actions[i] else []
            for i in range(p.n_states)]
    values, _ = value_iterate(p, target, mode, eps=eps, max_iter=max_iter, actions=acts)
    return values


def mec_decompose(p) -> list[Mec]:
    """Maximal end components over the active states, using edges with positive
    upper bound; returned sorted by smallest member state."""
    n = p.n_states
    acts = {i: set(p.actions[i]) for i in p.active if p.actions[i]}
    succ = {(i, a): set(int(j) for j in p.rows[(i, a)].succ[p.rows[(i, a)].hi > 0])
            for i, aa in acts.items() for a in aa}
    while True:
        alive = set(acts)
        src, dst = [], []
        for i, aa in acts.items():
            for a in aa:
                for j in succ[(i, a)]:
                    if j in alive:
                        src.append(i)
                        dst.append(j)
        graph = csr_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
        _, comp = connected_components(graph, directed=True, connection="strong")
        changed = False
        for i in list(acts):
            bad = {a for a in acts[i] if any(j not in alive or comp[j] != comp[i] for j in succ[(i, a)])}
            if bad:
                acts[i] -= bad
                changed = True
            if not acts[i]:
                del acts[i]
                changed = True
        if not changed:
            break
    groups: dict[int, set[int]] = {}
    for i in acts:
        groups.setdefault(int(comp[i]), set()).add(i)
    mecs = [Mec(frozenset(g), {i: frozenset(acts[i]) for i in g}) for g in groups.values()]
    return sorted(mecs, key=lambda m: min(m.states))
