"""Product of an interval MDP with a specification automaton."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .abstraction import FEASIBILITY_TOL, Imdp, Row
from .scltl import Fsa


@dataclass
class Pimdp:
    """Product interval MDP restricted to the states reachable from ``initial``.

    ``states[i]`` is the pair (region id, automaton state).  The automaton
    reads the label of the region being entered, so (q, s) means ``s`` has
    already consumed ``L(q)``.  Accepting states are absorbing: their only
    action is the self-loop ``q`` with probability interval [1, 1].
    """

    states: list[tuple[int, int]]
    actions: list[list[int]]
    rows: dict[tuple[int, int], Row]
    initial: int
    accepting: frozenset[int]
    imdp: Imdp = field(repr=False)
    fsa: Fsa = field(repr=False)
    index: dict[tuple[int, int], int] = field(default_factory=dict, repr=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def active(self) -> frozenset[int]:
        return frozenset(range(self.n_states))

    def state_id(self, q: int, s: int) -> int | None:
        return self.index.get((q, s))

    def region(self, i: int) -> int:
        return self.states[i][0]

    def is_trap(self, i: int) -> bool:
        return self.fsa.is_trap(self.states[i][1])

    def check(self, tol: float = FEASIBILITY_TOL) -> None:
        for (i, a), row in self.rows.items():
            if np.any(row.lo < 0) or np.any(row.hi > 1) or np.any(row.lo > row.hi):
                raise AssertionError(f"invalid interval in product row {(i, a)}")
            if math.fsum(row.lo) > 1 + tol or math.fsum(row.hi) < 1 - tol:
                raise AssertionError(f"infeasible product row {(i, a)}")

    def to_text(self) -> str:
        lines = [f"# pimdp states={self.n_states} initial={self.state_name(self.initial)}"]
        for i in range(self.n_states):
            q = self.region(i)
            flag = " accepting" if i in self.accepting else ""
            lines.append(f"label {self.state_name(i)} {self.imdp.labels[q]}{flag}")
        for i in range(self.n_states):
            for a in self.actions[i]:
                row = self.rows[(i, a)]
                for j, lo, hi in zip(row.succ, row.lo, row.hi):
                    src, dst = self.state_name(i), self.state_name(int(j))
                    lines.append(f"{src} {a} {dst} {float(lo)!r} {float(hi)!r}")
        return "\n".join(lines) + "\n"

    def state_name(self, i: int) -> str:
        q, s = self.states[i]
        return f"{q}.{s}"


@dataclass
class SubPimdp:
    """States and actions of a parent product that survive pruning.

    Shares the parent's state indexing; removed states simply have no
    actions here.
    """

    parent: Pimdp
    retained: frozenset[int]
    actions: list[list[int]]
    loops: int = 0

    @property
    def n_states(self) -> int:
        return self.parent.n_states

    @property
    def rows(self) -> dict[tuple[int, int], Row]:
        return self.parent.rows

    @property
    def initial(self) -> int:
        return self.parent.initial

    @property
    def accepting(self) -> frozenset[int]:
        return self.parent.accepting

    @property
    def states(self) -> list[tuple[int, int]]:
        return self.parent.states

    @property
    def active(self) -> frozenset[int]:
        return self.retained

    def region(self, i: int) -> int:
        return self.parent.region(i)

    def __contains__(self, i: int) -> bool:
        return i in self.retained


def product(imdp: Imdp, fsa: Fsa, initial_region: int | None = None) -> Pimdp:
    bad = set(imdp.labels) - set(fsa.alphabet)
    if bad:
        raise ValueError(f"labels {sorted(bad)} are not in the automaton alphabet")
    if initial_region is None:
        if not imdp.initial:
            raise ValueError("no initial region given")
        initial_region = imdp.initial[0]

    s0 = fsa.step(fsa.initial, imdp.labels[initial_region])
    start = (initial_region, s0)
    index = {start: 0}
    states = [start]
    actions: list[list[int]] = []
    rows: dict[tuple[int, int], Row] = {}
    accepting = set()
    queue = deque([start])
    while queue:
        q, s = queue.popleft()
        i = index[(q, s)]
        while len(actions) <= i:
            actions.append([])
        if s in fsa.accepting:
            accepting.add(i)
            actions[i] = [q]
            rows[(i, q)] = Row(np.array([i]), np.ones(1), np.ones(1))
            continue
        acts = list(imdp.actions[q])
        actions[i] = acts
        for a in acts:
            row = imdp.rows[(q, a)]
            succ = np.empty(len(row.succ), dtype=int)
            for k, qp in enumerate(row.succ):
                key = (int(qp), fsa.step(s, imdp.labels[qp]))
                j = index.get(key)
                if j is None:
                    j = index[key] = len(states)
                    states.append(key)
                    queue.append(key)
                succ[k] = j
            rows[(i, a)] = Row(succ, row.lo.copy(), row.hi.copy())
    while len(actions) < len(states):
        actions.append([])
    return Pimdp(states, actions, rows, 0, frozenset(accepting), imdp, fsa, index)


def reaches_positively(p, target) -> np.ndarray:
    """Mask of states with a path of positive upper-bound transitions into ``target``."""
    n = p.n_states
    preds: list[set[int]] = [set() for _ in range(n)]
    for i in p.active:
        for a in p.actions[i]:
            row = p.rows[(i, a)]
            for j in row.succ[row.hi > 0]:
                preds[int(j)].add(i)
    mask = np.zeros(n, dtype=bool)
    queue = deque(t for t in target)
    for t in target:
        mask[t] = True
    while queue:
        j = queue.popleft()
        for i in preds[j]:
            if not mask[i]:
                mask[i] = True
                queue.append(i)
    return mask


def failure_states(p: Pimdp, p_hat_max=None) -> frozenset[int]:
    """States whose best-case satisfaction probability is exactly zero.

    With ``p_hat_max`` given (values from the checker, where such states are
    pinned to exactly 0) the set is read off the vector; otherwise it is
    computed graph-theoretically.
    """
    if p_hat_max is not None:
        vals = getattr(p_hat_max, "values", p_hat_max)
        return frozenset(int(i) for i in np.nonzero(np.asarray(vals) == 0.0)[0])
    ok = reaches_positively(p, p.accepting)
    return frozenset(int(i) for i in np.nonzero(~ok)[0])
