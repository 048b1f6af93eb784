"""Independent reference implementations used by the tests.

Everything here is written from first principles and deliberately avoids the
package's own algorithms so the comparisons are meaningful.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from safelearn.abstraction import Row
from safelearn.scltl import And, Atom, Eventually, FalseF, NegAtom, Next, Or, TrueF, Until


# -- temporal logic ------------------------------------------------------------

def holds(phi, word, i: int = 0) -> bool:
    """Finite-trace semantics: atoms are false past the end of the word."""
    n = len(word)
    if isinstance(phi, TrueF):
        return True
    if isinstance(phi, FalseF):
        return False
    if isinstance(phi, Atom):
        return i < n and word[i] == phi.name
    if isinstance(phi, NegAtom):
        return i < n and word[i] != phi.name
    if isinstance(phi, And):
        return all(holds(a, word, i) for a in phi.args)
    if isinstance(phi, Or):
        return any(holds(a, word, i) for a in phi.args)
    if isinstance(phi, Next):
        return i < n and holds(phi.arg, word, i + 1)
    if isinstance(phi, Eventually):
        return any(holds(phi.arg, word, j) for j in range(i, n))
    if isinstance(phi, Until):
        for j in range(i, n):
            if holds(phi.right, word, j):
                return True
            if not holds(phi.left, word, j):
                return False
        return False
    raise TypeError(phi)


# -- small MDP containers --------------------------------------------------------

@dataclass
class TableMdp:
    """Minimal duck-typed model accepted by the checker and the pruning code."""

    n_states: int
    actions: list[list[int]]
    rows: dict
    initial: int = 0
    accepting: frozenset = frozenset()
    active: frozenset = field(default=None)

    def __post_init__(self):
        if self.active is None:
            self.active = frozenset(range(self.n_states))

    def region(self, i):
        return i


def table_from(spec: dict, n_states: int, **kw) -> TableMdp:
    """``spec[(i, a)] = {j: (lo, hi)}``."""
    actions = [[] for _ in range(n_states)]
    rows = {}
    for (i, a), succ in sorted(spec.items()):
        actions[i].append(a)
        js = sorted(succ)
        rows[(i, a)] = Row(np.array(js, dtype=int), np.array([succ[j][0] for j in js], dtype=float),
                           np.array([succ[j][1] for j in js], dtype=float))
    return TableMdp(n_states, actions, rows, **kw)


def random_interval_mdp(rng: np.random.Generator, n: int, max_actions: int = 3, lattice: float | None = None,
                        point: bool = False, density: float = 0.6) -> TableMdp:
    """Random feasible interval MDP; the last state is absorbing."""
    spec = {}
    for i in range(n - 1):
        for a in range(int(rng.integers(1, max_actions + 1))):
            succ = [j for j in range(n) if rng.random() < density] or [int(rng.integers(n))]
            if lattice:
                units = int(round(1 / lattice))
                cuts = np.sort(rng.integers(0, units + 1, size=len(succ) - 1))
                p = np.diff(np.concatenate([[0], cuts, [units]])) * lattice
            else:
                p = rng.dirichlet(np.ones(len(succ)))
            if point:
                lo = hi = p
            elif lattice:
                lo = np.maximum(p - lattice * rng.integers(0, 4, len(succ)), 0)
                hi = np.minimum(p + lattice * rng.integers(0, 4, len(succ)), 1)
            else:
                lo = np.maximum(p - rng.uniform(0, 0.3, len(succ)), 0)
                hi = np.minimum(p + rng.uniform(0, 0.3, len(succ)), 1)
            spec[(i, a)] = {j: (float(lo[k]), float(hi[k])) for k, j in enumerate(succ)}
    spec[(n - 1, 0)] = {n - 1: (1.0, 1.0)}
    return table_from(spec, n)


def plain_value_iteration(p: TableMdp, target, maximize_actions=True, sweeps=20_000) -> np.ndarray:
    """Reachability on a point-interval MDP (lo == hi), Gauss-Seidel free."""
    v = np.zeros(p.n_states)
    tgt = set(target)
    for t in tgt:
        v[t] = 1.0
    for _ in range(sweeps):
        new = v.copy()
        for i in range(p.n_states):
            if i in tgt or not p.actions[i]:
                continue
            vals = [float(np.dot(p.rows[(i, a)].lo, v[p.rows[(i, a)].succ])) for a in p.actions[i]]
            new[i] = max(vals) if maximize_actions else min(vals)
        if np.max(np.abs(new - v)) < 1e-13:
            return new
        v = new
    return v


def _grid_distributions(lo, hi, step):
    """All distributions on a ``step`` lattice inside the box [lo, hi]."""
    k = len(lo)
    axes = [np.arange(lo[j], hi[j] + step / 2, step) for j in range(k - 1)]
    if k == 1:
        return np.array([[1.0]]) if lo[0] <= 1 + 1e-12 and hi[0] >= 1 - 1e-12 else np.zeros((0, 1))
    mesh = np.array(list(itertools.product(*axes)))
    last = 1.0 - mesh.sum(axis=1)
    ok = (last >= lo[-1] - 1e-9) & (last <= hi[-1] + 1e-9)
    return np.column_stack([mesh[ok], last[ok]])


def polytope_grid_values(p: TableMdp, target, minimizing: bool, step: float = 0.05,
                         sweeps: int = 20_000) -> np.ndarray:
    """Interval value iteration by exhaustive search over a lattice of each
    row's distribution polytope."""
    tgt = set(target)
    dists = {}
    for key, row in p.rows.items():
        d = _grid_distributions(row.lo, row.hi, step)
        assert len(d), f"empty polytope grid for row {key}"
        dists[key] = d
    v = np.zeros(p.n_states)
    for t in tgt:
        v[t] = 1.0
    for _ in range(sweeps):
        new = v.copy()
        for i in range(p.n_states):
            if i in tgt or not p.actions[i]:
                continue
            best = -np.inf
            for a in p.actions[i]:
                vals = dists[(i, a)] @ v[p.rows[(i, a)].succ]
                best = max(best, vals.min() if minimizing else vals.max())
            new[i] = best
        if np.max(np.abs(new - v)) < 1e-12:
            return new
        v = new
    return v


def exhaustive_mecs(p) -> set[tuple[frozenset, tuple]]:
    """Maximal end components by enumerating every state subset."""
    states = sorted(i for i in p.active if p.actions[i])
    succ = {(i, a): frozenset(int(j) for j in p.rows[(i, a)].succ[p.rows[(i, a)].hi > 0])
            for i in states for a in p.actions[i]}
    ecs = []
    for r in range(1, len(states) + 1):
        for subset in itertools.combinations(states, r):
            s = frozenset(subset)
            acts = {i: frozenset(a for a in p.actions[i] if succ[(i, a)] <= s) for i in s}
            if any(not acts[i] for i in s):
                continue
            edges = {i: set().union(*(succ[(i, a)] for a in acts[i])) for i in s}

            def reach(src):
                seen, stack = {src}, [src]
                while stack:
                    for j in edges[stack.pop()]:
                        if j not in seen:
                            seen.add(j)
                            stack.append(j)
                return seen

            if all(reach(i) == s for i in s):
                ecs.append((s, acts))
    maximal = [(s, acts) for s, acts in ecs if not any(s < t for t, _ in ecs)]
    return {(s, tuple(sorted((i, tuple(sorted(a))) for i, a in acts.items()))) for s, acts in maximal}


# -- geometry and probability ------------------------------------------------------

def brute_extreme(target_center, cell_center, gamma, lower, upper, n_grid=201):
    """Grid search of the 1-norm distance over the constraint box."""
    lo = np.maximum(target_center - gamma, lower)
    hi = np.minimum(target_center + gamma, upper)
    axes = [np.linspace(a, b, n_grid) for a, b in zip(lo, hi)]
    pts = np.array(list(itertools.product(*axes)))
    dist = np.abs(pts - cell_center).sum(axis=1)
    return dist.max(), dist.min()


def monte_carlo_cell(noise, rng, point, lower, upper, draws=1_000_000):
    x = point + noise.sample(rng, draws)
    inside = np.all((x >= lower) & (x <= upper), axis=1)
    return float(inside.mean())


def dense_gp(x, y, z, sigma_g, length, noise_var):
    """Posterior mean/variance by a direct linear solve (no factorisation reuse)."""
    def k(a, b):
        d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
        return sigma_g ** 2 * np.exp(-d / (2 * length ** 2))
    kxx = k(x, x) + noise_var * np.eye(len(x))
    kzx = k(z, x)
    mean = kzx @ np.linalg.solve(kxx, y)
    var = sigma_g ** 2 - np.einsum("ij,ji->i", kzx, np.linalg.solve(kxx, kzx.T))
    return mean, var
