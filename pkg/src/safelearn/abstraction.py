"""Grid partitions, GP error bounds and interval-MDP construction."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .scltl import NONE_OBS, OUT_OBS

# Row-sum slack tolerated by the feasibility check (floating-point rounding only).
FEASIBILITY_TOL = 1e-12

BOUNDARY_MODES = ("sink", "wall")


@dataclass(frozen=True)
class Region:
    id: int
    lower: np.ndarray
    upper: np.ndarray
    label: str
    coords: tuple[int, ...] = ()

    @property
    def center(self) -> np.ndarray:
        return (self.lower + self.upper) / 2.0


@dataclass(frozen=True)
class Partition:
    """Uniform grid over a box plus one absorbing off-grid region.

    ``boundary`` selects what happens to mass that leaves the box: ``"sink"``
    routes it to the absorbing region labelled ``out``; ``"wall"`` clips the
    state back onto the box so overshoot lands in the boundary cell.
    """

    lower: np.ndarray
    upper: np.ndarray
    divisions: tuple[int, ...]
    regions: tuple[Region, ...]
    boundary: str = "sink"

    @property
    def n(self) -> int:
        return len(self.divisions)

    @property
    def sink(self) -> int:
        return len(self.regions)

    @property
    def n_states(self) -> int:
        return len(self.regions) + 1

    @property
    def widths(self) -> np.ndarray:
        return (self.upper - self.lower) / np.asarray(self.divisions)

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.regions] + [OUT_OBS]

    def centers(self) -> np.ndarray:
        return np.array([r.center for r in self.regions])

    def index(self, coords: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(coords), self.divisions))

    def axis_edges(self, i: int) -> np.ndarray:
        return np.linspace(self.lower[i], self.upper[i], self.divisions[i] + 1)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def locate(self, x) -> int:
        """Region id of ``x`` (half-open cells, topmost cell closed) or the sink."""
        x = np.asarray(x, dtype=float)
        if not self.contains(x):
            return self.sink
        k = np.floor((x - self.lower) / self.widths).astype(int)
        k = np.minimum(k, np.asarray(self.divisions) - 1)
        return self.index(k)

    def neighbors(self, q: int, include_stay: bool = True) -> list[int]:
        coords = self.regions[q].coords
        out = [q] if include_stay else []
        for axis in range(self.n):
            for step in (-1, 1):
                c = list(coords)
                c[axis] += step
                if 0 <= c[axis] < self.divisions[axis]:
                    out.append(self.index(c))
        return sorted(out)


def build_partition(bounds, divisions: Sequence[int],
                    label_map: Mapping[tuple[int, ...], str] | None = None,
                    boundary: str = "sink") -> Partition:
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ValueError("bounds must be a sequence of (low, high) pairs")
    lower, upper = bounds[:, 0], bounds[:, 1]
    if np.any(upper <= lower):
        raise ValueError("every axis needs a positive extent")
    divisions = tuple(int(d) for d in divisions)
    if len(divisions) != len(lower) or any(d < 1 for d in divisions):
        raise ValueError("need one division count >= 1 per axis")
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")
    label_map = dict(label_map or {})
    for key, obs in label_map.items():
        if len(key) != len(divisions) or any(not 0 <= k < d for k, d in zip(key, divisions)):
            raise ValueError(f"label coordinate {key} outside the grid")
        if obs == OUT_OBS:
            raise ValueError(f"observation {OUT_OBS!r} is reserved for the sink")
    widths = (upper - lower) / np.asarray(divisions)
    regions = []
    for q, coords in enumerate(np.ndindex(*divisions)):
        c = np.asarray(coords)
        a = lower + c * widths
        b = np.where(c == np.asarray(divisions) - 1, upper, lower + (c + 1) * widths)
        regions.append(Region(q, a, b, label_map.get(tuple(coords), NONE_OBS), tuple(coords)))
    return Partition(lower, upper, divisions, tuple(regions), boundary)


@dataclass(frozen=True)
class NoiseModel:
    """Per-dimension zero-mean Gaussian truncated to [-halfwidth, halfwidth]."""

    sigma: np.ndarray
    halfwidth: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        w = np.atleast_1d(np.asarray(self.halfwidth, dtype=float))
        s, w = np.broadcast_arrays(s, w)
        if np.any(s <= 0) or np.any(w < 0):
            raise ValueError("noise sigma must be positive and support non-negative")
        object.__setattr__(self, "sigma", s.astype(float).copy())
        object.__setattr__(self, "halfwidth", w.astype(float).copy())

    @classmethod
    def iid(cls, sigma: float, halfwidth: float, n: int) -> "NoiseModel":
        return cls(np.full(n, sigma), np.full(n, halfwidth))

    def interval_prob(self, i: int, lo, hi, shift) -> np.ndarray:
        """P(shift + nu_i in [lo, hi]); all arguments broadcast."""
        s, w = self.sigma[i], self.halfwidth[i]
        shift = np.asarray(shift, dtype=float)
        lo = np.maximum(np.asarray(lo, dtype=float), shift - w)
        hi = np.minimum(np.asarray(hi, dtype=float), shift + w)
        if w == 0:
            inside = (shift >= np.asarray(lo)) & (shift <= np.asarray(hi))
            return np.where(inside, 1.0, 0.0)
        mass = ndtr(w / s) - ndtr(-w / s)
        p = (ndtr((hi - shift) / s) - ndtr((lo - shift) / s)) / mass
        full = (lo <= shift - w) & (hi >= shift + w)
        p = np.where(full, 1.0, p)
        return np.clip(np.where(hi <= lo, 0.0, p), 0.0, 1.0)

    def density(self, i: int, z) -> np.ndarray:
        s, w = self.sigma[i], self.halfwidth[i]
        z = np.asarray(z, dtype=float)
        mass = ndtr(w / s) - ndtr(-w / s)
        pdf = np.exp(-0.5 * (z / s) ** 2) / (s * math.sqrt(2 * math.pi) * mass)
        return np.where(np.abs(z) <= w, pdf, 0.0)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Rejection sampling from the untruncated Gaussian."""
        n = len(self.sigma)
        count = 1 if size is None else int(size)
        out = np.empty((count, n))
        for i in range(n):
            s, w = self.sigma[i], self.halfwidth[i]
            if w == 0:
                out[:, i] = 0.0
                continue
            filled = 0
            while filled < count:
                need = count - filled
                draw = rng.normal(0.0, s, size=int(need * 1.1) + 8)
                draw = draw[np.abs(draw) <= w][:need]
                out[filled:filled + len(draw), i] = draw
                filled += len(draw)
        return out[0] if size is None else out


def controller_offset(target: Region | np.ndarray, x, f_known: Callable, g_hat: Callable) -> np.ndarray:
    """Feedback input steering the nominal next state onto the target centre."""
    c = target.center if isinstance(target, Region) else np.asarray(target, dtype=float)
    x = np.asarray(x, dtype=float)
    return c - np.asarray(f_known(x)) - np.asarray(g_hat(x))


def region_sample_points(region: Region, samples_per_axis: int) -> np.ndarray:
    if samples_per_axis < 1:
        raise ValueError("samples_per_axis must be >= 1")
    if samples_per_axis == 1:
        return region.center[None, :]
    axes = [np.linspace(a, b, samples_per_axis) for a, b in zip(region.lower, region.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def region_error_bound(gp, region: Region, beta: float, samples_per_axis: int = 10) -> np.ndarray:
    """Per-dimension bound beta * max posterior std over a uniform grid in the region."""
    _, var = gp.predict(region_sample_points(region, samples_per_axis))
    return beta * np.sqrt(np.max(var, axis=0))


def error_bounds(gp, partition: Partition, beta: float, samples_per_axis: int = 10) -> np.ndarray:
    """``region_error_bound`` for every region at once, shape (n_regions, n)."""
    pts = [region_sample_points(r, samples_per_axis) for r in partition.regions]
    per = pts[0].shape[0]
    _, var = gp.predict(np.vstack(pts))
    var = var.reshape(len(pts), per, -1)
    return beta * np.sqrt(np.max(var, axis=1))


def extreme_points(target_center, cell_center, gamma, lower, upper) -> tuple[np.ndarray, np.ndarray]:
    """Points of the box (target_center +/- gamma) within [lower, upper] that are
    farthest from (x_min) and closest to (x_max) ``cell_center`` in the 1-norm.

    Infinite cell-centre coordinates stand for half-unbounded cells.
    """
    c = np.asarray(target_center, dtype=float)
    cc = np.asarray(cell_center, dtype=float)
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0):
        raise ValueError("gamma must be non-negative")
    lo = np.maximum(c - g, lower)
    hi = np.minimum(c + g, upper)
    if np.any(lo > hi):
        raise ValueError("constraint box does not meet the state space")
    x_max = np.clip(cc, lo, hi)
    # lower endpoint wins ties
    x_min = np.where(np.abs(hi - cc) > np.abs(lo - cc), hi, lo)
    x_min = np.where(cc == -np.inf, hi, np.where(cc == np.inf, lo, x_min))
    return x_min, x_max


def _axis_probs(partition: Partition, noise: NoiseModel, i: int, center: float,
                gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper probabilities of landing in each cell along axis ``i``."""
    edges = partition.axis_edges(i)
    a, b = edges[:-1].copy(), edges[1:].copy()
    mids = (a + b) / 2.0
    if partition.boundary == "wall":
        a[0], mids[0] = -np.inf, -np.inf
        b[-1], mids[-1] = np.inf, np.inf
        if len(mids) == 1:
            mids[0] = 0.0
    lo = max(center - gamma, partition.lower[i])
    hi = min(center + gamma, partition.upper[i])
    x_max = np.clip(mids, lo, hi)
    x_min = np.where(np.abs(hi - mids) > np.abs(lo - mids), hi, lo)
    x_min = np.where(mids == -np.inf, hi, np.where(mids == np.inf, lo, x_min))
    p_lo = noise.interval_prob(i, a, b, x_min)
    p_hi = noise.interval_prob(i, a, b, x_max)
    return p_lo, np.maximum(p_hi, p_lo)


def _inside_probs(partition: Partition, noise: NoiseModel, i: int, center: float,
                  gamma: float) -> tuple[float, float]:
    lo = max(center - gamma, partition.lower[i])
    hi = min(center + gamma, partition.upper[i])
    mid = (partition.lower[i] + partition.upper[i]) / 2.0
    x_max = min(max(mid, lo), hi)
    x_min = hi if abs(hi - mid) > abs(lo - mid) else lo
    a, b = partition.lower[i], partition.upper[i]
    p_lo = float(noise.interval_prob(i, a, b, x_min))
    p_hi = float(noise.interval_prob(i, a, b, x_max))
    return p_lo, max(p_hi, p_lo)


def transition_interval(partition: Partition, target: int, q_prime: int, gamma,
                        noise: NoiseModel) -> tuple[float, float]:
    """(T_low, T_high) for landing in ``q_prime`` when steering to ``target``
    with per-dimension error bound ``gamma`` of the source region."""
    lo, hi = _row(partition, target, np.asarray(gamma, dtype=float), noise)
    return float(lo[q_prime]), float(hi[q_prime])


def _row(partition: Partition, target: int, gamma: np.ndarray,
         noise: NoiseModel) -> tuple[np.ndarray, np.ndarray]:
    c = partition.regions[target].center
    t_lo = np.ones(1)
    t_hi = np.ones(1)
    for i in range(partition.n):
        p_lo, p_hi = _axis_probs(partition, noise, i, c[i], gamma[i])
        t_lo = np.multiply.outer(t_lo, p_lo).ravel()
        t_hi = np.multiply.outer(t_hi, p_hi).ravel()
    if partition.boundary == "wall":
        out_lo = out_hi = 0.0
    else:
        in_min = in_max = 1.0
        for i in range(partition.n):
            a, b = _inside_probs(partition, noise, i, c[i], gamma[i])
            in_min *= a
            in_max *= b
        out_lo = max(0.0, 1.0 - in_max, 1.0 - math.fsum(t_hi))
        out_hi = min(1.0, 1.0 - in_min, 1.0 - math.fsum(t_lo))
        out_hi = max(out_hi, out_lo)
    return np.append(t_lo, out_lo), np.append(t_hi, out_hi)


@dataclass
class Row:
    succ: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


@dataclass
class Imdp:
    """Interval MDP over region ids; the last state is the absorbing sink.

    ``actions[q]`` lists the available actions of ``q`` in ascending order;
    an action is identified by the id of the region it steers to.
    ``rows[(q, a)]`` keeps only successors with a positive upper bound.
    """

    n_states: int
    labels: list[str]
    actions: list[list[int]]
    rows: dict[tuple[int, int], Row]
    initial: list[int] = field(default_factory=list)
    gamma: np.ndarray | None = None

    @property
    def sink(self) -> int:
        return self.n_states - 1

    def interval(self, q: int, a: int, q_prime: int) -> tuple[float, float]:
        row = self.rows[(q, a)]
        hit = np.nonzero(row.succ == q_prime)[0]
        if len(hit) == 0:
            return 0.0, 0.0
        return float(row.lo[hit[0]]), float(row.hi[hit[0]])

    def check(self, tol: float = FEASIBILITY_TOL) -> None:
        for (q, a), row in self.rows.items():
            if np.any(row.lo < 0) or np.any(row.hi > 1) or np.any(row.lo > row.hi):
                raise AssertionError(f"invalid interval in row {(q, a)}")
            s_lo, s_hi = math.fsum(row.lo), math.fsum(row.hi)
            if s_lo > 1 + tol or s_hi < 1 - tol:
                raise AssertionError(f"infeasible row {(q, a)}: sum lo={s_lo}, sum hi={s_hi}")

    def to_text(self) -> str:
        lines = [f"# imdp states={self.n_states}"]
        for q, lab in enumerate(self.labels):
            lines.append(f"label {q} {lab}")
        if self.initial:
            lines.append("initial " + " ".join(str(q) for q in self.initial))
        for q in range(self.n_states):
            for a in self.actions[q]:
                row = self.rows[(q, a)]
                for s, lo, hi in zip(row.succ, row.lo, row.hi):
                    lines.append(f"{q} {a} {int(s)} {float(lo)!r} {float(hi)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Imdp":
        labels: dict[int, str] = {}
        initial: list[int] = []
        entries: dict[tuple[int, int], list[tuple[int, float, float]]] = {}
        n_states = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "states=" in line:
                    n_states = int(line.split("states=")[1].split()[0])
                continue
            parts = line.split()
            if parts[0] == "label":
                labels[int(parts[1])] = parts[2]
            elif parts[0] == "initial":
                initial = [int(p) for p in parts[1:]]
            elif len(parts) == 5:
                q, a, s = int(parts[0]), int(parts[1]), int(parts[2])
                entries.setdefault((q, a), []).append((s, float(parts[3]), float(parts[4])))
            else:
                raise ValueError(f"line {lineno}: cannot parse {raw!r}")
        if n_states is None:
            n_states = 1 + max([max(q, e[0]) for (q, _), es in entries.items() for e in es]
                               + list(labels))
        actions: list[list[int]] = [[] for _ in range(n_states)]
        rows = {}
        for (q, a), es in entries.items():
            actions[q].append(a)
            es.sort()
            rows[(q, a)] = Row(np.array([e[0] for e in es], dtype=int),
                               np.array([e[1] for e in es]), np.array([e[2] for e in es]))
        for acts in actions:
            acts.sort()
        lab = [labels.get(q, NONE_OBS) for q in range(n_states)]
        return cls(n_states, lab, actions, rows, initial)


def build_imdp_from_gamma(partition: Partition, gamma: np.ndarray, noise: NoiseModel,
                          include_stay: bool = True, initial: Sequence[int] = ()) -> Imdp:
    """Interval MDP for given per-region error bounds ``gamma`` (n_regions, n)."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (len(partition.regions), partition.n):
        raise ValueError(f"gamma must have shape {(len(partition.regions), partition.n)}")
    n_states = partition.n_states
    actions: list[list[int]] = []
    rows: dict[tuple[int, int], Row] = {}
    for q in range(len(partition.regions)):
        acts = partition.neighbors(q, include_stay)
        actions.append(acts)
        for a in acts:
            lo, hi = _row(partition, a, gamma[q], noise)
            keep = np.nonzero(hi > 0)[0]
            rows[(q, a)] = Row(keep, lo[keep], hi[keep])
    sink = partition.sink
    actions.append([sink])
    rows[(sink, sink)] = Row(np.array([sink]), np.ones(1), np.ones(1))
    imdp = Imdp(n_states, partition.labels, actions, rows, list(initial), gamma)
    imdp.check()
    return imdp


def build_imdp(partition: Partition, gp, beta: float, noise: NoiseModel,
               samples_per_axis: int = 10, include_stay: bool = True,
               initial: Sequence[int] = ()) -> Imdp:
    gamma = error_bounds(gp, partition, beta, samples_per_axis)
    return build_imdp_from_gamma(partition, gamma, noise, include_stay, initial)
