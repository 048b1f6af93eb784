"""Closed-loop ground truth: hidden GP-drawn dynamics plus truncated Gaussian noise."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .abstraction import NoiseModel, Partition
from .gp import FactorizationError, SqExpKernel


def identity(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class StepRecord:
    k: int
    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray
    y: np.ndarray
    clipped: bool = False


def _axis_factor(points: np.ndarray, length_scale: float, scale: float) -> np.ndarray:
    d = points[:, None] - points[None, :]
    k = scale * np.exp(-d * d / (2.0 * length_scale ** 2))
    jitter = 1e-10
    while jitter <= 1e-6 * (1 + 1e-9):
        try:
            return np.linalg.cholesky(k + jitter * scale * np.eye(len(points)))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError("grid covariance is not positive definite after jitter")


def sample_field(rng: np.random.Generator, kernel: SqExpKernel, axes: list[np.ndarray]) -> np.ndarray:
    """One GP prior draw on the tensor grid spanned by ``axes``.

    The squared-exponential kernel factorises over coordinates, so the grid
    covariance is a Kronecker product and each axis is coloured separately.
    """
    values = rng.standard_normal(tuple(len(a) for a in axes))
    for i, a in enumerate(axes):
        scale = kernel.variance if i == 0 else 1.0
        factor = _axis_factor(a, kernel.length_scale, scale)
        values = np.moveaxis(np.tensordot(factor, values, axes=([1], [i])), 0, i)
    return values


@dataclass
class GroundTruth:
    """Plant ``x+ = f(x) + u + g(x) + nu`` with ``g`` hidden from the learner."""

    partition: Partition
    fields: np.ndarray                 # (n, d_1, ..., d_n) raw (unclamped) draws
    support_halfwidth: float
    noise: NoiseModel
    f: Callable[[np.ndarray], np.ndarray] = identity
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    axes: list[np.ndarray] = field(default_factory=list)
    k: int = 0

    def __post_init__(self):
        clamped = np.clip(self.fields, -self.support_halfwidth, self.support_halfwidth)
        self._interp = [RegularGridInterpolator(self.axes, clamped[i]) for i in range(len(clamped))]

    def g(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.partition.lower, self.partition.upper)
        w = self.support_halfwidth
        return np.clip([float(fi(x[None, :])[0]) for fi in self._interp], -w, w)

    def g_many(self, pts) -> np.ndarray:
        pts = np.clip(np.atleast_2d(pts), self.partition.lower, self.partition.upper)
        w = self.support_halfwidth
        return np.clip(np.stack([fi(pts) for fi in self._interp], axis=1), -w, w)

    def step(self, x, u) -> tuple[np.ndarray, StepRecord]:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        nu = self.noise.sample(self.rng)
        raw = np.asarray(self.f(x)) + u + self.g(x) + nu
        clipped = False
        if self.partition.boundary == "wall" and not self.partition.contains(raw):
            raw = np.clip(raw, self.partition.lower, self.partition.upper)
            clipped = True
        y = raw - np.asarray(self.f(x)) - u
        rec = StepRecord(self.k, x.copy(), u.copy(), raw.copy(), y, clipped)
        self.k += 1
        return raw, rec

    def field_rows(self):
        """Rows (x_1..x_n, g_1..g_n) of the clamped field on its grid."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.clip(self.fields, -self.support_halfwidth, self.support_halfwidth)
        return pts, np.stack([v.ravel() for v in vals], axis=1)


def make_ground_truth(seed, kernel: SqExpKernel, support_halfwidth: float, grid_density: int,
                      partition: Partition, noise: NoiseModel, f=identity,
                      noise_seed=None) -> GroundTruth:
    if grid_density < 2:
        raise ValueError("grid_density must be at least 2")
    field_rng = np.random.default_rng(seed)
    axes = [np.linspace(lo, hi, grid_density) for lo, hi in zip(partition.lower, partition.upper)]
    fields = np.stack([sample_field(field_rng, kernel, axes) for _ in range(partition.n)])
    rng = np.random.default_rng(seed if noise_seed is None else noise_seed)
    return GroundTruth(partition, fields, float(support_halfwidth), noise, f, rng, axes)
