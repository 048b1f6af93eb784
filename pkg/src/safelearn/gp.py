"""Exact and sparse Gaussian-process regression with a squared-exponential kernel."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular


class FactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SqExpKernel:
    sigma_g: float
    length_scale: float

    def __post_init__(self):
        if not (self.sigma_g > 0 and self.length_scale > 0):
            raise ValueError("kernel hyperparameters must be positive")

    @property
    def variance(self) -> float:
        return self.sigma_g ** 2

    def __call__(self, a, b) -> np.ndarray:
        """Gram matrix between row-stacked point sets ``a`` (p, n) and ``b`` (q, n)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if a.shape[1] != b.shape[1]:
            raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
        sq = (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
              - 2.0 * a @ b.T)
        np.maximum(sq, 0.0, out=sq)
        return self.variance * np.exp(-sq / (2.0 * self.length_scale ** 2))


def kernel_eval(k: SqExpKernel, x, x_prime) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_prime.shape}")
    d = x - x_prime
    return float(k.variance * math.exp(-float(d @ d) / (2.0 * k.length_scale ** 2)))


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray   # (m, n)
    outputs: np.ndarray  # (m, n_out)

    def __post_init__(self):
        z = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.outputs, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] != y.shape[0]:
            raise ValueError("inputs and outputs are not aligned")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", z)
        object.__setattr__(self, "outputs", y)

    @classmethod
    def empty(cls, n_in: int, n_out: int | None = None) -> "Dataset":
        return cls(np.zeros((0, n_in)), np.zeros((0, n_out or n_in)))

    @property
    def m(self) -> int:
        return self.inputs.shape[0]

    def column(self, i: int) -> np.ndarray:
        return self.outputs[:, i]

    def extend(self, z, y) -> "Dataset":
        z = np.atleast_2d(np.asarray(z, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return Dataset(np.vstack([self.inputs, z]), np.vstack([self.outputs, y]))

    def to_csv(self, path) -> None:
        n, k = self.inputs.shape[1], self.outputs.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"z_{i + 1}" for i in range(n)] + [f"y_{i + 1}" for i in range(k)])
            for zr, yr in zip(self.inputs, self.outputs):
                w.writerow([repr(float(v)) for v in zr] + [repr(float(v)) for v in yr])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        zi = [i for i, h in enumerate(header) if h.startswith("z_")]
        yi = [i for i, h in enumerate(header) if h.startswith("y_")]
        data = np.array(body, dtype=float).reshape(len(body), len(header))
        return cls(data[:, zi], data[:, yi])


def _jittered_cholesky(mat: np.ndarray, scale: float, start: float = 1e-10, stop: float = 1e-6):
    """Lower Cholesky factor; on failure retries with diagonal jitter from
    ``start`` to ``stop`` (relative to ``scale``), x10 per retry."""
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    jitter = start
    eye = np.eye(mat.shape[0])
    while jitter <= stop * (1 + 1e-9):
        try:
            return np.linalg.cholesky(mat + jitter * scale * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(f"matrix not positive definite with jitter up to {stop:g}")


@dataclass(frozen=True)
class GpModel:
    kernel: SqExpKernel
    noise_var: float
    inputs: np.ndarray
    targets: np.ndarray
    chol: tuple = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return self.inputs.shape[0]

    def predict(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at the rows of ``z``."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        prior = np.full(z.shape[0], self.kernel.variance)
        if self.m == 0:
            return np.zeros(z.shape[0]), prior
        kz = self.kernel(self.inputs, z)            # (m, p)
        mean = kz.T @ self.alpha
        v = solve_triangular(self.chol[0], kz, lower=True)
        var = prior - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)


def fit_exact(data: Dataset, kernel: SqExpKernel, noise_var: float, output: int = 0) -> GpModel:
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    z = data.inputs
    y = data.outputs[:, output] if data.m else np.zeros(0)
    if data.m == 0:
        return GpModel(kernel, noise_var, z, y, (np.zeros((0, 0)), True), np.zeros(0))
    gram = kernel(z, z) + noise_var * np.eye(data.m)
    lower = _jittered_cholesky(gram, kernel.variance)
    alpha = cho_solve((lower, True), y)
    return GpModel(kernel, noise_var, z, y, (lower, True), alpha)


def select_inducing(inputs: np.ndarray, eta: int) -> np.ndarray:
    """Greedy farthest-point subset of the distinct rows of ``inputs``.

    Starts from the first input; selection stops early once every remaining
    point coincides with a selected one.
    """
    m = inputs.shape[0]
    if m == 0:
        return np.zeros(0, dtype=int)
    chosen = [0]
    dist = np.sum((inputs - inputs[0]) ** 2, axis=1)
    while len(chosen) < min(eta, m):
        j = int(np.argmax(dist))
        if dist[j] <= 0.0:
            break
        chosen.append(j)
        np.minimum(dist, np.sum((inputs - inputs[j]) ** 2, axis=1), out=dist)
    return np.array(chosen, dtype=int)


@dataclass(frozen=True)
class SparseGpModel:
    """Variational sparse GP with the KL-optimal distribution over inducing outputs.

    ``q_mean`` and ``q_cov`` are the mean and covariance (A) of the optimal
    Gaussian over the function values at ``inducing``.
    """

    kernel: SqExpKernel
    noise_var: float
    inducing: np.ndarray
    q_mean: np.ndarray
    q_cov: np.ndarray
    chol_kuu: np.ndarray = field(repr=False)
    chol_b: np.ndarray = field(repr=False)
    w_mean: np.ndarray = field(repr=False)
    m: int = 0

    @property
    def eta(self) -> int:
        return self.inducing.shape[0]

    @property
    def pseudo_targets(self) -> np.ndarray:
        """Targets Y_eta for which k^T (K + s^2 I)^-1 Y_eta reproduces the mean."""
        kuu = self.chol_kuu @ self.chol_kuu.T
        return (kuu + self.noise_var * np.eye(self.eta)) @ cho_solve((self.chol_kuu, True), self.q_mean)

    def predict(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        prior = np.full(z.shape[0], self.kernel.variance)
        if self.eta == 0:
            return np.zeros(z.shape[0]), prior
        kuz = self.kernel(self.inducing, z)
        a = solve_triangular(self.chol_kuu, kuz, lower=True)          # L^-1 k
        c = solve_triangular(self.chol_b, a, lower=True)              # L_B^-1 L^-1 k
        mean = a.T @ self.w_mean
        var = prior - np.sum(a * a, axis=0) + np.sum(c * c, axis=0)
        return mean, np.maximum(var, 0.0)


def fit_sparse(data: Dataset, eta: int, kernel: SqExpKernel, noise_var: float,
               output: int = 0) -> SparseGpModel:
    if eta < 1:
        raise ValueError("eta must be at least 1")
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    n = data.inputs.shape[1]
    if data.m == 0:
        empty = np.zeros((0, 0))
        return SparseGpModel(kernel, noise_var, np.zeros((0, n)), np.zeros(0), empty,
                             empty, empty, np.zeros(0), 0)
    idx = select_inducing(data.inputs, eta)
    zu = data.inputs[idx]
    y = data.outputs[:, output]
    kuu = kernel(zu, zu)
    lower = _jittered_cholesky(kuu, kernel.variance)
    v = solve_triangular(lower, kernel(zu, data.inputs), lower=True)   # (eta, m)
    b = np.eye(len(idx)) + (v @ v.T) / noise_var
    lb = np.linalg.cholesky(b)
    # mean weights: w = L_B^-T L_B^-1 V y / s^2 in the whitened basis
    w = cho_solve((lb, True), v @ y) / noise_var
    q_mean = lower @ w
    lb_inv_lt = solve_triangular(lb, lower.T, lower=True)
    q_cov = lb_inv_lt.T @ lb_inv_lt
    return SparseGpModel(kernel, noise_var, zu, q_mean, q_cov, lower, lb, w, data.m)


@dataclass(frozen=True)
class BetaParams:
    sigma_nu: float
    m: float
    delta: float
    gamma_k_m: float
    b_i: float

    def __post_init__(self):
        if not (self.sigma_nu > 0 and self.m > 0 and self.gamma_k_m >= 0 and self.b_i > 0):
            raise ValueError("beta parameters must be positive")
        if not (0 < self.delta <= 1):
            raise ValueError("delta must lie in (0, 1]")


def beta_bound(p: BetaParams) -> float:
    """Confidence multiplier for the GP error bound; ``m`` may be ``math.inf``."""
    root = math.sqrt(1.0 + 2.0 / p.m)
    inner = p.b_i + p.sigma_nu * math.sqrt(2.0 * (p.gamma_k_m + 1.0 + math.log(1.0 / p.delta)))
    return p.sigma_nu / root * inner


class MultiOutputGp:
    """One independent GP per output coordinate behind a single interface."""

    def __init__(self, models: Sequence[GpModel | SparseGpModel]):
        self.models = tuple(models)

    @classmethod
    def fit(cls, data: Dataset, kernel: SqExpKernel, noise_var: float | Sequence[float],
            eta: int | None = None) -> "MultiOutputGp":
        n_out = data.outputs.shape[1]
        nv = np.broadcast_to(np.asarray(noise_var, dtype=float), (n_out,))
        if eta is None:
            return cls([fit_exact(data, kernel, float(nv[i]), i) for i in range(n_out)])
        return cls([fit_sparse(data, eta, kernel, float(nv[i]), i) for i in range(n_out)])

    @classmethod
    def prior(cls, n: int, kernel: SqExpKernel, noise_var: float = 1.0) -> "MultiOutputGp":
        return cls.fit(Dataset.empty(n), kernel, noise_var)

    @property
    def n_out(self) -> int:
        return len(self.models)

    def predict(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances with shape (p, n_out)."""
        res = [mdl.predict(z) for mdl in self.models]
        return np.stack([r[0] for r in res], axis=1), np.stack([r[1] for r in res], axis=1)

    def mean(self, x) -> np.ndarray:
        mu, _ = self.predict(np.atleast_2d(x))
        return mu[0]

    def std(self, z) -> np.ndarray:
        return np.sqrt(self.predict(z)[1])

