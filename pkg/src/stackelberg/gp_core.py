"""Gaussian-process model of the leader's cost.

The GP is fitted to *realized* costs, i.e. costs observed at whatever
approximate equilibrium the followers reached; the posterior mean over
those observations is what the acquisition step minimises.

Information-gain growth rates for reference (not computed here):
linear kernel ``O(d log T)``, squared exponential ``O(log(T)^(d+1))``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-6

SQUARED_EXPONENTIAL = "se"
LINEAR = "linear"
KERNEL_KINDS = (SQUARED_EXPONENTIAL, LINEAR)


class FactorizationFailed(np.linalg.LinAlgError):
    pass


class DegenerateData(UserWarning):
    """Observations carry no information for hyperparameter fitting."""


@dataclass(frozen=True)
class KernelSpec:
    kind: str = SQUARED_EXPONENTIAL
    lengthscale: tuple[float, ...] = (1.0,)
    signal_variance: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        ls = tuple(float(v) for v in np.ravel(self.lengthscale))
        object.__setattr__(self, "lengthscale", ls)
        if min(ls) <= 0 or self.signal_variance <= 0:
            raise ValueError("lengthscale and signal_variance must be positive")

    def to_dict(self):
        return {
            "kind": self.kind,
            "lengthscale": list(self.lengthscale),
            "signal_variance": self.signal_variance,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["kind"], tuple(data["lengthscale"]), float(data["signal_variance"]))


def kernel_matrix(spec: KernelSpec, A, B) -> np.ndarray:
    """Cross-covariance between rows of ``A`` (n, d) and ``B`` (m, d)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if spec.kind == LINEAR:
        return spec.signal_variance * A @ B.T
    ls = np.asarray(spec.lengthscale)
    a, b = A / ls, B / ls
    sq = np.sum(a**2, 1)[:, None] + np.sum(b**2, 1)[None, :] - 2 * a @ b.T
    return spec.signal_variance * np.exp(-0.5 * np.maximum(sq, 0.0))


def kernel_eval(spec: KernelSpec, a, b) -> float:
    return float(kernel_matrix(spec, a, b)[0, 0])


def kernel_diag(spec: KernelSpec, A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if spec.kind == LINEAR:
        return spec.signal_variance * np.sum(A**2, 1)
    return np.full(A.shape[0], spec.signal_variance)


def _cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, adding diagonal jitter only if needed.

    ``K`` already carries the noise variance on its diagonal, so the plain
    factorization normally succeeds and the posterior is exact.  On failure
    the jitter starts at ``JITTER_START`` and doubles up to ``JITTER_MAX``.
    """
    n = K.shape[0]
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    while jitter <= JITTER_MAX:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n))
            logger.info("Cholesky needed diagonal jitter %.1e", jitter)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 2
    raise FactorizationFailed(f"Gram matrix not positive definite with jitter up to {JITTER_MAX}")


@dataclass(frozen=True)
class GpState:
    """Observed data plus a cached factorisation of ``K + noise_sd^2 I``.

    Instances are immutable; :func:`append_observation` returns a new one.
    Build with :meth:`create` rather than the raw constructor.
    """

    inputs: np.ndarray
    observations: np.ndarray
    kernel: KernelSpec
    noise_sd: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @classmethod
    def create(cls, dim: int, kernel: KernelSpec, noise_sd: float, inputs=None, observations=None):
        if noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        X = np.empty((0, dim)) if inputs is None else np.asarray(inputs, dtype=float).reshape(-1, dim)
        y = np.empty(0) if observations is None else np.asarray(observations, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError("inputs and observations must have equal length")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        K = kernel_matrix(kernel, X, X) + noise_sd**2 * np.eye(len(y))
        L, jitter = _cholesky(K) if len(y) else (np.empty((0, 0)), 0.0)
        alpha = _chol_solve(L, y)
        for arr in (X, y, L, alpha):
            arr.setflags(write=False)
        return cls(X, y, kernel, float(noise_sd), L, alpha, jitter)

    @property
    def t(self) -> int:
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def with_hyperparameters(self, kernel: KernelSpec, noise_sd: float) -> "GpState":
        return GpState.create(self.dim, kernel, noise_sd, self.inputs, self.observations)

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs.tolist(),
            "observations": self.observations.tolist(),
            "kernel": self.kernel.to_dict(),
            "noise_sd": self.noise_sd,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GpState":
        kernel = KernelSpec.from_dict(data["kernel"])
        inputs = np.asarray(data["inputs"], dtype=float)
        dim = inputs.shape[1] if inputs.ndim == 2 and inputs.size else len(kernel.lengthscale)
        return cls.create(dim, kernel, float(data["noise_sd"]), inputs.reshape(-1, dim), data["observations"])


def _chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    if L.shape[0] == 0:
        return np.zeros_like(b)
    return solve_triangular(L.T, solve_triangular(L, b, lower=True), lower=False)


def posterior_batch(state: GpState, X) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    prior_var = kernel_diag(state.kernel, X)
    if state.t == 0:
        return np.zeros(X.shape[0]), prior_var
    Ks = kernel_matrix(state.kernel, state.inputs, X)
    mean = Ks.T @ state.alpha
    V = solve_triangular(state.chol, Ks, lower=True)
    var = prior_var - np.sum(V**2, axis=0)
    if np.any(var < -1e-10):
        logger.debug("clamping negative posterior variance %.3g", var.min())
    return mean, np.maximum(var, 0.0)


def posterior(state: GpState, pi) -> tuple[float, float]:
    mean, var = posterior_batch(state, np.asarray(pi, dtype=float)[None, :])
    return float(mean[0]), float(var[0])


def append_observation(state: GpState, pi, cost: float) -> GpState:
    """Add one datum, extending the Cholesky factor by a single row."""
    if not np.isfinite(cost):
        raise ValueError(f"cost must be finite, got {cost}")
    pi = np.asarray(pi, dtype=float).reshape(1, state.dim)
    X = np.vstack([state.inputs, pi])
    y = np.append(state.observations, float(cost))
    if state.t == 0:
        return GpState.create(state.dim, state.kernel, state.noise_sd, X, y)

    k = kernel_matrix(state.kernel, state.inputs, pi)[:, 0]
    kss = kernel_diag(state.kernel, pi)[0] + state.noise_sd**2 + state.jitter
    row = solve_triangular(state.chol, k, lower=True)
    pivot = kss - row @ row
    if pivot <= 0:
        return GpState.create(state.dim, state.kernel, state.noise_sd, X, y)
    n = state.t
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = state.chol
    L[n, :n] = row
    L[n, n] = math.sqrt(pivot)
    alpha = _chol_solve(L, y)
    for arr in (X, y, L, alpha):
        arr.setflags(write=False)
    return GpState(X, y, state.kernel, state.noise_sd, L, alpha, state.jitter)


def greedy_info_gain(state: GpState) -> float:
    """``0.5 * log det(I + K / noise_sd^2)`` on the observed inputs."""
    if state.t == 0:
        return 0.0
    K = kernel_matrix(state.kernel, state.inputs, state.inputs)
    L, _ = _cholesky(np.eye(state.t) + K / state.noise_sd**2)
    return float(np.sum(np.log(np.diag(L))))


# -- hyperparameters --------------------------------------------------------


@dataclass(frozen=True)
class HyperBounds:
    """Box bounds for fitting; lengthscale bounds are relative to ``scale``."""

    lengthscale: tuple[float, float] = (1e-2, 1e2)
    signal_variance: tuple[float, float] = (1e-4, 1e2)
    noise_sd: tuple[float, float] = (1e-4, 10.0)
    scale: float = 1.0


@dataclass
class FitResult:
    kernel: KernelSpec
    noise_sd: float
    log_marginal_likelihood: float
    degenerate: bool = False
    start_values: list[float] = field(default_factory=list)


def _unpack(theta, kind, dim):
    # theta holds logs: [lengthscales (SE only)..., signal variance, noise sd]
    if kind == SQUARED_EXPONENTIAL:
        ls = np.exp(theta[:dim])
        rest = theta[dim:]
    else:
        ls = np.ones(dim)
        rest = theta
    return ls, math.exp(rest[0]), math.exp(rest[1])


def negative_log_marginal_likelihood(theta, X, y, kind: str, eval_gradient: bool = False):
    """NLL as a function of log-hyperparameters, optionally with its gradient."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, dim = X.shape
    ls, sf2, sn = _unpack(np.asarray(theta, dtype=float), kind, dim)
    spec = KernelSpec(kind, tuple(ls), sf2)
    Kf = kernel_matrix(spec, X, X)
    K = Kf + sn**2 * np.eye(n)
    try:
        L, jitter = _cholesky(K)
    except FactorizationFailed:
        return (np.inf, np.zeros(len(theta))) if eval_gradient else np.inf
    alpha = _chol_solve(L, y)
    nll = 0.5 * y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * math.log(2 * math.pi)
    if not eval_gradient:
        return nll

    Kinv = _chol_solve(L, np.eye(n))
    inner = np.outer(alpha, alpha) - Kinv
    grads = []
    if kind == SQUARED_EXPONENTIAL:
        for m in range(dim):
            diff2 = (X[:, m][:, None] - X[:, m][None, :]) ** 2 / ls[m] ** 2
            grads.append(Kf * diff2)
    grads.append(Kf)  # d/dlog(sf2)
    grads.append(2 * sn**2 * np.eye(n))  # d/dlog(sn)
    grad = np.array([-0.5 * np.sum(inner * dK) for dK in grads])
    return nll, grad


def fit_hyperparameters(
    inputs,
    observations,
    kernel_kind: str = SQUARED_EXPONENTIAL,
    bounds: HyperBounds = HyperBounds(),
    n_starts: int = 8,
    rng: np.random.Generator | None = None,
) -> FitResult:
    """Maximise the log marginal likelihood from log-uniform multi-starts.

    Uses L-BFGS-B on log-parameters with the analytic gradient.  When all
    observations coincide there is nothing to fit: the geometric midpoints
    of the bounds are returned with ``degenerate=True`` and a
    :class:`DegenerateData` warning.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(observations, dtype=float).ravel()
    if len(y) < 2:
        raise ValueError("need at least two observations")
    dim = X.shape[1]
    rng = np.random.default_rng(0) if rng is None else rng

    log_bounds = []
    if kernel_kind == SQUARED_EXPONENTIAL:
        lo, hi = bounds.lengthscale
        log_bounds += [(math.log(lo * bounds.scale), math.log(hi * bounds.scale))] * dim
    log_bounds.append(tuple(math.log(b) for b in bounds.signal_variance))
    log_bounds.append(tuple(math.log(b) for b in bounds.noise_sd))
    lb = np.array([b[0] for b in log_bounds])
    ub = np.array([b[1] for b in log_bounds])

    if np.ptp(y) == 0:
        warnings.warn("all observations identical; returning default hyperparameters", DegenerateData)
        ls, sf2, sn = _unpack(0.5 * (lb + ub), kernel_kind, dim)
        return FitResult(KernelSpec(kernel_kind, tuple(ls), sf2), sn, float("nan"), degenerate=True)

    starts = rng.uniform(lb, ub, size=(n_starts, len(lb)))
    best = None
    start_values = []
    for theta0 in starts:
        start_values.append(float(negative_log_marginal_likelihood(theta0, X, y, kernel_kind)))
        res = minimize(
            negative_log_marginal_likelihood,
            theta0,
            args=(X, y, kernel_kind, True),
            jac=True,
            method="L-BFGS-B",
            bounds=log_bounds,
        )
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise FactorizationFailed("marginal likelihood could not be evaluated at any start")
    ls, sf2, sn = _unpack(best.x, kernel_kind, dim)
    logger.info("fitted GP hyperparameters: lengthscale=%s signal_var=%.3g noise_sd=%.3g", ls, sf2, sn)
    return FitResult(
        KernelSpec(kernel_kind, tuple(ls), sf2),
        sn,
        -float(best.fun),
        start_values=start_values,
    )
