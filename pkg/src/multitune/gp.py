"""Single-output Gaussian process regression.

Zero-mean GP with an exponential quadratic kernel,

    k(x, x') = variance * exp(-sum_i (x_i - x'_i)^2 / l_i),

fitted by maximizing the log marginal likelihood with L-BFGS-B (analytic
gradients) over multiple random restarts. Targets are standardized (and
optionally log-transformed) before fitting; predictions are mapped back.
All linear algebra goes through a Cholesky factorization with escalating
jitter.

Note the kernel divides squared distances by the lengthscale itself, not by
its square; lengthscales are stored in natural units and optimized in log
space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotri
from scipy.optimize import minimize

from .errors import NumericalError
from .sampling import RngState

LOG_2PI = math.log(2.0 * math.pi)

# Relative jitter schedule: scaled by mean(diag) and escalated tenfold.
JITTER_START = 1e-10
JITTER_MAX = 1e-4

NOISE_FLOOR = 1e-10


@dataclass(frozen=True)
class KernelParams:
    """Exponential quadratic kernel hyperparameters (all strictly positive)."""

    variance: float
    lengthscales: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(l) for l in self.lengthscales))
        if self.variance <= 0 or any(l <= 0 for l in self.lengthscales):
            raise ValueError("kernel variance and lengthscales must be strictly positive")

    @property
    def n_dims(self) -> int:
        return len(self.lengthscales)

    def to_dict(self) -> dict[str, Any]:
        return {"variance": self.variance, "lengthscales": list(self.lengthscales)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "KernelParams":
        return cls(d["variance"], tuple(d["lengthscales"]))


def _sqdist_per_dim(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Per-dimension squared distances, shape (d, n, m)."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    diff = A[:, None, :] - B[None, :, :]
    return np.moveaxis(diff * diff, -1, 0)


def kernel_eval(a, b, params: KernelParams) -> float:
    """Kernel value between two points."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape or a.size != params.n_dims:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape} vs {params.n_dims} lengthscales")
    l = np.asarray(params.lengthscales)
    return float(params.variance * np.exp(-np.sum((a - b) ** 2 / l)))


def kernel_matrix(A: np.ndarray, B: np.ndarray, params: KernelParams) -> np.ndarray:
    """Cross-covariance matrix k(A, B), shape (len(A), len(B))."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != params.n_dims or B.shape[1] != params.n_dims:
        raise ValueError("dimension mismatch between points and lengthscales")
    l = np.asarray(params.lengthscales)
    sq = _sqdist_per_dim(A, B)
    return params.variance * np.exp(-np.tensordot(1.0 / l, sq, axes=1))


def inverse_from_cholesky(L: np.ndarray) -> np.ndarray:
    """Full inverse of K = L L^T computed from its factor (LAPACK dpotri)."""
    inv, info = dpotri(L, lower=1)
    if info != 0:
        return cho_solve((L, True), np.eye(L.shape[0]))
    # dpotri fills the lower triangle only
    return inv + np.tril(inv, -1).T


def chol_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of K, adding escalating diagonal jitter if needed.

    Returns (L, jitter). Raises NumericalError once the relative jitter
    exceeds JITTER_MAX.
    """
    n = K.shape[0]
    scale = float(np.mean(np.diag(K))) or 1.0
    rel = 0.0
    while True:
        try:
            L = np.linalg.cholesky(K + (rel * scale) * np.eye(n) if rel else K)
            return L, rel * scale
        except np.linalg.LinAlgError:
            rel = JITTER_START if rel == 0.0 else rel * 10.0
            if rel > JITTER_MAX:
                raise NumericalError(
                    f"matrix not positive definite even with relative jitter {JITTER_MAX}"
                ) from None


def log_marginal_likelihood(X: np.ndarray, y: np.ndarray, params: KernelParams,
                            noise: float) -> float:
    """Log density of y under the zero-mean GP prior N(0, K + noise*I)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    K = kernel_matrix(X, X, params) + noise * np.eye(n)
    L, _ = chol_with_jitter(K)
    alpha = cho_solve((L, True), y)
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI)


def posterior(X: np.ndarray, y: np.ndarray, params: KernelParams, noise: float,
              Xstar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at Xstar, given raw training data.

    With no training data this returns the prior (zero mean, k(x,x) variance).
    Variances are clamped at zero against round-off.
    """
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    m = Xstar.shape[0]
    prior_var = np.full(m, params.variance)
    if X is None or len(np.atleast_2d(X)) == 0 or np.asarray(X).size == 0:
        return np.zeros(m), prior_var
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    K = kernel_matrix(X, X, params) + noise * np.eye(len(y))
    L, _ = chol_with_jitter(K)
    Ks = kernel_matrix(X, Xstar, params)
    alpha = cho_solve((L, True), y)
    mean = Ks.T @ alpha
    V = solve_triangular(L, Ks, lower=True)
    var = np.maximum(prior_var - np.sum(V * V, axis=0), 0.0)
    return mean, var


@dataclass(frozen=True)
class TargetTransform:
    """Affine (optionally log-first) target transform used during fitting."""

    log: bool
    shift: float
    scale: float

    @classmethod
    def fit(cls, y: np.ndarray, log: bool, standardize: bool = True) -> "TargetTransform":
        y = np.asarray(y, dtype=float)
        if log:
            if np.any(y <= 0):
                raise ValueError("log transform requires strictly positive targets")
            y = np.log(y)
        if not standardize:
            return cls(log, 0.0, 1.0)
        shift = float(np.mean(y))
        scale = float(np.std(y))
        if not np.isfinite(scale) or scale < 1e-12:
            scale = 1.0
        return cls(log, shift, scale)

    def to_latent(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.log:
            y = np.log(y)
        return (y - self.shift) / self.scale

    def from_latent(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        y = z * self.scale + self.shift
        return np.exp(y) if self.log else y

    def to_dict(self) -> dict[str, Any]:
        return {"log": self.log, "shift": self.shift, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TargetTransform":
        return cls(d["log"], d["shift"], d["scale"])


@dataclass
class GPFitConfig:
    """Controls for hyperparameter optimization."""

    restarts: int = 10
    seed: int = 0
    max_iter: int = 200
    lengthscale_init: tuple[float, float] = (1e-2, 1e1)
    noise_init: float = 1e-2
    log_transform: bool = False
    standardize: bool = True
    # log-space box constraints keeping the optimizer out of overflow territory
    log_variance_bounds: tuple[float, float] = (math.log(1e-6), math.log(1e6))
    log_lengthscale_bounds: tuple[float, float] = (math.log(1e-4), math.log(1e4))
    log_noise_bounds: tuple[float, float] = (math.log(NOISE_FLOOR), math.log(1e2))


@dataclass
class GPModel:
    """A fitted GP: data, hyperparameters and cached factorization."""

    X: np.ndarray
    y: np.ndarray
    kernel: KernelParams
    noise: float
    transform: TargetTransform
    lml: float = float("nan")
    L: np.ndarray = field(default=None, repr=False)
    alpha: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.L is None and len(self.y):
            z = self.transform.to_latent(self.y)
            K = kernel_matrix(self.X, self.X, self.kernel) + self.noise * np.eye(len(z))
            self.L, _ = chol_with_jitter(K)
            self.alpha = cho_solve((self.L, True), z)

    @property
    def n_train(self) -> int:
        return len(self.y)

    def predict_latent(self, Xstar) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance on the internal (transformed, standardized) scale."""
        Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
        Ks = kernel_matrix(self.X, Xstar, self.kernel)
        mean = Ks.T @ self.alpha
        V = solve_triangular(self.L, Ks, lower=True)
        var = np.maximum(self.kernel.variance - np.sum(V * V, axis=0), 0.0)
        return mean, var

    def predict(self, Xstar) -> tuple[np.ndarray, np.ndarray]:
        """Mean in original target units; variance on the latent scale times
        the standardization scale squared (for log models this is the variance
        of the log target)."""
        mean, var = self.predict_latent(Xstar)
        return self.transform.from_latent(mean), var * self.transform.scale**2

    def to_dict(self) -> dict[str, Any]:
        return {
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "kernel": self.kernel.to_dict(),
            "noise": self.noise,
            "transform": self.transform.to_dict(),
            "lml": self.lml,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GPModel":
        return cls(
            X=np.asarray(d["X"], dtype=float),
            y=np.asarray(d["y"], dtype=float),
            kernel=KernelParams.from_dict(d["kernel"]),
            noise=d["noise"],
            transform=TargetTransform.from_dict(d["transform"]),
            lml=d.get("lml", float("nan")),
        )


def gp_predict(model: GPModel, xstar) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of ``model`` at ``xstar`` (original units)."""
    return model.predict(xstar)


def _nlml_and_grad(theta: np.ndarray, sq: np.ndarray, z: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative LML and gradient w.r.t. [log var, log l_1..d, log noise]."""
    n = len(z)
    d = sq.shape[0]
    variance = math.exp(theta[0])
    lengths = np.exp(theta[1 : 1 + d])
    noise = math.exp(theta[-1])
    E = np.exp(-np.tensordot(1.0 / lengths, sq, axes=1))
    Kk = variance * E
    K = Kk + noise * np.eye(n)
    try:
        L, _ = chol_with_jitter(K)
    except NumericalError:
        return 1e12, np.zeros_like(theta)
    alpha = cho_solve((L, True), z)
    nlml = 0.5 * z @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * LOG_2PI
    G = np.outer(alpha, alpha)
    G -= inverse_from_cholesky(L)
    grad = np.empty_like(theta)
    A = G * Kk
    grad[0] = -0.5 * np.sum(A)
    grad[1 : 1 + d] = -0.5 * np.einsum("ij,kij->k", A, sq) / lengths
    grad[-1] = -0.5 * noise * np.trace(G)
    return float(nlml), grad


def fit_gp(X: np.ndarray, y: np.ndarray, config: GPFitConfig | None = None,
           warm_start: tuple[KernelParams, float] | None = None) -> GPModel:
    """Fit kernel hyperparameters and noise by multi-start L-BFGS-B.

    ``warm_start`` adds one restart initialized from a previous (kernel, noise)
    pair. Deterministic given ``config.seed``. Raises NumericalError if every
    restart fails.
    """
    config = config or GPFitConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(y) < 2:
        raise ValueError("fit_gp requires at least 2 observations")
    if X.shape[0] != len(y):
        raise ValueError("X and y lengths differ")
    d = X.shape[1]
    transform = TargetTransform.fit(y, config.log_transform, config.standardize)
    z = transform.to_latent(y)
    sq = _sqdist_per_dim(X, X)

    gen = RngState(config.seed).generator()
    lo, hi = math.log(config.lengthscale_init[0]), math.log(config.lengthscale_init[1])
    inits = []
    if warm_start is not None:
        kp, nz = warm_start
        inits.append(np.concatenate([[math.log(kp.variance)],
                                     np.log(kp.lengthscales),
                                     [math.log(max(nz, NOISE_FLOOR))]]))
    for _ in range(config.restarts):
        theta = np.concatenate([
            [0.0],
            gen.uniform(lo, hi, size=d),
            [math.log(config.noise_init)],
        ])
        inits.append(theta)

    bounds = ([config.log_variance_bounds]
              + [config.log_lengthscale_bounds] * d
              + [config.log_noise_bounds])
    best = None
    for theta0 in inits:
        theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])
        try:
            res = minimize(_nlml_and_grad, theta0, args=(sq, z), jac=True,
                           method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": config.max_iter})
        except (NumericalError, np.linalg.LinAlgError):
            continue
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise NumericalError("all GP fit restarts failed")

    theta = best.x
    kernel = KernelParams(math.exp(theta[0]), tuple(np.exp(theta[1 : 1 + d])))
    noise = max(math.exp(theta[-1]), NOISE_FLOOR)
    return GPModel(X=X, y=y, kernel=kernel, noise=noise, transform=transform,
                   lml=-float(best.fun))
