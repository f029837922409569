"""Linear coregionalization model over several tasks.

Each task's objective is modeled as a linear combination of Q independent
latent GPs, giving the stacked covariance

    K[(i,r),(j,s)] = sum_q W[q,i] * W[q,j] * k_q(x_ir, x_js) + delta_ij * D_i,

i.e. ``sum_q B_q (x) k_q + D (x) I`` in Kronecker form when all tasks share
the same inputs, with rank-one coupling matrices B_q = W_q W_q^T. The
implementation is block-wise so tasks may carry different sample sets
(heterotropic data); with identical inputs it reduces to the literal
Kronecker product.

Latent kernels have unit variance: the W vectors carry all output scale,
which removes the variance/|W| redundancy during fitting.

Extending a fitted model with one new task leaves every existing
hyperparameter untouched: only the Q new W entries and the new task's noise
are learned, and the covariance factor is grown with a bordered Cholesky
update instead of refactorizing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .errors import NumericalError
from .gp import (
    LOG_2PI,
    NOISE_FLOOR,
    GPFitConfig,
    GPModel,
    KernelParams,
    TargetTransform,
    _sqdist_per_dim,
    chol_with_jitter,
    fit_gp,
    inverse_from_cholesky,
    kernel_matrix,
)
from .sampling import RngState
from .spaces import Configuration


@dataclass(frozen=True)
class TaskBlockIndex:
    """Maps task index -> row range of the stacked system."""

    sizes: tuple[int, ...]

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for s in self.sizes:
            out.append(acc)
            acc += s
        return tuple(out)

    @property
    def total(self) -> int:
        return sum(self.sizes)

    def block(self, i: int) -> slice:
        off = self.offsets[i]
        return slice(off, off + self.sizes[i])

    def task_of_row(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.sizes)), self.sizes)


@dataclass(frozen=True)
class LCMHyper:
    """Hyperparameters: Q latent kernels, coupling vectors W_q, per-task noise D."""

    kernels: tuple[KernelParams, ...]
    W: np.ndarray  # (Q, n_tasks)
    D: np.ndarray  # (n_tasks,)

    def __post_init__(self):
        object.__setattr__(self, "W", np.asarray(self.W, dtype=float))
        object.__setattr__(self, "D", np.asarray(self.D, dtype=float))
        if self.W.ndim != 2 or self.W.shape[0] != len(self.kernels):
            raise ValueError("W must have shape (Q, n_tasks)")
        if self.D.shape != (self.W.shape[1],):
            raise ValueError("D must have one entry per task")
        if np.any(self.D < 0):
            raise ValueError("D entries must be non-negative")

    @property
    def Q(self) -> int:
        return len(self.kernels)

    @property
    def n_tasks(self) -> int:
        return self.W.shape[1]

    def coupling(self, q: int) -> np.ndarray:
        """B_q = W_q W_q^T, rank-one PSD by construction."""
        return np.outer(self.W[q], self.W[q])

    def to_dict(self) -> dict[str, Any]:
        return {
            "kernels": [k.to_dict() for k in self.kernels],
            "W": self.W.tolist(),
            "D": self.D.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LCMHyper":
        return cls(
            kernels=tuple(KernelParams.from_dict(k) for k in d["kernels"]),
            W=np.asarray(d["W"], dtype=float),
            D=np.asarray(d["D"], dtype=float),
        )


def _stack(X_list: Sequence[np.ndarray]) -> tuple[np.ndarray, TaskBlockIndex]:
    X_list = [np.atleast_2d(np.asarray(X, dtype=float)) for X in X_list]
    index = TaskBlockIndex(tuple(X.shape[0] for X in X_list))
    return np.vstack(X_list), index


def assemble_cov(X_list: Sequence[np.ndarray], hyper: LCMHyper) -> np.ndarray:
    """Stacked covariance matrix over all tasks' sample sets (noise included)."""
    if len(X_list) != hyper.n_tasks:
        raise ValueError(f"{len(X_list)} sample sets but {hyper.n_tasks} tasks in hyper")
    Xs, index = _stack(X_list)
    rows = index.task_of_row()
    K = np.zeros((index.total, index.total))
    for q in range(hyper.Q):
        w = hyper.W[q][rows]
        K += np.outer(w, w) * kernel_matrix(Xs, Xs, hyper.kernels[q])
    K[np.diag_indices_from(K)] += hyper.D[rows]
    return K


def lcm_log_likelihood(X_list: Sequence[np.ndarray], y_stacked: np.ndarray,
                       hyper: LCMHyper) -> float:
    """Zero-mean Gaussian log density of the stacked targets."""
    y = np.asarray(y_stacked, dtype=float).ravel()
    K = assemble_cov(X_list, hyper)
    L, _ = chol_with_jitter(K)
    alpha = cho_solve((L, True), y)
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * LOG_2PI)


@dataclass
class LCMFitConfig:
    """Controls for coregionalization fitting and extension."""

    restarts: int = 10
    seed: int = 0
    max_iter: int = 200
    lengthscale_init: tuple[float, float] = (1e-2, 1e1)
    noise_init: float = 1e-2
    log_transform: bool = False
    standardize: bool = True
    extension_restarts: int = 8
    log_lengthscale_bounds: tuple[float, float] = (math.log(1e-4), math.log(1e4))
    w_bounds: tuple[float, float] = (-50.0, 50.0)
    log_noise_bounds: tuple[float, float] = (math.log(NOISE_FLOOR), math.log(1e2))

    def as_gp_config(self) -> GPFitConfig:
        return GPFitConfig(
            restarts=self.restarts,
            seed=self.seed,
            max_iter=self.max_iter,
            lengthscale_init=self.lengthscale_init,
            noise_init=self.noise_init,
            log_transform=self.log_transform,
            standardize=self.standardize,
        )


@dataclass
class LCMModel:
    """Fitted multi-task model with cached stacked factorization."""

    tasks: tuple[Configuration, ...]
    X_list: list[np.ndarray]
    Y_list: list[np.ndarray]
    hyper: LCMHyper
    transform: TargetTransform
    lml: float = float("nan")
    L: np.ndarray = field(default=None, repr=False)
    alpha: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.X_list = [np.atleast_2d(np.asarray(X, dtype=float)) for X in self.X_list]
        self.Y_list = [np.asarray(Y, dtype=float).ravel() for Y in self.Y_list]
        if self.L is None:
            K = assemble_cov(self.X_list, self.hyper)
            self.L, _ = chol_with_jitter(K)
            self.alpha = cho_solve((self.L, True), self.z_stacked)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def index(self) -> TaskBlockIndex:
        return TaskBlockIndex(tuple(X.shape[0] for X in self.X_list))

    @property
    def X_stacked(self) -> np.ndarray:
        return np.vstack(self.X_list)

    @property
    def z_stacked(self) -> np.ndarray:
        return self.transform.to_latent(np.concatenate(self.Y_list))

    def _cross_cov(self, task_index: int, Xstar: np.ndarray) -> tuple[np.ndarray, float]:
        """Covariance between training rows and (task_index, Xstar) queries."""
        Xs = self.X_stacked
        rows = self.index.task_of_row()
        Kstar = np.zeros((Xs.shape[0], Xstar.shape[0]))
        prior = 0.0
        for q in range(self.hyper.Q):
            wq = self.hyper.W[q]
            Kstar += (wq[task_index] * wq[rows])[:, None] * kernel_matrix(Xs, Xstar, self.hyper.kernels[q])
            prior += wq[task_index] ** 2 * self.hyper.kernels[q].variance
        return Kstar, prior

    def predict_latent(self, task_index: int, Xstar) -> tuple[np.ndarray, np.ndarray]:
        """Mean/variance on the internal scale, using every task's data.

        The reported variance is that of the latent objective (no noise term).
        """
        if not 0 <= task_index < self.n_tasks:
            raise IndexError(f"unknown task index {task_index}")
        Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
        Kstar, prior = self._cross_cov(task_index, Xstar)
        mean = Kstar.T @ self.alpha
        V = solve_triangular(self.L, Kstar, lower=True)
        var = np.maximum(prior - np.sum(V * V, axis=0), 0.0)
        return mean, var

    def predict(self, task_index: int, Xstar) -> tuple[np.ndarray, np.ndarray]:
        """Mean in original units; variance scaled as in GPModel.predict."""
        mean, var = self.predict_latent(task_index, Xstar)
        return self.transform.from_latent(mean), var * self.transform.scale**2

    def to_dict(self) -> dict[str, Any]:
        return {
            "tasks": [t.as_dict() for t in self.tasks],
            "X": [X.tolist() for X in self.X_list],
            "Y": [Y.tolist() for Y in self.Y_list],
            "hyper": self.hyper.to_dict(),
            "transform": self.transform.to_dict(),
            "lml": self.lml,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LCMModel":
        return cls(
            tasks=tuple(Configuration(t) for t in d["tasks"]),
            X_list=[np.asarray(X, dtype=float) for X in d["X"]],
            Y_list=[np.asarray(Y, dtype=float) for Y in d["Y"]],
            hyper=LCMHyper.from_dict(d["hyper"]),
            transform=TargetTransform.from_dict(d["transform"]),
            lml=d.get("lml", float("nan")),
        )


def lcm_predict(model: LCMModel, task_index: int, xstar) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance for one task at ``xstar`` (original units)."""
    return model.predict(task_index, xstar)


# -- fitting -----------------------------------------------------------------


def _unpack(theta: np.ndarray, Q: int, n_tasks: int, d: int):
    lengths = np.exp(theta[: Q * d]).reshape(Q, d)
    W = theta[Q * d : Q * d + Q * n_tasks].reshape(Q, n_tasks)
    D = np.exp(theta[Q * d + Q * n_tasks :])
    return lengths, W, D


def _lcm_nlml_and_grad(theta: np.ndarray, sq: np.ndarray, rows: np.ndarray,
                       Q: int, n_tasks: int, z: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative stacked LML and gradient.

    theta packs [log lengths (Q*d), W (Q*n_tasks), log D (n_tasks)]; latent
    kernel variances are pinned at one. Scratch buffers are reused to keep
    allocation churn out of the optimizer's inner loop.
    """
    d = sq.shape[0]
    N = len(z)
    lengths, W, D = _unpack(theta, Q, n_tasks, d)
    E = np.empty((Q, N, N))
    K = np.zeros((N, N))
    wrows = np.empty((Q, N))
    scratch = np.empty((N, N))
    for q in range(Q):
        np.einsum("k,kij->ij", -1.0 / lengths[q], sq, out=E[q])
        np.exp(E[q], out=E[q])
        wrows[q] = W[q][rows]
        np.multiply(wrows[q][:, None], wrows[q][None, :], out=scratch)
        scratch *= E[q]
        K += scratch
    K[np.diag_indices_from(K)] += D[rows]
    try:
        L, _ = chol_with_jitter(K)
    except NumericalError:
        return 1e12, np.zeros_like(theta)
    alpha = cho_solve((L, True), z)
    nlml = 0.5 * z @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * N * LOG_2PI
    G = np.outer(alpha, alpha)
    G -= inverse_from_cholesky(L)

    grad_l = np.empty((Q, d))
    grad_w = np.empty((Q, n_tasks))
    H = scratch
    for q in range(Q):
        np.multiply(G, E[q], out=H)
        v = H @ wrows[q]
        grad_w[q] = -np.bincount(rows, weights=v, minlength=n_tasks)
        H *= wrows[q][:, None]
        H *= wrows[q][None, :]
        grad_l[q] = -0.5 * np.einsum("ij,kij->k", H, sq) / lengths[q]
    diag_g = np.bincount(rows, weights=np.diag(G), minlength=n_tasks)
    grad_d = -0.5 * D * diag_g
    return float(nlml), np.concatenate([grad_l.ravel(), grad_w.ravel(), grad_d])


def _gp_as_lcm(gp: GPModel, task: Configuration) -> LCMModel:
    """Express a fitted single-output GP as the equivalent one-task LCM."""
    hyper = LCMHyper(
        kernels=(KernelParams(1.0, gp.kernel.lengthscales),),
        W=np.array([[math.sqrt(gp.kernel.variance)]]),
        D=np.array([gp.noise]),
    )
    return LCMModel(tasks=(task,), X_list=[gp.X], Y_list=[gp.y], hyper=hyper,
                    transform=gp.transform, lml=gp.lml)


def fit_lcm(tasks: Sequence[Configuration], X_list: Sequence[np.ndarray],
            Y_list: Sequence[np.ndarray], Q: int,
            config: LCMFitConfig | None = None,
            warm_start: LCMHyper | None = None) -> LCMModel:
    """Fit the coregionalization hyperparameters by multi-start L-BFGS-B.

    A single task with Q=1 is the plain GP case and is fitted through
    :func:`multitune.gp.fit_gp`, then converted (the two parameterizations
    describe the same model family).
    """
    config = config or LCMFitConfig()
    if Q < 1:
        raise ValueError("Q must be >= 1")
    n_tasks = len(tasks)
    if n_tasks < 1 or len(X_list) != n_tasks or len(Y_list) != n_tasks:
        raise ValueError("tasks, X_list and Y_list must be non-empty and equal length")
    X_list = [np.atleast_2d(np.asarray(X, dtype=float)) for X in X_list]
    Y_list = [np.asarray(Y, dtype=float).ravel() for Y in Y_list]
    if any(len(Y) < 1 for Y in Y_list):
        raise ValueError("every task needs at least one observation")

    if n_tasks == 1 and Q == 1 and warm_start is None:
        gp = fit_gp(X_list[0], Y_list[0], config.as_gp_config())
        return _gp_as_lcm(gp, tasks[0])

    Xs, index = _stack(X_list)
    rows = index.task_of_row()
    d = Xs.shape[1]
    y_all = np.concatenate(Y_list)
    transform = TargetTransform.fit(y_all, config.log_transform, config.standardize)
    z = transform.to_latent(y_all)
    sq = _sqdist_per_dim(Xs, Xs)

    gen = RngState(config.seed).generator()
    lo, hi = math.log(config.lengthscale_init[0]), math.log(config.lengthscale_init[1])
    inits = []
    if warm_start is not None:
        if warm_start.Q != Q or warm_start.n_tasks != n_tasks:
            raise ValueError("warm_start shape mismatch")
        inits.append(np.concatenate([
            np.log([k.lengthscales for k in warm_start.kernels]).ravel(),
            warm_start.W.ravel(),
            np.log(np.maximum(warm_start.D, NOISE_FLOOR)),
        ]))
    for _ in range(config.restarts):
        inits.append(np.concatenate([
            gen.uniform(lo, hi, size=Q * d),
            gen.normal(size=Q * n_tasks),
            np.full(n_tasks, math.log(config.noise_init)),
        ]))

    bounds = ([config.log_lengthscale_bounds] * (Q * d)
              + [config.w_bounds] * (Q * n_tasks)
              + [config.log_noise_bounds] * n_tasks)
    best = None
    for theta0 in inits:
        theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])
        try:
            res = minimize(_lcm_nlml_and_grad, theta0, args=(sq, rows, Q, n_tasks, z),
                           jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": config.max_iter})
        except (NumericalError, np.linalg.LinAlgError):
            continue
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise NumericalError("all LCM fit restarts failed")

    lengths, W, D = _unpack(best.x, Q, n_tasks, d)
    hyper = LCMHyper(
        kernels=tuple(KernelParams(1.0, tuple(lengths[q])) for q in range(Q)),
        W=W,
        D=np.maximum(D, NOISE_FLOOR),
    )
    return LCMModel(tasks=tuple(tasks), X_list=X_list, Y_list=Y_list,
                    hyper=hyper, transform=transform, lml=-float(best.fun))


# -- incremental extension ------------------------------------------------------


def chol_append(L: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Grow a Cholesky factor for a bordered SPD matrix [[K, B], [B^T, C]].

    Only the new rows/columns are factorized: L21 = (L^-1 B)^T and
    L22 = chol(C - L21 L21^T). Jitter escalation applies to the new block.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n1 = L.shape[0] if L is not None and L.size else 0
    n2 = C.shape[0]
    if n1 == 0:
        L22, _ = chol_with_jitter(C)
        return L22
    if B.shape != (n1, n2):
        raise ValueError(f"border must have shape ({n1}, {n2}), got {B.shape}")
    V = solve_triangular(L, B, lower=True)
    S = C - V.T @ V
    S = 0.5 * (S + S.T)
    L22, _ = chol_with_jitter(S)
    out = np.zeros((n1 + n2, n1 + n2))
    out[:n1, :n1] = L
    out[n1:, :n1] = V.T
    out[n1:, n1:] = L22
    return out


def extend_model(model: LCMModel, new_task: Configuration, X_new: np.ndarray,
                 Y_new: np.ndarray, config: LCMFitConfig | None = None,
                 warm_start: tuple[np.ndarray, float] | None = None) -> LCMModel:
    """Add one task to a fitted model, learning only its coupling and noise.

    Every pre-existing hyperparameter (latent kernels, old W entries, old D)
    is carried over bit-identically, as is the target transform. The Q new W
    entries and the new task's noise maximize the extended likelihood; each
    candidate is scored through the bordered factorization, reusing the
    cached factor of the old covariance.
    """
    config = config or LCMFitConfig()
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    Y_new = np.asarray(Y_new, dtype=float).ravel()
    if X_new.shape[0] == 0 or len(Y_new) == 0:
        raise ValueError("extend_model requires non-empty data for the new task")
    if X_new.shape[0] != len(Y_new):
        raise ValueError("X_new and Y_new lengths differ")

    hyper = model.hyper
    Q = hyper.Q
    L11 = model.L
    rows = model.index.task_of_row()
    Xs = model.X_stacked
    z_old = model.z_stacked
    z_new = model.transform.to_latent(Y_new)
    n_new = len(z_new)
    N_total = len(z_old) + n_new

    # Pieces independent of the new hyperparameters.
    cross = np.empty((Q, len(z_old), n_new))  # w_q-scaled cross-covariance blocks
    Z = np.empty_like(cross)                  # L11^-1 cross
    K_new = np.empty((Q, n_new, n_new))
    for q in range(Q):
        cross[q] = hyper.W[q][rows][:, None] * kernel_matrix(Xs, X_new, hyper.kernels[q])
        Z[q] = solve_triangular(L11, cross[q], lower=True)
        K_new[q] = kernel_matrix(X_new, X_new, hyper.kernels[q])
    z1 = solve_triangular(L11, z_old, lower=True)
    const = 0.5 * z1 @ z1 + np.sum(np.log(np.diag(L11))) + 0.5 * N_total * LOG_2PI
    eye_new = np.eye(n_new)

    def nll_and_grad(theta: np.ndarray) -> tuple[float, np.ndarray]:
        # blockwise likelihood and gradient through the Schur complement
        # S = C - V^T V of the bordered covariance; the old factor is reused.
        w_star = theta[:Q]
        d_star = math.exp(theta[-1])
        V = np.tensordot(w_star, Z, axes=1)
        C = np.tensordot(w_star**2, K_new, axes=1) + d_star * eye_new
        S = C - V.T @ V
        S = 0.5 * (S + S.T)
        try:
            L22, _ = chol_with_jitter(S)
        except NumericalError:
            return 1e12, np.zeros_like(theta)
        r = z_new - V.T @ z1
        z2 = solve_triangular(L22, r, lower=True)
        value = float(const + np.sum(np.log(np.diag(L22))) + 0.5 * z2 @ z2)

        # G = alpha alpha^T - K^-1 restricted to the (12) and (22) blocks
        alpha2 = solve_triangular(L22, z2, trans="T", lower=True)
        alpha1 = solve_triangular(L11, z1 - V @ alpha2, trans="T", lower=True)
        S_inv = cho_solve((L22, True), eye_new)
        G22 = np.outer(alpha2, alpha2) - S_inv
        G12 = np.outer(alpha1, alpha2) + solve_triangular(L11, V @ S_inv,
                                                          trans="T", lower=True)
        grad = np.empty_like(theta)
        for q in range(Q):
            grad[q] = -(np.sum(G12 * cross[q]) + w_star[q] * np.sum(G22 * K_new[q]))
        grad[-1] = -0.5 * d_star * np.trace(G22)
        return value, grad

    gen = RngState(config.seed).generator()
    inits: list[np.ndarray] = []
    if warm_start is not None:
        w0, d0 = warm_start
        inits.append(np.concatenate([np.asarray(w0, dtype=float),
                                     [math.log(max(d0, NOISE_FLOOR))]]))
    else:
        # every existing task's coupling is a plausible starting point
        for j in range(hyper.n_tasks):
            inits.append(np.concatenate([hyper.W[:, j],
                                         [math.log(max(hyper.D[j], NOISE_FLOOR))]]))
    for _ in range(config.extension_restarts):
        inits.append(np.concatenate([gen.normal(size=Q),
                                     [math.log(config.noise_init)]]))

    bounds = [config.w_bounds] * Q + [config.log_noise_bounds]
    best = None
    for theta0 in inits:
        theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])
        res = minimize(nll, theta0, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": config.max_iter, "ftol": 1e-13,
                                "gtol": 1e-9})
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise NumericalError("model extension failed for every restart")

    w_star = best.x[:Q]
    d_star = max(math.exp(best.x[-1]), NOISE_FLOOR)
    B = np.tensordot(w_star, cross, axes=1)
    C = np.tensordot(w_star**2, K_new, axes=1) + d_star * eye_new
    L_ext = chol_append(L11, B, C)

    new_hyper = LCMHyper(
        kernels=hyper.kernels,
        W=np.hstack([hyper.W, w_star[:, None]]),
        D=np.append(hyper.D, d_star),
    )
    z_ext = np.concatenate([z_old, z_new])
    alpha_ext = cho_solve((L_ext, True), z_ext)
    return LCMModel(
        tasks=model.tasks + (new_task,),
        X_list=list(model.X_list) + [X_new],
        Y_list=list(model.Y_list) + [Y_new],
        hyper=new_hyper,
        transform=model.transform,
        lml=-float(best.fun),
        L=L_ext,
        alpha=alpha_ext,
    )
