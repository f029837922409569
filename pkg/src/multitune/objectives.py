"""Black-box objectives and desk-scale surrogates.

The main surrogate models the runtime of a distributed QR factorization as a
linear combination of analytic factor counts (flops, divisions, messages,
words) with machine coefficients; the coefficients can be recovered from
measurements by non-negative least squares. Synthetic task families with
closed-form optima support generative tests, and an external-command adapter
lets a real application plug in as a child process.
"""

from __future__ import annotations

import inspect
import json
import math
import subprocess
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import ObjectiveError, RegressionError
from .sampling import RngState
from .spaces import (
    Configuration,
    ParameterSpace,
    pdgeqrf_desk_task_space,
    pdgeqrf_input_space,
    unit_space,
)


def _log(x: float) -> float:
    """Log base 2, the message-count convention for recursive broadcasts."""
    return math.log2(x)


@dataclass(frozen=True)
class MachineCoefficients:
    """Seconds per flop / division / message / transferred word."""

    t_f: float
    t_d: float
    t_m: float
    t_v: float

    def __post_init__(self):
        if min(self.t_f, self.t_d, self.t_m, self.t_v) < 0:
            raise ValueError("machine coefficients must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.t_f, self.t_d, self.t_m, self.t_v])


# Illustrative magnitudes for a desk-scale surrogate; not measured values.
DEFAULT_COEFFICIENTS = MachineCoefficients(t_f=1e-9, t_d=4e-8, t_m=1e-6, t_v=2e-9)


@dataclass(frozen=True)
class FactorCounts:
    """Operation/communication counts of one factorization run."""

    flops: float
    divisions: float
    messages: float
    words: float

    def as_array(self) -> np.ndarray:
        return np.array([self.flops, self.divisions, self.messages, self.words])


def qr_factor_counts(m: float, n: float, b: float, p: float, q: float,
                     nproc: float) -> FactorCounts:
    """Analytic factor counts for a blocked QR factorization.

    ``b`` is the (square) block size and p x q the process grid over ``nproc``
    processes. All arguments must be >= 1.
    """
    if min(m, n, b, p, q, nproc) < 1:
        raise ValueError("qr_factor_counts requires all arguments >= 1")
    flops = (2 * n**2 * (3 * m - n)) / (3 * nproc) + (b * n**2) / (2 * q) \
        + (3 * b * n * (2 * m - n)) / (2 * p) + (b**2 * n) / (3 * p)
    divisions = (m * n - n**2 / 2) / p
    messages = 3 * n * _log(p) + (2 * n / b) * _log(q)
    words = (n**2 / q + b * n) * _log(p) + ((m * n - n**2 / 2) / p + b * n / 2) * _log(q)
    return FactorCounts(flops, divisions, messages, words)


def qr_surrogate_runtime(task: Mapping[str, Any], config: Mapping[str, Any],
                         coeffs: MachineCoefficients = DEFAULT_COEFFICIENTS) -> float:
    """Predicted runtime of one QR run: coefficients dotted with factor counts.

    Rectangular blocks are approximated by b = min(mb, nb) since the counts
    assume square blocks, and wide matrices (n > m) are modeled as their
    transpose because the counts assume a tall factorization.
    """
    b = min(config["mb"], config["nb"])
    m, n = task["m"], task["n"]
    if n > m:
        m, n = n, m
    counts = qr_factor_counts(m, n, b, config["p"], config["q"], config["nproc"])
    return float(coeffs.as_array() @ counts.as_array())


@dataclass
class Objective:
    """An evaluable black-box: (task values, config values) -> scalar.

    ``repetitions`` only applies to non-deterministic objectives, for which
    the minimum over the repeated runs is reported.
    """

    id: str
    fn: Callable[..., float]
    deterministic: bool = True
    reentrant: bool = True
    repetitions: int = 3
    true_optimum: Callable[[Mapping[str, Any]], tuple[dict[str, Any], float]] | None = None
    _accepts_rng: bool | None = field(default=None, init=False, repr=False)

    def accepts_rng(self) -> bool:
        """Whether fn takes a third rng argument (noisy objectives usually do)."""
        if self._accepts_rng is None:
            try:
                params = list(inspect.signature(self.fn).parameters.values())
            except (TypeError, ValueError):
                params = []
            var = any(p.kind == inspect.Parameter.VAR_POSITIONAL for p in params)
            positional = [p for p in params
                          if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
            self._accepts_rng = var or len(positional) >= 3
        return self._accepts_rng


@dataclass(frozen=True)
class EvaluationRecord:
    """One tuner-visible evaluation: (task, configuration, min-of-reps value)."""

    task: Configuration
    config: Configuration
    value: float
    rep_values: tuple[float, ...]
    phase: str = "adaptive"
    fallback: bool = False

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.value)


def evaluate(objective: Objective, task: Configuration, config: Configuration,
             rng: RngState | None = None, reps: int | None = None,
             phase: str = "adaptive", fallback: bool = False) -> EvaluationRecord:
    """Run ``objective`` on (task, config), repeating noisy objectives.

    Deterministic objectives run once; noisy ones run ``reps`` times (default
    the objective's repetition policy) and the minimum is kept. A failing
    inner call raises ObjectiveError with the configuration attached.
    """
    n_reps = 1 if objective.deterministic else (reps or objective.repetitions)
    values = []
    for r in range(n_reps):
        try:
            call_rng = rng.child(r) if rng is not None else None
            value = _call_objective(objective, task, config, call_rng)
        except ObjectiveError:
            raise
        except Exception as exc:
            raise ObjectiveError(f"objective {objective.id!r} failed: {exc}",
                                 task=task, config=config) from exc
        if not isinstance(value, (int, float)) or not math.isfinite(float(value)):
            raise ObjectiveError(f"objective {objective.id!r} returned non-finite value",
                                 task=task, config=config)
        values.append(float(value))
    return EvaluationRecord(task=task, config=config, value=min(values),
                            rep_values=tuple(values), phase=phase, fallback=fallback)


def _call_objective(objective: Objective, task: Configuration,
                    config: Configuration, rng: RngState | None) -> float:
    if objective.accepts_rng():
        return objective.fn(task.values, config.values, rng)
    return objective.fn(task.values, config.values)


def qr_objective(coeffs: MachineCoefficients = DEFAULT_COEFFICIENTS,
                 noise_sigma: float = 0.0, repetitions: int = 3) -> Objective:
    """QR runtime surrogate; optionally with multiplicative lognormal noise."""
    if noise_sigma <= 0:
        return Objective(id="qr", fn=lambda t, x: qr_surrogate_runtime(t, x, coeffs))

    def noisy(t, x, rng: RngState | None = None):
        base = qr_surrogate_runtime(t, x, coeffs)
        gen = (rng or RngState(0)).generator()
        return base * math.exp(noise_sigma * gen.standard_normal())

    return Objective(id="qr-noisy", fn=noisy, deterministic=False,
                     repetitions=repetitions)


# -- coefficient regression ---------------------------------------------------


def fit_coefficients(records: Sequence[tuple[Mapping[str, Any], Mapping[str, Any], float]],
                     ) -> tuple[MachineCoefficients, dict[str, float]]:
    """Recover machine coefficients from (task, config, measured time) records.

    Non-negative least squares over the four factor counts. The report holds
    the mean relative error and the Pearson correlation between measured and
    predicted times on the fitting set.
    """
    if len(records) < 4:
        raise RegressionError(f"need at least 4 records, got {len(records)}")
    rows, times = [], []
    for task, config, t in records:
        b = min(config["mb"], config["nb"])
        counts = qr_factor_counts(task["m"], task["n"], b, config["p"], config["q"],
                                  config["nproc"])
        rows.append(counts.as_array())
        times.append(float(t))
    A = np.array(rows)
    y = np.array(times)
    rank = np.linalg.matrix_rank(A)
    if rank < 4:
        raise RegressionError(
            f"factor design matrix is rank-deficient (rank {rank} < 4); "
            "records do not separate the four factors"
        )
    coef, _ = nnls(A, y)
    predicted = A @ coef
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(predicted - y) / np.abs(y)
    report = {
        "mean_relative_error": float(np.mean(rel[np.isfinite(rel)])),
        "correlation": float(np.corrcoef(y, predicted)[0, 1]) if len(y) > 1 else 1.0,
        "n_records": len(records),
    }
    return MachineCoefficients(*coef), report


# -- synthetic families --------------------------------------------------------


@dataclass
class SyntheticFamily:
    """A synthetic multitask objective with unit task/input spaces."""

    objective: Objective
    task_space: ParameterSpace
    input_space: ParameterSpace

    def optimum_config(self, task: Configuration) -> tuple[Configuration, float]:
        values, best = self.objective.true_optimum(task.values)
        return Configuration(values), best

    def regret(self, task: Configuration, value: float) -> float:
        _, best = self.objective.true_optimum(task.values)
        return value - best


def _affine_optimum(task: Mapping[str, Any], task_dim: int, input_dim: int,
                    base: float, slope: float) -> np.ndarray:
    t = np.array([task[f"t{k}"] for k in range(task_dim)])
    drift = base + slope * float(np.mean(t))
    return np.clip(np.full(input_dim, drift), 0.0, 1.0)


def synthetic_family(kind: str, task_dim: int = 1, input_dim: int = 1,
                     base: float = 0.2, slope: float = 0.6,
                     amplitude: float = 0.3, offset: float = 0.05) -> SyntheticFamily:
    """Build a synthetic objective over ([0,1]^task_dim, [0,1]^input_dim).

    ``shifted-quadratic``: sum of squares around an optimum drifting affinely
    with the mean task coordinate; optimum value ``offset`` everywhere.
    ``task-scaled multimodal``: the same bowl plus a sinusoidal ripple whose
    amplitude scales with the task, sharing the same closed-form optimum.
    """
    tspace = unit_space(task_dim, name=f"{kind}-tasks", prefix="t")
    ispace = unit_space(input_dim, name=f"{kind}-inputs", prefix="x")

    def xvec(config: Mapping[str, Any]) -> np.ndarray:
        return np.array([config[f"x{j}"] for j in range(input_dim)])

    def opt(task: Mapping[str, Any]) -> tuple[dict[str, Any], float]:
        xstar = _affine_optimum(task, task_dim, input_dim, base, slope)
        return {f"x{j}": float(xstar[j]) for j in range(input_dim)}, offset

    if kind == "shifted-quadratic":
        def fn(task, config):
            xstar = _affine_optimum(task, task_dim, input_dim, base, slope)
            return float(np.sum((xvec(config) - xstar) ** 2)) + offset
    elif kind == "task-scaled multimodal":
        def fn(task, config):
            xstar = _affine_optimum(task, task_dim, input_dim, base, slope)
            dx = xvec(config) - xstar
            amp = amplitude * (0.5 + 0.5 * float(np.mean([task[f"t{k}"] for k in range(task_dim)])))
            return float(np.sum(dx**2) + amp * np.sum(np.sin(2.0 * np.pi * dx) ** 2)) + offset
    else:
        raise ValueError(f"unknown synthetic family kind {kind!r}")

    objective = Objective(id=f"synthetic:{kind}", fn=fn, true_optimum=opt)
    return SyntheticFamily(objective=objective, task_space=tspace, input_space=ispace)


# -- external command adapter ----------------------------------------------------


def command_objective(argv: Sequence[str], objective_id: str = "command",
                      timeout: float = 60.0, deterministic: bool = False,
                      repetitions: int = 3) -> Objective:
    """Wrap a child-process command as an objective.

    The command receives {"task": ..., "config": ...} as JSON on stdin and
    must print a single numeric value. Nonzero exit, timeouts and unparsable
    output all raise ObjectiveError.
    """
    def fn(task: Mapping[str, Any], config: Mapping[str, Any]) -> float:
        payload = json.dumps({"task": dict(task), "config": dict(config)})
        try:
            proc = subprocess.run(list(argv), input=payload, capture_output=True,
                                  text=True, timeout=timeout)
        except subprocess.TimeoutExpired:
            raise ObjectiveError(f"command objective timed out after {timeout}s")
        except OSError as exc:
            raise ObjectiveError(f"command objective could not start: {exc}")
        if proc.returncode != 0:
            raise ObjectiveError(
                f"command objective exited with {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        try:
            return float(proc.stdout.strip().split()[-1])
        except (ValueError, IndexError):
            raise ObjectiveError(
                f"command objective produced no numeric output: {proc.stdout[:200]!r}"
            )

    return Objective(id=objective_id, fn=fn, deterministic=deterministic,
                     reentrant=False, repetitions=repetitions)


def qr_spaces(nodes: int = 1, cores: int = 24,
              m_range: tuple[int, int] = (100, 2000),
              max_block: int = 512) -> tuple[ParameterSpace, ParameterSpace]:
    """Desk-scale task and input spaces for the QR surrogate."""
    return (pdgeqrf_desk_task_space(m_range=m_range, nodes=nodes, cores=cores),
            pdgeqrf_input_space(nodes=nodes, cores=cores, max_block=max_block))
