"""Optimization loops: EI acquisition, PSO search, MLA, TLA1, TLA2, baselines.

All tuners stop on an evaluation budget only, consume exactly that budget per
task, and are fully deterministic given their seed. Failed objective
evaluations are recorded with a +inf sentinel and excluded from model
training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .errors import NumericalError, ObjectiveError
from .gp import GPFitConfig, GPModel, fit_gp
from .lcm import LCMFitConfig, LCMModel, extend_model, fit_lcm, _gp_as_lcm
from .objectives import EvaluationRecord, Objective, evaluate
from .sampling import (
    RngState,
    centered_sample,
    constrained_sample,
    lhs,
    sample_inputs_heterotropic,
    sample_tasks,
)
from .spaces import Configuration, ParameterSpace


@dataclass(frozen=True)
class Budget:
    """Evaluation budget per task; stopping is evaluation-count only."""

    max_evaluations: int
    pilot: int

    def __post_init__(self):
        if not 1 <= self.pilot <= self.max_evaluations:
            raise ValueError("budget requires 1 <= pilot <= max_evaluations")


@dataclass(frozen=True)
class PsoConfig:
    """Particle swarm settings for the inner acquisition search."""

    particles: int = 30
    iterations: int = 50
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5

    def __post_init__(self):
        if self.particles < 1 or self.iterations < 0:
            raise ValueError("swarm size and iteration count must be positive")
        if not (0.0 < self.inertia < 1.0 and self.cognitive > 0 and self.social > 0):
            raise ValueError("PSO coefficients outside stable ranges")


class RestartAdvice(Enum):
    CONTINUE_TLA2 = "continue_tla2"
    RESTART_MLA = "restart_mla"


@dataclass
class TuningResult:
    """Per-task incumbents plus the full evaluation trace of one run."""

    method: str
    seed: int
    tasks: tuple[Configuration, ...]
    best_configs: tuple[Configuration, ...]
    best_values: tuple[float, ...]
    trace: tuple[tuple[EvaluationRecord, ...], ...]
    total_objective_time: float
    model_snapshot: str | None = None

    def task_time(self, i: int) -> float:
        """Objective time spent on task i in this run (cached records excluded)."""
        return sum(v for rec in self.trace[i] if rec.phase != "pilot-cached"
                   for v in rec.rep_values if math.isfinite(v))

    def evaluations_performed(self, i: int) -> int:
        """Budget actually consumed for task i (cached warm-start records excluded)."""
        return sum(1 for rec in self.trace[i] if rec.phase != "pilot-cached")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "tasks": [t.as_dict() for t in self.tasks],
            "best_configs": [c.as_dict() for c in self.best_configs],
            "best_values": list(self.best_values),
            "total_objective_time": self.total_objective_time,
            "task_times": [self.task_time(i) for i in range(len(self.tasks))],
            "trace": [
                [
                    {
                        "config": rec.config.as_dict(),
                        "value": rec.value,
                        "rep_values": list(rec.rep_values),
                        "phase": rec.phase,
                        "fallback": rec.fallback,
                    }
                    for rec in task_trace
                ]
                for task_trace in self.trace
            ],
        }


Recorder = Callable[[int, EvaluationRecord], None]


def _finalize_result(method: str, seed: int, tasks, traces) -> TuningResult:
    best_configs, best_values = [], []
    total = 0.0
    for recs in traces:
        finite = [r for r in recs if math.isfinite(r.value)]
        if not finite:
            raise ObjectiveError(f"every evaluation failed for method {method!r}")
        best = min(finite, key=lambda r: r.value)
        best_configs.append(best.config)
        best_values.append(best.value)
        total += sum(v for r in recs if r.phase != "pilot-cached"
                     for v in r.rep_values if math.isfinite(v))
    return TuningResult(
        method=method,
        seed=seed,
        tasks=tuple(tasks),
        best_configs=tuple(best_configs),
        best_values=tuple(best_values),
        trace=tuple(tuple(recs) for recs in traces),
        total_objective_time=total,
    )


def _safe_evaluate(objective: Objective, task: Configuration, config: Configuration,
                   rng: RngState, phase: str, fallback: bool = False) -> EvaluationRecord:
    try:
        return evaluate(objective, task, config, rng, phase=phase, fallback=fallback)
    except ObjectiveError:
        return EvaluationRecord(task=task, config=config, value=float("inf"),
                                rep_values=(float("inf"),), phase=phase,
                                fallback=fallback)


# -- acquisition ----------------------------------------------------------------


def ei_value(mean, sd, best) -> np.ndarray:
    """Closed-form expected improvement for minimization.

    With z = (best - mean) / sd:  EI = (best - mean) Phi(z) + sd phi(z);
    at sd = 0 it degenerates to max(best - mean, 0).
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    mean, sd = np.broadcast_arrays(mean, sd)
    out = np.maximum(best - mean, 0.0)
    mask = sd > 0
    if np.any(mask):
        diff = best - mean[mask]
        z = diff / sd[mask]
        out = out.copy()
        out[mask] = diff * norm.cdf(z) + sd[mask] * norm.pdf(z)
    return np.maximum(out, 0.0)


def expected_improvement(model: GPModel | LCMModel, task_index: int, x,
                         best_y: float) -> float:
    """EI of configuration ``x`` for one task, on the model's internal scale."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if isinstance(model, LCMModel):
        mu, var = model.predict_latent(task_index, X)
    else:
        mu, var = model.predict_latent(X)
    best = float(model.transform.to_latent(best_y))
    return float(ei_value(mu, np.sqrt(var), best)[0])


def optimize_acquisition(predict: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
                         space: ParameterSpace, best_latent: float, pso: PsoConfig,
                         rng: RngState, context: Mapping | None = None,
                         ) -> tuple[Configuration, float, bool]:
    """Maximize EI over the encoded space with a particle swarm.

    Particles whose decoded configuration violates the constraints are never
    eligible as personal/global bests. If no particle is ever feasible the
    routine falls back to one rejection-sampled configuration (flagged).
    Returns (configuration, achieved EI, fallback flag).
    """
    d = space.n_free
    X = lhs(pso.particles, d, rng.child(0))
    V = np.zeros_like(X)
    gen = rng.child(1).generator()

    def score(P: np.ndarray) -> np.ndarray:
        configs = space.decode_many(P, context)
        feasible = np.fromiter((bool(space.check(c, context)) for c in configs),
                               dtype=bool, count=len(configs))
        ei = np.full(len(configs), -np.inf)
        if feasible.any():
            mu, var = predict(P[feasible])
            ei[feasible] = ei_value(mu, np.sqrt(var), best_latent)
        return ei

    ei = score(X)
    pbest_x, pbest_ei = X.copy(), ei.copy()
    g = int(np.argmax(pbest_ei))
    gbest_x, gbest_ei = pbest_x[g].copy(), float(pbest_ei[g])

    for _ in range(pso.iterations):
        r1 = gen.random(X.shape)
        r2 = gen.random(X.shape)
        V = pso.inertia * V + pso.cognitive * r1 * (pbest_x - X) + pso.social * r2 * (gbest_x - X)
        X = np.clip(X + V, 0.0, 1.0)
        ei = score(X)
        improved = ei > pbest_ei
        pbest_x[improved] = X[improved]
        pbest_ei[improved] = ei[improved]
        g = int(np.argmax(pbest_ei))
        if pbest_ei[g] > gbest_ei:
            gbest_x, gbest_ei = pbest_x[g].copy(), float(pbest_ei[g])

    if not np.isfinite(gbest_ei):
        config = constrained_sample(space, 1, rng.child(2), context=context)[0]
        return config, 0.0, True
    return space.decode(gbest_x, context), gbest_ei, False


# -- surrogate backends -----------------------------------------------------------


class _SingleTaskSurrogate:
    """EGO backend: one GP per run, refit warm-started every iteration."""

    def __init__(self, config: GPFitConfig, refit_restarts: int = 1,
                 refit_max_iter: int = 80):
        self.config = config
        self.refit_restarts = refit_restarts
        self.refit_max_iter = refit_max_iter
        self.model: GPModel | None = None

    def fit(self, X_lists: Sequence[np.ndarray], y_lists: Sequence[np.ndarray]) -> None:
        warm = (self.model.kernel, self.model.noise) if self.model is not None else None
        cfg = self.config if self.model is None else replace(
            self.config, restarts=self.refit_restarts, max_iter=self.refit_max_iter)
        self.model = fit_gp(X_lists[0], y_lists[0], cfg, warm_start=warm)

    def predictor(self, task_index: int):
        model = self.model
        return lambda P: model.predict_latent(P)

    def to_latent(self, y: float) -> float:
        return float(self.model.transform.to_latent(y))

    def final_model(self, tasks) -> LCMModel:
        return _gp_as_lcm(self.model, tasks[0])


class _MultiTaskSurrogate:
    """MLA backend: one LCM over all tasks, refit warm-started every iteration."""

    def __init__(self, tasks: Sequence[Configuration], Q: int, config: LCMFitConfig,
                 refit_restarts: int = 1, refit_max_iter: int = 80):
        self.tasks = tuple(tasks)
        self.Q = Q
        self.config = config
        self.refit_restarts = refit_restarts
        self.refit_max_iter = refit_max_iter
        self.model: LCMModel | None = None

    def fit(self, X_lists: Sequence[np.ndarray], y_lists: Sequence[np.ndarray]) -> None:
        warm = self.model.hyper if self.model is not None else None
        cfg = self.config if self.model is None else replace(
            self.config, restarts=self.refit_restarts, max_iter=self.refit_max_iter)
        self.model = fit_lcm(self.tasks, X_lists, y_lists, self.Q, cfg, warm_start=warm)

    def predictor(self, task_index: int):
        model = self.model
        return lambda P: model.predict_latent(task_index, P)

    def to_latent(self, y: float) -> float:
        return float(self.model.transform.to_latent(y))

    def final_model(self, tasks) -> LCMModel:
        return self.model


# -- the shared EGO loop -----------------------------------------------------------


PriorEvaluations = Mapping[tuple, Mapping[tuple, float]]


def _bo_loop(objective: Objective, tasks: Sequence[Configuration],
             input_space: ParameterSpace, budget: Budget, seed: int, backend,
             pso: PsoConfig, method: str,
             task_constants: Mapping | None = None,
             recorder: Recorder | None = None,
             prior: PriorEvaluations | None = None):
    """Sampling phase, then alternating model refits and per-task EI steps."""
    root = RngState(seed)
    contexts = [t.merged(task_constants) for t in tasks]
    pilot_sets = sample_inputs_heterotropic(input_space, tasks, budget.pilot,
                                            root.child(1), task_constants=task_constants)

    traces: list[list[EvaluationRecord]] = [[] for _ in tasks]
    X_ok: list[list[np.ndarray]] = [[] for _ in tasks]
    y_ok: list[list[float]] = [[] for _ in tasks]
    performed = [0] * len(tasks)

    def absorb(i: int, rec: EvaluationRecord, consumed: bool) -> None:
        traces[i].append(rec)
        if consumed:
            performed[i] += 1
            if recorder is not None:
                recorder(i, rec)
        if math.isfinite(rec.value):
            X_ok[i].append(input_space.encode(rec.config))
            y_ok[i].append(rec.value)

    for i, (task, pilots) in enumerate(zip(tasks, pilot_sets)):
        cached = prior.get(task.key(), {}) if prior else {}
        for j, config in enumerate(pilots):
            hit = cached.get(config.key())
            if hit is not None:
                rec = EvaluationRecord(task=task, config=config, value=hit,
                                       rep_values=(hit,), phase="pilot-cached")
                absorb(i, rec, consumed=False)
            else:
                rec = _safe_evaluate(objective, task, config,
                                     root.child(3, i, j), phase="pilot")
                absorb(i, rec, consumed=True)

    n_rounds = max(budget.max_evaluations - p for p in performed) if tasks else 0
    model = None
    if n_rounds > 0:
        for it in range(n_rounds):
            data_X = [np.array(xs) for xs in X_ok]
            data_y = [np.array(ys) for ys in y_ok]
            if any(len(ys) == 0 for ys in data_y):
                raise NumericalError("a task has no successful evaluations to model")
            backend.fit(data_X, data_y)
            for i, task in enumerate(tasks):
                if performed[i] >= budget.max_evaluations:
                    continue
                best_latent = backend.to_latent(min(y_ok[i]))
                config, _, fallback = optimize_acquisition(
                    backend.predictor(i), input_space, best_latent, pso,
                    root.child(2, it, i), context=contexts[i])
                rec = _safe_evaluate(objective, task, config,
                                     root.child(4, it, i), phase="adaptive",
                                     fallback=fallback)
                absorb(i, rec, consumed=True)
        backend.fit([np.array(xs) for xs in X_ok], [np.array(ys) for ys in y_ok])
        model = backend.final_model(tasks)

    result = _finalize_result(method, seed, tasks, traces)
    return result, model


# -- public tuners -------------------------------------------------------------------


def default_pilot(input_space: ParameterSpace) -> int:
    """Three samples per effective input dimension, the usual pilot sizing."""
    return 3 * input_space.n_free


def mla(objective: Objective, task_space: ParameterSpace, input_space: ParameterSpace,
        n_tasks: int | None = None, budget: int = 20, pilot: int | None = None,
        Q: int | None = None, seed: int = 0, tasks: Sequence[Configuration] | None = None,
        pso: PsoConfig | None = None, lcm_config: LCMFitConfig | None = None,
        gp_config: GPFitConfig | None = None, recorder: Recorder | None = None,
        prior: PriorEvaluations | None = None) -> tuple[TuningResult, LCMModel | None]:
    """Multitask autotuning: joint LCM surrogate over a set of tasks.

    Phase 1 draws the tasks (LHS over the task space, unless given) and an
    independent pilot design per task; phases 2 and 3 then alternate model
    refits with one EI-chosen evaluation per task until the budget is spent.
    Returns the per-task incumbents and the final model (None if the budget
    was exhausted by the pilot alone).
    """
    root = RngState(seed)
    if tasks is None:
        if n_tasks is None:
            raise ValueError("either tasks or n_tasks is required")
        tasks = sample_tasks(task_space, n_tasks, root.child(0))
    tasks = list(tasks)
    pilot = pilot if pilot is not None else default_pilot(input_space)
    bud = Budget(budget, min(pilot, budget))
    pso = pso or PsoConfig()
    Q = Q if Q is not None else min(len(tasks), 3)

    if len(tasks) == 1 and Q == 1:
        # LCM(delta=1, Q=1) is exactly a single-output GP; use it directly so
        # the reduction to EGO holds trace-for-trace.
        backend = _SingleTaskSurrogate(gp_config or GPFitConfig())
    else:
        backend = _MultiTaskSurrogate(tasks, Q, lcm_config or LCMFitConfig())
    return _bo_loop(objective, tasks, input_space, bud, seed, backend, pso, "mla",
                    task_constants=task_space.constants, recorder=recorder, prior=prior)


def ego_single(objective: Objective, task: Configuration, input_space: ParameterSpace,
               budget: int = 20, pilot: int | None = None, seed: int = 0,
               pso: PsoConfig | None = None, gp_config: GPFitConfig | None = None,
               task_constants: Mapping | None = None, recorder: Recorder | None = None,
               prior: PriorEvaluations | None = None) -> tuple[TuningResult, GPModel | None]:
    """Single-task EGO baseline: GP surrogate plus EI loop."""
    pilot = pilot if pilot is not None else default_pilot(input_space)
    bud = Budget(budget, min(pilot, budget))
    backend = _SingleTaskSurrogate(gp_config or GPFitConfig())
    result, _ = _bo_loop(objective, [task], input_space, bud, seed, backend,
                         pso or PsoConfig(), "ego", task_constants=task_constants,
                         recorder=recorder, prior=prior)
    return result, backend.model


def random_search(objective: Objective, task: Configuration, input_space: ParameterSpace,
                  budget: int = 20, seed: int = 0,
                  task_constants: Mapping | None = None,
                  recorder: Recorder | None = None) -> TuningResult:
    """Uniform (LHS-based, constraint-respecting) random sampling baseline."""
    root = RngState(seed)
    context = task.merged(task_constants)
    configs = constrained_sample(input_space, budget, root.child(1), context=context)
    trace = []
    for j, config in enumerate(configs):
        rec = _safe_evaluate(objective, task, config, root.child(3, 0, j), phase="random")
        trace.append(rec)
        if recorder is not None:
            recorder(0, rec)
    return _finalize_result("random", seed, [task], [trace])


# -- TLA1: modeling the optima ------------------------------------------------------


@dataclass
class OptimumPredictor:
    """Per-input-dimension GPs mapping encoded tasks to encoded optima."""

    task_space: ParameterSpace
    input_space: ParameterSpace
    gps: tuple[GPModel, ...]
    train_tasks: tuple[Configuration, ...]
    train_optima: tuple[Configuration, ...]

    def __post_init__(self):
        if len(self.gps) != self.input_space.n_free:
            raise ValueError("one GP per effective input dimension is required")

    @property
    def n_train(self) -> int:
        return len(self.train_tasks)


@dataclass(frozen=True)
class Tla1Prediction:
    """Predicted optimal configuration with per-dimension confidence."""

    config: Configuration
    encoded: tuple[float, ...]
    variances: tuple[float, ...]
    repaired: bool


def tla1_fit(tasks: Sequence[Configuration], optima: Sequence[Configuration],
             task_space: ParameterSpace, input_space: ParameterSpace,
             gp_config: GPFitConfig | None = None) -> OptimumPredictor:
    """Fit one GP per input dimension on (encoded task -> encoded optimum).

    Derived input dimensions are excluded; they are resolved after prediction.
    """
    if len(tasks) != len(optima):
        raise ValueError("tasks and optima must pair up")
    if len(tasks) < 2:
        raise ValueError("tla1_fit needs at least two tuned tasks")
    T = np.array([task_space.encode(t) for t in tasks])
    O = np.array([input_space.encode(o) for o in optima])
    cfg = gp_config or GPFitConfig()
    cfg = replace(cfg, log_transform=False)
    gps = tuple(fit_gp(T, O[:, j], cfg) for j in range(input_space.n_free))
    return OptimumPredictor(task_space=task_space, input_space=input_space,
                            gps=gps, train_tasks=tuple(tasks),
                            train_optima=tuple(optima))


def tla1_predict(predictor: OptimumPredictor, task: Configuration,
                 rng: RngState | None = None,
                 task_constants: Mapping | None = None) -> Tla1Prediction:
    """Predict the optimal configuration of an untuned task; no evaluations.

    If the decoded prediction violates the constraints, the nearest valid
    configuration (encoded distance, among a rejection-sampled candidate
    batch) is returned instead and flagged.
    """
    t = np.atleast_2d(predictor.task_space.encode(task))
    mean = np.empty(predictor.input_space.n_free)
    var = np.empty_like(mean)
    for j, gp in enumerate(predictor.gps):
        mu, v = gp.predict(t)
        mean[j] = mu[0]
        var[j] = v[0]
    mean = np.clip(mean, 0.0, 1.0)
    context = task.merged(task_constants)
    config = predictor.input_space.decode(mean, context)
    if predictor.input_space.check(config, context):
        return Tla1Prediction(config, tuple(mean), tuple(var), repaired=False)
    rng = rng or RngState(0)
    candidates = constrained_sample(predictor.input_space, 64, rng.child(5),
                                    context=context)
    encoded = np.array([predictor.input_space.encode(c) for c in candidates])
    nearest = int(np.argmin(np.sum((encoded - mean) ** 2, axis=1)))
    return Tla1Prediction(candidates[nearest], tuple(encoded[nearest]), tuple(var),
                          repaired=True)


# -- TLA2: tuning a new task on top of an existing model ------------------------------


def tla2(objective: Objective, base_model: LCMModel, predictor: OptimumPredictor,
         new_task: Configuration, input_space: ParameterSpace, budget: int,
         split: int, seed: int = 0, pso: PsoConfig | None = None,
         lcm_config: LCMFitConfig | None = None,
         task_constants: Mapping | None = None,
         recorder: Recorder | None = None) -> tuple[TuningResult, LCMModel]:
    """Transfer tuning: centered sampling around the predicted optimum, then
    an EI loop on the incrementally extended multitask model.

    Step 1 spends ``split`` evaluations on a normal sampling centered at the
    TLA1 prediction; step 2 extends the base model with the new task (old
    hyperparameters frozen) and runs EGO for the remaining budget, re-learning
    only the new task's coupling and noise as data accrues.
    """
    if not 1 <= split <= budget:
        raise ValueError("tla2 requires 1 <= split <= budget")
    root = RngState(seed)
    pso = pso or PsoConfig()
    config_fit = lcm_config or LCMFitConfig()
    context = new_task.merged(task_constants)

    prediction = tla1_predict(predictor, new_task, root.child(0),
                              task_constants=task_constants)
    centered = centered_sample(input_space, prediction.config, split, root.child(1),
                               context=context)

    trace: list[EvaluationRecord] = []
    X_new: list[np.ndarray] = []
    y_new: list[float] = []

    def absorb(rec: EvaluationRecord) -> None:
        trace.append(rec)
        if recorder is not None:
            recorder(0, rec)
        if math.isfinite(rec.value):
            X_new.append(input_space.encode(rec.config))
            y_new.append(rec.value)

    for j, config in enumerate(centered):
        absorb(_safe_evaluate(objective, new_task, config, root.child(3, 0, j),
                              phase="centered"))

    if not y_new:
        raise ObjectiveError("every centered evaluation failed; cannot extend the model")

    new_index = base_model.n_tasks
    extended = extend_model(base_model, new_task, np.array(X_new), np.array(y_new),
                            config_fit)
    warm = (extended.hyper.W[:, -1].copy(), float(extended.hyper.D[-1]))
    refit_cfg = replace(config_fit, extension_restarts=1, max_iter=60)

    for it in range(budget - split):
        best_latent = float(extended.transform.to_latent(min(y_new)))
        candidate, _, fallback = optimize_acquisition(
            lambda P: extended.predict_latent(new_index, P), input_space,
            best_latent, pso, root.child(2, it, 0), context=context)
        absorb(_safe_evaluate(objective, new_task, candidate, root.child(4, it, 0),
                              phase="adaptive", fallback=fallback))
        extended = extend_model(base_model, new_task, np.array(X_new),
                                np.array(y_new), refit_cfg, warm_start=warm)
        warm = (extended.hyper.W[:, -1].copy(), float(extended.hyper.D[-1]))

    result = _finalize_result("tla2", seed, [new_task], [trace])
    return result, extended


def restart_advice(tasks_added: int, delta_initial: int,
                   cost_ratio: float | None = None,
                   added_ratio_threshold: float = 0.5,
                   cost_ratio_threshold: float = 0.1) -> RestartAdvice:
    """Continue extending with TLA2, or rebuild the multitask model from scratch?

    Restart once the added tasks exceed ``added_ratio_threshold`` of the
    initial task count, or when refitting is cheap relative to an objective
    evaluation (``cost_ratio`` = model-fit cost / mean evaluation cost below
    ``cost_ratio_threshold``, the expensive-application regime).
    """
    if tasks_added > added_ratio_threshold * delta_initial:
        return RestartAdvice.RESTART_MLA
    if cost_ratio is not None and cost_ratio < cost_ratio_threshold:
        return RestartAdvice.RESTART_MLA
    return RestartAdvice.CONTINUE_TLA2


def collect_optima(result: TuningResult) -> tuple[list[Configuration], list[Configuration]]:
    """(tasks, incumbent configurations) pairs for TLA1 training."""
    return list(result.tasks), list(result.best_configs)
