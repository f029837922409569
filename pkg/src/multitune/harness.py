"""Experiment harness: configuration, history persistence, runs and reports.

A run executes one tuning method end to end, appends every objective
evaluation to a line-delimited history file and writes deterministic result
files (no timestamps) so that seeded experiments reproduce byte-identically.
Comparison reports mirror the quality/cost ratio methodology: per-task ratios
of best value and of total objective time between two methods.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ObjectiveError
from .gp import GPFitConfig
from .lcm import LCMFitConfig, LCMModel
from .objectives import (
    DEFAULT_COEFFICIENTS,
    EvaluationRecord,
    MachineCoefficients,
    Objective,
    command_objective,
    evaluate,
    qr_objective,
    qr_spaces,
    synthetic_family,
)
from .sampling import RngState, sample_tasks, constrained_sample
from .spaces import Configuration, ParameterSpace, load_space
from .tuner import (
    PsoConfig,
    TuningResult,
    ego_single,
    mla,
    random_search,
    tla1_fit,
    tla1_predict,
    tla2,
)

HISTORY_SCHEMA = "multitune-history"
HISTORY_VERSION = 1
HISTORY_DIR_ENV = "MULTITUNE_HISTORY_DIR"

_CANONICAL = {"sort_keys": True, "separators": (",", ":")}


def _dumps(obj) -> str:
    return json.dumps(obj, **_CANONICAL)


class TuningHistory:
    """Append-only evaluation log, one canonical JSON record per line.

    The first line is a schema-version header. Reloading reproduces the
    in-memory state exactly and save -> load -> save is byte-identical.
    """

    def __init__(self, path: str | os.PathLike | None = None, timestamps: bool = True):
        self.records: list[dict] = []
        self.path = Path(path) if path is not None else None
        self.timestamps = timestamps
        if self.path is not None:
            if self.path.exists():
                loaded = TuningHistory.load(self.path)
                self.records = loaded.records
            else:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "w") as fh:
                    fh.write(self._header_line() + "\n")

    @staticmethod
    def _header_line() -> str:
        return _dumps({"schema": HISTORY_SCHEMA, "version": HISTORY_VERSION})

    def append(self, record: Mapping[str, Any]) -> None:
        record = dict(record)
        if self.timestamps and "ts" not in record:
            record["ts"] = time.time()
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(_dumps(record) + "\n")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @classmethod
    def load(cls, path) -> "TuningHistory":
        hist = cls()
        with open(path) as fh:
            header = fh.readline()
            try:
                head = json.loads(header)
            except json.JSONDecodeError:
                raise ConfigError(f"{path}: not a history file (bad header)") from None
            if head.get("schema") != HISTORY_SCHEMA:
                raise ConfigError(f"{path}: unexpected schema {head.get('schema')!r}")
            if head.get("version") != HISTORY_VERSION:
                raise ConfigError(f"{path}: unsupported history version {head.get('version')!r}")
            for line_no, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    hist.records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}: line {line_no}: {exc.msg}") from None
        hist.path = None  # loaded snapshots do not auto-append
        return hist

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self._header_line() + "\n")
            for rec in self.records:
                fh.write(_dumps(rec) + "\n")

    def prior_evaluations(self, space_hash: str, objective_id: str,
                          require_match: bool = False) -> dict:
        """Map {task key -> {config key -> best value}} for warm starts.

        With ``require_match`` a non-empty history that contains no record for
        this (space, objective) pair is refused, which catches accidental
        reuse of incompatible histories.
        """
        prior: dict = {}
        matched = 0
        for rec in self.records:
            if rec.get("space") != space_hash or rec.get("objective") != objective_id:
                continue
            matched += 1
            value = rec.get("value")
            if value is None or not math.isfinite(value):
                continue
            tkey = Configuration(rec["task"]).key()
            ckey = Configuration(rec["config"]).key()
            bucket = prior.setdefault(tkey, {})
            bucket[ckey] = min(value, bucket.get(ckey, math.inf))
        if require_match and self.records and matched == 0:
            raise ConfigError(
                "warm-start history does not match this experiment "
                f"(space hash {space_hash}, objective {objective_id!r})"
            )
        return prior


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one tuning run."""

    method: str
    objective: str = "qr"
    objective_params: dict = field(default_factory=dict)
    task_space_file: str | None = None
    input_space_file: str | None = None
    n_tasks: int = 8
    tasks: list[dict] | None = None
    budget: int = 20
    pilot: int | None = None
    split: int | None = None
    Q: int | None = None
    seed: int = 0
    resolution: int = 8
    grid_cap: int = 200_000
    out_dir: str = "runs"
    run_id: str | None = None
    history_path: str | None = None
    warm_start_from: str | None = None
    base_run: str | None = None
    pso: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    verify_prediction: bool = True
    timestamps: bool = True

    METHODS = ("mla", "ego", "random", "tla1", "tla2", "grid")
    OBJECTIVES = ("qr", "qr-noisy", "shifted-quadratic", "multimodal", "command")

    def validate(self) -> None:
        if self.method not in self.METHODS:
            raise ConfigError(f"method: expected one of {self.METHODS}, got {self.method!r}")
        if self.objective not in self.OBJECTIVES:
            raise ConfigError(f"objective: expected one of {self.OBJECTIVES}, got {self.objective!r}")
        if self.budget < 1:
            raise ConfigError("budget: must be >= 1")
        if self.pilot is not None and not 1 <= self.pilot <= self.budget:
            raise ConfigError(f"pilot: must satisfy 1 <= pilot <= budget, got {self.pilot}")
        if self.method == "tla2":
            split = self.split if self.split is not None else self.budget // 2
            if not 1 <= split <= self.budget:
                raise ConfigError(f"split: must satisfy 1 <= split <= budget, got {split}")
        if self.method in ("tla1", "tla2") and not self.base_run:
            raise ConfigError(f"base_run: required for method {self.method!r}")
        if self.method == "grid" and self.resolution < 1:
            raise ConfigError(f"resolution: must be >= 1, got {self.resolution}")
        if self.n_tasks < 1 and not self.tasks:
            raise ConfigError("n_tasks: must be >= 1 when tasks are not given")
        for name in ("task_space_file", "input_space_file", "warm_start_from"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{name}: file {value!r} does not exist")
        if self.base_run is not None and not Path(self.base_run).exists():
            raise ConfigError(f"base_run: directory {self.base_run!r} does not exist")
        if self.objective == "command" and not self.objective_params.get("argv"):
            raise ConfigError("objective_params.argv: required for command objectives")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "method" not in data:
            raise ConfigError("method: field is required")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(data)


@dataclass
class Experiment:
    """Resolved spaces/objective for a config, plus bookkeeping handles."""

    config: ExperimentConfig
    objective: Objective
    task_space: ParameterSpace
    input_space: ParameterSpace

    @property
    def space_hash(self) -> str:
        return self.input_space.content_hash()


def build_experiment(config: ExperimentConfig) -> Experiment:
    """Resolve the objective and spaces named by a validated config."""
    params = dict(config.objective_params)
    if config.objective in ("qr", "qr-noisy"):
        coeffs = (MachineCoefficients(**params["coefficients"])
                  if "coefficients" in params else DEFAULT_COEFFICIENTS)
        task_space, input_space = qr_spaces(
            nodes=params.get("nodes", 1), cores=params.get("cores", 24),
            m_range=tuple(params.get("m_range", (100, 2000))),
            max_block=params.get("max_block", 512))
        sigma = params.get("noise_sigma", 0.1 if config.objective == "qr-noisy" else 0.0)
        objective = qr_objective(coeffs, noise_sigma=sigma,
                                 repetitions=params.get("repetitions", 3))
    elif config.objective in ("shifted-quadratic", "multimodal"):
        kind = "shifted-quadratic" if config.objective == "shifted-quadratic" \
            else "task-scaled multimodal"
        family = synthetic_family(kind,
                                  task_dim=params.get("task_dim", 1),
                                  input_dim=params.get("input_dim", 2),
                                  base=params.get("base", 0.2),
                                  slope=params.get("slope", 0.6))
        objective, task_space, input_space = (family.objective, family.task_space,
                                              family.input_space)
    else:  # command
        if not (config.task_space_file and config.input_space_file):
            raise ConfigError("command objectives require task_space_file and input_space_file")
        objective = command_objective(params["argv"],
                                      timeout=params.get("timeout", 60.0),
                                      deterministic=params.get("deterministic", False),
                                      repetitions=params.get("repetitions", 3))
        task_space = load_space(config.task_space_file)
        input_space = load_space(config.input_space_file)
        return Experiment(config, objective, task_space, input_space)

    if config.task_space_file:
        task_space = load_space(config.task_space_file)
    if config.input_space_file:
        input_space = load_space(config.input_space_file)
    return Experiment(config, objective, task_space, input_space)


# -- grid search ------------------------------------------------------------------


def grid_search(objective: Objective, task: Configuration, input_space: ParameterSpace,
                resolution: int, cap: int = 200_000,
                task_constants: Mapping | None = None,
                recorder=None) -> TuningResult:
    """Evaluate every valid configuration of a regular encoded grid.

    ``resolution`` points per effective dimension (endpoints included);
    decoded duplicates (integer collapse) are evaluated once. Refuses grids
    larger than ``cap`` points.
    """
    if resolution < 1:
        raise ConfigError(f"resolution: must be >= 1, got {resolution}")
    d = input_space.n_free
    total = resolution**d
    if total > cap:
        raise ConfigError(f"grid of {total} points exceeds cap {cap}")
    axis = np.array([0.5]) if resolution == 1 else np.linspace(0.0, 1.0, resolution)
    context = task.merged(task_constants)
    seen = set()
    trace = []
    for combo in itertools.product(axis, repeat=d):
        config = input_space.decode(np.array(combo), context)
        key = config.key()
        if key in seen or not input_space.check(config, context):
            continue
        seen.add(key)
        rec = evaluate(objective, task, config, RngState(0), phase="grid")
        trace.append(rec)
        if recorder is not None:
            recorder(0, rec)
    if not trace:
        raise ObjectiveError("grid contained no valid configuration")
    from .tuner import _finalize_result

    return _finalize_result("grid", 0, [task], [trace])


# -- comparison reports --------------------------------------------------------------


@dataclass
class ComparisonReport:
    """Per-task quality/cost ratios of baseline A against method B.

    A quality ratio above one means B found the better configuration; a cost
    ratio above one means A spent more objective time.
    """

    label_a: str
    label_b: str
    tasks: list[dict]
    quality_ratios: list[float]
    cost_ratios: list[float]

    @property
    def wins_a(self) -> int:
        return sum(1 for r in self.quality_ratios if r < 1.0)

    @property
    def wins_b(self) -> int:
        return sum(1 for r in self.quality_ratios if r > 1.0)

    @property
    def ties(self) -> int:
        return sum(1 for r in self.quality_ratios if r == 1.0)

    @property
    def mean_quality_ratio(self) -> float:
        return float(np.mean(self.quality_ratios))

    @property
    def mean_cost_ratio(self) -> float:
        return float(np.mean(self.cost_ratios))

    def to_dict(self) -> dict:
        return {
            "label_a": self.label_a,
            "label_b": self.label_b,
            "tasks": self.tasks,
            "quality_ratios": self.quality_ratios,
            "cost_ratios": self.cost_ratios,
            "wins": {self.label_a: self.wins_a, self.label_b: self.wins_b,
                     "ties": self.ties},
            "mean_quality_ratio": self.mean_quality_ratio,
            "mean_cost_ratio": self.mean_cost_ratio,
        }

    def table(self) -> str:
        lines = [
            f"{'task':<40} {'quality A/B':>12} {'cost A/B':>10}",
            "-" * 64,
        ]
        for task, qr, cr in zip(self.tasks, self.quality_ratios, self.cost_ratios):
            desc = ",".join(f"{k}={v}" for k, v in sorted(task.items()))
            lines.append(f"{desc:<40} {qr:>12.4f} {cr:>10.4f}")
        lines.append("-" * 64)
        lines.append(
            f"wins {self.label_a}: {self.wins_a}   wins {self.label_b}: {self.wins_b}   "
            f"ties: {self.ties}   mean quality ratio: {self.mean_quality_ratio:.4f}   "
            f"mean cost ratio: {self.mean_cost_ratio:.4f}"
        )
        return "\n".join(lines)

    def plot_data(self) -> str:
        """CSV columns for a quality-vs-cost scatter (one point per task)."""
        lines = [
            f"# scatter: best-value ratio {self.label_a}/{self.label_b} (x) vs "
            f"objective-time ratio (y); x>1 means {self.label_b} found the better value",
            "task_index,quality_ratio,cost_ratio",
        ]
        for i, (qr, cr) in enumerate(zip(self.quality_ratios, self.cost_ratios)):
            lines.append(f"{i},{qr!r},{cr!r}")
        return "\n".join(lines) + "\n"


def _flatten_results(payload: Mapping[str, Any]) -> list[dict]:
    """One row per task across all result entries of a results payload."""
    rows = []
    for entry in payload["results"]:
        for i, task in enumerate(entry["tasks"]):
            rows.append({
                "task": task,
                "best_value": entry["best_values"][i],
                "best_config": entry["best_configs"][i],
                "time": entry["task_times"][i],
                "method": entry["method"],
                "budget": len([r for r in entry["trace"][i] if r["phase"] != "pilot-cached"]),
            })
    return rows


def compare(results_a: Mapping[str, Any], results_b: Mapping[str, Any],
            label_a: str = "A", label_b: str = "B") -> ComparisonReport:
    """Quality and cost ratios between two runs over the same task list."""
    rows_a = _flatten_results(results_a)
    rows_b = _flatten_results(results_b)
    if len(rows_a) != len(rows_b):
        raise ConfigError(f"task count mismatch: {len(rows_a)} vs {len(rows_b)}")
    tasks, quality, cost = [], [], []
    for ra, rb in zip(rows_a, rows_b):
        if ra["task"] != rb["task"]:
            raise ConfigError(f"task mismatch: {ra['task']} vs {rb['task']}")
        tasks.append(ra["task"])
        quality.append(ra["best_value"] / rb["best_value"])
        cost.append(ra["time"] / rb["time"] if rb["time"] else math.inf)
    return ComparisonReport(label_a, label_b, tasks, quality, cost)


def report_optima_table(payloads: Sequence[Mapping[str, Any]]) -> str:
    """Best-configuration table across methods: method, budget, value, parameters."""
    lines = [f"{'method':<10} {'budget':>6} {'best value':>14}  best parameters",
             "-" * 70]
    for payload in payloads:
        if payload.get("method") == "tla1":
            for pred in payload["predictions"]:
                params = ",".join(f"{k}={v}" for k, v in sorted(pred["config"].items()))
                value = pred.get("verify_value")
                shown = f"{value:.6g}" if value is not None else "n/a"
                lines.append(f"{'tla1':<10} {0:>6} {shown:>14}  {params}")
            continue
        for row in _flatten_results(payload):
            params = ",".join(f"{k}={v}" for k, v in sorted(row["best_config"].items()))
            lines.append(
                f"{row['method']:<10} {row['budget']:>6} {row['best_value']:>14.6g}  {params}"
            )
    return "\n".join(lines)


# -- run orchestration -----------------------------------------------------------------


def _history_location(config: ExperimentConfig, run_dir: Path) -> Path:
    if config.history_path:
        return Path(config.history_path)
    env_dir = os.environ.get(HISTORY_DIR_ENV)
    if env_dir:
        return Path(env_dir) / "history.jsonl"
    return run_dir / "history.jsonl"


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class RunOutput:
    run_dir: Path
    results_path: Path
    history_path: Path
    payload: dict


def run(config: ExperimentConfig) -> RunOutput:
    """Execute one configured experiment end to end and persist its outputs."""
    config.validate()
    exp = build_experiment(config)
    run_id = config.run_id or f"{config.method}-seed{config.seed}"
    run_dir = Path(config.out_dir) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    history = TuningHistory(_history_location(config, run_dir),
                            timestamps=config.timestamps)

    eval_counter = itertools.count()

    def recorder_for(method: str, snapshot: str | None = None):
        def recorder(task_index: int, rec: EvaluationRecord) -> None:
            history.append({
                "method": method,
                "run_id": run_id,
                "task": rec.task.as_dict(),
                "config": rec.config.as_dict(),
                "value": rec.value,
                "rep_values": list(rec.rep_values),
                "phase": rec.phase,
                "eval_index": next(eval_counter),
                "seed": config.seed,
                "space": exp.space_hash,
                "objective": exp.objective.id,
                "snapshot": snapshot,
            })
        return recorder

    prior = None
    if config.warm_start_from:
        prior = warm_start(config.warm_start_from, exp)

    pso = PsoConfig(**config.pso) if config.pso else PsoConfig()
    fit_kwargs = dict(config.fit)
    fit_kwargs.setdefault("seed", config.seed)
    if exp.objective.id.startswith("qr"):
        fit_kwargs.setdefault("log_transform", True)
    unknown = set(fit_kwargs) - set(LCMFitConfig.__dataclass_fields__) \
        - set(GPFitConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"fit: unknown fields {sorted(unknown)}")
    lcm_cfg = LCMFitConfig(**{k: v for k, v in fit_kwargs.items()
                              if k in LCMFitConfig.__dataclass_fields__})
    gp_cfg = GPFitConfig(**{k: v for k, v in fit_kwargs.items()
                            if k in GPFitConfig.__dataclass_fields__})

    explicit_tasks = ([Configuration(t) for t in config.tasks]
                      if config.tasks else None)
    payload: dict[str, Any] = {"method": config.method, "seed": config.seed,
                               "space": exp.space_hash, "objective": exp.objective.id}
    results_path = run_dir / "results.json"

    if config.method == "mla":
        result, model = mla(exp.objective, exp.task_space, exp.input_space,
                            n_tasks=config.n_tasks, budget=config.budget,
                            pilot=config.pilot, Q=config.Q, seed=config.seed,
                            tasks=explicit_tasks, pso=pso, lcm_config=lcm_cfg,
                            gp_config=gp_cfg, recorder=recorder_for("mla", "model.json"),
                            prior=prior)
        result.model_snapshot = "model.json"
        if model is not None:
            _write_json(run_dir / "model.json", model.to_dict())
        payload["results"] = [result.to_dict()]

    elif config.method in ("ego", "random", "grid"):
        tasks = explicit_tasks or sample_tasks(exp.task_space, config.n_tasks,
                                               RngState(config.seed).child(0))
        entries = []
        for k, task in enumerate(tasks):
            if config.method == "ego":
                result, _ = ego_single(exp.objective, task, exp.input_space,
                                       budget=config.budget, pilot=config.pilot,
                                       seed=config.seed + k, pso=pso, gp_config=gp_cfg,
                                       task_constants=exp.task_space.constants,
                                       recorder=recorder_for("ego"), prior=prior)
            elif config.method == "random":
                result = random_search(exp.objective, task, exp.input_space,
                                       budget=config.budget, seed=config.seed + k,
                                       task_constants=exp.task_space.constants,
                                       recorder=recorder_for("random"))
            else:
                result = grid_search(exp.objective, task, exp.input_space,
                                     resolution=config.resolution, cap=config.grid_cap,
                                     task_constants=exp.task_space.constants,
                                     recorder=recorder_for("grid"))
            entries.append(result.to_dict())
        payload["results"] = entries

    elif config.method == "tla1":
        base_model, base_results = _load_base_run(config.base_run, exp)
        predictor = _predictor_from(base_model, base_results, exp, gp_cfg)
        tasks = explicit_tasks or sample_tasks(exp.task_space, config.n_tasks,
                                               RngState(config.seed).child(0))
        predictions = []
        recorder = recorder_for("tla1")
        for k, task in enumerate(tasks):
            pred = tla1_predict(predictor, task, RngState(config.seed).child(7, k),
                                task_constants=exp.task_space.constants)
            entry = {
                "task": task.as_dict(),
                "config": pred.config.as_dict(),
                "variances": list(pred.variances),
                "repaired": pred.repaired,
                "budget": 0,
            }
            if config.verify_prediction:
                rec = evaluate(exp.objective, task, pred.config,
                               RngState(config.seed).child(8, k), phase="report")
                recorder(k, rec)
                entry["verify_value"] = rec.value
            predictions.append(entry)
        payload["predictions"] = predictions

    elif config.method == "tla2":
        base_model, base_results = _load_base_run(config.base_run, exp)
        predictor = _predictor_from(base_model, base_results, exp, gp_cfg)
        tasks = explicit_tasks or sample_tasks(exp.task_space, config.n_tasks,
                                               RngState(config.seed).child(0))
        split = config.split if config.split is not None else config.budget // 2
        entries = []
        model = base_model
        for k, task in enumerate(tasks):
            result, model = tla2(exp.objective, model, predictor, task,
                                 exp.input_space, budget=config.budget, split=split,
                                 seed=config.seed + k, pso=pso, lcm_config=lcm_cfg,
                                 task_constants=exp.task_space.constants,
                                 recorder=recorder_for("tla2", "model.json"))
            entries.append(result.to_dict())
            # the freshly tuned task feeds the optimum predictor from now on
            predictor = _refresh_predictor(predictor, task, result.best_configs[0],
                                           exp, gp_cfg)
        _write_json(run_dir / "model.json", model.to_dict())
        payload["results"] = entries

    _write_json(results_path, payload)
    _write_json(run_dir / "meta.json", {"config": asdict(config),
                                        "space": exp.space_hash,
                                        "objective": exp.objective.id})
    return RunOutput(run_dir=run_dir, results_path=results_path,
                     history_path=history.path, payload=payload)


def warm_start(history_path: str | os.PathLike, exp: Experiment) -> dict:
    """Prior evaluations for pilot reuse; refuses incompatible histories."""
    history = TuningHistory.load(history_path)
    return history.prior_evaluations(exp.space_hash, exp.objective.id,
                                     require_match=True)


def _load_base_run(base_run: str, exp: Experiment) -> tuple[LCMModel, dict]:
    base = Path(base_run)
    model_path = base / "model.json"
    results_path = base / "results.json"
    if not model_path.exists() or not results_path.exists():
        raise ConfigError(f"base_run: {base} must contain model.json and results.json")
    meta_path = base / "meta.json"
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
        if meta.get("space") != exp.space_hash:
            raise ConfigError("base_run: input space differs from this experiment")
        if meta.get("objective") != exp.objective.id:
            raise ConfigError("base_run: objective differs from this experiment")
    with open(model_path) as fh:
        model = LCMModel.from_dict(json.load(fh))
    with open(results_path) as fh:
        results = json.load(fh)
    return model, results


def _predictor_from(base_model: LCMModel, base_results: Mapping[str, Any],
                    exp: Experiment, gp_cfg: GPFitConfig):
    rows = _flatten_results(base_results)
    tasks = [Configuration(r["task"]) for r in rows]
    optima = [Configuration(r["best_config"]) for r in rows]
    return tla1_fit(tasks, optima, exp.task_space, exp.input_space, gp_cfg)


def _refresh_predictor(predictor, new_task: Configuration, new_optimum: Configuration,
                       exp: Experiment, gp_cfg: GPFitConfig):
    """Refit the optimum predictor with one freshly tuned task included."""
    return tla1_fit(list(predictor.train_tasks) + [new_task],
                    list(predictor.train_optima) + [new_optimum],
                    exp.task_space, exp.input_space, gp_cfg)


def sample_command(space_path: str, n: int, seed: int,
                   context: Mapping | None = None) -> list[dict]:
    """Backs the CLI `sample` subcommand: n valid configurations as dicts."""
    space = load_space(space_path)
    configs = constrained_sample(space, n, RngState(seed), context=context)
    return [c.as_dict() for c in configs]
