"""Task, input and output space definitions.

A :class:`ParameterSpace` declares named dimensions (real, integer or
categorical), opaque constraint predicates and derived-dimension rules.
Configurations are encoded to the unit cube for sampling and modeling and
decoded back to native units; constraint satisfaction is handled by
rejection, never by solving.

Spaces are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, InvalidConfigurationError

REAL = "real"
INTEGER = "integer"
CATEGORICAL = "categorical"
_KINDS = (REAL, INTEGER, CATEGORICAL)

# Names usable inside constraint / derived-rule expressions.
_SAFE_NAMES: dict[str, Any] = {
    "abs": abs,
    "min": min,
    "max": max,
    "round": round,
    "floor": math.floor,
    "ceil": math.ceil,
    "sqrt": math.sqrt,
    "log": math.log,
    "log2": math.log2,
}

_INT_TOL = 1e-9


def _compile_expression(expression: str, what: str):
    try:
        return compile(expression, f"<{what}>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse {what} expression {expression!r}: {exc}") from None


def _eval_expression(code, env: Mapping[str, Any]):
    scope = dict(_SAFE_NAMES)
    scope.update(env)
    return eval(code, {"__builtins__": {}}, scope)


@dataclass(frozen=True)
class Dimension:
    """One named axis of a space.

    ``low``/``high`` bound real and integer dimensions; ``categories`` is the
    ordered label list of a categorical dimension.
    """

    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    categories: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"dimension {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.categories:
                raise ConfigError(f"dimension {self.name!r}: categories must be non-empty")
            if len(set(self.categories)) != len(self.categories):
                raise ConfigError(f"dimension {self.name!r}: categories must be unique")
            object.__setattr__(self, "categories", tuple(self.categories))
        else:
            if self.low is None or self.high is None:
                raise ConfigError(f"dimension {self.name!r}: bounds required for {self.kind}")
            if not self.low < self.high:
                raise ConfigError(
                    f"dimension {self.name!r}: low must be < high, got [{self.low}, {self.high}]"
                )

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def contains(self, value) -> bool:
        """True if ``value`` is a legal native value of this dimension."""
        if self.kind == CATEGORICAL:
            return value in self.categories
        if not isinstance(value, (int, float, np.integer, np.floating)):
            return False
        v = float(value)
        if not math.isfinite(v):
            return False
        if self.kind == INTEGER and abs(v - round(v)) > _INT_TOL:
            return False
        return self.low - _INT_TOL <= v <= self.high + _INT_TOL

    def encode_value(self, value) -> float:
        """Map a native value to [0, 1]; categorical labels map to bin midpoints."""
        if not self.contains(value):
            raise InvalidConfigurationError(
                f"dimension {self.name!r}: value {value!r} out of bounds"
            )
        if self.kind == CATEGORICAL:
            idx = self.categories.index(value)
            return (idx + 0.5) / self.n_categories
        return (float(value) - self.low) / (self.high - self.low)

    def decode_unit(self, u: float):
        """Inverse of :meth:`encode_value`; clamps at the cube boundary."""
        u = min(max(float(u), 0.0), 1.0)
        if self.kind == CATEGORICAL:
            idx = min(int(math.floor(u * self.n_categories)), self.n_categories - 1)
            return self.categories[idx]
        value = self.low + u * (self.high - self.low)
        if self.kind == INTEGER:
            # half-up rounding keeps decode deterministic on bin edges
            return int(min(max(math.floor(value + 0.5), self.low), self.high))
        return value


@dataclass(frozen=True)
class Constraint:
    """Pure predicate over named dimension values.

    ``expression`` is either a python expression string (evaluated against the
    configuration plus any context/constants) or a callable taking the merged
    value mapping.
    """

    expression: str | Callable[[Mapping[str, Any]], bool]
    description: str = ""

    def __post_init__(self):
        if isinstance(self.expression, str):
            code = _compile_expression(self.expression, "constraint")
        else:
            code = None
        object.__setattr__(self, "_code", code)
        if not self.description:
            object.__setattr__(self, "description", str(self.expression))

    def holds(self, env: Mapping[str, Any]) -> bool:
        if callable(self.expression):
            return bool(self.expression(env))
        try:
            return bool(_eval_expression(self._code, env))
        except ZeroDivisionError:
            return False
        except NameError as exc:
            raise InvalidConfigurationError(
                f"constraint {self.description!r} references unknown name: {exc}"
            ) from None


@dataclass(frozen=True)
class DerivedRule:
    """Formula computing one dimension from the others."""

    target: str
    formula: str | Callable[[Mapping[str, Any]], float]

    def __post_init__(self):
        if isinstance(self.formula, str):
            code = _compile_expression(self.formula, f"derived:{self.target}")
        else:
            code = None
        object.__setattr__(self, "_code", code)

    def compute(self, env: Mapping[str, Any]) -> float:
        if callable(self.formula):
            return self.formula(env)
        return _eval_expression(self._code, env)


@dataclass(frozen=True)
class Configuration:
    """A complete point of a space, in native units."""

    values: Mapping[str, Any]

    def __post_init__(self):
        object.__setattr__(self, "values", dict(self.values))

    def __getitem__(self, name: str):
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def get(self, name: str, default=None):
        return self.values.get(name, default)

    def as_dict(self) -> dict[str, Any]:
        return dict(self.values)

    def key(self) -> tuple:
        """Canonical hashable identity, used for deduplication."""
        return tuple(sorted(self.values.items()))

    def merged(self, extra: Mapping[str, Any] | None) -> dict[str, Any]:
        out = dict(self.values)
        if extra:
            out.update(extra)
        return out

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v!r}" for k, v in sorted(self.values.items()))
        return f"Configuration({inner})"


@dataclass(frozen=True)
class OutputSpace:
    """Single-metric output space; only minimization is supported."""

    metric: str = "runtime"
    direction: str = "minimize"
    dimensionality: int = 1

    def __post_init__(self):
        if self.dimensionality != 1:
            raise ConfigError("output space must be one-dimensional")
        if self.direction != "minimize":
            raise ConfigError("only minimization is supported")


@dataclass(frozen=True)
class ValidityReport:
    """Outcome of :meth:`ParameterSpace.check`."""

    valid: bool
    violations: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.valid


@dataclass(frozen=True)
class ParameterSpace:
    """A named collection of dimensions with constraints and derived rules.

    ``constants`` supplies fixed named values (e.g. a machine description)
    that are merged into every expression environment alongside any
    per-evaluation context such as the current task.
    """

    name: str
    dims: tuple[Dimension, ...]
    constraints: tuple[Constraint, ...] = ()
    derived: tuple[DerivedRule, ...] = ()
    constants: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "derived", tuple(self.derived))
        object.__setattr__(self, "constants", dict(self.constants))
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ConfigError(f"space {self.name!r}: duplicate dimension names")
        name_set = set(names)
        targets = [r.target for r in self.derived]
        if len(set(targets)) != len(targets):
            raise ConfigError(f"space {self.name!r}: duplicate derived targets")
        for rule in self.derived:
            if rule.target not in name_set:
                raise ConfigError(
                    f"space {self.name!r}: derived target {rule.target!r} is not a dimension"
                )
        overlap = name_set & set(self.constants)
        if overlap:
            raise ConfigError(f"space {self.name!r}: constants shadow dimensions {sorted(overlap)}")

    # -- structure ---------------------------------------------------------

    @property
    def derived_targets(self) -> frozenset[str]:
        return frozenset(r.target for r in self.derived)

    @property
    def free_dims(self) -> tuple[Dimension, ...]:
        """Dimensions that are sampled/modeled directly (derived ones excluded)."""
        targets = self.derived_targets
        return tuple(d for d in self.dims if d.name not in targets)

    @property
    def n_free(self) -> int:
        return len(self.free_dims)

    def dim(self, name: str) -> Dimension:
        for d in self.dims:
            if d.name == name:
                return d
        raise KeyError(f"space {self.name!r} has no dimension {name!r}")

    # -- encoding ----------------------------------------------------------

    def encode(self, config: Configuration) -> np.ndarray:
        """Encode the free dimensions of ``config`` into [0, 1]^n_free."""
        out = np.empty(self.n_free)
        for j, d in enumerate(self.free_dims):
            if d.name not in config:
                raise InvalidConfigurationError(
                    f"space {self.name!r}: configuration missing dimension {d.name!r}"
                )
            out[j] = d.encode_value(config[d.name])
        return out

    def decode(self, point: Sequence[float], context: Mapping[str, Any] | None = None) -> Configuration:
        """Decode a unit-cube point into a complete configuration.

        Derived dimensions are resolved leniently: a non-integral or undefined
        result is kept as-is (float or NaN) so that :meth:`check` can report
        it; use :meth:`resolve_derived` for the strict variant.
        """
        free = self.free_dims
        if len(point) != len(free):
            raise InvalidConfigurationError(
                f"space {self.name!r}: expected {len(free)} coordinates, got {len(point)}"
            )
        values = {d.name: d.decode_unit(u) for d, u in zip(free, point)}
        env = self._env(values, context)
        for rule in self.derived:
            values[rule.target] = self._compute_derived(rule, env, strict=False)
            env[rule.target] = values[rule.target]
        return Configuration(values)

    def decode_many(self, points: np.ndarray, context: Mapping[str, Any] | None = None) -> list[Configuration]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return [self.decode(row, context) for row in points]

    # -- derived resolution --------------------------------------------------

    def _env(self, values: Mapping[str, Any], context: Mapping[str, Any] | None) -> dict[str, Any]:
        env = dict(self.constants)
        if context:
            env.update(context)
        env.update(values)
        return env

    def _compute_derived(self, rule: DerivedRule, env: Mapping[str, Any], strict: bool):
        dim = self.dim(rule.target)
        try:
            raw = rule.compute(env)
        except ZeroDivisionError:
            if strict:
                raise InvalidConfigurationError(
                    f"derived dimension {rule.target!r}: division by zero"
                ) from None
            return float("nan")
        value = float(raw)
        if dim.kind == INTEGER:
            if abs(value - round(value)) > _INT_TOL:
                if strict:
                    raise InvalidConfigurationError(
                        f"derived dimension {rule.target!r}: non-integral value {value}"
                    )
                return value
            value = int(round(value))
        elif dim.kind == CATEGORICAL:
            return raw
        if strict and not dim.contains(value):
            raise InvalidConfigurationError(
                f"derived dimension {rule.target!r}: value {value} out of bounds"
            )
        return value

    def resolve_derived(self, partial: Configuration, context: Mapping[str, Any] | None = None) -> Configuration:
        """Fill in the derived dimensions of ``partial``; strict on failures."""
        values = dict(partial.values)
        for d in self.free_dims:
            if d.name not in values:
                raise InvalidConfigurationError(
                    f"space {self.name!r}: missing non-derived dimension {d.name!r}"
                )
        env = self._env(values, context)
        for rule in self.derived:
            values[rule.target] = self._compute_derived(rule, env, strict=True)
            env[rule.target] = values[rule.target]
        return Configuration(values)

    # -- validity ------------------------------------------------------------

    def check(self, config: Configuration, context: Mapping[str, Any] | None = None) -> ValidityReport:
        """Validate a complete configuration: bounds, kinds and constraints."""
        violations: list[str] = []
        for d in self.dims:
            if d.name not in config:
                violations.append(f"missing dimension {d.name!r}")
            elif not d.contains(config[d.name]):
                violations.append(f"dimension {d.name!r}: value {config[d.name]!r} invalid")
        if not violations:
            env = self._env(config.values, context)
            for c in self.constraints:
                if not c.holds(env):
                    violations.append(c.description)
        return ValidityReport(not violations, tuple(violations))

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        dims = []
        for d in self.dims:
            entry: dict[str, Any] = {"name": d.name, "kind": d.kind}
            if d.kind == CATEGORICAL:
                entry["categories"] = list(d.categories)
            else:
                entry["bounds"] = [d.low, d.high]
            dims.append(entry)
        out: dict[str, Any] = {"name": self.name, "dims": dims}
        if self.constraints:
            if any(callable(c.expression) for c in self.constraints):
                raise ConfigError("callable constraints cannot be serialized")
            out["constraints"] = [
                {"expression": c.expression, "description": c.description}
                for c in self.constraints
            ]
        if self.derived:
            if any(callable(r.formula) for r in self.derived):
                raise ConfigError("callable derived rules cannot be serialized")
            out["derived"] = [{"target": r.target, "formula": r.formula} for r in self.derived]
        if self.constants:
            out["constants"] = dict(self.constants)
        return out

    def content_hash(self) -> str:
        """Stable hash of the space definition, used for history compatibility."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- space definition files -------------------------------------------------


def space_from_dict(data: Mapping[str, Any]) -> ParameterSpace:
    """Build a space from a parsed definition; errors name the offending field."""
    if not isinstance(data, Mapping):
        raise ConfigError("space definition must be an object")
    try:
        name = data["name"]
    except KeyError:
        raise ConfigError("space definition: missing field 'name'") from None
    raw_dims = data.get("dims")
    if not raw_dims:
        raise ConfigError(f"space {name!r}: missing or empty field 'dims'")
    dims = []
    for i, rd in enumerate(raw_dims):
        where = f"space {name!r}, dims[{i}]"
        if "name" not in rd or "kind" not in rd:
            raise ConfigError(f"{where}: fields 'name' and 'kind' are required")
        kind = rd["kind"]
        if kind == CATEGORICAL:
            if "categories" not in rd:
                raise ConfigError(f"{where}: field 'categories' required for categorical")
            dims.append(Dimension(rd["name"], kind, categories=tuple(rd["categories"])))
        else:
            bounds = rd.get("bounds")
            if not bounds or len(bounds) != 2:
                raise ConfigError(f"{where}: field 'bounds' must be [low, high]")
            dims.append(Dimension(rd["name"], kind, low=bounds[0], high=bounds[1]))
    constraints = []
    for i, rc in enumerate(data.get("constraints", [])):
        if "expression" not in rc:
            raise ConfigError(f"space {name!r}, constraints[{i}]: field 'expression' required")
        constraints.append(Constraint(rc["expression"], rc.get("description", "")))
    derived = []
    for i, rr in enumerate(data.get("derived", [])):
        if "target" not in rr or "formula" not in rr:
            raise ConfigError(
                f"space {name!r}, derived[{i}]: fields 'target' and 'formula' required"
            )
        derived.append(DerivedRule(rr["target"], rr["formula"]))
    return ParameterSpace(
        name=name,
        dims=tuple(dims),
        constraints=tuple(constraints),
        derived=tuple(derived),
        constants=data.get("constants", {}),
    )


def load_space(path) -> ParameterSpace:
    """Load a space definition from a JSON file."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return space_from_dict(data)


def save_space(space: ParameterSpace, path) -> None:
    with open(path, "w") as fh:
        json.dump(space.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- built-in spaces ----------------------------------------------------------


def unit_space(n_dims: int, name: str = "unit", prefix: str = "x") -> ParameterSpace:
    """Unconstrained real space [0,1]^n, the synthetic-objective playground."""
    dims = tuple(Dimension(f"{prefix}{j}", REAL, 0.0, 1.0) for j in range(n_dims))
    return ParameterSpace(name=name, dims=dims)


def pdgeqrf_task_space(
    m_range: tuple[int, int] = (1, 20000),
    n_range: tuple[int, int] | None = None,
    nodes_range: tuple[int, int] = (1, 128),
    cores_values: tuple[int, ...] = (24,),
) -> ParameterSpace:
    """Full 4-d task space of the distributed QR factorization example.

    Tasks are (matrix rows m, matrix columns n, compute nodes, cores per node).
    """
    n_range = n_range or m_range
    dims = (
        Dimension("m", INTEGER, *m_range),
        Dimension("n", INTEGER, *n_range),
        Dimension("nodes", INTEGER, *nodes_range),
        Dimension("cores", CATEGORICAL, categories=cores_values),
    )
    return ParameterSpace(name="pdgeqrf-tasks", dims=dims)


def pdgeqrf_desk_task_space(
    m_range: tuple[int, int] = (100, 2000),
    nodes: int = 1,
    cores: int = 24,
) -> ParameterSpace:
    """Matrix-shape-only task space with a fixed machine, for desk-scale runs."""
    dims = (
        Dimension("m", INTEGER, *m_range),
        Dimension("n", INTEGER, *m_range),
    )
    return ParameterSpace(
        name=f"pdgeqrf-tasks-{nodes}x{cores}",
        dims=dims,
        constants={"nodes": nodes, "cores": cores},
    )


def pdgeqrf_input_space(nodes: int = 1, cores: int = 24, max_block: int = 512) -> ParameterSpace:
    """Tunable-parameter space of the distributed QR factorization.

    Six parameters: block sizes mb/nb, process count nproc, thread count nth
    and the p x q process grid. nth and q are derived (q = nproc/p,
    nth = nodes*cores/nproc), which reduces the effective dimension to four.
    ``nodes``/``cores`` here size the bounds for the largest machine the space
    should admit; the actual machine of a task enters through the evaluation
    context when checking the two constraints.
    """
    nmax = nodes * cores
    dims = (
        Dimension("mb", INTEGER, 1, max_block),
        Dimension("nb", INTEGER, 1, max_block),
        Dimension("nproc", INTEGER, 1, nmax),
        Dimension("p", INTEGER, 1, nmax),
        Dimension("q", INTEGER, 1, nmax),
        Dimension("nth", INTEGER, 1, nmax),
    )
    derived = (
        DerivedRule("q", "nproc / p"),
        DerivedRule("nth", "(nodes * cores) / nproc"),
    )
    constraints = (
        Constraint("nproc == p * q", "nproc = p x q"),
        Constraint("nproc * nth == nodes * cores", "nproc x nth = nodes x cores"),
    )
    return ParameterSpace(
        name=f"pdgeqrf-inputs-{nodes}x{cores}",
        dims=dims,
        constraints=constraints,
        derived=derived,
    )
