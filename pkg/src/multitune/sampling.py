"""Space-filling and centered sampling.

Latin hypercube designs drive both task selection and the per-task pilot
samplings (heterotropic: every task gets its own independent design).
Constraints are satisfied by rejection: unconstrained batches are drawn,
filtered through ``space.check`` and pooled until enough valid points exist.
All routines are deterministic given an :class:`RngState`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import SamplingExhaustedError
from .spaces import Configuration, ParameterSpace


@dataclass(frozen=True)
class RngState:
    """Portable RNG identity: PCG64 seeded through a SeedSequence spawn key.

    Identical (seed, stream) pairs reproduce identical sample sequences on any
    platform. ``child`` derives independent substreams (e.g. one per task).
    """

    seed: int
    stream: tuple[int, ...] = ()
    algorithm: str = "pcg64"

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *ids: int) -> "RngState":
        if any(i < 0 for i in ids):
            raise ValueError("stream ids must be non-negative")
        return replace(self, stream=self.stream + tuple(int(i) for i in ids))


@dataclass(frozen=True)
class SampleBatch:
    """A batch of valid configurations plus the state that produced it."""

    configs: tuple[Configuration, ...]
    rng: RngState
    space_name: str

    def __len__(self) -> int:
        return len(self.configs)

    def __iter__(self):
        return iter(self.configs)

    def __getitem__(self, i):
        return self.configs[i]


def lhs(n: int, d: int, rng: RngState) -> np.ndarray:
    """Latin hypercube design: n points in [0,1]^d, one per 1/n bin per axis.

    Bin assignment is an independent random permutation per dimension and the
    point is jittered uniformly within its bin.
    """
    if n < 1 or d < 1:
        raise ValueError("lhs requires n >= 1 and d >= 1")
    gen = rng.generator()
    out = np.empty((n, d))
    for j in range(d):
        perm = gen.permutation(n)
        jitter = gen.random(n)
        out[:, j] = (perm + jitter) / n
    return out


def sample_tasks(task_space: ParameterSpace, n_tasks: int, rng: RngState,
                 max_batches: int = 100) -> list[Configuration]:
    """Draw ``n_tasks`` distinct valid tasks by LHS in the encoded task space.

    Duplicates arising from integer/categorical collapse are re-drawn.
    """
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    d = task_space.n_free
    tasks: list[Configuration] = []
    seen: set = set()
    attempts = 0
    for batch in range(max_batches):
        pts = lhs(n_tasks, d, rng.child(batch))
        attempts += n_tasks
        for cfg in task_space.decode_many(pts):
            if len(tasks) == n_tasks:
                break
            if not task_space.check(cfg):
                continue
            k = cfg.key()
            if k in seen:
                continue
            seen.add(k)
            tasks.append(cfg)
        if len(tasks) == n_tasks:
            return tasks
    raise SamplingExhaustedError(
        f"could not draw {n_tasks} distinct valid tasks from {task_space.name!r} "
        f"after {attempts} attempts",
        validity_rate=len(tasks) / max(attempts, 1),
    )


def constrained_sample(space: ParameterSpace, n: int, rng: RngState,
                       context: Mapping | None = None,
                       max_batches: int = 100) -> list[Configuration]:
    """Collect ``n`` valid configurations by filtered LHS batches.

    Unconstrained LHS batches are drawn and checked; valid points accumulate
    in a pool. If the first batch is fully valid it is returned unchanged
    (plain LHS); otherwise ``n`` points are subsampled uniformly from the
    pool once it is large enough.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d = space.n_free
    pool: list[Configuration] = []
    attempts = 0
    for batch in range(max_batches):
        pts = lhs(n, d, rng.child(batch))
        attempts += n
        valid = [c for c in space.decode_many(pts, context) if space.check(c, context)]
        if batch == 0 and len(valid) == n:
            return valid
        pool.extend(valid)
        if len(pool) >= n:
            gen = rng.child(max_batches).generator()  # stream id past all batch ids
            idx = gen.choice(len(pool), size=n, replace=False)
            return [pool[i] for i in sorted(idx)]
    raise SamplingExhaustedError(
        f"{space.name!r}: {len(pool)}/{n} valid configurations after {attempts} draws "
        f"(validity rate {len(pool) / max(attempts, 1):.4f})",
        validity_rate=len(pool) / max(attempts, 1),
    )


def sample_inputs_heterotropic(space: ParameterSpace, tasks: Sequence[Configuration],
                               n_per_task: int, rng: RngState,
                               task_constants: Mapping | None = None,
                               max_batches: int = 100) -> list[list[Configuration]]:
    """Independent LHS of size ``n_per_task`` for every task.

    Each task gets its own RNG substream (stream id = task index) and its own
    constraint context (the task's values merged with any task-space
    constants), so samplings differ across tasks and validity is evaluated
    against the right machine description.
    """
    batches = []
    for i, task in enumerate(tasks):
        context = task.merged(task_constants)
        batches.append(constrained_sample(space, n_per_task, rng.child(i),
                                          context=context, max_batches=max_batches))
    return batches


def centered_sample(space: ParameterSpace, center: Configuration, n: int, rng: RngState,
                    context: Mapping | None = None, std: float = 1.0,
                    max_batches: int = 100) -> list[Configuration]:
    """Draw ``n`` valid configurations from a normal centered on ``center``.

    Sampling happens in the encoded unit cube with an isotropic per-axis
    standard deviation of ``std`` (default 1.0, the cube's axis length).
    Draws falling outside the cube or violating constraints are discarded and
    replaced; the batch size grows when the acceptance rate is low.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    mean = space.encode(center)
    d = space.n_free
    out: list[Configuration] = []
    attempts = 0
    batch_size = max(n, 64)
    for batch in range(max_batches):
        gen = rng.child(batch).generator()
        pts = gen.normal(loc=mean, scale=std, size=(batch_size, d))
        attempts += batch_size
        inside = np.all((pts >= 0.0) & (pts <= 1.0), axis=1)
        for cfg in space.decode_many(pts[inside], context):
            if space.check(cfg, context):
                out.append(cfg)
                if len(out) == n:
                    return out
        if not out or len(out) * 4 < n:
            batch_size = min(batch_size * 2, 16384)
    raise SamplingExhaustedError(
        f"{space.name!r}: centered sampling collected {len(out)}/{n} valid points "
        f"after {attempts} draws (validity rate {len(out) / max(attempts, 1):.5f})",
        validity_rate=len(out) / max(attempts, 1),
    )
