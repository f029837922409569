import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multitune.errors import SamplingExhaustedError
from multitune.sampling import (
    RngState,
    centered_sample,
    constrained_sample,
    lhs,
    sample_inputs_heterotropic,
    sample_tasks,
)
from multitune.spaces import (
    Configuration,
    Constraint,
    Dimension,
    ParameterSpace,
    pdgeqrf_input_space,
    pdgeqrf_task_space,
    unit_space,
)

MACHINE = {"nodes": 1, "cores": 24}


def bins_hit(column: np.ndarray) -> list[int]:
    n = len(column)
    return sorted(np.floor(column * n).astype(int).tolist())


class TestRngState:
    def test_same_seed_same_stream(self):
        a = RngState(7).generator().random(5)
        b = RngState(7).generator().random(5)
        assert np.array_equal(a, b)

    def test_children_are_independent(self):
        a = RngState(7).child(0).generator().random(5)
        b = RngState(7).child(1).generator().random(5)
        assert not np.array_equal(a, b)

    def test_negative_stream_ids_rejected(self):
        with pytest.raises(ValueError):
            RngState(7).child(-1)


class TestLhs:
    def test_single_point(self):
        pts = lhs(1, 3, RngState(0))
        assert pts.shape == (1, 3)
        assert np.all((pts >= 0) & (pts < 1))

    def test_one_point_per_quartile(self):
        pts = lhs(4, 1, RngState(1))
        assert bins_hit(pts[:, 0]) == [0, 1, 2, 3]

    def test_sorted_bin_indices_are_a_permutation(self):
        pts = lhs(10, 2, RngState(42))
        for j in range(2):
            assert bins_hit(pts[:, j]) == list(range(10))

    @given(st.integers(0, 10_000), st.sampled_from([2, 5, 17, 50]))
    @settings(max_examples=40, deadline=None)
    def test_marginal_property_any_seed(self, seed, n):
        pts = lhs(n, 3, RngState(seed))
        for j in range(3):
            assert bins_hit(pts[:, j]) == list(range(n))

    def test_deterministic(self):
        assert np.array_equal(lhs(8, 4, RngState(3)), lhs(8, 4, RngState(3)))

    def test_rejects_degenerate_arguments(self):
        with pytest.raises(ValueError):
            lhs(0, 1, RngState(0))
        with pytest.raises(ValueError):
            lhs(1, 0, RngState(0))


class TestSampleTasks:
    def test_single_task(self):
        space = pdgeqrf_task_space()
        tasks = sample_tasks(space, 1, RngState(0))
        assert len(tasks) == 1
        assert space.check(tasks[0])

    def test_fifty_tasks_over_full_task_space(self):
        space = pdgeqrf_task_space()
        tasks = sample_tasks(space, 50, RngState(123))
        assert len(tasks) == 50
        assert len({t.key() for t in tasks}) == 50
        assert all(space.check(t) for t in tasks)
        # the underlying design is an LHS: each integer projection still
        # occupies the 50 distinct design bins after decoding
        for name, dim in (("m", space.dim("m")), ("n", space.dim("n"))):
            values = np.array([t[name] for t in tasks], dtype=float)
            encoded = (values - dim.low) / (dim.high - dim.low)
            assert len(set(np.floor(encoded * 50).astype(int).tolist())) == 50

    def test_one_task_per_eighth_on_unit_space(self):
        space = unit_space(1, name="line", prefix="t")
        tasks = sample_tasks(space, 8, RngState(5))
        assert bins_hit(np.array([t["t0"] for t in tasks])) == list(range(8))

    def test_duplicate_collapse_redraws(self):
        # a tiny integer space forces decode collisions; distinctness must hold
        space = ParameterSpace("tiny", (Dimension("k", "integer", 1, 4),))
        tasks = sample_tasks(space, 4, RngState(2))
        assert sorted(t["k"] for t in tasks) == [1, 2, 3, 4]

    def test_exhaustion_when_space_too_small(self):
        space = ParameterSpace("tiny", (Dimension("k", "integer", 1, 3),))
        with pytest.raises(SamplingExhaustedError):
            sample_tasks(space, 4, RngState(2))


class TestConstrainedSample:
    def test_unconstrained_first_batch_is_plain_lhs(self):
        space = unit_space(2)
        rng = RngState(11)
        configs = constrained_sample(space, 6, rng)
        expected = space.decode_many(lhs(6, 2, rng.child(0)))
        assert [c.values for c in configs] == [c.values for c in expected]

    def test_half_rejecting_constraint(self):
        space = ParameterSpace("half", (
            Dimension("x0", "real", 0, 1),
            Dimension("x1", "real", 0, 1),
        ), constraints=(Constraint("x0 < 0.5", "left half"),))
        configs = constrained_sample(space, 10, RngState(3))
        assert len(configs) == 10
        assert all(space.check(c) for c in configs)

    def test_impossible_constraint_exhausts(self):
        space = ParameterSpace("none", (
            Dimension("x0", "real", 0, 1),
        ), constraints=(Constraint("x0 > 2", "impossible"),))
        with pytest.raises(SamplingExhaustedError) as err:
            constrained_sample(space, 5, RngState(0), max_batches=10)
        assert err.value.validity_rate == 0.0

    def test_deterministic(self):
        space = pdgeqrf_input_space()
        a = constrained_sample(space, 8, RngState(9), context=MACHINE)
        b = constrained_sample(space, 8, RngState(9), context=MACHINE)
        assert [c.values for c in a] == [c.values for c in b]


class TestHeterotropicInputs:
    def test_pilot_of_twelve_valid_configs(self):
        space = pdgeqrf_input_space()
        task = Configuration({"m": 1000, "n": 1000})
        batches = sample_inputs_heterotropic(space, [task], 12, RngState(0),
                                             task_constants=MACHINE)
        assert len(batches) == 1 and len(batches[0]) == 12
        ctx = task.merged(MACHINE)
        assert all(space.check(c, ctx) for c in batches[0])

    def test_tasks_get_distinct_batches(self):
        space = unit_space(2)
        t1 = Configuration({"m": 1})
        t2 = Configuration({"m": 2})
        batches = sample_inputs_heterotropic(space, [t1, t2], 5, RngState(4))
        assert [c.values for c in batches[0]] != [c.values for c in batches[1]]

    def test_all_samples_satisfy_both_constraints(self):
        space = pdgeqrf_input_space()
        task = Configuration({"m": 500, "n": 700})
        batches = sample_inputs_heterotropic(space, [task], 10, RngState(17),
                                             task_constants=MACHINE)
        for c in batches[0]:
            assert c["nproc"] == c["p"] * c["q"]
            assert c["nproc"] * c["nth"] == 24


class TestCenteredSample:
    def test_single_point_in_cube(self):
        space = unit_space(3)
        center = Configuration({"x0": 0.5, "x1": 0.5, "x2": 0.5})
        pts = centered_sample(space, center, 1, RngState(0))
        assert len(pts) == 1
        assert all(0 <= v <= 1 for v in pts[0].values.values())

    def test_fifty_valid_constrained_samples(self):
        space = pdgeqrf_input_space()
        center = Configuration({"mb": 100, "nb": 100, "nproc": 24, "p": 2,
                                "q": 12, "nth": 1})
        pts = centered_sample(space, center, 50, RngState(1), context=MACHINE)
        assert len(pts) == 50
        assert all(space.check(c, MACHINE) for c in pts)

    def test_truncated_normal_mean_matches_center(self):
        space = unit_space(1)
        center = Configuration({"x0": 0.5})
        pts = centered_sample(space, center, 10_000, RngState(2))
        mean = np.mean([c["x0"] for c in pts])
        assert abs(mean - 0.5) < 0.02

    def test_density_decreases_with_radius(self):
        space = unit_space(1)
        center = Configuration({"x0": 0.5})
        pts = np.array([c["x0"] for c in centered_sample(space, center, 6000, RngState(3))])
        r = np.abs(pts - 0.5)
        counts = [np.sum((lo <= r) & (r < hi)) / (hi - lo)
                  for lo, hi in ((0.0, 1 / 6), (1 / 6, 2 / 6), (2 / 6, 0.5))]
        assert counts[0] > counts[1] * 0.95 > counts[2] * 0.9

    def test_exhaustion_on_impossible_constraint(self):
        space = ParameterSpace("none", (
            Dimension("x0", "real", 0, 1),
        ), constraints=(Constraint("x0 > 2", "impossible"),))
        with pytest.raises(SamplingExhaustedError):
            centered_sample(space, Configuration({"x0": 0.5}), 3, RngState(0),
                            max_batches=5)

    def test_deterministic(self):
        space = unit_space(2)
        center = Configuration({"x0": 0.3, "x1": 0.7})
        a = centered_sample(space, center, 20, RngState(8))
        b = centered_sample(space, center, 20, RngState(8))
        assert [c.values for c in a] == [c.values for c in b]
