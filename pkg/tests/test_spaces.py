import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multitune.errors import ConfigError, InvalidConfigurationError
from multitune.spaces import (
    CATEGORICAL,
    INTEGER,
    REAL,
    Configuration,
    Constraint,
    DerivedRule,
    Dimension,
    OutputSpace,
    ParameterSpace,
    load_space,
    pdgeqrf_desk_task_space,
    pdgeqrf_input_space,
    pdgeqrf_task_space,
    save_space,
    space_from_dict,
    unit_space,
)


@pytest.fixture
def qr_inputs():
    return pdgeqrf_input_space(nodes=1, cores=24)


MACHINE_1X24 = {"nodes": 1, "cores": 24}


class TestDimension:
    def test_real_bounds_encode(self):
        d = Dimension("a", REAL, 0, 10)
        assert d.encode_value(0) == 0.0
        assert d.encode_value(10) == 1.0
        assert d.encode_value(2.5) == 0.25

    def test_categorical_midpoint_encoding(self):
        d = Dimension("k", CATEGORICAL, categories=("w", "x", "y", "z"))
        # index 2 of 4 categories maps to the bin midpoint (2 + 0.5)/4
        assert d.encode_value("y") == 0.625

    def test_integer_decode_rounds_half_up(self):
        d = Dimension("v", INTEGER, 1, 5)
        assert d.decode_unit(0.5) == 3
        assert d.decode_unit(0.0) == 1
        assert d.decode_unit(1.0) == 5

    def test_categorical_decode_clamps_top(self):
        d = Dimension("k", CATEGORICAL, categories=("a", "b", "c"))
        assert d.decode_unit(1.0) == "c"
        assert d.decode_unit(0.0) == "a"

    def test_real_decode_lower_bound(self):
        d = Dimension("r", REAL, 2, 8)
        assert d.decode_unit(0.0) == 2.0

    def test_invalid_bounds_rejected(self):
        with pytest.raises(ConfigError):
            Dimension("bad", REAL, 5, 5)
        with pytest.raises(ConfigError):
            Dimension("bad", INTEGER, 3, 1)

    def test_categories_must_be_unique_nonempty(self):
        with pytest.raises(ConfigError):
            Dimension("k", CATEGORICAL, categories=())
        with pytest.raises(ConfigError):
            Dimension("k", CATEGORICAL, categories=("a", "a"))


class TestEncodeDecode:
    def test_encode_unknown_dimension(self):
        space = unit_space(2)
        with pytest.raises(InvalidConfigurationError):
            space.encode(Configuration({"x0": 0.5}))  # x1 missing

    def test_encode_out_of_bounds(self):
        space = unit_space(1)
        with pytest.raises(InvalidConfigurationError):
            space.encode(Configuration({"x0": 1.5}))

    def test_dimension_mismatch_on_decode(self):
        with pytest.raises(InvalidConfigurationError):
            unit_space(2).decode([0.5])

    @given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
    @settings(max_examples=50, deadline=None)
    def test_roundtrip_identity_on_decoded_configs(self, point):
        space = ParameterSpace("mix", (
            Dimension("a", REAL, -3, 7),
            Dimension("b", INTEGER, 1, 9),
            Dimension("c", CATEGORICAL, categories=("u", "v", "w")),
        ))
        config = space.decode(point)
        again = space.decode(space.encode(config))
        assert again.values == config.values


class TestDerivedResolution:
    def test_pdgeqrf_nth_q_deduced(self, qr_inputs):
        cfg = qr_inputs.resolve_derived(
            Configuration({"mb": 4, "nb": 8, "nproc": 24, "p": 2}), MACHINE_1X24)
        assert cfg["nth"] == 1 and cfg["q"] == 12

    def test_pdgeqrf_p1_gives_q24(self, qr_inputs):
        cfg = qr_inputs.resolve_derived(
            Configuration({"mb": 500, "nb": 8, "nproc": 24, "p": 1}), MACHINE_1X24)
        assert cfg["q"] == 24 and cfg["nth"] == 1

    def test_non_integral_quotient_is_an_error(self, qr_inputs):
        with pytest.raises(InvalidConfigurationError):
            qr_inputs.resolve_derived(
                Configuration({"mb": 4, "nb": 8, "nproc": 7, "p": 2}), MACHINE_1X24)

    def test_division_by_zero_is_an_error(self):
        space = ParameterSpace("z", (
            Dimension("a", REAL, 0, 2),
            Dimension("b", REAL, 0, 2),
        ), derived=(DerivedRule("b", "1 / a"),))
        with pytest.raises(InvalidConfigurationError):
            space.resolve_derived(Configuration({"a": 0.0}))

    def test_missing_free_dimension_is_an_error(self, qr_inputs):
        with pytest.raises(InvalidConfigurationError):
            qr_inputs.resolve_derived(Configuration({"mb": 4}), MACHINE_1X24)

    def test_out_of_bounds_derived_raises(self):
        space = ParameterSpace("ob", (
            Dimension("a", REAL, 0, 1),
            Dimension("b", REAL, 0, 1),
        ), derived=(DerivedRule("b", "a * 10"),))
        with pytest.raises(InvalidConfigurationError):
            space.resolve_derived(Configuration({"a": 0.9}))


# Published best-parameter rows: (machine, task, configuration).
TABLE_ROWS = [
    ({"nodes": 1, "cores": 24}, {"m": 2000, "n": 2000},
     {"mb": 4, "nb": 8, "nth": 1, "nproc": 24, "p": 2, "q": 12}),
    ({"nodes": 128, "cores": 24}, {"m": 10000, "n": 10000},
     {"mb": 1, "nb": 26, "nth": 1, "nproc": 3072, "p": 16, "q": 192}),
    ({"nodes": 1, "cores": 24}, {"m": 500, "n": 500},
     {"mb": 470, "nb": 30, "nth": 3, "nproc": 8, "p": 1, "q": 8}),
    ({"nodes": 1, "cores": 24}, {"m": 500, "n": 500},
     {"mb": 88, "nb": 12, "nth": 1, "nproc": 24, "p": 1, "q": 24}),
    ({"nodes": 1, "cores": 24}, {"m": 500, "n": 500},
     {"mb": 244, "nb": 11, "nth": 1, "nproc": 24, "p": 1, "q": 24}),
    ({"nodes": 1, "cores": 24}, {"m": 500, "n": 500},
     {"mb": 296, "nb": 11, "nth": 1, "nproc": 24, "p": 1, "q": 24}),
    ({"nodes": 1, "cores": 24}, {"m": 500, "n": 500},
     {"mb": 500, "nb": 8, "nth": 1, "nproc": 24, "p": 1, "q": 24}),
]


class TestCheck:
    @pytest.mark.parametrize("machine,task,values", TABLE_ROWS)
    def test_published_best_rows_are_valid(self, machine, task, values):
        space = pdgeqrf_input_space(nodes=machine["nodes"], cores=machine["cores"])
        report = space.check(Configuration(values), {**machine, **task})
        assert report.valid, report.violations

    def test_grid_constraint_violation_reported(self, qr_inputs):
        report = qr_inputs.check(
            Configuration({"mb": 4, "nb": 8, "nproc": 24, "p": 5, "q": 5, "nth": 1}),
            MACHINE_1X24)
        assert not report.valid
        assert any("p x q" in v for v in report.violations)

    def test_core_count_constraint_violation_reported(self):
        space = pdgeqrf_input_space(nodes=2, cores=24)
        report = space.check(
            Configuration({"mb": 4, "nb": 8, "nproc": 48, "p": 2, "q": 24, "nth": 1}),
            {"nodes": 1, "cores": 24})
        assert not report.valid
        assert any("nodes x cores" in v for v in report.violations)

    def test_missing_dimension_reported(self, qr_inputs):
        report = qr_inputs.check(Configuration({"mb": 4}), MACHINE_1X24)
        assert not report.valid
        assert any("missing" in v for v in report.violations)

    def test_non_integral_value_reported(self, qr_inputs):
        report = qr_inputs.check(
            Configuration({"mb": 4, "nb": 8, "nproc": 7, "p": 2, "q": 3.5, "nth": 24 / 7}),
            MACHINE_1X24)
        assert not report.valid


class TestSpaceStructure:
    def test_free_dims_exclude_derived(self, qr_inputs):
        names = [d.name for d in qr_inputs.free_dims]
        assert names == ["mb", "nb", "nproc", "p"]
        assert qr_inputs.n_free == 4

    def test_duplicate_dimension_names_rejected(self):
        with pytest.raises(ConfigError):
            ParameterSpace("dup", (Dimension("a", REAL, 0, 1), Dimension("a", REAL, 0, 1)))

    def test_derived_target_must_exist(self):
        with pytest.raises(ConfigError):
            ParameterSpace("bad", (Dimension("a", REAL, 0, 1),),
                           derived=(DerivedRule("zz", "a"),))

    def test_constants_cannot_shadow_dimensions(self):
        with pytest.raises(ConfigError):
            ParameterSpace("bad", (Dimension("a", REAL, 0, 1),), constants={"a": 1})

    def test_callable_constraints_and_rules(self):
        space = ParameterSpace("call", (
            Dimension("a", INTEGER, 1, 10),
            Dimension("b", INTEGER, 1, 10),
        ), constraints=(Constraint(lambda env: env["a"] <= env["b"], "a <= b"),),
            derived=(DerivedRule("b", lambda env: env["a"] * 2),))
        cfg = space.resolve_derived(Configuration({"a": 3}))
        assert cfg["b"] == 6
        assert space.check(cfg)

    def test_task_space_variants(self):
        full = pdgeqrf_task_space()
        assert [d.name for d in full.dims] == ["m", "n", "nodes", "cores"]
        desk = pdgeqrf_desk_task_space()
        assert desk.constants == {"nodes": 1, "cores": 24}

    def test_output_space_is_single_metric_minimization(self):
        out = OutputSpace()
        assert out.dimensionality == 1
        with pytest.raises(ConfigError):
            OutputSpace(dimensionality=2)
        with pytest.raises(ConfigError):
            OutputSpace(direction="maximize")


class TestSpaceFiles:
    def test_save_load_roundtrip(self, qr_inputs, tmp_path):
        path = tmp_path / "space.json"
        save_space(qr_inputs, path)
        loaded = load_space(path)
        assert loaded.to_dict() == qr_inputs.to_dict()
        assert loaded.content_hash() == qr_inputs.content_hash()

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "name": "x",\n  "dims": [\n')
        with pytest.raises(ConfigError, match="line"):
            load_space(path)

    def test_missing_field_reports_field(self):
        with pytest.raises(ConfigError, match="'name'"):
            space_from_dict({"dims": [{"name": "a", "kind": "real", "bounds": [0, 1]}]})
        with pytest.raises(ConfigError, match="bounds"):
            space_from_dict({"name": "x", "dims": [{"name": "a", "kind": "real"}]})
        with pytest.raises(ConfigError, match="categories"):
            space_from_dict({"name": "x", "dims": [{"name": "a", "kind": "categorical"}]})

    def test_constraint_expression_required(self):
        with pytest.raises(ConfigError, match="expression"):
            space_from_dict({
                "name": "x",
                "dims": [{"name": "a", "kind": "real", "bounds": [0, 1]}],
                "constraints": [{"description": "nope"}],
            })

    def test_content_hash_differs_for_different_spaces(self, qr_inputs):
        other = pdgeqrf_input_space(nodes=2, cores=24)
        assert other.content_hash() != qr_inputs.content_hash()


class TestImmutability:
    def test_spaces_are_frozen(self, qr_inputs):
        with pytest.raises(AttributeError):
            qr_inputs.name = "other"

    def test_configuration_values_copied(self):
        src = {"a": 1}
        cfg = Configuration(src)
        src["a"] = 2
        assert cfg["a"] == 1
