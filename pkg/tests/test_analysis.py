"""
בדיקות לספירת הפרמטרים וה-FLOPs ולדוח העלויות
"""
import numpy as np
import pytest

from src.analysis import (
    COUNTING_CONVENTION, REPORT_COLUMNS, compile_cost, compiled_cost, emit_report, hn_compile_cost,
    inference_cost, linear_flops, cost_table_specs,
)
from src.data_schemas import ArchitectureKind, ArchitectureSpec, ExperimentConfig, StudentKind
from src.layers import linear
from src.numerics import Tensor, count_multiplies


def doubled(spec: ArchitectureSpec) -> ArchitectureSpec:
    """כל ממדי הגודל כפולים; מספרי השכבות והראשים נשארים"""
    fields = ("hidden_width", "embed_dim", "attn_hidden", "decoder_hidden", "context_embed_dim",
              "encoder_hidden", "state_dim_per_limb", "action_dim_per_limb", "context_dim", "n_max")
    return spec.model_copy(update={name: 2 * getattr(spec, name) for name in fields})


@pytest.fixture
def ft_specs():
    return cost_table_specs("ft")


class TestLinearFlops:
    """בדיקות הנוסחה הבסיסית"""

    def test_values(self):
        assert linear_flops(128, 256) == 65536
        assert linear_flops(1, 1) == 2

    def test_non_positive_rejected(self):
        with pytest.raises(ValueError):
            linear_flops(0, 4)

    def test_matches_executed_layer(self):
        rng = np.random.default_rng(0)
        params = {"layer.weight": Tensor(rng.standard_normal((7, 5))), "layer.bias": Tensor(np.zeros(5))}
        with count_multiplies() as counter:
            linear(params, "layer", Tensor(rng.standard_normal((1, 7))))
        assert 2 * counter.multiplies == linear_flops(7, 5)


class TestInferenceCost:
    """בדיקות ספירת העלות לכל ארכיטקטורה"""

    def test_compiled_hand_count(self, ft_specs):
        compiled = dict(ft_specs)["hyperdistill"]
        cost = inference_cost(compiled, 10)
        assert cost.params == 10 * (256 * 13 + 256) + (256 * 256 + 256) + 10 * (1 * 256 + 1)
        assert cost.params == 104_202
        assert cost.flops == 2 * (10 * 13 * 256 + 256 * 256 + 256 * 10)
        assert compiled_cost(compiled, 10) == cost

    @pytest.mark.parametrize("env", ["ft", "vt", "obstacle"])
    def test_doubling_all_dims_at_least_quadruples_flops(self, env):
        for _, spec in cost_table_specs(env):
            assert inference_cost(doubled(spec), 20).flops >= 4 * inference_cost(spec, 10).flops

    def test_monotone_in_width(self):
        for _, spec in cost_table_specs("vt"):
            wider = spec.model_copy(update={"hidden_width": spec.hidden_width + 1, "attn_hidden": spec.attn_hidden + 1})
            assert inference_cost(wider, 10).flops >= inference_cost(spec, 10).flops
            assert inference_cost(wider, 10).params >= inference_cost(spec, 10).params

    def test_teacher_to_compiled_ratio(self, ft_specs):
        specs = dict(ft_specs)
        teacher = inference_cost(specs["modumorph_oracle"], 10)
        compiled = inference_cost(specs["hyperdistill"], 10)
        assert teacher.flops / compiled.flops >= 50
        assert compiled.params < 300_000

    @pytest.mark.parametrize("env", ["vt", "obstacle"])
    def test_ratio_other_environments(self, env):
        specs = dict(cost_table_specs(env))
        assert inference_cost(specs["modumorph_oracle"], 10).flops / inference_cost(specs["hyperdistill"], 10).flops >= 50

    def test_invalid_limb_count(self, ft_specs):
        with pytest.raises(ValueError):
            inference_cost(ft_specs[0][1], 0)


class TestCompileCost:
    """בדיקות עלות הקומפילציה"""

    @pytest.mark.parametrize("n_limbs", [1, 5, 10, 12])
    def test_compile_at_least_per_step(self, n_limbs):
        config = ExperimentConfig()
        for spec in (config.student_spec(StudentKind.HYPERDISTILL), dict(cost_table_specs("ft"))["hyperdistill"]):
            assert hn_compile_cost(spec, n_limbs) >= inference_cost(spec, n_limbs).flops

    def test_only_hypernetworks_and_fixed_attention_compile(self, ft_specs):
        specs = dict(ft_specs)
        assert compile_cost(specs["multi_robot_mlp"], 10) == 0
        assert compile_cost(specs["tf_compressed"], 10) == 0
        assert compile_cost(specs["modumorph_oracle"], 10) > 0
        with pytest.raises(ValueError):
            hn_compile_cost(specs["multi_robot_mlp"], 10)


class TestReport:
    """בדיקות דוח העלויות"""

    def test_single_compiled_row(self, ft_specs):
        report = emit_report([("hyperdistill", dict(ft_specs)["hyperdistill"])], 10)
        assert list(report.frame.columns) == REPORT_COLUMNS
        assert report.frame.loc[0, "params_rel"] == 1.0
        assert report.frame.loc[0, "flops_rel"] == 1.0

    def test_ratios_are_relative_to_compiled(self, ft_specs):
        frame = emit_report(ft_specs, 10).frame
        base = frame[frame["name"] == "hyperdistill"].iloc[0]
        np.testing.assert_allclose(frame["params_rel"], frame["params_abs"] / base["params_abs"], rtol=0, atol=1e-12)
        np.testing.assert_allclose(frame["flops_rel"], frame["flops_abs"] / base["flops_abs"], rtol=0, atol=1e-12)

    @pytest.mark.parametrize("env", ["ft", "vt", "obstacle"])
    def test_five_rows_per_environment(self, env):
        assert len(emit_report(cost_table_specs(env), 10).frame) == 5

    def test_missing_baseline_rejected(self, ft_specs):
        with pytest.raises(ValueError):
            emit_report([entry for entry in ft_specs if entry[0] != "hyperdistill"], 10)

    def test_csv_carries_convention(self, ft_specs):
        lines = emit_report(ft_specs, 10).to_csv().splitlines()
        assert lines[0] == f"# {COUNTING_CONVENTION}"
        assert lines[1] == ",".join(REPORT_COLUMNS)

    def test_compiled_kind_is_a_baseline(self):
        compiled = ArchitectureSpec(kind=ArchitectureKind.COMPILED_MLP, hidden_width=8, state_dim_per_limb=2)
        assert emit_report([("compiled", compiled)], 3).frame.loc[0, "flops_rel"] == 1.0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
