import numpy as np
import pytest

from fcos.engine import forward
from fcos.errors import ConfigError
from fcos.fusion import (
    FusionConfig,
    load_prune_plan,
    prune_model_channels,
    save_prune_plan,
    target_channels,
)
from fcos.graph import channel_dim_groups, validate_shapes
from fcos.metrics import count_params_flops
from fcos.models import build_model


def keep(w, eps):
    return max(1, int(np.floor(w * eps)))


def plain_params_formula(widths, kernel, classes, c_in=2):
    total, prev = 0, c_in
    for w in widths:
        total += prev * w * kernel + w + 2 * w
        prev = w
    return total + prev * classes + classes


def plain_flops_formula(widths, kernel, classes, length, c_in=2):
    total, prev, n = 0, c_in, length
    for w in widths:
        total += 2 * n * w * prev * kernel  # conv (same padding)
        total += 2 * w * n + w * n  # bn + relu
        n //= 2
        total += w * n  # pool
        prev = w
    total += prev * n  # gap counts its input elements
    total += 2 * prev * classes
    return total


def test_target_channels_rules():
    assert target_channels(64, 0.25) == 16
    assert target_channels(64, 0.001) == 1  # floor gives 0, clamped
    assert target_channels(10, 1.0) == 10
    assert target_channels(3, 0.5) == 1


def test_keep_ratio_bounds():
    with pytest.raises(ConfigError):
        FusionConfig(keep_ratio=0.0)
    with pytest.raises(ConfigError):
        FusionConfig(keep_ratio=1.5)
    with pytest.raises(ConfigError):
        FusionConfig(keep_ratio=0.5, order="widest-first")


def test_plain_param_count_matches_closed_form_at_half():
    widths = (16, 32, 64)
    g = build_model("plain-cnn1d", widths=widths, kernel=8, num_classes=4, input_shape=(2, 128))
    pruned, _ = prune_model_channels(g, FusionConfig(keep_ratio=0.5))
    expected = plain_params_formula([keep(w, 0.5) for w in widths], 8, 4)
    params, flops = count_params_flops(pruned)
    assert params == expected
    assert flops == plain_flops_formula([keep(w, 0.5) for w in widths], 8, 4, 128)


@pytest.mark.parametrize("arch", ["plain-cnn1d", "residual-cnn1d"])
@pytest.mark.parametrize("eps", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_shape_sweep_valid_and_finite(arch, eps):
    g = build_model(arch, seed=21)
    pruned, _ = prune_model_channels(g, FusionConfig(keep_ratio=eps))
    validate_shapes(pruned)
    x = np.random.default_rng(0).normal(size=(2, 2, 128)).astype(np.float32)
    assert np.isfinite(forward(pruned, x)).all()


def test_full_keep_ratio_is_identity():
    g = build_model("plain-cnn1d", seed=1)
    pruned, _ = prune_model_channels(g, FusionConfig(keep_ratio=1.0))
    assert pruned.state_signature() == g.state_signature()


def test_coupled_dimensions_share_one_assignment():
    g = build_model("residual-cnn1d", widths=[16, 32, 64], seed=2)
    pruned, plan = prune_model_channels(g, FusionConfig(keep_ratio=0.25))
    validate_shapes(pruned)
    # every coupled group still shares one channel count
    dims = channel_dim_groups(pruned)
    for grp in pruned.coupled_groups:
        counts = {d.count for d in dims if grp & d.sides}
        assert len(counts) == 1
    # stage dimensions got exactly one output plan entry each (3 stages),
    # plus one entry per uncoupled conv2/conv1-internal dimension
    out_entries = [e for e in plan.entries if e.kind == "output"]
    multi = [e for e in out_entries if len(e.node_ids) > 1]
    assert len(multi) == 3
    assert {e.channels_after for e in multi} == {4, 8, 16}


def test_input_modes_agree_on_structure_not_weights():
    g = build_model("plain-cnn1d", seed=3)
    tied, _ = prune_model_channels(g, FusionConfig(keep_ratio=0.5, input_mode="producer-tied"))
    indep, _ = prune_model_channels(g, FusionConfig(keep_ratio=0.5, input_mode="independent"))
    assert count_params_flops(tied) == count_params_flops(indep)
    assert tied.state_signature() != indep.state_signature()


def test_fusion_order_invariance_of_structure():
    for arch in ("plain-cnn1d", "residual-cnn1d"):
        g = build_model(arch, seed=4)
        out_first, _ = prune_model_channels(g, FusionConfig(keep_ratio=0.4, order="output-first"))
        in_first, _ = prune_model_channels(g, FusionConfig(keep_ratio=0.4, order="input-first"))
        assert count_params_flops(out_first) == count_params_flops(in_first)


def test_original_model_untouched():
    g = build_model("residual-cnn1d", seed=5)
    sig = g.state_signature()
    prune_model_channels(g, FusionConfig(keep_ratio=0.3))
    assert g.state_signature() == sig


def test_bn_running_var_floored():
    g = build_model("plain-cnn1d", widths=[8, 8], input_shape=(2, 64), seed=6)
    bn = g.find_by_tag("block1.bn")
    bn.params["running_var"].data[:] = 0.0
    pruned, _ = prune_model_channels(g, FusionConfig(keep_ratio=0.5))
    rv = pruned.find_by_tag("block1.bn").params["running_var"].data
    assert np.all(rv >= 1e-5)


def test_l1_weighted_scheme_runs_and_differs_from_mean():
    g = build_model("plain-cnn1d", seed=7)
    mean_m, _ = prune_model_channels(g, FusionConfig(keep_ratio=0.5, scheme="mean"))
    l1_m, _ = prune_model_channels(g, FusionConfig(keep_ratio=0.5, scheme="l1-weighted"))
    assert count_params_flops(mean_m) == count_params_flops(l1_m)
    assert mean_m.state_signature() != l1_m.state_signature()


def test_euclidean_metric_runs():
    g = build_model("residual-cnn1d", seed=8)
    pruned, plan = prune_model_channels(g, FusionConfig(keep_ratio=0.5, metric="euclidean"))
    validate_shapes(pruned)
    assert plan.config["metric"] == "euclidean"


def test_plan_round_trip(tmp_path):
    g = build_model("plain-cnn1d", seed=9)
    _, plan = prune_model_channels(
        g, FusionConfig(keep_ratio=0.25, input_mode="independent")
    )
    path = tmp_path / "plan.bin"
    save_prune_plan(plan, path)
    back = load_prune_plan(path)
    assert back.config == plan.config
    assert len(back.entries) == len(plan.entries)
    for a, b in zip(back.entries, plan.entries):
        assert a.kind == b.kind
        assert a.node_ids == tuple(b.node_ids)
        assert a.channels_before == b.channels_before
        assert a.channels_after == b.channels_after
        assert a.assignment.tolist() == b.assignment.tolist()
        assert a.merge_trace == [(int(x), int(y), float(z)) for x, y, z in b.merge_trace]
