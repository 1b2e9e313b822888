"""Comparison pruners sharing the fine-tune/evaluate/report harness."""
from __future__ import annotations

import logging

import numpy as np

from .dataset import SignalDataset
from .errors import ConfigError, StageEmptyingError
from .fusion import target_channels
from .graph import (
    ModelGraph,
    channel_dim_groups,
    coupled_groups_from_dims,
    remove_layers,
    removable_units,
    structural_units,
    validate_shapes,
)
from .probe import probe_model
from .tensor import Tensor

log = logging.getLogger("fcos.baselines")

BASELINE_METHODS = ("l1-channel", "random-layer", "probe-layer")


def l1_channel_prune(model: ModelGraph, keep_ratio: float) -> ModelGraph:
    """Keeps the top max(1, floor(c*keep)) output channels per layer by L1 norm.

    Consumers are rewired by slicing the matching input channels; coupled
    dimensions share one selection scored by the summed member norms.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ConfigError(f"keep ratio must be in (0, 1], got {keep_ratio}")
    g = model.clone()
    validate_shapes(g)
    dims = channel_dim_groups(g)
    nodes = {n.id: n for n in g.nodes}
    kept: dict[int, np.ndarray] = {}
    for di, d in enumerate(dims):
        if not d.prunable:
            continue
        scores = np.zeros(d.count)
        for node_id in d.conv_out_members:
            w = nodes[node_id].params["weight"].data
            scores += np.abs(w.reshape(d.count, -1)).sum(axis=1)
        n = target_channels(d.count, keep_ratio)
        order = np.argsort(-scores, kind="stable")[:n]
        kept[di] = np.sort(order)

    side_dim = {}
    for di, d in enumerate(dims):
        for side in d.sides:
            side_dim[side] = di
    for node in g.nodes:
        di_in = side_dim[(node.id, "in")]
        di_out = side_dim[(node.id, "out")]
        keep_in = kept.get(di_in)
        keep_out = kept.get(di_out)
        if node.kind == "conv1d":
            w = node.params["weight"].data
            if keep_out is not None:
                w = w[keep_out]
                node.params["bias"] = Tensor(node.params["bias"].data[keep_out])
                node.c_out = keep_out.size
            if keep_in is not None:
                w = w[:, keep_in, :]
                node.c_in = keep_in.size
            node.params["weight"] = Tensor(np.ascontiguousarray(w))
        elif node.kind == "batchnorm" and keep_in is not None:
            for name in ("gamma", "beta", "running_mean", "running_var"):
                node.params[name] = Tensor(node.params[name].data[keep_in])
            node.c_in = node.c_out = keep_in.size
        elif node.kind == "dense" and keep_in is not None:
            w = node.params["weight"].data[:, keep_in]
            node.params["weight"] = Tensor(np.ascontiguousarray(w))
            node.c_in = keep_in.size
        elif node.kind in ("relu", "maxpool1d", "gap", "add"):
            if keep_in is not None:
                node.c_in = node.c_out = keep_in.size
    g.coupled_groups = coupled_groups_from_dims(channel_dim_groups(g))
    validate_shapes(g)
    return g


def random_layer_prune(model: ModelGraph, count: int, seed: int) -> ModelGraph:
    """Removes `count` uniformly sampled removable units; deterministic per seed."""
    units = removable_units(model)
    if count > len(units):
        raise ConfigError(f"cannot remove {count} units; only {len(units)} are removable")
    if count == 0:
        return model.clone()
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(units), size=count, replace=False)
    ids = {units[i].output_id for i in picks}
    return remove_layers(model, ids)


def probe_layer_prune(
    model: ModelGraph,
    dataset: SignalDataset,
    count: int,
    seed: int = 0,
    probe_epochs: int = 5,
    lr: float = 0.001,
    batch_size: int = 128,
    workers: int = 1,
) -> ModelGraph:
    """Removes the `count` units with the smallest probe-accuracy gain."""
    units = removable_units(model)
    if count > len(units):
        raise ConfigError(f"cannot remove {count} units; only {len(units)} are removable")
    if count == 0:
        return model.clone()
    frozen = model.set_frozen(True)
    profile = probe_model(
        frozen, dataset, seed=seed, epochs=probe_epochs, lr=lr,
        batch_size=batch_size, workers=workers,
    )
    gain_by_id = {}
    for i in range(1, len(profile.points)):
        pt = profile.points[i]
        gain_by_id[pt.node_id] = profile.accuracies[i] - profile.accuracies[i - 1]
    ranked = sorted(units, key=lambda u: (gain_by_id[u.output_id], u.output_id))
    selection = {u.output_id for u in ranked[:count]}
    for stage, stage_units in _units_by_stage(model).items():
        if stage_units and all(u.output_id in selection for u in stage_units):
            raise StageEmptyingError(
                f"removing {count} units would empty stage {stage}; reduce the count"
            )
    return remove_layers(model, selection)


def _units_by_stage(model: ModelGraph):
    by_stage: dict[str, list] = {}
    for u in structural_units(model):
        by_stage.setdefault(u.stage, []).append(u)
    return by_stage


def sorted_probe_gains(model: ModelGraph, profile) -> list[tuple[float, int]]:
    """(gain, unit id) pairs for removable units, ascending; exposed for audits."""
    removable = {u.output_id for u in removable_units(model)}
    out = []
    for i in range(1, len(profile.points)):
        pt = profile.points[i]
        if pt.node_id in removable:
            out.append((profile.accuracies[i] - profile.accuracies[i - 1], pt.node_id))
    return sorted(out)


__all__ = [
    "BASELINE_METHODS",
    "l1_channel_prune",
    "random_layer_prune",
    "probe_layer_prune",
    "sorted_probe_gains",
]
