"""Stage-1 channel pruning: cluster similar channels per layer and fuse them.

Every prunable channel dimension is reduced from c to max(1, floor(c*keep)).
Coupled dimensions (residual stages) get one shared assignment computed on
the concatenation of all member channel vectors. A consumer's input slices
are reduced either with its producer's assignment ("producer-tied", the
default) or with a fresh clustering of its own input slices ("independent").
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import read_container, write_container
from .cluster import (
    ClusterAssignment,
    cluster_channels,
    distance_matrix,
    fuse_cluster_weights,
)
from .errors import CheckpointFormatError, ConfigError
from .graph import (
    ModelGraph,
    channel_dim_groups,
    coupled_groups_from_dims,
    validate_shapes,
)
from .tensor import Tensor

log = logging.getLogger("fcos.fusion")

ORDERS = ("output-first", "input-first")
INPUT_MODES = ("producer-tied", "independent")


@dataclass
class FusionConfig:
    keep_ratio: float
    metric: str = "cosine"
    scheme: str = "mean"
    order: str = "output-first"
    input_mode: str = "producer-tied"

    def __post_init__(self):
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ConfigError(f"keep ratio must be in (0, 1], got {self.keep_ratio}")
        if self.order not in ORDERS:
            raise ConfigError(f"order must be one of {ORDERS}, got {self.order!r}")
        if self.input_mode not in INPUT_MODES:
            raise ConfigError(f"input mode must be one of {INPUT_MODES}, got {self.input_mode!r}")

    def as_dict(self) -> dict:
        return {
            "keep_ratio": self.keep_ratio,
            "metric": self.metric,
            "scheme": self.scheme,
            "order": self.order,
            "input_mode": self.input_mode,
        }


@dataclass
class PlanEntry:
    kind: str  # "output" or "input"
    node_ids: tuple[int, ...]
    channels_before: int
    channels_after: int
    assignment: np.ndarray
    merge_trace: list[tuple[int, int, float]]


@dataclass
class PrunePlan:
    config: dict
    entries: list[PlanEntry] = field(default_factory=list)


def target_channels(count: int, keep_ratio: float) -> int:
    return max(1, int(np.floor(count * keep_ratio)))


def prune_model_channels(model: ModelGraph, cfg: FusionConfig) -> tuple[ModelGraph, PrunePlan]:
    g = model.clone()
    validate_shapes(g)
    dims = channel_dim_groups(g)
    prunable = [d for d in dims if d.prunable]
    plan = PrunePlan(config=cfg.as_dict())
    if not prunable:
        log.warning("model has no prunable conv dimensions; returning it unchanged")
        return g, plan

    out_dim_of: dict[int, int] = {}
    in_dim_of: dict[int, int] = {}
    for di, d in enumerate(dims):
        for node_id in d.conv_out_members:
            out_dim_of[node_id] = di
        for node_id in d.conv_in_members + d.dense_in_members:
            in_dim_of[node_id] = di
    assignments: dict[int, ClusterAssignment] = {}
    nodes = {n.id: n for n in g.nodes}

    def dim_assignment(di: int) -> ClusterAssignment:
        if di not in assignments:
            d = dims[di]
            vecs = np.concatenate(
                [
                    nodes[i].params["weight"].data.reshape(d.count, -1).astype(np.float64)
                    for i in d.conv_out_members
                ],
                axis=1,
            )
            asg = cluster_channels(vecs, target_channels(d.count, cfg.keep_ratio), cfg.metric)
            assignments[di] = asg
            plan.entries.append(
                PlanEntry(
                    kind="output",
                    node_ids=d.conv_out_members,
                    channels_before=d.count,
                    channels_after=asg.n,
                    assignment=asg.labels.copy(),
                    merge_trace=list(asg.merge_trace),
                )
            )
        return assignments[di]

    def fuse_out(node) -> None:
        asg = dim_assignment(out_dim_of[node.id])
        w = node.params["weight"].data
        node.params["weight"] = Tensor(
            np.ascontiguousarray(fuse_cluster_weights(w, asg, cfg.scheme))
        )
        node.params["bias"] = Tensor(
            fuse_cluster_weights(node.params["bias"].data, asg, cfg.scheme)
        )
        node.c_out = asg.n

    def reduce_in(node) -> None:
        di = in_dim_of.get(node.id)
        if di is None or dims[di].is_input or not dims[di].prunable:
            return
        w = node.params["weight"].data
        slices = np.transpose(w, (1, 0, 2))
        if cfg.input_mode == "producer-tied":
            asg = dim_assignment(di)
        else:
            vecs = slices.reshape(slices.shape[0], -1).astype(np.float64)
            asg = cluster_channels(vecs, target_channels(dims[di].count, cfg.keep_ratio), cfg.metric)
            plan.entries.append(
                PlanEntry(
                    kind="input",
                    node_ids=(node.id,),
                    channels_before=dims[di].count,
                    channels_after=asg.n,
                    assignment=asg.labels.copy(),
                    merge_trace=list(asg.merge_trace),
                )
            )
        fused = fuse_cluster_weights(slices, asg, cfg.scheme)
        node.params["weight"] = Tensor(np.ascontiguousarray(np.transpose(fused, (1, 0, 2))))
        node.c_in = asg.n

    for node in g.nodes:
        if node.kind != "conv1d":
            continue
        if cfg.order == "output-first":
            fuse_out(node)
            reduce_in(node)
        else:
            reduce_in(node)
            fuse_out(node)

    _apply_companions(g, dims, assignments, cfg, plan)
    g.coupled_groups = coupled_groups_from_dims(channel_dim_groups(g))
    validate_shapes(g)
    return g, plan


def _apply_companions(g, dims, assignments, cfg, plan) -> None:
    """Fuses BN vectors, resizes the dense head input, updates pass-through nodes."""
    new_count = {
        di: assignments[di].n if di in assignments else dims[di].count for di in range(len(dims))
    }
    side_dim: dict[tuple[int, str], int] = {}
    for di, d in enumerate(dims):
        for side in d.sides:
            side_dim[side] = di
    for node in g.nodes:
        di_in = side_dim[(node.id, "in")]
        di_out = side_dim[(node.id, "out")]
        if node.kind == "batchnorm":
            asg = assignments.get(di_in)
            if asg is not None:
                for name in ("gamma", "beta", "running_mean", "running_var"):
                    fused = fuse_cluster_weights(node.params[name].data, asg, cfg.scheme)
                    if name == "running_var":
                        fused = np.maximum(fused, 1e-5)
                    node.params[name] = Tensor(fused)
            node.c_in = node.c_out = new_count[di_in]
        elif node.kind == "dense":
            asg = assignments.get(di_in)
            if asg is not None:
                w = node.params["weight"].data
                if cfg.input_mode == "independent":
                    vecs = w.T.astype(np.float64)
                    asg = cluster_channels(
                        vecs, target_channels(dims[di_in].count, cfg.keep_ratio), cfg.metric
                    )
                    plan.entries.append(
                        PlanEntry(
                            kind="input",
                            node_ids=(node.id,),
                            channels_before=dims[di_in].count,
                            channels_after=asg.n,
                            assignment=asg.labels.copy(),
                            merge_trace=list(asg.merge_trace),
                        )
                    )
                fused = fuse_cluster_weights(w.T, asg, cfg.scheme)
                node.params["weight"] = Tensor(np.ascontiguousarray(fused.T))
                node.c_in = asg.n
        elif node.kind in ("relu", "maxpool1d", "gap", "add"):
            node.c_in = new_count[di_in]
            node.c_out = new_count[di_out]


# ---------------------------------------------------------------------------
# plan serialization (audit record next to the checkpoint)


def save_prune_plan(plan: PrunePlan, path) -> None:
    descriptor = {
        "container": "prune-plan",
        "config": plan.config,
        "entries": [
            {
                "kind": e.kind,
                "node_ids": list(e.node_ids),
                "channels_before": e.channels_before,
                "channels_after": e.channels_after,
            }
            for e in plan.entries
        ],
    }
    records = []
    for i, e in enumerate(plan.entries):
        records.append((f"entry{i}.assignment", e.assignment.astype(np.int64)))
        trace = np.array(
            [[a, b, d] for a, b, d in e.merge_trace], dtype=np.float64
        ).reshape(-1, 3)
        records.append((f"entry{i}.trace", trace))
    write_container(path, descriptor, records)


def load_prune_plan(path) -> PrunePlan:
    descriptor, records = read_container(path)
    if descriptor.get("container") != "prune-plan":
        raise CheckpointFormatError(f"{path}: not a prune-plan container")
    plan = PrunePlan(config=descriptor["config"])
    for i, meta in enumerate(descriptor["entries"]):
        trace = records[f"entry{i}.trace"]
        plan.entries.append(
            PlanEntry(
                kind=meta["kind"],
                node_ids=tuple(meta["node_ids"]),
                channels_before=meta["channels_before"],
                channels_after=meta["channels_after"],
                assignment=records[f"entry{i}.assignment"],
                merge_trace=[(int(a), int(b), float(d)) for a, b, d in trace],
            )
        )
    return plan
