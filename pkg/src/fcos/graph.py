"""Layer DAG: nodes, shape validation, channel-dimension coupling, editing.

A ModelGraph is an ordered (topological) list of LayerNodes plus a
predecessor map. Graphs are treated as immutable snapshots: every editing
operation clones first and returns a new graph. The special id INPUT_ID
refers to the network input.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import RemovalRejected, ShapeError, UsageError
from .kernels import conv1d_out_length
from .tensor import Tensor

INPUT_ID = -1

LAYER_KINDS = ("conv1d", "batchnorm", "relu", "maxpool1d", "gap", "dense", "add")
BUFFER_NAMES = frozenset({"running_mean", "running_var"})


@dataclass
class LayerNode:
    id: int
    kind: str
    params: dict[str, Tensor] = field(default_factory=dict)
    c_in: int = 0
    c_out: int = 0
    k: int = 1
    stride: int = 1
    pad_l: int = 0
    pad_r: int = 0
    frozen: bool = False
    tag: str = ""

    def clone(self) -> "LayerNode":
        return LayerNode(
            id=self.id,
            kind=self.kind,
            params={name: t.copy() for name, t in self.params.items()},
            c_in=self.c_in,
            c_out=self.c_out,
            k=self.k,
            stride=self.stride,
            pad_l=self.pad_l,
            pad_r=self.pad_r,
            frozen=self.frozen,
            tag=self.tag,
        )

    def trainable_params(self):
        if self.frozen:
            return
        for name in sorted(self.params):
            if name not in BUFFER_NAMES:
                yield name, self.params[name]


@dataclass
class ModelGraph:
    nodes: list[LayerNode]
    preds: dict[int, tuple[int, ...]]
    input_shape: tuple[int, int]  # (channels, length)
    num_classes: int
    coupled_groups: list[frozenset[tuple[int, str]]] = field(default_factory=list)
    arch: str = ""
    meta: dict = field(default_factory=dict)

    def node(self, node_id: int) -> LayerNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise UsageError(f"no node with id {node_id}")

    @property
    def output_id(self) -> int:
        return self.nodes[-1].id

    def node_ids(self) -> set[int]:
        return {n.id for n in self.nodes}

    def clone(self) -> "ModelGraph":
        return ModelGraph(
            nodes=[n.clone() for n in self.nodes],
            preds={k: tuple(v) for k, v in self.preds.items()},
            input_shape=tuple(self.input_shape),
            num_classes=self.num_classes,
            coupled_groups=list(self.coupled_groups),
            arch=self.arch,
            meta=dict(self.meta),
        )

    def astype(self, dtype: str) -> "ModelGraph":
        g = self.clone()
        for n in g.nodes:
            n.params = {name: t.astype(dtype) for name, t in n.params.items()}
        return g

    def set_frozen(self, frozen: bool) -> "ModelGraph":
        g = self.clone()
        for n in g.nodes:
            n.frozen = frozen
        return g

    def zero_grads(self) -> None:
        for n in self.nodes:
            for t in n.params.values():
                t.zero_grad()

    def trainable_count(self) -> int:
        total = 0
        for n in self.nodes:
            for name, t in n.params.items():
                if name not in BUFFER_NAMES:
                    total += t.size
        return total

    def state_signature(self) -> str:
        """sha256 over all parameter bytes in node/param order."""
        h = hashlib.sha256()
        for n in self.nodes:
            for name in sorted(n.params):
                h.update(f"{n.id}.{name}".encode())
                h.update(n.params[name].data.tobytes())
        return h.hexdigest()

    def find_by_tag(self, tag: str) -> LayerNode:
        for n in self.nodes:
            if n.tag == tag:
                return n
        raise UsageError(f"no node tagged {tag!r}")


# ---------------------------------------------------------------------------
# shape propagation and validation


def propagate_shapes(graph: ModelGraph) -> dict[int, tuple[int, int | None]]:
    """Returns {node id: (channels, length)}; length is None after flattening."""
    shapes: dict[int, tuple[int, int | None]] = {INPUT_ID: tuple(graph.input_shape)}
    seen: set[int] = set()
    for node in graph.nodes:
        pred_ids = graph.preds.get(node.id)
        if pred_ids is None:
            raise ShapeError(f"node {node.id} ({node.tag}) has no predecessor entry")
        for p in pred_ids:
            if p != INPUT_ID and p not in seen:
                raise ShapeError(f"node {node.id} ({node.tag}) consumes {p} before it is produced")
        ins = [shapes[p] for p in pred_ids]
        shapes[node.id] = _node_output_shape(node, ins)
        seen.add(node.id)
    return shapes


def _node_output_shape(node: LayerNode, ins) -> tuple[int, int | None]:
    where = f"node {node.id} ({node.kind}{', ' + node.tag if node.tag else ''})"
    if node.kind == "conv1d":
        (c, length), = ins
        w = node.params["weight"].data
        if length is None:
            raise ShapeError(f"{where}: conv applied after flatten")
        if w.shape != (node.c_out, node.c_in, node.k):
            raise ShapeError(f"{where}: weight shape {w.shape} != ({node.c_out},{node.c_in},{node.k})")
        if node.params["bias"].data.shape != (node.c_out,):
            raise ShapeError(f"{where}: bias length != c_out")
        if c != node.c_in:
            raise ShapeError(f"{where}: input has {c} channels, weight expects {node.c_in}")
        return node.c_out, conv1d_out_length(length, node.k, node.stride, node.pad_l, node.pad_r)
    if node.kind == "batchnorm":
        (c, length), = ins
        for name in ("gamma", "beta", "running_mean", "running_var"):
            if node.params[name].data.shape != (c,):
                raise ShapeError(f"{where}: {name} length {node.params[name].data.shape} != channels {c}")
        return c, length
    if node.kind == "relu":
        (c, length), = ins
        return c, length
    if node.kind == "maxpool1d":
        (c, length), = ins
        if length is None:
            raise ShapeError(f"{where}: pool applied after flatten")
        out = (length - node.k) // node.stride + 1
        if out <= 0:
            raise ShapeError(f"{where}: pool window {node.k} exceeds length {length}")
        return c, out
    if node.kind == "gap":
        (c, length), = ins
        if length is None:
            raise ShapeError(f"{where}: gap applied after flatten")
        return c, None
    if node.kind == "dense":
        (c, length), = ins
        if length is not None:
            raise ShapeError(f"{where}: dense requires flattened input (apply gap first)")
        w = node.params["weight"].data
        if w.shape[1] != c:
            raise ShapeError(f"{where}: weight expects {w.shape[1]} features, input has {c}")
        if node.params["bias"].data.shape != (w.shape[0],):
            raise ShapeError(f"{where}: bias length != out features")
        return w.shape[0], None
    if node.kind == "add":
        if len(ins) != 2:
            raise ShapeError(f"{where}: residual add needs exactly 2 inputs")
        (c1, l1), (c2, l2) = ins
        if c1 != c2 or l1 != l2:
            raise ShapeError(f"{where}: add inputs differ: ({c1},{l1}) vs ({c2},{l2})")
        return c1, l1
    raise ShapeError(f"{where}: unknown layer kind {node.kind!r}")


def validate_shapes(graph: ModelGraph) -> None:
    """Raises ShapeError naming the first offending node; checks coupling too."""
    shapes = propagate_shapes(graph)
    out_c, out_l = shapes[graph.output_id]
    if graph.nodes[-1].kind != "dense" or out_c != graph.num_classes:
        raise ShapeError(
            f"output node must be a dense head with {graph.num_classes} classes, got {out_c}"
        )
    counts = side_channel_counts(graph, shapes)
    for group in graph.coupled_groups:
        vals = {counts[side] for side in group if side in counts}
        if len(vals) > 1:
            raise ShapeError(f"coupled group {sorted(group)} has mixed channel counts {sorted(vals)}")


def side_channel_counts(graph: ModelGraph, shapes=None) -> dict[tuple[int, str], int]:
    shapes = shapes or propagate_shapes(graph)
    counts: dict[tuple[int, str], int] = {(INPUT_ID, "out"): graph.input_shape[0]}
    for node in graph.nodes:
        counts[(node.id, "in")] = shapes[graph.preds[node.id][0]][0]
        counts[(node.id, "out")] = shapes[node.id][0]
    return counts


# ---------------------------------------------------------------------------
# channel-dimension coupling (union-find over node sides)


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


@dataclass
class DimGroup:
    """One shared channel dimension: every listed side has the same count."""

    sides: frozenset[tuple[int, str]]
    count: int
    conv_out_members: tuple[int, ...]  # conv node ids whose output lives here
    conv_in_members: tuple[int, ...]  # conv node ids whose input lives here
    dense_in_members: tuple[int, ...]
    bn_members: tuple[int, ...]
    is_input: bool
    is_classes: bool

    @property
    def prunable(self) -> bool:
        return not self.is_input and not self.is_classes and bool(self.conv_out_members)


def channel_dim_groups(graph: ModelGraph) -> list[DimGroup]:
    """Derives the coupled channel dimensions of the graph.

    Convolution and dense outputs open fresh dimensions; every other kind
    passes its input dimension through, and residual adds unify the
    dimensions of both operands.
    """
    uf = _UnionFind()
    out_side: dict[int, tuple[int, str]] = {INPUT_ID: (INPUT_ID, "out")}
    for node in graph.nodes:
        pred_ids = graph.preds[node.id]
        in_repr = out_side[pred_ids[0]]
        uf.union((node.id, "in"), in_repr)
        if node.kind in ("conv1d", "dense"):
            out_side[node.id] = (node.id, "out")
        elif node.kind == "add":
            uf.union((node.id, "in"), out_side[pred_ids[1]])
            uf.union((node.id, "out"), (node.id, "in"))
            out_side[node.id] = (node.id, "out")
        else:
            uf.union((node.id, "out"), (node.id, "in"))
            out_side[node.id] = (node.id, "out")

    members: dict = {}
    for node in graph.nodes:
        for side in ("in", "out"):
            members.setdefault(uf.find((node.id, side)), set()).add((node.id, side))
    members.setdefault(uf.find((INPUT_ID, "out")), set()).add((INPUT_ID, "out"))

    counts = side_channel_counts(graph)
    kinds = {n.id: n.kind for n in graph.nodes}
    groups = []
    for root, sides in sorted(members.items()):
        conv_out = tuple(sorted(i for i, s in sides if s == "out" and kinds.get(i) == "conv1d"))
        conv_in = tuple(sorted(i for i, s in sides if s == "in" and kinds.get(i) == "conv1d"))
        dense_in = tuple(sorted(i for i, s in sides if s == "in" and kinds.get(i) == "dense"))
        dense_out = [i for i, s in sides if s == "out" and kinds.get(i) == "dense"]
        bn = tuple(sorted({i for i, s in sides if kinds.get(i) == "batchnorm"}))
        any_side = next(iter(sides))
        groups.append(
            DimGroup(
                sides=frozenset(sides),
                count=counts[any_side],
                conv_out_members=conv_out,
                conv_in_members=conv_in,
                dense_in_members=dense_in,
                bn_members=bn,
                is_input=(INPUT_ID, "out") in sides,
                is_classes=bool(dense_out),
            )
        )
    return groups


def coupled_groups_from_dims(groups: list[DimGroup]) -> list[frozenset[tuple[int, str]]]:
    """Groups worth recording on the graph: >1 producer (residual coupling)."""
    return [g.sides for g in groups if len(g.conv_out_members) > 1]


# ---------------------------------------------------------------------------
# removable units and layer removal


@dataclass
class RemovableUnit:
    name: str
    stage: str
    output_id: int  # probe point and removal handle
    input_id: int  # node feeding the unit
    node_ids: frozenset[int]


def structural_units(graph: ModelGraph) -> list[RemovableUnit]:
    """All probe-able units in order; includes non-removable downsample blocks."""
    by_prefix: dict[str, list[LayerNode]] = {}
    order: list[str] = []
    for node in graph.nodes:
        if "." not in node.tag:
            continue
        prefix = node.tag.rsplit(".", 1)[0]
        if prefix.endswith(".proj"):
            prefix = prefix.rsplit(".", 1)[0]
        if prefix in ("stem", "head"):
            continue
        if prefix not in by_prefix:
            by_prefix[prefix] = []
            order.append(prefix)
        by_prefix[prefix].append(node)
    units = []
    for prefix in order:
        nodes = by_prefix[prefix]
        out_node = nodes[-1]
        first = nodes[0]
        stage = prefix.split(".")[0] if "." in prefix else "backbone"
        units.append(
            RemovableUnit(
                name=prefix,
                stage=stage,
                output_id=out_node.id,
                input_id=graph.preds[first.id][0],
                node_ids=frozenset(n.id for n in nodes),
            )
        )
    return units


def removable_units(graph: ModelGraph) -> list[RemovableUnit]:
    """Units that remove_layers accepts: plain conv units and identity blocks."""
    tags = {n.id: n.tag for n in graph.nodes}
    out = []
    for unit in structural_units(graph):
        has_proj = any(".proj." in tags[i] for i in unit.node_ids)
        if not has_proj:
            out.append(unit)
    return out


def remove_layers(graph: ModelGraph, ids: set[int]) -> ModelGraph:
    """Removes whole units identified by their output node ids.

    Plain conv units whose input/output widths differ are spliced by fusing
    the consumer's input-channel slices down to the producer width; removals
    that would require widening a consumer are rejected.
    """
    if not ids:
        return graph.clone()
    units = {u.output_id: u for u in structural_units(graph)}
    removable = {u.output_id for u in removable_units(graph)}
    for i in sorted(ids):
        if i not in units:
            raise RemovalRejected(f"node {i} is not a removable unit handle", node_id=i)
        if i not in removable:
            raise RemovalRejected(
                f"unit {units[i].name} (node {i}) carries a projection shortcut and cannot be spliced",
                node_id=i,
            )

    g = graph.clone()
    before_params = g.trainable_count()
    redirect: dict[int, int] = {}
    drop: set[int] = set()
    for i in sorted(ids):
        unit = units[i]
        redirect[unit.output_id] = unit.input_id
        drop |= unit.node_ids

    def resolve(node_id: int) -> int:
        while node_id in redirect:
            node_id = redirect[node_id]
        return node_id

    g.nodes = [n for n in g.nodes if n.id not in drop]
    g.preds = {
        n.id: tuple(resolve(p) for p in graph.preds[n.id]) for n in g.nodes
    }
    g.coupled_groups = [
        frozenset(s for s in grp if s[0] not in drop) for grp in g.coupled_groups
    ]
    g.coupled_groups = [grp for grp in g.coupled_groups if len(grp) > 1]
    _repair_input_widths(g)
    validate_shapes(g)
    if g.trainable_count() >= before_params:
        raise RemovalRejected("removal did not reduce parameter count")
    return g


def _repair_input_widths(g: ModelGraph) -> None:
    """After a splice, narrow consumer weights to the new producer width."""
    from .cluster import reduce_slices  # local import: cluster has no graph dep

    shapes: dict[int, tuple[int, int | None]] = {INPUT_ID: tuple(g.input_shape)}
    for node in g.nodes:
        ins = [shapes[p] for p in g.preds[node.id]]
        c_in = ins[0][0]
        if node.kind == "conv1d":
            w = node.params["weight"].data
            if w.shape[1] != c_in:
                if c_in > w.shape[1]:
                    raise RemovalRejected(
                        f"node {node.id} ({node.tag}): cannot widen input {w.shape[1]} -> {c_in}",
                        node_id=node.id,
                    )
                slices = np.transpose(w, (1, 0, 2))
                fused = reduce_slices(slices, c_in)
                node.params["weight"] = Tensor(
                    np.ascontiguousarray(np.transpose(fused, (1, 0, 2)))
                )
                node.c_in = c_in
        elif node.kind == "dense":
            w = node.params["weight"].data
            if w.shape[1] != c_in:
                if c_in > w.shape[1]:
                    raise RemovalRejected(
                        f"node {node.id} ({node.tag}): cannot widen input {w.shape[1]} -> {c_in}",
                        node_id=node.id,
                    )
                fused = reduce_slices(w.T, c_in)
                node.params["weight"] = Tensor(np.ascontiguousarray(fused.T))
        elif node.kind in ("batchnorm", "relu", "maxpool1d", "gap", "add"):
            node.c_in = c_in
            node.c_out = c_in
        shapes[node.id] = _node_output_shape(node, ins)
