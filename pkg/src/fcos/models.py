"""Reference architectures: a plain conv stack and a residual 1D CNN.

Both operate on [B, 2, L] I/Q inputs, end in global average pooling plus a
dense head, and carry unit tags so pruning can address whole blocks.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .graph import (
    INPUT_ID,
    LayerNode,
    ModelGraph,
    channel_dim_groups,
    coupled_groups_from_dims,
    validate_shapes,
)
from .tensor import Tensor, kaiming_uniform

ARCHITECTURES = ("plain-cnn1d", "residual-cnn1d")

PLAIN_DEFAULT_WIDTHS = (16, 32, 64, 64)
RESIDUAL_DEFAULT_WIDTHS = (16, 32, 64)


class _Builder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.nodes: list[LayerNode] = []
        self.preds: dict[int, tuple[int, ...]] = {}
        self._next = 0

    def add(self, kind: str, pred_ids, tag: str, **kw) -> int:
        node = LayerNode(id=self._next, kind=kind, tag=tag, **kw)
        self._next += 1
        self.nodes.append(node)
        self.preds[node.id] = tuple(pred_ids if isinstance(pred_ids, (list, tuple)) else [pred_ids])
        return node.id

    def conv(self, pred: int, c_in: int, c_out: int, k: int, stride: int, tag: str, pad="same") -> int:
        if pad == "same":
            pad_l = (k - 1) // 2
            pad_r = (k - 1) - pad_l
        else:
            pad_l = pad_r = int(pad)
        weight = kaiming_uniform(self.rng, (c_out, c_in, k), fan_in=c_in * k)
        bias = Tensor(np.zeros(c_out, dtype=np.float32))
        return self.add(
            "conv1d", pred, tag, params={"weight": weight, "bias": bias},
            c_in=c_in, c_out=c_out, k=k, stride=stride, pad_l=pad_l, pad_r=pad_r,
        )

    def bn(self, pred: int, c: int, tag: str) -> int:
        params = {
            "gamma": Tensor(np.ones(c, dtype=np.float32)),
            "beta": Tensor(np.zeros(c, dtype=np.float32)),
            "running_mean": Tensor(np.zeros(c, dtype=np.float32)),
            "running_var": Tensor(np.ones(c, dtype=np.float32)),
        }
        return self.add("batchnorm", pred, tag, params=params, c_in=c, c_out=c)

    def relu(self, pred: int, c: int, tag: str) -> int:
        return self.add("relu", pred, tag, c_in=c, c_out=c)

    def pool(self, pred: int, c: int, tag: str, width: int = 2, stride: int = 2) -> int:
        return self.add("maxpool1d", pred, tag, c_in=c, c_out=c, k=width, stride=stride)

    def dense(self, pred: int, f_in: int, f_out: int, tag: str) -> int:
        weight = kaiming_uniform(self.rng, (f_out, f_in), fan_in=f_in)
        bias = Tensor(np.zeros(f_out, dtype=np.float32))
        return self.add(
            "dense", pred, tag, params={"weight": weight, "bias": bias}, c_in=f_in, c_out=f_out
        )


def build_model(
    arch: str,
    widths=None,
    num_classes: int = 4,
    input_shape=(2, 128),
    seed: int = 0,
    kernel: int | None = None,
    blocks_per_stage: int = 2,
) -> ModelGraph:
    """Constructs a seeded, shape-consistent reference model."""
    if arch == "plain-cnn1d":
        return _build_plain(
            widths=tuple(widths or PLAIN_DEFAULT_WIDTHS),
            num_classes=num_classes,
            input_shape=tuple(input_shape),
            seed=seed,
            kernel=kernel or 8,
        )
    if arch == "residual-cnn1d":
        return _build_residual(
            stage_widths=tuple(widths or RESIDUAL_DEFAULT_WIDTHS),
            num_classes=num_classes,
            input_shape=tuple(input_shape),
            seed=seed,
            kernel=kernel or 3,
            blocks_per_stage=blocks_per_stage,
        )
    raise ConfigError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")


def _build_plain(widths, num_classes, input_shape, seed, kernel) -> ModelGraph:
    b = _Builder(np.random.default_rng(seed))
    c_prev, length = input_shape
    prev = INPUT_ID
    for i, w in enumerate(widths, start=1):
        conv = b.conv(prev, c_prev, w, kernel, 1, f"block{i}.conv")
        bn = b.bn(conv, w, f"block{i}.bn")
        prev = b.relu(bn, w, f"block{i}.relu")
        if i < len(widths):  # the head's global pooling replaces a final pool
            prev = b.pool(prev, w, f"pool{i}")
        c_prev = w
    gap = b.add("gap", prev, "gap", c_in=c_prev, c_out=c_prev)
    b.dense(gap, c_prev, num_classes, "head")
    g = ModelGraph(
        nodes=b.nodes,
        preds=b.preds,
        input_shape=input_shape,
        num_classes=num_classes,
        arch="plain-cnn1d",
        meta={"widths": list(widths), "kernel": kernel, "seed": seed},
    )
    g.coupled_groups = coupled_groups_from_dims(channel_dim_groups(g))
    validate_shapes(g)
    return g


def _build_residual(stage_widths, num_classes, input_shape, seed, kernel, blocks_per_stage) -> ModelGraph:
    b = _Builder(np.random.default_rng(seed))
    c_in, _ = input_shape
    stem_k = 7
    conv = b.conv(INPUT_ID, c_in, stage_widths[0], stem_k, 1, "stem.conv")
    bn = b.bn(conv, stage_widths[0], "stem.bn")
    prev = b.relu(bn, stage_widths[0], "stem.relu")
    c_prev = stage_widths[0]
    for s, width in enumerate(stage_widths, start=1):
        for blk in range(1, blocks_per_stage + 1):
            tagb = f"stage{s}.block{blk}"
            downsample = blk == 1 and width != c_prev
            stride = 2 if downsample else 1
            block_in = prev
            c1 = b.conv(block_in, c_prev, width, kernel, stride, f"{tagb}.conv1")
            n1 = b.bn(c1, width, f"{tagb}.bn1")
            r1 = b.relu(n1, width, f"{tagb}.relu1")
            c2 = b.conv(r1, width, width, kernel, 1, f"{tagb}.conv2")
            n2 = b.bn(c2, width, f"{tagb}.bn2")
            if downsample:
                pc = b.conv(block_in, c_prev, width, 1, stride, f"{tagb}.proj.conv", pad=0)
                shortcut = b.bn(pc, width, f"{tagb}.proj.bn")
            else:
                shortcut = block_in
            added = b.add("add", (n2, shortcut), f"{tagb}.add", c_in=width, c_out=width)
            prev = b.relu(added, width, f"{tagb}.out")
            c_prev = width
    gap = b.add("gap", prev, "gap", c_in=c_prev, c_out=c_prev)
    b.dense(gap, c_prev, num_classes, "head")
    g = ModelGraph(
        nodes=b.nodes,
        preds=b.preds,
        input_shape=input_shape,
        num_classes=num_classes,
        arch="residual-cnn1d",
        meta={
            "widths": list(stage_widths),
            "kernel": kernel,
            "blocks_per_stage": blocks_per_stage,
            "seed": seed,
        },
    )
    g.coupled_groups = coupled_groups_from_dims(channel_dim_groups(g))
    validate_shapes(g)
    return g
