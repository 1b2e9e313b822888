"""Graph execution: forward passes, loss, and reverse-mode gradients."""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError, UsageError
from .graph import INPUT_ID, ModelGraph
from .tensor import DTYPES, Tensor


def graph_dtype(model: ModelGraph) -> str:
    for node in model.nodes:
        for t in node.params.values():
            return t.dtype
    return "fp32"


def _check_finite(arr: np.ndarray, node_id: int, phase: str) -> None:
    # a single-pass reduction: any NaN/Inf propagates into the sum
    if not np.isfinite(arr.sum()):
        raise NumericError(f"non-finite values in {phase} at node {node_id}", node_id=node_id)


class Execution:
    """One forward pass over a graph, optionally taped for backward.

    Training-mode forwards update batch-norm running statistics in place;
    evaluation forwards never mutate the model.
    """

    def __init__(self, model: ModelGraph):
        self.model = model
        self.dtype = graph_dtype(model)
        self.training = False
        self._outputs: dict[int, np.ndarray] | None = None
        self._caches: dict[int, object] = {}
        self._dlogits: np.ndarray | None = None
        self.captured: dict[int, np.ndarray] = {}

    def forward(self, batch, training: bool = False, capture=()) -> np.ndarray:
        x = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
        if x.ndim != 3 or x.shape[1] != self.model.input_shape[0]:
            raise ShapeError(
                f"batch shape {x.shape} incompatible with input channels "
                f"{self.model.input_shape[0]}"
            )
        x = np.ascontiguousarray(x, dtype=DTYPES[self.dtype])
        self.training = training
        self._caches = {}
        self._dlogits = None
        self.captured = {}
        capture = set(capture)
        outputs: dict[int, np.ndarray] = {INPUT_ID: x}
        for node in self.model.nodes:
            ins = [outputs[p] for p in self.model.preds[node.id]]
            out, cache = self._run_node(node, ins, training)
            _check_finite(out, node.id, "forward")
            outputs[node.id] = out
            if training:
                self._caches[node.id] = cache
            if node.id in capture:
                self.captured[node.id] = out.copy()
        missing = capture - set(outputs)
        if missing:
            raise UsageError(f"capture points {sorted(missing)} are not in the graph")
        self._outputs = outputs
        return outputs[self.model.output_id]

    def _run_node(self, node, ins, training):
        p = node.params
        if node.kind == "conv1d":
            return kernels.conv1d_forward(
                ins[0], p["weight"].data, p["bias"].data, node.stride, node.pad_l, node.pad_r
            )
        if node.kind == "batchnorm":
            y, new_rm, new_rv, cache = kernels.batchnorm_forward(
                ins[0], p["gamma"].data, p["beta"].data,
                p["running_mean"].data, p["running_var"].data, training,
            )
            if training:
                p["running_mean"] = Tensor(new_rm)
                p["running_var"] = Tensor(new_rv)
            return y, cache
        if node.kind == "relu":
            return kernels.relu_forward(ins[0])
        if node.kind == "maxpool1d":
            return kernels.maxpool1d_forward(ins[0], node.k, node.stride)
        if node.kind == "gap":
            return kernels.global_avg_pool_forward(ins[0])
        if node.kind == "dense":
            return kernels.dense_forward(ins[0], p["weight"].data, p["bias"].data)
        if node.kind == "add":
            return kernels.add_forward(ins[0], ins[1])
        raise ShapeError(f"node {node.id}: unknown kind {node.kind!r}")

    def logits(self) -> np.ndarray:
        if self._outputs is None:
            raise UsageError("forward() has not been run")
        return self._outputs[self.model.output_id]

    def loss(self, labels: np.ndarray) -> float:
        """Softmax cross-entropy against integer labels; tapes dlogits."""
        if self._outputs is None:
            raise UsageError("forward() must run before loss()")
        value, dlogits = kernels.softmax_cross_entropy(self.logits(), np.asarray(labels))
        if not np.isfinite(value):
            raise NumericError("non-finite loss value", node_id=self.model.output_id)
        self._dlogits = dlogits
        return value

    def backward(self) -> None:
        """Populates .grad on every trainable parameter of non-frozen nodes."""
        if self._dlogits is None:
            raise UsageError("loss() must run (in training mode) before backward()")
        if not self.training:
            raise UsageError("backward() requires a training-mode forward")
        grads: dict[int, np.ndarray] = {self.model.output_id: self._dlogits}

        def grab(node_id: int) -> np.ndarray:
            g = grads.pop(node_id, None)
            if g is None:
                raise UsageError(f"node {node_id} received no output gradient")
            return g

        def feed(node_id: int, g: np.ndarray) -> None:
            if node_id == INPUT_ID:
                return
            if node_id in grads:
                grads[node_id] = grads[node_id] + g
            else:
                grads[node_id] = g

        for node in reversed(self.model.nodes):
            gy = grab(node.id)
            cache = self._caches[node.id]
            pred_ids = self.model.preds[node.id]
            if node.kind == "conv1d":
                gx, gw, gb = kernels.conv1d_backward(cache, gy)
                self._store(node, {"weight": gw, "bias": gb})
                feed(pred_ids[0], gx)
            elif node.kind == "batchnorm":
                gx, ggamma, gbeta = kernels.batchnorm_backward(cache, gy)
                self._store(node, {"gamma": ggamma, "beta": gbeta})
                feed(pred_ids[0], gx)
            elif node.kind == "relu":
                feed(pred_ids[0], kernels.relu_backward(cache, gy))
            elif node.kind == "maxpool1d":
                feed(pred_ids[0], kernels.maxpool1d_backward(cache, gy))
            elif node.kind == "gap":
                feed(pred_ids[0], kernels.global_avg_pool_backward(cache, gy))
            elif node.kind == "dense":
                gx, gw, gb = kernels.dense_backward(cache, gy)
                self._store(node, {"weight": gw, "bias": gb})
                feed(pred_ids[0], gx)
            elif node.kind == "add":
                ga, gb2 = kernels.add_backward(cache, gy)
                feed(pred_ids[0], ga)
                feed(pred_ids[1], gb2)
        self._dlogits = None

    def _store(self, node, grad_map: dict[str, np.ndarray]) -> None:
        if node.frozen:
            return
        for name, g in grad_map.items():
            _check_finite(g, node.id, f"backward ({name})")
            node.params[name].accumulate_grad(g)


def forward(model: ModelGraph, batch, training: bool = False) -> np.ndarray:
    """Single forward pass returning logits [B, K]."""
    return Execution(model).forward(batch, training=training)


def predict(model: ModelGraph, batch) -> np.ndarray:
    """Argmax class ids; ties resolve to the lowest class index."""
    return np.argmax(forward(model, batch), axis=1)
