"""Layer collapse diagnosis: linear probes over frozen intermediate features.

The profile is a sequence of probe accuracies whose first entry is a
baseline probe trained on the reduced raw input. A position p >= 2 in that
sequence is flagged as collapsed when |Acc_p - Acc_{p-1}| <= beta, i.e. the
layer behind it added (or destroyed) almost nothing linearly separable.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset import SignalDataset
from .engine import Execution
from .errors import ConfigError, DegenerateDataError, UsageError
from .graph import ModelGraph, remove_layers, removable_units, structural_units
from .metrics import PruneReport, count_params_flops, evaluate
from .train import TrainSettings, train_model
from .util import run_parallel

log = logging.getLogger("fcos.probe")

REDUCTIONS = ("gap", "flatten")


@dataclass
class ProbePoint:
    node_id: int | None  # None marks the raw-input baseline
    label: str


@dataclass
class ProbeProfile:
    points: list[ProbePoint]
    accuracies: list[float]
    seeds: list[int]
    reduction: str = "gap"

    def __post_init__(self):
        for acc in self.accuracies:
            if not 0.0 <= acc <= 1.0:
                raise UsageError(f"probe accuracy {acc} outside [0, 1]")


@dataclass
class CollapseDiagnosis:
    threshold: float
    deltas: list[float | None]  # aligned with the profile; first entry None
    flagged: list[int]  # 1-based positions into the profile sequence


def probe_points(model: ModelGraph) -> list[ProbePoint]:
    """Raw-input baseline followed by every block/unit output in order."""
    pts = [ProbePoint(node_id=None, label="input")]
    for unit in structural_units(model):
        pts.append(ProbePoint(node_id=unit.output_id, label=unit.name))
    return pts


def _reduce(act: np.ndarray, reduction: str) -> np.ndarray:
    if reduction == "gap":
        return act.mean(axis=2) if act.ndim == 3 else act
    if reduction == "flatten":
        return act.reshape(act.shape[0], -1)
    raise ConfigError(f"unknown feature reduction {reduction!r}; expected one of {REDUCTIONS}")


def extract_feature_map(
    model: ModelGraph,
    node_ids,
    dataset: SignalDataset,
    split: str,
    reduction: str = "gap",
    batch_size: int = 512,
) -> dict[int | None, np.ndarray]:
    """Features for several probe points from shared forward passes.

    The model must be fully frozen; node_ids may include None for the
    raw-input baseline.
    """
    if any(not n.frozen for n in model.nodes):
        raise UsageError("extract features on a frozen model (freeze gradients first)")
    want = [i for i in node_ids if i is not None]
    known = model.node_ids()
    missing = [i for i in want if i not in known]
    if missing:
        raise UsageError(f"probe points {missing} are not in the graph")
    idx = dataset.indices(split)
    chunks: dict[int | None, list[np.ndarray]] = {i: [] for i in node_ids}
    ex = Execution(model)
    for start in range(0, idx.size, batch_size):
        sel = idx[start : start + batch_size]
        x = dataset.samples[sel]
        ex.forward(x, training=False, capture=want)
        for i in node_ids:
            act = x if i is None else ex.captured[i]
            chunks[i].append(_reduce(act, reduction).astype(np.float32))
    return {i: np.concatenate(parts, axis=0) for i, parts in chunks.items()}


def extract_features(
    model: ModelGraph,
    node_id: int | None,
    dataset: SignalDataset,
    split: str,
    reduction: str = "gap",
) -> np.ndarray:
    """Reduced activations at one probe point for every sample of the split."""
    return extract_feature_map(model, [node_id], dataset, split, reduction)[node_id]


class LinearProbe:
    """Multiclass linear softmax classifier trained with Adam."""

    def __init__(self, n_features: int, n_classes: int, seed: int):
        rng = np.random.default_rng(seed)
        bound = np.sqrt(6.0 / n_features)
        self.w = rng.uniform(-bound, bound, size=(n_classes, n_features)).astype(np.float32)
        self.b = np.zeros(n_classes, dtype=np.float32)
        self._rng = rng
        self._m = [np.zeros_like(self.w), np.zeros_like(self.b)]
        self._v = [np.zeros_like(self.w), np.zeros_like(self.b)]
        self._t = 0

    def fit(self, feats, labels, epochs=5, lr=0.001, batch_size=128):
        n = feats.shape[0]
        for _ in range(epochs):
            order = self._rng.permutation(n)
            for start in range(0, n, batch_size):
                sel = order[start : start + batch_size]
                logits, cache = kernels.dense_forward(feats[sel], self.w, self.b)
                _, dlogits = kernels.softmax_cross_entropy(logits, labels[sel])
                _, gw, gb = kernels.dense_backward(cache, dlogits)
                self._adam_step([gw, gb], lr)
        return self

    def _adam_step(self, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
        self._t += 1
        for p, g, m, v in zip((self.w, self.b), grads, self._m, self._v):
            m[...] = b1 * m + (1 - b1) * g
            v[...] = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1**self._t)
            vhat = v / (1 - b2**self._t)
            p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype, copy=False)

    def accuracy(self, feats, labels) -> float:
        logits, _ = kernels.dense_forward(feats, self.w, self.b)
        return float((np.argmax(logits, axis=1) == labels).mean())


def train_probe(
    train_feats,
    train_labels,
    test_feats,
    test_labels,
    seed: int,
    num_classes: int | None = None,
    epochs: int = 5,
    lr: float = 0.001,
    batch_size: int = 128,
) -> tuple[LinearProbe, float]:
    """Fits a linear probe on train features; returns (probe, test accuracy)."""
    if train_feats.shape[0] != train_labels.shape[0]:
        raise UsageError("features and labels are misaligned")
    classes = np.unique(train_labels)
    if classes.size < 2:
        raise DegenerateDataError("probe training needs at least 2 classes")
    k = int(num_classes if num_classes is not None else train_labels.max() + 1)
    probe = LinearProbe(train_feats.shape[1], k, seed)
    probe.fit(train_feats, train_labels, epochs=epochs, lr=lr, batch_size=batch_size)
    return probe, probe.accuracy(test_feats, test_labels)


def probe_model(
    model: ModelGraph,
    dataset: SignalDataset,
    seed: int = 0,
    epochs: int = 5,
    lr: float = 0.001,
    batch_size: int = 128,
    reduction: str = "gap",
    workers: int = 1,
) -> ProbeProfile:
    """Probes every unit output (plus the raw-input baseline) of a frozen model."""
    points = probe_points(model)
    ids = [p.node_id for p in points]
    train_f = extract_feature_map(model, ids, dataset, "train", reduction)
    test_f = extract_feature_map(model, ids, dataset, "test", reduction)
    train_y = dataset.labels[dataset.indices("train")]
    test_y = dataset.labels[dataset.indices("test")]
    seeds = [seed * 1000 + i for i in range(len(points))]

    def _one(i: int) -> float:
        _, acc = train_probe(
            train_f[ids[i]], train_y, test_f[ids[i]], test_y,
            seed=seeds[i], num_classes=dataset.num_classes,
            epochs=epochs, lr=lr, batch_size=batch_size,
        )
        return acc

    accs = run_parallel(_one, range(len(points)), workers)
    return ProbeProfile(points=points, accuracies=accs, seeds=seeds, reduction=reduction)


def diagnose_collapse(profile, beta: float) -> CollapseDiagnosis:
    """Flags sequence positions whose accuracy moved <= beta vs the previous one."""
    if beta <= 0:
        raise ConfigError(f"layer redundancy threshold must be positive, got {beta}")
    accs = profile.accuracies if isinstance(profile, ProbeProfile) else list(profile)
    if len(accs) < 2:
        raise UsageError("diagnosis needs a profile with at least 2 points")
    deltas: list[float | None] = [None]
    flagged: list[int] = []
    for i in range(1, len(accs)):
        d = abs(accs[i] - accs[i - 1])
        deltas.append(d)
        if d <= beta:
            flagged.append(i + 1)  # 1-based position in the sequence
    return CollapseDiagnosis(threshold=beta, deltas=deltas, flagged=flagged)


def write_probe_csv(profile: ProbeProfile, diagnosis: CollapseDiagnosis, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "point", "node_id", "accuracy", "delta", "flagged"])
        for i, (pt, acc) in enumerate(zip(profile.points, profile.accuracies)):
            delta = diagnosis.deltas[i]
            w.writerow(
                [
                    i + 1,
                    pt.label,
                    "" if pt.node_id is None else pt.node_id,
                    acc,
                    "" if delta is None else delta,
                    (i + 1) in diagnosis.flagged,
                ]
            )


@dataclass
class LacdResult:
    model: ModelGraph
    profile: ProbeProfile
    diagnosis: CollapseDiagnosis
    report: PruneReport
    removed_units: list[str] = field(default_factory=list)
    curve: list[tuple[int, str, float]] = field(default_factory=list)
    warm_model: ModelGraph | None = None


def select_removals(model: ModelGraph, profile: ProbeProfile, diagnosis: CollapseDiagnosis) -> list[int]:
    """Maps flagged profile positions to removable unit ids, guarding stages.

    Flagged points that sit on non-removable units (projection blocks) are
    skipped. If a stage's every unit would go, the unit with the highest
    probe-accuracy gain is kept back.
    """
    unit_by_out = {u.output_id: u for u in structural_units(model)}
    removable = {u.output_id for u in removable_units(model)}
    gains = {}
    chosen: dict[int, object] = {}
    for pos in diagnosis.flagged:
        pt = profile.points[pos - 1]
        assert pt.node_id is not None
        gains[pt.node_id] = profile.accuracies[pos - 1] - profile.accuracies[pos - 2]
        if pt.node_id not in removable:
            log.info("flagged unit %s is not removable; skipping", unit_by_out[pt.node_id].name)
            continue
        chosen[pt.node_id] = unit_by_out[pt.node_id]

    by_stage: dict[str, list] = {}
    for u in structural_units(model):
        by_stage.setdefault(u.stage, []).append(u)
    for stage, units in by_stage.items():
        if units and all(u.output_id in chosen for u in units):
            keep = max(units, key=lambda u: (gains.get(u.output_id, float("-inf")), -u.output_id))
            log.warning(
                "refusing to empty stage %s; keeping highest-gain unit %s", stage, keep.name
            )
            del chosen[keep.output_id]
    return sorted(chosen)


def run_lacd(
    model: ModelGraph,
    dataset: SignalDataset,
    beta: float = 0.005,
    final_epochs: int = 80,
    warm_epochs: int = 20,
    probe_epochs: int = 5,
    lr: float = 0.001,
    batch_size: int = 128,
    optimizer: str = "adam",
    seed: int = 0,
    reduction: str = "gap",
    workers: int = 1,
    track_test: bool = False,
) -> LacdResult:
    """Warm fine-tune, probe, flag, remove, and fine-tune again.

    The report compares the incoming (stage-1) model against the final one.
    """
    orig_params, orig_flops = count_params_flops(model)
    orig_acc, orig_snr = evaluate(model, dataset, "test")

    if warm_epochs > 0:
        warm = train_model(
            model, dataset,
            TrainSettings(epochs=warm_epochs, lr=lr, batch_size=batch_size,
                          optimizer=optimizer, seed=seed),
        ).model
    else:
        warm = model.clone()

    frozen = warm.set_frozen(True)
    profile = probe_model(
        frozen, dataset, seed=seed, epochs=probe_epochs, lr=lr,
        batch_size=batch_size, reduction=reduction, workers=workers,
    )
    checksum_before = frozen.state_signature()
    diagnosis = diagnose_collapse(profile, beta)
    assert frozen.state_signature() == checksum_before, "probing must not mutate the model"

    removal_ids = select_removals(warm, profile, diagnosis)
    removed_names = [u.name for u in structural_units(warm) if u.output_id in removal_ids]
    pruned = remove_layers(warm, set(removal_ids)) if removal_ids else warm

    final = train_model(
        pruned, dataset,
        TrainSettings(epochs=final_epochs, lr=lr, batch_size=batch_size,
                      optimizer=optimizer, seed=seed + 1),
        track_test=track_test,
    )
    new_params, new_flops = count_params_flops(final.model)
    new_acc, new_snr = evaluate(final.model, dataset, "test")
    report = PruneReport(
        method="lacd",
        pruning_type="Layer",
        stage="lacd",
        original_params=orig_params,
        pruned_params=new_params,
        original_flops=orig_flops,
        pruned_flops=new_flops,
        original_acc=orig_acc,
        pruned_acc=new_acc,
        original_per_snr=orig_snr,
        pruned_per_snr=new_snr,
    )
    return LacdResult(
        model=final.model,
        profile=profile,
        diagnosis=diagnosis,
        report=report,
        removed_units=removed_names,
        curve=final.curve,
        warm_model=warm,
    )
