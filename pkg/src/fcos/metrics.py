"""Parameter/FLOPs accounting, accuracy evaluation, and report emission.

FLOPs convention: one multiply-accumulate counts as 2 FLOPs for conv and
dense layers (bias ignored); batchnorm costs 2 FLOPs per element, relu and
residual adds 1 per element, pooling 1 per output element, global average
pooling 1 per input element. Pruning rates are convention-invariant because
both sides of the ratio use the same rule.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import SignalDataset
from .engine import Execution
from .errors import UsageError
from .graph import BUFFER_NAMES, INPUT_ID, ModelGraph, propagate_shapes


def count_params_flops(model: ModelGraph, input_length: int | None = None) -> tuple[int, int]:
    """Exact trainable parameter count and forward FLOPs at the given length."""
    if input_length is not None and input_length != model.input_shape[1]:
        model = model.clone()
        model.input_shape = (model.input_shape[0], input_length)
    shapes = propagate_shapes(model)
    params = 0
    flops = 0
    for node in model.nodes:
        for name, t in node.params.items():
            if name not in BUFFER_NAMES:
                params += t.size
        pred = model.preds[node.id][0]
        in_c, in_l = shapes[pred] if pred != INPUT_ID else model.input_shape
        out_c, out_l = shapes[node.id]
        if node.kind == "conv1d":
            flops += 2 * out_l * out_c * node.c_in * node.k
        elif node.kind == "batchnorm":
            flops += 2 * out_c * out_l
        elif node.kind == "relu":
            flops += out_c * (out_l if out_l is not None else 1)
        elif node.kind == "maxpool1d":
            flops += out_c * out_l
        elif node.kind == "gap":
            flops += in_c * in_l
        elif node.kind == "dense":
            flops += 2 * node.params["weight"].data.shape[1] * out_c
        elif node.kind == "add":
            flops += out_c * out_l
    return params, flops


def evaluate(
    model: ModelGraph, dataset: SignalDataset, split: str = "test", batch_size: int = 512
) -> tuple[float, dict[float, float]]:
    """Overall accuracy and a per-SNR accuracy map on the given split."""
    idx = dataset.indices(split)
    if idx.size == 0:
        raise UsageError(f"split {split!r} is empty")
    correct = np.zeros(idx.size, dtype=bool)
    ex = Execution(model)
    for start in range(0, idx.size, batch_size):
        sel = idx[start : start + batch_size]
        logits = ex.forward(dataset.samples[sel])
        correct[start : start + sel.size] = np.argmax(logits, axis=1) == dataset.labels[sel]
    overall = float(correct.mean())
    per_snr: dict[float, float] = {}
    snrs = dataset.snr_db[idx]
    for snr in sorted(set(snrs.tolist())):
        mask = snrs == snr
        per_snr[float(snr)] = float(correct[mask].mean())
    return overall, per_snr


@dataclass
class PruneReport:
    method: str
    pruning_type: str
    stage: str
    original_params: int
    pruned_params: int
    original_flops: int
    pruned_flops: int
    original_acc: float
    pruned_acc: float
    original_per_snr: dict[float, float] = field(default_factory=dict)
    pruned_per_snr: dict[float, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.pruned_params > self.original_params:
            raise UsageError("pruned parameter count exceeds original")

    @property
    def params_pr(self) -> float:
        return 1.0 - self.pruned_params / self.original_params

    @property
    def flops_pr(self) -> float:
        return 1.0 - self.pruned_flops / self.original_flops

    @property
    def delta_acc(self) -> float:
        return self.pruned_acc - self.original_acc

    @property
    def delta_params(self) -> int:
        return self.pruned_params - self.original_params

    @property
    def delta_flops(self) -> int:
        return self.pruned_flops - self.original_flops


def format_pr(value: float) -> str:
    """Pruning-rate percentage with fixed 2 decimals: 0.8839 -> '88.39%'."""
    return f"{value * 100.0:.2f}%"


REPORT_COLUMNS = (
    "Method",
    "Pruning Type",
    "Original Acc",
    "Acc",
    "ΔAcc",
    "ΔFLOPs",
    "ΔParams",
    "FLOPs PR",
    "Params PR",
)


def _si(value: float) -> str:
    for scale, suffix in ((1e9, "G"), (1e6, "M"), (1e3, "K")):
        if abs(value) >= scale:
            return f"{value / scale:.2f}{suffix}"
    return f"{value:.0f}"


def emit_report(reports, out_dir, curves: dict[str, list] | None = None, figures: bool = True):
    """Writes report.csv / report.md (+ per-SNR and curve CSVs and figures).

    The CSV carries raw full-precision numbers (accuracies as fractions, PRs
    as fractions, deltas as raw counts); the markdown mirrors the familiar
    percentage formatting.
    """
    if not reports:
        raise UsageError("emit_report needs at least one report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    csv_path = out / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow(
                [
                    r.method,
                    r.pruning_type,
                    r.original_acc,
                    r.pruned_acc,
                    r.delta_acc,
                    r.delta_flops,
                    r.delta_params,
                    r.flops_pr,
                    r.params_pr,
                ]
            )
    written.append(csv_path)

    md_path = out / "report.md"
    with open(md_path, "w") as fh:
        fh.write("| " + " | ".join(REPORT_COLUMNS) + " |\n")
        fh.write("|" + "---|" * len(REPORT_COLUMNS) + "\n")
        for r in reports:
            fh.write(
                "| {} | {} | {:.2f} | {:.2f} | {:+.2f} | {} | {} | {} | {} |\n".format(
                    r.method,
                    r.pruning_type,
                    r.original_acc * 100.0,
                    r.pruned_acc * 100.0,
                    r.delta_acc * 100.0,
                    _si(r.delta_flops),
                    _si(r.delta_params),
                    format_pr(r.flops_pr),
                    format_pr(r.params_pr),
                )
            )
    written.append(md_path)

    snr_path = out / "per_snr.csv"
    with open(snr_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Method", "SNR (dB)", "Original Acc", "Acc"])
        for r in reports:
            for snr in sorted(r.pruned_per_snr):
                w.writerow([r.method, snr, r.original_per_snr.get(snr, ""), r.pruned_per_snr[snr]])
    written.append(snr_path)

    if curves:
        for label, rows in curves.items():
            path = out / f"accuracy-curve-{label}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["epoch", "split", "accuracy"])
                for epoch, split, acc in rows:
                    w.writerow([epoch, split, acc])
            written.append(path)

    if figures:
        from . import figures as figmod

        fig_path = out / "per_snr.png"
        figmod.save_per_snr_figure(reports, fig_path)
        written.append(fig_path)
        if curves:
            for label, rows in curves.items():
                path = out / f"accuracy-curve-{label}.png"
                figmod.save_curve_figure(rows, path, title=label)
                written.append(path)
    return written


def parse_report_csv(path) -> list[dict]:
    """Reads back report.csv with exact numeric recovery."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for raw in reader:
            rows.append(
                {
                    "Method": raw["Method"],
                    "Pruning Type": raw["Pruning Type"],
                    "Original Acc": float(raw["Original Acc"]),
                    "Acc": float(raw["Acc"]),
                    "ΔAcc": float(raw["ΔAcc"]),
                    "ΔFLOPs": int(raw["ΔFLOPs"]),
                    "ΔParams": int(raw["ΔParams"]),
                    "FLOPs PR": float(raw["FLOPs PR"]),
                    "Params PR": float(raw["Params PR"]),
                }
            )
    return rows
