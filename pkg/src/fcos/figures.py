"""Matplotlib rendering for the report path (headless Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_per_snr_figure(reports, path) -> None:
    """Accuracy vs SNR, one line per method plus the original model."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    first = reports[0]
    if first.original_per_snr:
        snrs = sorted(first.original_per_snr)
        ax.plot(snrs, [first.original_per_snr[s] for s in snrs], "k--", label="original")
    for r in reports:
        snrs = sorted(r.pruned_per_snr)
        ax.plot(snrs, [r.pruned_per_snr[s] for s in snrs], marker="o", label=r.method)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_curve_figure(rows, path, title: str = "") -> None:
    """Accuracy vs epoch, one line per split, from (epoch, split, acc) rows."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    splits = sorted({split for _, split, _ in rows})
    for split in splits:
        pts = [(e, a) for e, s, a in rows if s == split]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=split)
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
