"""Synthetic I/Q modulation datasets over an SNR grid.

Linear modulations (PSK/QAM/ASK) are root-raised-cosine shaped at 8
samples/symbol with roll-off 0.35; GFSK is Gaussian-filtered FM. Every
sample gets a random carrier phase, unit average signal power, and complex
AWGN at its tagged SNR. Each (class, SNR) cell derives its own seed stream,
so generation is order-independent and reproducible bit for bit.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .checkpoint import read_container, write_container
from .errors import CheckpointFormatError, ConfigError, DatasetFormatError

MODULATIONS = ("bpsk", "qpsk", "8psk", "16qam", "4ask", "gfsk")
DEFAULT_CLASSES = ("bpsk", "qpsk", "16qam", "gfsk")

SAMPLES_PER_SYMBOL = 8
RRC_ROLLOFF = 0.35
RRC_SPAN = 8  # symbols each side of the main lobe
GFSK_BT = 0.5
GFSK_MOD_INDEX = 0.5

SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = 0, 1, 2
SPLIT_NAMES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}


def rrc_taps(sps: int = SAMPLES_PER_SYMBOL, span: int = RRC_SPAN, rolloff: float = RRC_ROLLOFF) -> np.ndarray:
    """Unit-energy root-raised-cosine taps (odd length span*sps + 1)."""
    a = rolloff
    n = span * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps
    taps = np.empty(n)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            taps[i] = 1.0 + a * (4.0 / np.pi - 1.0)
        elif abs(abs(ti) - 1.0 / (4.0 * a)) < 1e-12:
            taps[i] = (a / np.sqrt(2.0)) * (
                (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * a))
                + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * a))
            )
        else:
            num = np.sin(np.pi * ti * (1.0 - a)) + 4.0 * a * ti * np.cos(np.pi * ti * (1.0 + a))
            den = np.pi * ti * (1.0 - (4.0 * a * ti) ** 2)
            taps[i] = num / den
    return taps / np.sqrt(np.sum(taps * taps))


def _gaussian_taps(sps: int, bt: float) -> np.ndarray:
    sigma = np.sqrt(np.log(2.0)) / (2.0 * np.pi * bt)  # in symbol durations
    n = 4 * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


def _psk_points(order: int, offset: float) -> np.ndarray:
    return np.exp(1j * (2.0 * np.pi * np.arange(order) / order + offset))

_CONSTELLATIONS = {
    "bpsk": np.array([1.0 + 0.0j, -1.0 + 0.0j]),
    "qpsk": _psk_points(4, np.pi / 4.0),
    "8psk": _psk_points(8, np.pi / 8.0),
    "16qam": (
        np.array([x + 1j * y for x in (-3, -1, 1, 3) for y in (-3, -1, 1, 3)]) / np.sqrt(10.0)
    ),
    "4ask": np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(5.0) + 0.0j,
}


def _linear_baseband(rng: np.random.Generator, name: str, length: int) -> np.ndarray:
    points = _CONSTELLATIONS[name]
    taps = rrc_taps()
    n_sym = length // SAMPLES_PER_SYMBOL + 2 * RRC_SPAN
    syms = points[rng.integers(0, len(points), n_sym)]
    up = np.zeros(n_sym * SAMPLES_PER_SYMBOL, dtype=np.complex128)
    up[::SAMPLES_PER_SYMBOL] = syms
    shaped = np.convolve(up, taps)
    start = (len(shaped) - length) // 2
    start -= start % SAMPLES_PER_SYMBOL  # keep symbol-center alignment stable
    return shaped[start : start + length]


def _gfsk_baseband(rng: np.random.Generator, length: int) -> np.ndarray:
    n_sym = length // SAMPLES_PER_SYMBOL + 8
    bits = rng.integers(0, 2, n_sym) * 2.0 - 1.0
    nrz = np.repeat(bits, SAMPLES_PER_SYMBOL)
    g = _gaussian_taps(SAMPLES_PER_SYMBOL, GFSK_BT)
    freq = np.convolve(nrz, g)
    phase = np.pi * GFSK_MOD_INDEX * np.cumsum(freq) / SAMPLES_PER_SYMBOL
    s = np.exp(1j * phase)
    start = (len(s) - length) // 2
    return s[start : start + length]


def _render_sample(rng, name: str, length: int, snr_db: float, noise: bool, random_phase: bool):
    if name == "gfsk":
        s = _gfsk_baseband(rng, length)
    else:
        s = _linear_baseband(rng, name, length)
    phase = rng.uniform(0.0, 2.0 * np.pi) if random_phase else 0.0
    if phase:
        s = s * np.exp(1j * phase)
    power = np.mean(s.real * s.real + s.imag * s.imag)
    s = s / np.sqrt(power)
    if noise:
        n0 = 10.0 ** (-snr_db / 10.0)
        s = s + np.sqrt(n0 / 2.0) * (
            rng.standard_normal(length) + 1j * rng.standard_normal(length)
        )
    return np.stack([s.real, s.imag]).astype(np.float32)


@dataclass
class SignalDataset:
    samples: np.ndarray  # [N, 2, L] fp32
    labels: np.ndarray  # [N] int64
    snr_db: np.ndarray  # [N] fp32
    split: np.ndarray  # [N] uint8 (0 train / 1 val / 2 test)
    seed: int
    class_names: tuple[str, ...]
    snr_grid: tuple[float, ...]

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[2]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def indices(self, split: str) -> np.ndarray:
        return np.nonzero(self.split == SPLIT_NAMES[split])[0]

    def subset(self, idx: np.ndarray):
        return self.samples[idx], self.labels[idx]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.samples.tobytes())
        h.update(self.labels.tobytes())
        h.update(self.split.tobytes())
        return h.hexdigest()


def split_counts(total: int) -> tuple[int, int, int]:
    """6:2:2 with floor rounding; the remainder goes to train."""
    n_val = total * 2 // 10
    n_test = total * 2 // 10
    return total - n_val - n_test, n_val, n_test


def generate_dataset(
    classes=DEFAULT_CLASSES,
    snr_grid_db=tuple(range(0, 20, 2)),
    per_cell: int = 200,
    length: int = 128,
    seed: int = 0,
    noise: bool = True,
    random_phase: bool = True,
) -> SignalDataset:
    classes = tuple(classes)
    snr_grid = tuple(float(s) for s in snr_grid_db)
    if not classes or not snr_grid:
        raise ConfigError("need at least one modulation class and one SNR value")
    for c in classes:
        if c not in MODULATIONS:
            raise ConfigError(f"unknown modulation {c!r}; expected one of {MODULATIONS}")
    if per_cell < 5:
        raise ConfigError(f"per-cell count must be >= 5, got {per_cell}")
    if length < 64:
        raise ConfigError(f"sample length must be >= 64, got {length}")

    n = len(classes) * len(snr_grid) * per_cell
    samples = np.empty((n, 2, length), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    snrs = np.empty(n, dtype=np.float32)
    split = np.empty(n, dtype=np.uint8)
    n_train, n_val, n_test = split_counts(per_cell)
    row = 0
    for ci, cname in enumerate(classes):
        for si, snr in enumerate(snr_grid):
            children = np.random.SeedSequence([seed, ci, si]).spawn(per_cell)
            for j in range(per_cell):
                rng = np.random.Generator(np.random.PCG64(children[j]))
                samples[row] = _render_sample(rng, cname, length, snr, noise, random_phase)
                labels[row] = ci
                snrs[row] = snr
                split[row] = (
                    SPLIT_TRAIN if j < n_train else SPLIT_VAL if j < n_train + n_val else SPLIT_TEST
                )
                row += 1
    return SignalDataset(
        samples=samples,
        labels=labels,
        snr_db=snrs,
        split=split,
        seed=seed,
        class_names=classes,
        snr_grid=snr_grid,
    )


def split_dataset(ds: SignalDataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The 6:2:2 per-cell index partition (train, val, test)."""
    return ds.indices("train"), ds.indices("val"), ds.indices("test")


# ---------------------------------------------------------------------------
# raw container I/O


def export_dataset(ds: SignalDataset, path) -> None:
    descriptor = {
        "container": "signal-dataset",
        "classes": list(ds.class_names),
        "snr_grid_db": list(ds.snr_grid),
        "seed": ds.seed,
        "length": ds.length,
    }
    write_container(
        path,
        descriptor,
        [
            ("samples", ds.samples),
            ("labels", ds.labels),
            ("snr_db", ds.snr_db),
            ("split", ds.split),
        ],
    )


def ingest_external(path) -> SignalDataset:
    descriptor, records = read_container(path)
    if descriptor.get("container") != "signal-dataset":
        raise CheckpointFormatError(f"{path}: not a signal-dataset container")
    for key in ("samples", "labels", "snr_db", "split"):
        if key not in records:
            raise DatasetFormatError(f"{path}: missing record {key!r}")
    samples = records["samples"]
    labels = records["labels"]
    snr_db = records["snr_db"]
    split = records["split"]
    if samples.ndim != 3 or samples.shape[1] != 2:
        raise DatasetFormatError(f"{path}: samples must be [N, 2, L], got {samples.shape}")
    n = samples.shape[0]
    for name, vec in (("labels", labels), ("snr_db", snr_db), ("split", split)):
        if vec.shape != (n,):
            raise DatasetFormatError(f"{path}: {name} length {vec.shape} != sample count {n}")
    classes = tuple(descriptor["classes"])
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= len(classes):
        raise DatasetFormatError(f"{path}: label ids outside [0, {len(classes)})")
    if not np.isin(split, [SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST]).all():
        raise DatasetFormatError(f"{path}: split markers outside {{0,1,2}}")
    ds = SignalDataset(
        samples=samples,
        labels=labels,
        snr_db=snr_db,
        split=split,
        seed=descriptor.get("seed", -1),
        class_names=classes,
        snr_grid=tuple(descriptor.get("snr_grid_db", sorted(set(snr_db.tolist())))),
    )
    _check_balance(ds, path)
    return ds


def _check_balance(ds: SignalDataset, path) -> None:
    counts = {}
    for ci, snr in zip(ds.labels.tolist(), ds.snr_db.tolist()):
        counts[(ci, snr)] = counts.get((ci, snr), 0) + 1
    if len(set(counts.values())) > 1:
        raise DatasetFormatError(f"{path}: per-(class, SNR) cell counts are not all equal")
