import numpy as np
import pytest

from fcos.dataset import (
    export_dataset,
    generate_dataset,
    ingest_external,
    rrc_taps,
    split_counts,
    split_dataset,
)
from fcos.errors import ConfigError, DatasetFormatError


def test_bpsk_noise_free_hook_quadrature_is_zero():
    ds = generate_dataset(
        classes=("bpsk",), snr_grid_db=(10.0,), per_cell=8, length=128, seed=3,
        noise=False, random_phase=False,
    )
    q = ds.samples[:, 1, :]
    assert np.all(q == 0.0)  # real symbols through a real filter, no carrier


def test_bpsk_matched_filter_symbol_values():
    ds = generate_dataset(
        classes=("bpsk",), snr_grid_db=(10.0,), per_cell=6, length=128, seed=3,
        noise=False, random_phase=False,
    )
    taps = rrc_taps()
    sps = 8
    for sample in ds.samples:
        i = sample[0].astype(np.float64)
        matched = np.convolve(i, taps)[len(taps) // 2 : len(taps) // 2 + i.size]
        # choose the comb offset with the strongest mean magnitude
        offsets = [np.abs(matched[o::sps]).mean() for o in range(sps)]
        best = int(np.argmax(offsets))
        centers = matched[best::sps][2:-2]  # interior symbols only
        mags = np.abs(centers)
        a = np.median(mags)
        assert a > 0.1
        assert np.all(np.abs(mags - a) <= 0.05 * a)  # one fixed amplitude
        assert (centers > 0).any() and (centers < 0).any()


def test_unit_power_before_noise():
    ds = generate_dataset(
        classes=("qpsk", "16qam", "4ask", "8psk", "gfsk"), snr_grid_db=(10.0,),
        per_cell=5, length=128, seed=4, noise=False,
    )
    power = (ds.samples.astype(np.float64) ** 2).sum(axis=1).mean(axis=1)
    np.testing.assert_allclose(power, 1.0, atol=1e-6)


def test_empirical_snr_within_half_db():
    kw = dict(
        classes=("bpsk", "qpsk", "16qam", "gfsk"), snr_grid_db=(0.0, 10.0),
        per_cell=125, length=128, seed=5,
    )
    clean = generate_dataset(noise=False, **kw)
    noisy = generate_dataset(noise=True, **kw)
    noise = noisy.samples.astype(np.float64) - clean.samples.astype(np.float64)
    for snr in (0.0, 10.0):
        mask = noisy.snr_db == snr  # 500 samples per SNR
        ps = (clean.samples[mask].astype(np.float64) ** 2).sum(axis=(1, 2)).mean()
        pn = (noise[mask] ** 2).sum(axis=(1, 2)).mean()
        measured = 10.0 * np.log10(ps / pn)
        assert abs(measured - snr) <= 0.5, f"snr {snr}: measured {measured:.3f}"


def test_same_seed_bitwise_identical_different_seed_differs():
    kw = dict(classes=("qpsk", "gfsk"), snr_grid_db=(6.0,), per_cell=6, length=64)
    a = generate_dataset(seed=9, **kw)
    b = generate_dataset(seed=9, **kw)
    c = generate_dataset(seed=10, **kw)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert a.samples.tobytes() != c.samples.tobytes()


def test_config_errors():
    with pytest.raises(ConfigError):
        generate_dataset(classes=(), snr_grid_db=(0.0,))
    with pytest.raises(ConfigError):
        generate_dataset(classes=("bpsk",), snr_grid_db=())
    with pytest.raises(ConfigError):
        generate_dataset(classes=("bpsk",), snr_grid_db=(0.0,), per_cell=3)
    with pytest.raises(ConfigError):
        generate_dataset(classes=("bpsk",), snr_grid_db=(0.0,), length=32)
    with pytest.raises(ConfigError):
        generate_dataset(classes=("fm-stereo",), snr_grid_db=(0.0,))


def test_split_counts_rounding():
    assert split_counts(10) == (6, 2, 2)
    assert split_counts(11) == (7, 2, 2)  # remainder goes to train
    assert split_counts(5) == (3, 1, 1)


def test_split_disjoint_and_covering(tiny_dataset):
    train, val, test = split_dataset(tiny_dataset)
    all_idx = np.concatenate([train, val, test])
    assert len(set(all_idx.tolist())) == tiny_dataset.n
    assert all_idx.size == tiny_dataset.n
    # 6:2:2 inside every (class, snr) cell
    for ci in range(tiny_dataset.num_classes):
        for snr in tiny_dataset.snr_grid:
            cell = (tiny_dataset.labels == ci) & (tiny_dataset.snr_db == snr)
            assert cell.sum() == 10
            assert (tiny_dataset.split[cell] == 0).sum() == 6
            assert (tiny_dataset.split[cell] == 1).sum() == 2
            assert (tiny_dataset.split[cell] == 2).sum() == 2


def test_class_balance_exact(tiny_dataset):
    counts = np.bincount(tiny_dataset.labels)
    assert counts.max() == counts.min()


def test_export_ingest_round_trip(tmp_path, tiny_dataset):
    path = tmp_path / "ds.bin"
    export_dataset(tiny_dataset, path)
    back = ingest_external(path)
    assert back.samples.tobytes() == tiny_dataset.samples.tobytes()
    assert back.labels.tolist() == tiny_dataset.labels.tolist()
    assert back.class_names == tiny_dataset.class_names
    assert back.split.tolist() == tiny_dataset.split.tolist()


def test_ingest_rejects_bad_label_length(tmp_path, tiny_dataset):
    from fcos.checkpoint import write_container

    path = tmp_path / "bad.bin"
    write_container(
        path,
        {"container": "signal-dataset", "classes": list(tiny_dataset.class_names),
         "snr_grid_db": list(tiny_dataset.snr_grid), "seed": 0, "length": 64},
        [
            ("samples", tiny_dataset.samples),
            ("labels", tiny_dataset.labels[:-1]),
            ("snr_db", tiny_dataset.snr_db),
            ("split", tiny_dataset.split),
        ],
    )
    with pytest.raises(DatasetFormatError):
        ingest_external(path)


def test_ingest_balanced_subsample_preserves_class_counts(tmp_path, tiny_dataset):
    # take the first 5 samples of every cell -> still balanced
    keep = []
    for ci in range(tiny_dataset.num_classes):
        for snr in tiny_dataset.snr_grid:
            cell = np.nonzero((tiny_dataset.labels == ci) & (tiny_dataset.snr_db == snr))[0]
            keep.extend(cell[:5].tolist())
    keep = np.array(sorted(keep))
    sub = type(tiny_dataset)(
        samples=tiny_dataset.samples[keep],
        labels=tiny_dataset.labels[keep],
        snr_db=tiny_dataset.snr_db[keep],
        split=tiny_dataset.split[keep],
        seed=tiny_dataset.seed,
        class_names=tiny_dataset.class_names,
        snr_grid=tiny_dataset.snr_grid,
    )
    path = tmp_path / "sub.bin"
    export_dataset(sub, path)
    back = ingest_external(path)
    counts = np.bincount(back.labels, minlength=back.num_classes)
    assert counts.tolist() == [15, 15, 15]


def test_ingest_rejects_unbalanced_cells(tmp_path, tiny_dataset):
    sub = type(tiny_dataset)(
        samples=tiny_dataset.samples[:-1],
        labels=tiny_dataset.labels[:-1],
        snr_db=tiny_dataset.snr_db[:-1],
        split=tiny_dataset.split[:-1],
        seed=tiny_dataset.seed,
        class_names=tiny_dataset.class_names,
        snr_grid=tiny_dataset.snr_grid,
    )
    path = tmp_path / "unbalanced.bin"
    export_dataset(sub, path)
    with pytest.raises(DatasetFormatError):
        ingest_external(path)
