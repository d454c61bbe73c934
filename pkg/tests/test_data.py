import struct

import numpy as np
import pytest

from subnet_ensemble import data as D
from subnet_ensemble.errors import (
    BadMagicError,
    ContractError,
    CountMismatchError,
    TruncatedFileError,
)
from subnet_ensemble.train import linear_probe


def idx_images(pixels, magic=0x803):
    n, r, c = pixels.shape
    return struct.pack(">IIII", magic, n, r, c) + bytes(pixels.reshape(-1).tolist())


def idx_labels(labels, magic=0x801):
    return struct.pack(">II", magic, len(labels)) + bytes(labels)


@pytest.fixture
def idx_pair(tmp_path):
    pixels = np.array([[[0, 255], [128, 1]], [[10, 20], [30, 40]]], dtype=np.uint8)
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    img.write_bytes(idx_images(pixels))
    lab.write_bytes(idx_labels([1, 0]))
    return img, lab, pixels


class TestIdx:
    def test_exact_pixels(self, idx_pair):
        img, lab, pixels = idx_pair
        d = D.load_idx(img, lab)
        assert d.x.shape == (2, 4)
        assert d.x.tolist() == (pixels.reshape(2, 4) / 255.0).tolist()
        assert d.y.tolist() == [1, 0]
        assert d.num_classes == 2

    def test_bad_magic_names_value(self, tmp_path, idx_pair):
        _, lab, pixels = idx_pair
        bad = tmp_path / "bad.idx"
        bad.write_bytes(idx_images(pixels, magic=0x1234))
        with pytest.raises(BadMagicError, match="0x00001234"):
            D.load_idx(bad, lab)

    def test_count_mismatch(self, tmp_path, idx_pair):
        img, _, _ = idx_pair
        lab = tmp_path / "three.idx"
        lab.write_bytes(idx_labels([0, 1, 0]))
        with pytest.raises(CountMismatchError):
            D.load_idx(img, lab)

    def test_truncated(self, tmp_path, idx_pair):
        img, lab, _ = idx_pair
        short = tmp_path / "short.idx"
        short.write_bytes(img.read_bytes()[:-1])
        with pytest.raises(TruncatedFileError):
            D.load_idx(short, lab)
        short.write_bytes(b"\x00\x00")
        with pytest.raises(TruncatedFileError):
            D.load_idx(short, lab)

    def test_errors_are_distinct(self):
        kinds = {BadMagicError, CountMismatchError, TruncatedFileError}
        assert len(kinds) == 3
        for a in kinds:
            for b in kinds - {a}:
                assert not issubclass(a, b)


def test_load_csv(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("f1,f2,label\n0.5,-1.25,1\n2,3.0,0\n", encoding="utf-8")
    d = D.load_csv(path)
    assert d.x.tolist() == [[0.5, -1.25], [2.0, 3.0]]
    assert d.y.tolist() == [1, 0]


def test_load_csv_ragged(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("f1,f2,label\n0.5,1\n", encoding="utf-8")
    with pytest.raises(ContractError, match=":2:"):
        D.load_csv(path)


class TestSynthetic:
    def test_deterministic(self):
        a, b = D.gen_synthetic(3, 10, 4, 0.3, 5), D.gen_synthetic(3, 10, 4, 0.3, 5)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_zero_spread_is_one_nn_perfect(self):
        d = D.gen_synthetic(4, 20, 8, 0.0, 1)
        dist = ((d.x[:, None, :] - d.x[None, :, :]) ** 2).sum(-1)
        np.fill_diagonal(dist, np.inf)
        # every nearest neighbour is an identical copy of the same centre
        assert np.all(d.y[dist.argmin(axis=1)] == d.y)

    def test_raw_probe_beats_chance(self):
        d = D.gen_synthetic(4, 250, 16, 0.5, 0)
        train, lab, test = D.split(d, 0.8, 1.0, 0)
        probs, _ = linear_probe(None, lab, test)
        acc = float(np.mean(probs.array.argmax(axis=1) == test.y))
        assert acc > 0.25


class TestAugment:
    def test_identity(self, rng):
        x = rng.standard_normal((4, 3))
        a, b = D.augment(x, D.AugmentConfig(0.0, 0.0), rng)
        assert np.array_equal(a, x) and np.array_equal(b, x)

    def test_full_mask(self, rng):
        a, b = D.augment(rng.standard_normal((4, 3)), D.AugmentConfig(0.1, 1.0), rng)
        assert not a.any() and not b.any()

    def test_mask_fraction(self, rng):
        x = np.ones((100, 100))
        a, _ = D.augment(x, D.AugmentConfig(0.0, 0.2), rng)
        frac = float(np.mean(a == 0))
        se = np.sqrt(0.2 * 0.8 / x.size)
        assert abs(frac - 0.2) < 3 * se

    def test_views_differ_and_input_untouched(self, rng):
        x = rng.standard_normal((4, 3))
        keep = x.copy()
        a, b = D.augment(x, D.AugmentConfig(), rng)
        assert not np.array_equal(a, b)
        assert np.array_equal(x, keep)

    def test_invalid_config(self):
        with pytest.raises(ContractError):
            D.AugmentConfig(mask_prob=1.5)


class TestCorrupt:
    def test_labels_preserved_and_deterministic(self):
        d = D.gen_synthetic(3, 10, 4, 0.3, 0)
        a, b = D.corrupt(d, 3, 9), D.corrupt(d, 3, 9)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, d.y)
        assert not np.array_equal(a.x, d.x)

    def test_level_range(self):
        d = D.gen_synthetic(3, 10, 4, 0.3, 0)
        for bad in (0, 6):
            with pytest.raises(ContractError):
                D.corrupt(d, bad, 0)

    def test_noise_scale(self):
        d = D.gen_synthetic(2, 5000, 4, 0.5, 0)
        base = 0.1 * d.x.std(axis=0)
        delta = D.corrupt(d, 4, 0).x - d.x
        assert np.allclose(delta.std(axis=0), 4 * base, rtol=0.05)

    def test_accuracy_degrades_with_level(self):
        d = D.gen_synthetic(4, 350, 16, 0.5, 0)
        _, lab, test = D.split(d, 1000 / 1400, 1.0, 0)
        _, weights = linear_probe(None, lab, test)
        accs = [float(np.mean(weights.probs(test.x).argmax(axis=1) == test.y))]
        for level in range(1, 6):
            c = D.corrupt(test, level, 0)
            accs.append(float(np.mean(weights.probs(c.x).argmax(axis=1) == c.y)))
        steps = sum(b <= a for a, b in zip(accs, accs[1:]))
        assert steps >= 4  # clean -> 1 -> ... -> 5 is five steps
        assert accs[-1] < accs[0]


class TestSplit:
    def test_stratified_counts(self):
        d = D.gen_synthetic(4, 250, 4, 0.3, 0)
        train, lab, test = D.split(d, 1.0, 0.1, 0)
        assert len(train) == 1000 and len(test) == 0
        assert len(lab) == 100
        assert np.bincount(lab.y).tolist() == [25, 25, 25, 25]

    def test_label_frac_one_is_train(self):
        d = D.gen_synthetic(4, 50, 4, 0.3, 0)
        train, lab, _ = D.split(d, 0.7, 1.0, 3)
        assert np.array_equal(train.x, lab.x)

    def test_partition(self):
        d = D.gen_synthetic(3, 40, 4, 0.3, 0)
        d.x[:, 0] = np.arange(len(d))  # tag rows
        train, lab, test = D.split(d, 0.6, 0.5, 1)
        tr, te = set(train.x[:, 0]), set(test.x[:, 0])
        assert not tr & te
        assert tr | te == set(range(len(d)))
        assert set(lab.x[:, 0]) <= tr

    def test_deterministic(self):
        d = D.gen_synthetic(3, 40, 4, 0.3, 0)
        a, b = D.split(d, 0.6, 0.5, 1), D.split(d, 0.6, 0.5, 1)
        for u, v in zip(a, b):
            assert np.array_equal(u.x, v.x)

    def test_empty_class_rejected(self):
        d = D.gen_synthetic(4, 10, 4, 0.3, 0)
        with pytest.raises(ContractError, match="class"):
            D.split(d, 0.5, 0.01, 0)
