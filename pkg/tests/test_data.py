"""Dataset ingestion tests: IDX parsing, feature CSV round-trips, synthetic
generators, and deterministic splits."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memtopo import data as d
from memtopo.errors import ArgumentError, MissingInputError, ParseError


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (12, 28, 28)).astype(np.uint8)
    labels = (np.arange(12) % 10).astype(np.uint8)
    ip = tmp_path / "t-images-idx3-ubyte"
    lp = tmp_path / "t-labels-idx1-ubyte"
    d.save_idx(images, labels, ip, lp)
    return ip, lp, images, labels


class TestIdx:
    def test_header_driven_shape(self, idx_pair):
        ip, lp, images, labels = idx_pair
        ds = d.load_idx(ip, lp)
        assert ds.x.shape == (12, 1, 28, 28)
        assert np.array_equal(ds.y, labels)

    def test_label_path_derived(self, idx_pair):
        ip, lp, *_ = idx_pair
        ds = d.load_idx(ip)
        assert len(ds) == 12

    def test_pixel_255_maps_to_one(self, tmp_path):
        images = np.full((1, 2, 2), 255, dtype=np.uint8)
        ip, lp = tmp_path / "a-images-idx3-ubyte", tmp_path / "a-labels-idx1-ubyte"
        d.save_idx(images, np.zeros(1, np.uint8), ip, lp)
        ds = d.load_idx(ip, lp)
        assert ds.x.max() == 1.0

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad-images-idx3-ubyte"
        p.write_bytes(struct.pack(">IIII", 0xDEAD, 1, 2, 2) + b"\x00" * 4)
        lp = tmp_path / "bad-labels-idx1-ubyte"
        lp.write_bytes(struct.pack(">II", 0x801, 1) + b"\x00")
        with pytest.raises(ParseError, match="magic"):
            d.load_idx(p, lp)

    def test_truncation_names_lengths(self, tmp_path):
        p = tmp_path / "t-images-idx3-ubyte"
        p.write_bytes(struct.pack(">IIII", 0x803, 2, 28, 28) + b"\x00" * 100)
        lp = tmp_path / "t-labels-idx1-ubyte"
        lp.write_bytes(struct.pack(">II", 0x801, 2) + b"\x00\x01")
        with pytest.raises(ParseError, match="expected 1568"):
            d.load_idx(p, lp)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            d.load_idx(tmp_path / "none-images-idx3-ubyte")


class TestPreprocess:
    def test_constant_image_stays_constant(self):
        v = 0.52
        ds = d.Dataset(np.full((1, 1, 28, 28), v), np.zeros(1, np.int64), 10)
        out = d.preprocess_images(ds, 14, 4)
        assert out.x.shape == (1, 1, 14, 14)
        level = np.floor(v * 16) / 16
        assert np.all(out.x == level)

    def test_levels_are_sixteenths(self):
        rng = np.random.default_rng(1)
        ds = d.Dataset(rng.random((5, 1, 28, 28)), np.zeros(5, np.int64), 10)
        out = d.preprocess_images(ds, 14, 4)
        scaled = out.x * 16
        assert np.allclose(scaled, np.round(scaled))
        assert out.x.max() <= 15 / 16

    def test_matches_independent_pool_quantize(self):
        rng = np.random.default_rng(2)
        x = rng.random((3, 1, 28, 28))
        ds = d.Dataset(x, np.zeros(3, np.int64), 10)
        out = d.preprocess_images(ds, 14, 4)
        # independent oracle: explicit block means then floor quantization
        for n in range(3):
            for i in range(14):
                for j in range(14):
                    block = x[n, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2].mean()
                    q = min(np.floor(block * 16), 15) / 16
                    assert out.x[n, 0, i, j] == q

    def test_incompatible_size(self):
        ds = d.Dataset(np.zeros((1, 1, 27, 27)), np.zeros(1, np.int64), 10)
        with pytest.raises(Exception):
            d.preprocess_images(ds, 14, 4)


class TestFeatureCsv:
    def test_single_row(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("23,15,10\n" + "3," + ",".join(["0.5"] * 345) + "\n")
        ds = d.load_feature_csv(p)
        assert ds.x.shape == (1, 1, 23, 15)
        assert ds.y[0] == 3 and ds.class_count == 10

    def test_empty_body_valid(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("4,4,10\n")
        ds = d.load_feature_csv(p)
        assert len(ds) == 0

    def test_non_numeric_positioned(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("2,2,3\n1,0.1,zzz,0.3,0.4\n")
        with pytest.raises(ParseError, match="column 3"):
            d.load_feature_csv(p)

    def test_ragged_row_positioned(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("2,2,3\n1,0.1,0.2\n")
        with pytest.raises(ParseError, match=":2:"):
            d.load_feature_csv(p)

    def test_round_trip_exact_at_6_digits(self, tmp_path):
        rng = np.random.default_rng(4)
        ds = d.Dataset(rng.random((7, 1, 5, 3)), rng.integers(0, 4, 7), 4)
        p = tmp_path / "rt.csv"
        d.save_feature_csv(ds, p)
        back = d.load_feature_csv(p)
        np.testing.assert_allclose(back.x, ds.x, rtol=1e-5)
        assert np.array_equal(back.y, ds.y)
        # second round trip is bit-exact (values already at 6 digits)
        p2 = tmp_path / "rt2.csv"
        d.save_feature_csv(back, p2)
        back2 = d.load_feature_csv(p2)
        assert np.array_equal(back.x, back2.x)


class TestSynthBlobs:
    def test_prototype_classifier_oracle(self):
        ds = d.synth_blobs(10, 60, (23, 15), separation=10.0, seed=5, noise=0.1)
        # 1-nearest-prototype oracle: class means from half, score the rest
        half = len(ds) // 2
        protos = np.stack([ds.x[:half][ds.y[:half] == c].mean(axis=0)
                           for c in range(10)])
        rest = ds.x[half:]
        dists = ((rest[:, None] - protos[None]) ** 2).sum(axis=(2, 3, 4))
        acc = np.mean(np.argmin(dists, axis=1) == ds.y[half:])
        assert acc >= 0.99

    def test_empty(self):
        assert len(d.synth_blobs(3, 0, (4, 4), 5.0, 0)) == 0

    def test_determinism(self):
        a = d.synth_blobs(4, 10, (6, 6), 5.0, 42)
        b = d.synth_blobs(4, 10, (6, 6), 5.0, 42)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_values_in_unit_interval(self):
        ds = d.synth_blobs(5, 20, (8, 8), 8.0, 1)
        assert ds.x.min() >= 0.0 and ds.x.max() < 1.0

    def test_bad_separation(self):
        with pytest.raises(ArgumentError):
            d.synth_blobs(2, 2, (3, 3), 0.0, 0)


class TestSynthImages:
    def test_glyphs_deterministic(self):
        a_img, a_lab = d.synth_glyphs(5, 9)
        b_img, b_lab = d.synth_glyphs(5, 9)
        assert np.array_equal(a_img, b_img) and np.array_equal(a_lab, b_lab)

    def test_glyph_idx_round_trip(self, tmp_path):
        ip, lp = d.write_glyph_idx(tmp_path, per_class=3, seed=1)
        ds = d.load_idx(ip, lp)
        assert len(ds) == 30 and ds.class_count == 10

    def test_counts_labels_balanced(self):
        _, labels = d.synth_counts(7, 3)
        assert np.array_equal(np.bincount(labels), np.full(10, 7))


class TestSplit:
    def test_partition_covers_and_disjoint(self):
        ds = d.synth_blobs(2, 2, (3, 3), 5.0, 0)
        a, b, c = d.split(ds, 2, 1, 1, seed=0)
        assert len(a) == 2 and len(b) == 1 and len(c) == 1
        all_rows = np.concatenate([a.x, b.x, c.x]).reshape(4, -1)
        orig = ds.x.reshape(4, -1)
        # every original row appears exactly once across the splits
        matched = [np.sum((all_rows == row).all(axis=1)) for row in orig]
        assert matched == [1, 1, 1, 1]

    def test_same_seed_same_partition(self):
        ds = d.synth_blobs(4, 25, (4, 4), 5.0, 3)
        a1, b1, c1 = d.split(ds, 50, 25, 25, seed=7)
        a2, b2, c2 = d.split(ds, 50, 25, 25, seed=7)
        assert np.array_equal(a1.x, a2.x)
        assert np.array_equal(c1.y, c2.y)

    def test_oversubscription(self):
        ds = d.synth_blobs(2, 2, (3, 3), 5.0, 0)
        with pytest.raises(ArgumentError):
            d.split(ds, 3, 1, 1, seed=0)

    def test_class_balance_at_scale(self):
        ds = d.synth_blobs(10, 300, (4, 4), 5.0, 11)
        train, _, _ = d.split(ds, 1500, 750, 750, seed=2)
        frac = np.bincount(train.y, minlength=10) / len(train)
        assert np.all(np.abs(frac - 0.1) <= 0.05)

    @given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 30),
           st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_split_property(self, a, b, c, seed):
        ds = d.synth_blobs(3, 30, (2, 2), 5.0, 1)
        total = a + b + c
        if total > len(ds):
            with pytest.raises(ArgumentError):
                d.split(ds, a, b, c, seed=seed)
            return
        sa, sb, sc = d.split(ds, a, b, c, seed=seed)
        assert len(sa) == a and len(sb) == b and len(sc) == c
