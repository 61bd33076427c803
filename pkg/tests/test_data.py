import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from qdefect import data
from qdefect.data import (
    CLASS_NAMES,
    FormatError,
    WaferDataset,
    augment,
    dumps,
    generate,
    generate_dataset,
    loads,
    read_dataset,
    split,
    wafer_mask,
    write_dataset,
)


def boundary_distance(mask):
    """Chessboard distance from each wafer cell to the nearest off-wafer cell (grid edge counts as off)."""
    padded = np.pad(mask, 1)
    return ndimage.distance_transform_cdt(padded, metric="chessboard")[1:-1, 1:-1]


class TestGenerate:
    def test_none_has_no_defects(self):
        assert not np.any(generate("None", 26, 26, 0.0, seed=3).grid == 2)

    def test_edge_within_two_cells(self):
        g = generate("Edge", 26, 26, 0.0, seed=0).grid
        d = boundary_distance(wafer_mask(26, 26))
        assert np.any(g == 2)
        assert np.all(d[g == 2] <= 2)

    def test_center_disk(self):
        g = generate("Center", 24, 24).grid
        yy, xx = np.nonzero(g == 2)
        r = np.hypot(yy - 11.5, xx - 11.5)
        assert np.all(r <= 4 + 1e-12)

    def test_ring_annulus(self):
        g = generate("Ring", 30, 30).grid
        yy, xx = np.nonzero(g == 2)
        r = np.hypot(yy - 14.5, xx - 14.5)
        assert np.all(np.abs(r - 10) <= 1 + 1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_cluster_connected_blob(self, seed):
        g = generate("Cluster", 26, 26, seed=seed).grid
        blob = g == 2
        _, n = ndimage.label(blob)
        assert n == 1
        assert 8 <= blob.sum() <= 20

    @pytest.mark.parametrize("seed", range(10))
    def test_scratch_nonempty(self, seed):
        g = generate("Scratch", 26, 26, seed=seed).grid
        assert 5 <= np.sum(g == 2) < 100

    @pytest.mark.parametrize("pattern", CLASS_NAMES)
    def test_deterministic(self, pattern):
        a = generate(pattern, 20, 22, 0.1, seed=7)
        b = generate(pattern, 20, 22, 0.1, seed=7)
        assert np.array_equal(a.grid, b.grid)
        assert a.label == b.label == CLASS_NAMES.index(pattern)

    def test_noise_rate_roughly_respected(self):
        g = generate("None", 60, 60, 0.2, seed=1).grid
        frac = np.sum(g == 2) / np.sum(wafer_mask(60, 60))
        assert 0.15 < frac < 0.25

    def test_errors(self):
        with pytest.raises(ValueError):
            generate("Donut")
        with pytest.raises(ValueError):
            generate("Edge", 9, 26)
        with pytest.raises(ValueError):
            generate("Edge", noise_rate=0.5)

    @settings(max_examples=40, deadline=None)
    @given(
        st.sampled_from(CLASS_NAMES), st.integers(10, 32), st.integers(10, 32),
        st.floats(0, 0.49), st.integers(0, 2**32 - 1),
    )
    def test_mask_invariant(self, pattern, h, w, noise, seed):
        g = generate(pattern, h, w, noise, seed).grid
        mask = wafer_mask(h, w)
        assert np.all(g[~mask] == 0)
        assert np.all(np.isin(g[mask], (1, 2)))


class TestDataset:
    def test_balanced_cycle(self):
        ds = generate_dataset(("Center", "Ring"), 5, 12, 12)
        assert list(ds.labels) == [0, 1, 0, 1, 0]
        assert ds.class_names == ("Center", "Ring")

    def test_reproducible(self):
        a = generate_dataset(CLASS_NAMES, 12, 12, 12, 0.05, seed=4)
        b = generate_dataset(CLASS_NAMES, 12, 12, 12, 0.05, seed=4)
        assert a == b
        assert a != generate_dataset(CLASS_NAMES, 12, 12, 12, 0.05, seed=5)

    def test_validation(self):
        with pytest.raises(ValueError):
            WaferDataset(np.zeros((2, 3, 3)), [0])
        with pytest.raises(ValueError):
            WaferDataset(np.zeros((1, 3, 3)), [6])
        with pytest.raises(ValueError):
            WaferDataset(np.full((1, 3, 3), 3), [0])


class TestAugment:
    def test_rotation_keeps_center(self):
        g = generate("Center", 26, 26).grid
        rng = np.random.default_rng(0)
        for _ in range(8):
            assert np.array_equal(augment(g, ("mirror", "flip", "rotate90"), rng), g)

    def test_no_ops_is_identity(self, rng):
        g = generate("Scratch", 20, 20, seed=2).grid
        assert np.array_equal(augment(g, (), rng), g)

    def test_preserves_defect_count(self, rng):
        g = generate("Cluster", 20, 20, seed=2).grid
        for _ in range(10):
            assert np.sum(augment(g, data.AUGMENTATIONS, rng) == 2) == np.sum(g == 2)


class TestFormat:
    def test_empty_round_trip(self, tmp_path):
        ds = generate_dataset(CLASS_NAMES, 0, 12, 12)
        path = tmp_path / "empty.wdm"
        write_dataset(ds, path)
        back = read_dataset(path)
        assert back == ds
        assert len(back) == 0

    def test_single_sample_bit_exact(self, tmp_path):
        ds = generate_dataset(("Ring",), 1, 14, 11, 0.1, seed=9)
        path = tmp_path / "one.wdm"
        write_dataset(ds, path)
        raw = path.read_bytes()
        back = read_dataset(path)
        assert back == ds
        write_dataset(back, path)
        assert path.read_bytes() == raw

    def test_layout(self):
        ds = WaferDataset(np.array([[[0, 1], [2, 1]]]), [1], ("a", "b"))
        assert dumps(ds) == "WDM1 1 2 2 2\na,b\n1\n01\n21\n"

    def test_corrupted_magic(self):
        text = dumps(generate_dataset(CLASS_NAMES, 2, 10, 10))
        with pytest.raises(FormatError):
            loads("WDM2" + text[4:])

    def test_truncated(self):
        text = dumps(generate_dataset(CLASS_NAMES, 3, 10, 10))
        with pytest.raises(FormatError):
            loads("\n".join(text.split("\n")[:-4]) + "\n")

    def test_bad_digit(self):
        text = dumps(generate_dataset(CLASS_NAMES, 1, 10, 10))
        lines = text.split("\n")
        lines[4] = "3" + lines[4][1:]
        with pytest.raises(FormatError):
            loads("\n".join(lines))

    def test_other_corruptions(self):
        text = dumps(generate_dataset(CLASS_NAMES, 2, 10, 10))
        lines = text.split("\n")
        bad = [
            "",
            text + "junk\n",
            "\n".join([lines[0].replace(" 6", " 5")] + lines[1:]),
            "\n".join(lines[:2] + ["9"] + lines[3:]),
            "\n".join(lines[:3] + [lines[3][:-1]] + lines[4:]),
            "WDM1 x 10 10 6\n" + "\n".join(lines[1:]),
        ]
        for t in bad:
            with pytest.raises(FormatError):
                loads(t)

    def test_format_error_is_value_error(self):
        assert issubclass(FormatError, ValueError)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 8), st.integers(10, 16), st.integers(10, 16), st.integers(0, 1000))
    def test_round_trip_property(self, count, h, w, seed):
        ds = generate_dataset(CLASS_NAMES, count, h, w, 0.1, seed)
        text = dumps(ds)
        assert loads(text) == ds
        assert dumps(loads(text)) == text


class TestSplit:
    def test_balanced_hundred(self):
        ds = generate_dataset(("Center", "Edge", "Scratch", "Ring"), 100, 10, 10)
        train, test = split(ds, 0.2, seed=0)
        assert (len(train), len(test)) == (80, 20)
        assert set(train.class_counts().values()) == {20}
        assert set(test.class_counts().values()) == {5}

    def test_same_seed_same_split(self):
        ds = generate_dataset(CLASS_NAMES, 60, 10, 10)
        a = split(ds, 0.3, seed=11)
        b = split(ds, 0.3, seed=11)
        assert a[0] == b[0] and a[1] == b[1]

    def test_errors(self):
        ds = generate_dataset(CLASS_NAMES, 7, 10, 10)
        with pytest.raises(ValueError):
            split(ds, 0.2)
        with pytest.raises(ValueError):
            split(generate_dataset(CLASS_NAMES, 12, 10, 10), 1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(2, 9), min_size=1, max_size=4), st.floats(0.05, 0.95), st.integers(0, 10_000))
    def test_union_and_disjoint(self, per_class, frac, seed):
        labels = np.repeat(np.arange(len(per_class)), per_class)
        rng = np.random.default_rng(seed)
        rng.shuffle(labels)
        # tag each grid with its index so samples can be identified after the split
        grids = np.zeros((labels.size, 1, 16), dtype=np.uint8)
        for i in range(labels.size):
            grids[i, 0] = [int(b) for b in f"{i:016b}"]
        ds = WaferDataset(grids, labels, CLASS_NAMES[: len(per_class)])
        train, test = split(ds, frac, seed)

        def ids(d):
            return {int("".join(map(str, g[0])), 2) for g in d.grids}

        assert ids(train).isdisjoint(ids(test))
        assert ids(train) | ids(test) == set(range(labels.size))
        for c in range(len(per_class)):
            assert np.sum(train.labels == c) >= 1 and np.sum(test.labels == c) >= 1
