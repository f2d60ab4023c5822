import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odkit import (
    CorruptBatchError,
    LabelRecord,
    RecordCorruptionError,
    RecordFormatError,
    SparseLabelBatch,
    augment_jitter,
    decode_batch,
    encode_batch,
    gen_synthetic,
    read_records,
    write_records,
)
from odkit.geometry import InvalidSpecError


def _rec(image_id, boxes, classes, w=256, h=256):
    return LabelRecord(image_id, w, h, np.array(boxes, float).reshape(-1, 4),
                       np.array(classes, np.int64))


@st.composite
def records(draw):
    # integer corners and sizes keep every coordinate f32-exact
    nb = draw(st.integers(0, 6))
    boxes, classes = [], []
    for _ in range(nb):
        w = draw(st.integers(2, 50))
        h = draw(st.integers(2, 50))
        x1 = draw(st.integers(0, 256 - w))
        y1 = draw(st.integers(0, 256 - h))
        boxes.append((x1 + w / 2, y1 + h / 2, w, h))
        classes.append(draw(st.integers(0, 9)))
    return _rec(draw(st.integers(0, 2**40)), boxes, classes)


class TestLabelRecord:
    def test_rejects_out_of_bounds_box(self):
        with pytest.raises(ValueError):
            _rec(0, [(250, 10, 20, 4)], [0])  # right edge at 260 > 256

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError):
            _rec(0, [(10, 10, 4, 4)], [0, 1])

    def test_rejects_oversized_fields(self):
        with pytest.raises(ValueError):
            LabelRecord(2**64, 10, 10, np.empty((0, 4)), np.empty(0, np.int64))
        with pytest.raises(ValueError):
            LabelRecord(0, 2**16, 10, np.empty((0, 4)), np.empty(0, np.int64))

    def test_equality(self):
        a = _rec(1, [(10, 10, 4, 4)], [2])
        b = _rec(1, [(10, 10, 4, 4)], [2])
        c = _rec(1, [(10, 10, 4, 4)], [3])
        assert a == b and a != c


class TestBatchCoding:
    def test_two_images(self):
        recs = [_rec(0, [(10, 10, 4, 4), (30, 30, 8, 8)], [0, 1]),
                _rec(1, [(50, 50, 6, 6)], [2])]
        batch = encode_batch(recs)
        assert batch.batch_size == 2
        assert [tuple(p) for p in batch.rois_idx] == [(0, 0), (0, 1), (1, 0)]
        assert batch.n_boxes == 3

    def test_empty_images_preserved(self):
        recs = [_rec(0, [], []), _rec(1, [], []), _rec(2, [], [])]
        batch = encode_batch(recs)
        assert batch.batch_size == 3
        assert batch.n_boxes == 0
        decoded = decode_batch(batch)
        assert len(decoded) == 3
        assert all(len(b) == 0 for b, _ in decoded)

    def test_unsorted_idx_rejected(self):
        batch = SparseLabelBatch(
            rois_idx=np.array([[1, 0], [0, 0]]),
            rois_values=np.array([[10, 10, 4, 4], [20, 20, 4, 4]], float),
            classes=np.array([0, 0]), batch_size=2)
        with pytest.raises(CorruptBatchError):
            decode_batch(batch)

    def test_index_bounds_rejected(self):
        batch = SparseLabelBatch(
            rois_idx=np.array([[5, 0]]),
            rois_values=np.array([[10, 10, 4, 4]], float),
            classes=np.array([0]), batch_size=2)
        with pytest.raises(CorruptBatchError):
            batch.validate()

    @given(st.lists(records(), min_size=1, max_size=6))
    @settings(max_examples=50, deadline=None)
    def test_round_trip(self, recs):
        decoded = decode_batch(encode_batch(recs))
        assert len(decoded) == len(recs)
        for rec, (boxes, classes) in zip(recs, decoded):
            assert np.array_equal(rec.boxes, boxes)
            assert np.array_equal(rec.classes, classes)


class TestRecordFile:
    def test_round_trip_100(self, tmp_path):
        recs = gen_synthetic(seed=11, n_images=100, max_boxes=5,
                             image_w=320, image_h=240)
        path = tmp_path / "r.odr"
        assert write_records(path, recs) == 100
        assert list(read_records(path)) == recs

    def test_empty_file_is_magic_only(self, tmp_path):
        path = tmp_path / "e.odr"
        write_records(path, [])
        assert path.read_bytes() == b"ODR1"
        assert list(read_records(path)) == []

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.odr"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(RecordFormatError):
            list(read_records(path))

    def test_truncated_length_field(self, tmp_path):
        path = tmp_path / "t.odr"
        path.write_bytes(b"ODR1" + b"\x20\x00")  # 2 of 4 length bytes
        with pytest.raises(RecordCorruptionError) as e:
            list(read_records(path))
        assert e.value.offset == 4

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.odr"
        path.write_bytes(b"ODR1" + struct.pack("<I", 32) + b"\x00" * 10)
        with pytest.raises(RecordCorruptionError) as e:
            list(read_records(path))
        assert e.value.offset == 8

    def test_inconsistent_box_count(self, tmp_path):
        # header claims 5 boxes but payload length only covers the header
        payload = struct.pack("<QHHH", 1, 64, 64, 5)
        path = tmp_path / "t.odr"
        path.write_bytes(b"ODR1" + struct.pack("<I", len(payload)) + payload)
        with pytest.raises(RecordCorruptionError) as e:
            list(read_records(path))
        assert e.value.offset == 8

    def test_known_byte_layout(self, tmp_path):
        rec = LabelRecord(7, 64, 48, np.array([[16.5, 12.25, 8, 6]]),
                          np.array([3], np.int64))
        path = tmp_path / "g.odr"
        write_records(path, [rec])
        expected = (b"ODR1"
                    + struct.pack("<I", 32)
                    + struct.pack("<QHHH", 7, 64, 48, 1)
                    + struct.pack("<ffffH", 16.5, 12.25, 8.0, 6.0, 3))
        assert path.read_bytes() == expected

    @given(recs=st.lists(records(), max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, recs, tmp_path_factory):
        path = tmp_path_factory.mktemp("odr") / "p.odr"
        write_records(path, recs)
        assert list(read_records(path)) == recs


class TestGenSynthetic:
    def test_deterministic(self):
        a = gen_synthetic(seed=42, n_images=10, max_boxes=4, image_w=100, image_h=80)
        b = gen_synthetic(seed=42, n_images=10, max_boxes=4, image_w=100, image_h=80)
        assert len(a) == 10
        assert a == b

    def test_seeds_differ(self, tmp_path):
        p1, p2 = tmp_path / "1.odr", tmp_path / "2.odr"
        write_records(p1, gen_synthetic(seed=1, n_images=20, max_boxes=4,
                                        image_w=100, image_h=80))
        write_records(p2, gen_synthetic(seed=2, n_images=20, max_boxes=4,
                                        image_w=100, image_h=80))
        assert p1.read_bytes() != p2.read_bytes()

    def test_boxes_inside_bounds(self):
        for rec in gen_synthetic(seed=3, n_images=50, max_boxes=6,
                                 image_w=60, image_h=40):
            if not len(rec.boxes):
                continue
            assert np.all(rec.boxes[:, 0] - rec.boxes[:, 2] / 2 >= 0)
            assert np.all(rec.boxes[:, 0] + rec.boxes[:, 2] / 2 <= 60)
            assert np.all(rec.boxes[:, 1] - rec.boxes[:, 3] / 2 >= 0)
            assert np.all(rec.boxes[:, 1] + rec.boxes[:, 3] / 2 <= 40)
            assert np.all(rec.boxes[:, 2:] >= 2)

    def test_rejects_degenerate_args(self):
        with pytest.raises(InvalidSpecError):
            gen_synthetic(seed=0, n_images=0, max_boxes=4, image_w=100, image_h=80)
        with pytest.raises(InvalidSpecError):
            gen_synthetic(seed=0, n_images=1, max_boxes=4, image_w=0, image_h=80)


class TestAugmentJitter:
    def test_noop_params_identity(self):
        rec = _rec(5, [(100, 100, 20, 10)], [1])
        assert augment_jitter(rec, seed=9, max_drift=0, allow_flip=False) == rec

    def test_flip_is_involution(self):
        rec = _rec(5, [(100, 80, 20, 10), (30, 40, 8, 8)], [1, 0])
        once = augment_jitter(rec, seed=0, max_drift=0, allow_flip=True)
        assert once != rec  # seed 0 flips
        twice = augment_jitter(once, seed=0, max_drift=0, allow_flip=True)
        assert twice == rec

    def test_known_drift(self):
        # seed 26 with max_drift 3 draws (dx, dy) = (3, 0)
        rec = _rec(5, [(10, 100, 8, 8)], [1])
        out = augment_jitter(rec, seed=26, max_drift=3, allow_flip=False)
        assert tuple(out.boxes[0]) == (13.0, 100.0, 8.0, 8.0)

    @given(records(), st.integers(0, 2**32 - 1), st.integers(0, 20), st.booleans())
    @settings(max_examples=60, deadline=None)
    def test_stays_valid_and_preserves_labels(self, rec, seed, drift, flip):
        out = augment_jitter(rec, seed=seed, max_drift=drift, allow_flip=flip)
        assert out.image_id == rec.image_id
        assert len(out.boxes) == len(rec.boxes)
        assert np.array_equal(out.classes, rec.classes)
        assert np.array_equal(out.boxes[:, 2:], rec.boxes[:, 2:])
        if len(out.boxes):
            assert np.all(out.boxes[:, 0] - out.boxes[:, 2] / 2 >= -1e-9)
            assert np.all(out.boxes[:, 0] + out.boxes[:, 2] / 2 <= rec.image_w + 1e-9)
