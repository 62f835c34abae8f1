import json

import numpy as np
import pytest

from airtkit import BBox, InspectionSequence, RoiLabels, extract_roi_stats, read_sequence, standardize, write_sequence
from airtkit.errors import FormatError, NumericError
from airtkit.seqcore import HEADER_SIZE, read_labels, write_labels

from . import oracles


def test_header_is_24_bytes_and_layout(tmp_path):
    frames = np.array([[[1.5]], [[-2.0]]], dtype=np.float32)
    p = tmp_path / "a.airt"
    write_sequence(InspectionSequence(frames, 12.5), p)
    data = p.read_bytes()
    assert HEADER_SIZE == 24
    assert len(data) == 24 + 2 * 4
    assert data[:4] == b"AIRT"
    assert data[4:6] == b"\x01\x00" and data[6:8] == b"\x00\x00"
    assert np.frombuffer(data[24:], "<f4").tolist() == [1.5, -2.0]


def test_sequence_round_trip_bit_exact(tmp_path, rng):
    frames = rng.normal(300, 5, (7, 5, 9)).astype(np.float32)
    p = tmp_path / "s.airt"
    write_sequence(InspectionSequence(frames, 30.0), p)
    back = read_sequence(p)
    assert back.frames.tobytes() == frames.tobytes()
    assert back.frame_rate_hz == 30.0
    q = tmp_path / "t.airt"
    write_sequence(back, q)
    assert q.read_bytes() == p.read_bytes()


@pytest.mark.parametrize(
    "mutate, offset",
    [
        (lambda d: b"XXXX" + d[4:], 0),
        (lambda d: d[:-3], None),
        (lambda d: d + b"\0\0\0\0", None),
        (lambda d: d[:10], None),
    ],
)
def test_corrupt_files_raise_format_error_with_offset(tmp_path, mutate, offset):
    p = tmp_path / "s.airt"
    write_sequence(InspectionSequence(np.zeros((2, 2, 2), np.float32)), p)
    p.write_bytes(mutate(p.read_bytes()))
    with pytest.raises(FormatError) as ei:
        read_sequence(p)
    assert ei.value.offset is not None
    if offset is not None:
        assert ei.value.offset == offset


def test_overflowing_dimensions_rejected(tmp_path):
    p = tmp_path / "s.airt"
    write_sequence(InspectionSequence(np.zeros((2, 1, 1), np.float32)), p)
    d = bytearray(p.read_bytes())
    d[8:20] = (0xFFFFFFFF).to_bytes(4, "little") * 3
    p.write_bytes(bytes(d))
    with pytest.raises(FormatError):
        read_sequence(p)


def test_frame_validation():
    with pytest.raises(FormatError):
        InspectionSequence(np.zeros((1, 2, 2)))
    with pytest.raises(FormatError):
        InspectionSequence(np.zeros((3, 2)))
    with pytest.raises(NumericError):
        InspectionSequence(np.array([[[np.nan]], [[0.0]]]))
    with pytest.raises(FormatError):
        InspectionSequence(np.zeros((2, 2, 2)), frame_rate_hz=0)


def test_standardize_is_per_pixel_centering(rng):
    frames = rng.normal(0, 1, (6, 3, 4)).astype(np.float32)
    seq = InspectionSequence(frames)
    std = standardize(seq)
    # raster order n = y * n_x + x
    for y in range(3):
        for x in range(4):
            sig = frames[:, y, x].astype(np.float64)
            np.testing.assert_allclose(std.signals[y * 4 + x], sig - sig.mean(), atol=1e-12)
    np.testing.assert_allclose(std.signals.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(std.restore(), frames, atol=1e-5)


def test_constant_sequence_standardizes_to_zero():
    std = standardize(InspectionSequence(np.full((4, 3, 3), 7.0)))
    assert np.all(std.signals == 0)


def test_bbox_half_open_pixels():
    b = BBox(1.5, 2, 4, 5)
    shape = (8, 8)
    ys, xs = b.pixel_slices(shape)
    got = sorted((y, x) for y in range(8)[ys] for x in range(8)[xs])
    assert got == sorted(oracles.box_pixels(b.as_list(), shape))
    assert b.pixel_count(shape) == 2 * 3
    with pytest.raises(FormatError):
        BBox(3, 0, 1, 1)


def test_roi_stats_against_oracle(rng):
    img = rng.normal(size=(10, 12))
    box = BBox(2, 3, 7, 9)
    mean, std, n = extract_roi_stats(img, box)
    om, os_, on = oracles.region_stats(img, box.as_list())
    assert n == on == 30
    assert mean == pytest.approx(om, rel=1e-12)
    assert std == pytest.approx(os_, rel=1e-12)


def test_roi_outside_image_raises():
    with pytest.raises(FormatError):
        extract_roi_stats(np.zeros((4, 4)), BBox(10, 10, 12, 12))


def test_labels_invariants_and_io(tmp_path):
    with pytest.raises(FormatError):
        RoiLabels(BBox(0, 0, 10, 10), BBox(5, 5, 15, 15))
    with pytest.raises(FormatError):
        RoiLabels(BBox(0, 0, 10, 10), BBox(20, 20, 24, 24))
    lab = RoiLabels(BBox(0, 0, 10, 10), BBox(20, 20, 25, 25), "test")
    p = tmp_path / "l.json"
    write_labels(lab, p)
    assert json.loads(p.read_text()) == {"defect_box": [0, 0, 10, 10], "sound_box": [20, 20, 25, 25], "source": "test"}
    assert read_labels(p) == lab
    p.write_text('{"defect_box": [0, 0, 1]}')
    with pytest.raises(FormatError):
        read_labels(p)
