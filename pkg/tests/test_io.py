import json
import struct

import numpy as np
import pytest

from semdyn import io


def test_flo_roundtrip_and_header(tmp_path, rng):
    flow = rng.normal(size=(7, 9, 2)).astype(np.float32)
    path = tmp_path / "a.flo"
    io.write_flo(path, flow)
    raw = path.read_bytes()
    magic, w, h = struct.unpack("<fii", raw[:12])
    assert (magic, w, h) == (202021.25, 9, 7)
    assert len(raw) == 12 + 7 * 9 * 2 * 4
    np.testing.assert_array_equal(io.read_flo(path), flow)


def test_flo_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.flo"
    path.write_bytes(struct.pack("<fii", 1.0, 1, 1) + b"\0" * 8)
    with pytest.raises(ValueError):
        io.read_flo(path)


def test_frame_and_map_png_roundtrip(tmp_path, rng):
    frame = rng.integers(0, 256, size=(6, 5, 3)) / 255.0
    io.write_frame(tmp_path / "f.png", frame)
    np.testing.assert_allclose(io.read_frame(tmp_path / "f.png"), frame, atol=1e-12)
    labels = rng.integers(1, 4, size=(6, 5))
    io.write_semantic_map(tmp_path / "m.png", labels)
    np.testing.assert_array_equal(io.read_semantic_map(tmp_path / "m.png"), labels)


def test_mask_sidecar(tmp_path):
    mask = np.zeros((4, 4), bool)
    mask[1:3, 2] = True
    io.write_mask(tmp_path / "d.png", mask, provenance={"source": "oracle"})
    np.testing.assert_array_equal(io.read_mask(tmp_path / "d.png"), mask)
    assert json.loads((tmp_path / "d.json").read_text()) == {"source": "oracle"}


def test_color_wheel():
    wheel = io._color_wheel()
    assert wheel.shape == (55, 3)
    np.testing.assert_array_equal(wheel[0], [255, 0, 0])
    zero = io.flow_to_color(np.zeros((3, 3, 2)))
    assert np.all(zero == 255)
    # opposite directions land on different hues at full saturation
    flow = np.zeros((1, 2, 2))
    flow[0, 0] = (1, 0)
    flow[0, 1] = (-1, 0)
    col = io.flow_to_color(flow, max_norm=1.0)
    assert col.dtype == np.uint8 and not np.array_equal(col[0, 0], col[0, 1])
