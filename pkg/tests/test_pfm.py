import numpy as np
import pytest

from phasorfields import pfm


@pytest.mark.parametrize("channels", [1, 2, 3, 4])
def test_roundtrip_bit_exact(tmp_path, channels):
    rng = np.random.default_rng(channels)
    img = rng.normal(size=(5, 7, channels)).astype(np.float32)
    path = tmp_path / f"c{channels}.pfm"
    pfm.write_pfm(path, img)
    out, scale = pfm.read_pfm(path)
    assert out.shape == (5, 7, channels)
    assert out.dtype == np.float32
    assert scale == pytest.approx(1.0)
    np.testing.assert_array_equal(out, img)


def test_header_tags(tmp_path):
    tags = {1: b"Pf", 2: b"PF2", 3: b"PF", 4: b"PF4"}
    for channels, tag in tags.items():
        path = tmp_path / f"t{channels}.pfm"
        pfm.write_pfm(path, np.zeros((2, 2, channels), np.float32))
        assert path.read_bytes().startswith(tag + b"\n")


def test_two_dim_input_reads_back_single_channel(tmp_path):
    img = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "d.pfm"
    pfm.write_pfm(path, img)
    out, _ = pfm.read_pfm(path)
    assert out.shape == (2, 3, 1)
    np.testing.assert_array_equal(out[..., 0], img)


def test_scale_preserved(tmp_path):
    path = tmp_path / "s.pfm"
    pfm.write_pfm(path, np.ones((2, 2, 1), np.float32), scale=2.5)
    out, scale = pfm.read_pfm(path)
    assert scale == pytest.approx(2.5)
    np.testing.assert_array_equal(out, np.ones((2, 2, 1), np.float32))


def test_row_order_is_bottom_up(tmp_path):
    # bottom image row is stored first in the file
    img = np.array([[[1.0]], [[2.0]]], np.float32)  # row 0 = top = 1.0
    path = tmp_path / "r.pfm"
    pfm.write_pfm(path, img)
    raw = path.read_bytes()
    pixels = np.frombuffer(raw[-8:], dtype="<f4")
    np.testing.assert_array_equal(pixels, [2.0, 1.0])


def test_read_errors(tmp_path):
    bad = tmp_path / "bad.pfm"
    bad.write_bytes(b"XX\n1 1\n-1.0\n" + b"\x00" * 4)
    with pytest.raises(ValueError):
        pfm.read_pfm(bad)
    trunc = tmp_path / "trunc.pfm"
    pfm.write_pfm(trunc, np.zeros((4, 4, 3), np.float32))
    data = trunc.read_bytes()
    trunc.write_bytes(data[:-8])
    with pytest.raises(ValueError):
        pfm.read_pfm(trunc)


def test_write_validation(tmp_path):
    with pytest.raises(ValueError):
        pfm.write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 5), np.float32))
    with pytest.raises(ValueError):
        pfm.write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 1), np.float32),
                      scale=0.0)


def test_signed_preview_colors():
    img = np.array([[1.0, -1.0, 0.0]], np.float32)
    rgb = pfm.signed_preview(img)
    assert rgb.shape == (1, 3, 3)
    assert rgb.dtype == np.uint8
    r, g, b = rgb[0, 0]
    assert r == 255 and g == 0 and b == 0  # positive -> red
    r, g, b = rgb[0, 1]
    assert r == 0 and g == 0 and b == 255  # negative -> blue
    np.testing.assert_array_equal(rgb[0, 2], [0, 0, 0])


def test_preview_png_files(tmp_path):
    from PIL import Image
    gray = np.linspace(0.0, 1.0, 12, dtype=np.float32).reshape(3, 4)
    p1 = tmp_path / "gray.png"
    pfm.write_preview_png(p1, gray)
    with Image.open(p1) as im:
        assert im.size == (4, 3)
    p2 = tmp_path / "signed.png"
    pfm.write_preview_png(p2, gray - 0.5, signed=True)
    with Image.open(p2) as im:
        assert im.mode == "RGB"
