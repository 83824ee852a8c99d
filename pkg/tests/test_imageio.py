"""
Tests for image file input/output.
"""
import numpy as np
import pytest

from src.augment import Image
from src.exceptions import InputError
from src.imageio import read_image, to_uint8, write_image


def test_grayscale_round_trip(tmp_path, rng):
    """Test a P5 file reproduces the 8-bit quantised pixels."""
    img = Image(rng.uniform(size=(7, 5)))
    path = tmp_path / "gray.pgm"
    write_image(path, img)
    assert path.read_bytes().startswith(b"P5")
    back = read_image(path)
    assert back.shape == (7, 5, 1)
    np.testing.assert_array_equal(back.pixels, to_uint8(img) / 255.0)


def test_rgb_round_trip(tmp_path, rng):
    """Test a P6 file keeps three channels."""
    img = Image(rng.uniform(size=(4, 6, 3)))
    path = tmp_path / "color.ppm"
    write_image(path, img)
    assert path.read_bytes().startswith(b"P6")
    back = read_image(path)
    assert back.channels == 3
    np.testing.assert_array_equal(back.pixels, to_uint8(img) / 255.0)


def test_png_is_read_through_pillow(tmp_path):
    """Test non-Netpbm formats go through Pillow's format detection."""
    img = Image(np.linspace(0.0, 1.0, 12).reshape(3, 4))
    path = tmp_path / "gray.png"
    write_image(path, img)
    np.testing.assert_array_equal(read_image(path).pixels, to_uint8(img) / 255.0)


def test_to_uint8_rounds_and_clips():
    """Test quantisation to 8 bits."""
    img = Image(np.array([[0.0, 0.5, 1.0, 1.0 / 510.0]]))
    assert to_uint8(img)[0, :, 0].tolist() == [0, 128, 255, 0]


def test_missing_file(tmp_path):
    """Test a missing path raises FileNotFoundError naming it."""
    with pytest.raises(FileNotFoundError, match="nope.pgm"):
        read_image(tmp_path / "nope.pgm")


def test_undecodable_file(tmp_path):
    """Test garbage bytes raise InputError."""
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"this is not an image")
    with pytest.raises(InputError):
        read_image(path)
