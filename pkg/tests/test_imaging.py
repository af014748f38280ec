import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from projlab import imaging

small_images = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)),
    elements=st.floats(0.0, 1.0, allow_nan=False),
)
quantized = arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)))


# -- quantize ---------------------------------------------------------------


def test_quantize_zero_and_one():
    assert np.all(imaging.quantize(np.zeros((2, 2, 3))) == 0)
    assert np.all(imaging.quantize(np.ones((2, 2, 3))) == 255)


def test_quantize_half_rounds_away_from_zero():
    # 0.5 * 255 = 127.5 exactly; banker's rounding would give 128 too, so
    # also check a tie that banker's rounding sends down.
    assert imaging.quantize(np.full((1, 1, 3), 0.5))[0, 0, 0] == 128
    tie = 126.5 / 255.0
    assert imaging.quantize(np.full((1, 1, 3), tie))[0, 0, 0] == 127


@given(quantized)
def test_quantize_dequantize_roundtrip(q):
    assert np.array_equal(imaging.quantize(imaging.dequantize(q)), q)


@given(small_images)
def test_quantize_matches_scalar_oracle(img):
    import math

    q = imaging.quantize(img)
    for idx in np.ndindex(img.shape):
        x = img[idx] * 255.0
        expect = min(255, max(0, int(math.floor(x + 0.5))))
        assert q[idx] == expect


def test_as_image_rejects_out_of_range():
    with pytest.raises(imaging.ImageError):
        imaging.as_image(np.full((2, 2, 3), 1.5))
    with pytest.raises(imaging.ImageError):
        imaging.as_image(np.zeros((2, 2)))
    with pytest.raises(imaging.ImageError):
        imaging.as_image(np.full((1, 1, 3), np.nan))


# -- homographies and warp -------------------------------------------------------


@given(small_images)
def test_warp_identity_is_exact(img):
    out, cov = imaging.warp(img, np.eye(3), img.shape[1], img.shape[0])
    assert np.array_equal(out, img)
    assert cov.all()


def test_warp_scale_of_constant_is_constant():
    img = np.full((5, 7, 3), 0.3)
    out, cov = imaging.warp(img, imaging.scaling(2.0), 14, 10)
    assert np.allclose(out[cov], 0.3)
    assert cov.sum() > 0


def test_warp_quarter_turn_permutes_corners():
    tl, tr, bl, br = (1.0, 0, 0), (0, 1.0, 0), (0, 0, 1.0), (1.0, 1.0, 0)
    img = np.array([[tl, tr], [bl, br]])
    # Quarter turn about the centre of the 2x2 grid.
    out, cov = imaging.warp(img, imaging.rotation(90, center=(0.5, 0.5)), 2, 2)
    assert cov.all()
    # Clockwise on screen: top-left goes to top-right, and so on round the square.
    assert np.allclose(out[0, 1], tl)
    assert np.allclose(out[1, 1], tr)
    assert np.allclose(out[1, 0], br)
    assert np.allclose(out[0, 0], bl)


def test_warp_transparent_border_reports_coverage():
    img = np.ones((4, 4, 3))
    out, cov = imaging.warp(img, imaging.translation(2, 0), 4, 4)
    assert not cov[:, :2].any() and cov[:, 2:].all()
    assert np.all(out[:, :2] == 0)


def test_warp_bilinear_midpoint():
    img = np.zeros((1, 2, 3))
    img[0, 1] = 1.0
    out, _ = imaging.warp(img, imaging.translation(-0.5, 0), 1, 1)
    assert np.allclose(out[0, 0], 0.5)


def test_singular_homography():
    with pytest.raises(imaging.SingularHomography):
        imaging.warp(np.zeros((2, 2, 3)), np.zeros((3, 3)), 2, 2)
    with pytest.raises(imaging.SingularHomography):
        imaging.homography([[1, 0, 0], [2, 0, 0], [0, 0, 1]])


def test_homography_normalizes_last_entry():
    h = imaging.homography(2 * np.eye(3))
    assert h[2, 2] == 1.0 and np.allclose(h, np.eye(3))


# -- compose --------------------------------------------------------------------


@given(small_images)
def test_compose_empty_mask_is_identity(img):
    out = imaging.compose(img, np.ones_like(img), np.zeros(img.shape[:2], bool))
    assert np.array_equal(out, img)


def test_compose_full_mask_replaces():
    base = np.zeros((3, 3, 3))
    over = np.full((3, 3, 3), 0.7)
    assert np.array_equal(imaging.compose(base, over, np.ones((3, 3), bool)), over)


def test_compose_single_pixel_changes_quarter():
    base = np.zeros((2, 2, 3))
    out = imaging.compose(base, np.ones((1, 1, 3)), np.ones((1, 1), bool), (0, 0))
    changed = np.any(out != base, axis=2)
    assert changed.sum() == 1 and changed.mean() == 0.25


def test_compose_out_of_bounds():
    with pytest.raises(imaging.OutOfBounds):
        imaging.compose(np.zeros((2, 2, 3)), np.ones((2, 2, 3)), np.ones((2, 2), bool), (1, 0))
    with pytest.raises(imaging.DimensionMismatch):
        imaging.compose(np.zeros((2, 2, 3)), np.ones((1, 1, 3)), np.ones((2, 2), bool))


# -- PPM / PFM ------------------------------------------------------------------


def test_minimal_p6_white(tmp_path):
    p = tmp_path / "w.ppm"
    p.write_bytes(b"P6\n1 1\n255\n\xff\xff\xff")
    img = imaging.read_ppm(p)
    assert img.shape == (1, 1, 3) and np.all(img == 1.0)


def test_p6_roundtrip_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    raw = b"P6\n8 8\n255\n" + rng.integers(0, 256, 8 * 8 * 3, dtype=np.uint8).tobytes()
    src = tmp_path / "a.ppm"
    src.write_bytes(raw)
    dst = tmp_path / "b.ppm"
    imaging.write_ppm(dst, imaging.read_ppm(src))
    assert dst.read_bytes() == raw


def test_p3_with_comments(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_text("P3 # plain\n2 1\n# maxval next\n255\n0 128 255  255 255 255\n")
    img = imaging.read_ppm(p)
    assert np.array_equal(imaging.quantize(img)[0, 0], [0, 128, 255])
    assert np.all(img[0, 1] == 1.0)


@pytest.mark.parametrize(
    "raw, err",
    [
        (b"P7\n1 1\n255\n\x00\x00\x00", imaging.MalformedHeader),
        (b"P6\n1 1\n65535\n\x00\x00\x00", imaging.MalformedHeader),
        (b"P6\n2 2\n255\n\x00\x00\x00", imaging.TruncatedData),
        (b"P6\n1 1\n255", imaging.TruncatedData),
        (b"P6\n1", imaging.MalformedHeader),
        (b"", imaging.MalformedHeader),
        (b"P3\n1 1\n255\n0 0 300\n", imaging.MalformedHeader),
        (b"P3\n1 1\n255\n0 0\n", imaging.TruncatedData),
    ],
)
def test_ppm_errors(tmp_path, raw, err):
    p = tmp_path / "bad.ppm"
    p.write_bytes(raw)
    with pytest.raises(err):
        imaging.read_ppm(p)


@settings(max_examples=30)
@given(quantized)
def test_ppm_roundtrip_preserves_samples(q):
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "x.ppm"
        imaging.write_ppm(p, imaging.dequantize(q))
        assert np.array_equal(imaging.quantize(imaging.read_ppm(p)), q)


def test_pfm_layout_is_bottom_up_little_endian(tmp_path):
    img = np.zeros((2, 1, 3))
    img[0, 0] = (0.25, 0.5, 0.75)  # top row
    p = tmp_path / "x.pfm"
    imaging.write_pfm(p, img)
    raw = p.read_bytes()
    header = b"PF\n1 2\n-1.0\n"
    assert raw.startswith(header)
    body = np.frombuffer(raw[len(header) :], dtype="<f4")
    # The bottom row (zeros) comes first on disk.
    assert np.array_equal(body, np.array([0, 0, 0, 0.25, 0.5, 0.75], dtype="<f4"))
    assert np.array_equal(imaging.read_pfm(p), img)


def test_pfm_big_endian_read(tmp_path):
    p = tmp_path / "be.pfm"
    p.write_bytes(b"PF\n1 1\n1.0\n" + np.array([0.5, 0.25, 1.0], dtype=">f4").tobytes())
    assert np.allclose(imaging.read_pfm(p)[0, 0], [0.5, 0.25, 1.0])


def test_pfm_errors(tmp_path):
    p = tmp_path / "bad.pfm"
    p.write_bytes(b"Pf\n1 1\n-1.0\n" + b"\x00" * 4)
    with pytest.raises(imaging.MalformedHeader):
        imaging.read_pfm(p)
    p.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 8)
    with pytest.raises(imaging.TruncatedData):
        imaging.read_pfm(p)
