import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advface.imagecore import (
    FormatError,
    Image,
    Point,
    Polygon,
    fill_polygon,
    median_filter,
    median_filter_array,
    polygon_mask,
    raster_line,
    read_image,
    write_image,
)

from oracles import dda_points, naive_median, point_in_polygon


# ---------------------------------------------------------------------------
# Image type
# ---------------------------------------------------------------------------

class TestImageType:
    def test_two_dimensional_input_gains_channel_axis(self):
        img = Image(np.zeros((4, 6), dtype=np.uint8))
        assert img.pixels.shape == (4, 6, 1)
        assert (img.height, img.width, img.channels) == (4, 6, 1)

    def test_pixels_are_read_only(self):
        img = Image(np.zeros((2, 2), dtype=np.uint8))
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 1

    def test_rejects_wrong_dtype(self):
        with pytest.raises(ValueError, match="uint8"):
            Image(np.zeros((2, 2), dtype=np.int32))

    def test_rejects_bad_channel_count(self):
        with pytest.raises(ValueError, match="C in"):
            Image(np.zeros((2, 2, 2), dtype=np.uint8))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Image(np.zeros((0, 3), dtype=np.uint8))

    def test_equality_is_by_content(self):
        a = Image(np.full((2, 2), 9, dtype=np.uint8))
        b = Image(np.full((2, 2), 9, dtype=np.uint8))
        c = Image(np.full((2, 2), 8, dtype=np.uint8))
        assert a == b
        assert a != c


# ---------------------------------------------------------------------------
# Netpbm codec
# ---------------------------------------------------------------------------

class TestCodec:
    def test_read_p5_2x2(self, tmp_path):
        f = tmp_path / "a.pgm"
        f.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 7, 9]))
        img = read_image(f)
        assert (img.width, img.height, img.channels) == (2, 2, 1)
        assert img.data == bytes([0, 255, 7, 9])

    def test_read_p6_3x1(self, tmp_path):
        f = tmp_path / "a.ppm"
        f.write_bytes(b"P6\n3 1\n255\n" + bytes(range(9)))
        img = read_image(f)
        assert (img.width, img.height, img.channels) == (3, 1, 3)
        assert img.data == bytes(range(9))

    def test_write_canonical_1x1(self, tmp_path):
        f = tmp_path / "a.pgm"
        write_image(Image(np.array([[128]], dtype=np.uint8)), f)
        assert f.read_bytes() == b"P5\n1 1\n255\n\x80"

    def test_write_read_round_trip_reproduces_file(self, tmp_path):
        f1 = tmp_path / "a.pgm"
        f2 = tmp_path / "b.pgm"
        f1.write_bytes(b"P5\n2 2\n255\n" + bytes([1, 2, 3, 4]))
        write_image(read_image(f1), f2)
        assert f1.read_bytes() == f2.read_bytes()

    def test_unsupported_magic(self, tmp_path):
        f = tmp_path / "a.pgm"
        f.write_bytes(b"P4\n1 1\n255\n\x00")
        with pytest.raises(FormatError, match=r"unsupported magic b'P4' at byte 0"):
            read_image(f)

    def test_bad_width_token(self, tmp_path):
        f = tmp_path / "a.pgm"
        f.write_bytes(b"P5\nxx 2\n255\n\x00\x00")
        with pytest.raises(FormatError, match="bad width token"):
            read_image(f)

    def test_bad_maxval(self, tmp_path):
        f = tmp_path / "a.pgm"
        f.write_bytes(b"P5\n1 1\n254\n\x00")
        with pytest.raises(FormatError, match="maxval must be 255, got 254"):
            read_image(f)

    def test_truncated_payload_names_byte_offset(self, tmp_path):
        f = tmp_path / "a.pgm"
        f.write_bytes(b"P5\n2 2\n255\n\x00\x01")
        with pytest.raises(FormatError, match="truncated payload .* need 4 bytes, got 2"):
            read_image(f)

    def test_missing_whitespace_after_maxval(self, tmp_path):
        f = tmp_path / "a.pgm"
        f.write_bytes(b"P5\n1 1\n255")
        with pytest.raises(FormatError, match="missing whitespace after maxval"):
            read_image(f)

    def test_bad_dimensions(self, tmp_path):
        f = tmp_path / "a.pgm"
        f.write_bytes(b"P5\n0 2\n255\n")
        with pytest.raises(FormatError, match="bad dimensions"):
            read_image(f)

    @settings(max_examples=200)
    @given(
        w=st.integers(1, 8),
        h=st.integers(1, 8),
        c=st.sampled_from([1, 3]),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_round_trip_property(self, tmp_path_factory, w, h, c, seed):
        rng = np.random.default_rng(seed)
        img = Image(rng.integers(0, 256, size=(h, w, c), dtype=np.uint8))
        path = tmp_path_factory.mktemp("rt") / "img.pnm"
        write_image(img, path)
        back = read_image(path)
        assert back == img
        # writing the decoded image again is byte-identical
        path2 = path.with_suffix(".again")
        write_image(back, path2)
        assert path.read_bytes() == path2.read_bytes()


# ---------------------------------------------------------------------------
# Line rasterization
# ---------------------------------------------------------------------------

class TestRasterLine:
    def test_vertical(self):
        assert raster_line(Point(0, 0), Point(0, 3)) == [
            Point(0, 0), Point(0, 1), Point(0, 2), Point(0, 3)]

    def test_diagonal(self):
        assert raster_line(Point(0, 0), Point(3, 3)) == [
            Point(0, 0), Point(1, 1), Point(2, 2), Point(3, 3)]

    def test_shallow_line_matches_dda_oracle(self):
        pts = raster_line(Point(0, 0), Point(5, 2))
        assert len(pts) == 6
        assert [(p.x, p.y) for p in pts] == dda_points((0, 0), (5, 2))

    @settings(max_examples=200)
    @given(
        x0=st.integers(0, 30), y0=st.integers(0, 30),
        x1=st.integers(0, 30), y1=st.integers(0, 30),
    )
    def test_symmetric_point_set_and_length(self, x0, y0, x1, y1):
        fwd = raster_line(Point(x0, y0), Point(x1, y1))
        bwd = raster_line(Point(x1, y1), Point(x0, y0))
        assert set(fwd) == set(bwd)
        assert len(fwd) == max(abs(x1 - x0), abs(y1 - y0)) + 1
        assert fwd[0] == Point(x0, y0) and fwd[-1] == Point(x1, y1)
        # 8-connectivity: consecutive points differ by at most 1 per axis
        for a, b in zip(fwd, fwd[1:]):
            assert max(abs(a.x - b.x), abs(a.y - b.y)) == 1


# ---------------------------------------------------------------------------
# Polygons
# ---------------------------------------------------------------------------

class TestPolygon:
    def test_needs_three_vertices(self):
        with pytest.raises(ValueError, match="at least 3"):
            Polygon([(0, 0), (1, 1)])

    def test_rejects_zero_area(self):
        with pytest.raises(ValueError, match="degenerate"):
            Polygon([(0, 0), (1, 1), (2, 2)])

    def test_rectangle_fill_zeroes_nine_pixels(self):
        img = Image(np.full((5, 5), 200, dtype=np.uint8))
        out = fill_polygon(img, Polygon([(1, 1), (3, 1), (3, 3), (1, 3)]), 0)
        assert int((out.pixels == 0).sum()) == 9
        assert (out.pixels[1:4, 1:4] == 0).all()

    def test_polygon_covering_whole_image(self):
        img = Image(np.full((6, 6), 77, dtype=np.uint8))
        out = fill_polygon(img, Polygon([(-1, -1), (6, -1), (6, 6), (-1, 6)]), 3)
        assert (out.pixels == 3).all()

    def test_fill_value_validated(self):
        img = Image(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ValueError, match="fill value"):
            fill_polygon(img, Polygon([(0, 0), (3, 0), (3, 3)]), 256)

    def test_triangle_mask_matches_per_pixel_oracle(self):
        poly = Polygon([(1, 0), (7, 2), (3, 7)])
        mask = polygon_mask(poly, 8, 8)
        for y in range(8):
            for x in range(8):
                assert mask[y, x] == point_in_polygon(poly.vertices, x, y), (x, y)

    @settings(max_examples=200)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_random_polygon_mask_matches_oracle_and_fill_is_local(self, seed):
        rng = np.random.default_rng(seed)
        size = int(rng.integers(6, 14))
        while True:
            verts = [(int(rng.integers(0, size)), int(rng.integers(0, size)))
                     for _ in range(int(rng.integers(3, 6)))]
            try:
                poly = Polygon(verts)
                break
            except ValueError:
                continue
        mask = polygon_mask(poly, size, size)
        for y in range(size):
            for x in range(size):
                assert mask[y, x] == point_in_polygon(poly.vertices, x, y)
        img = Image(rng.integers(1, 256, size=(size, size, 1), dtype=np.uint8))
        out = fill_polygon(img, poly, 0)
        xs = [v.x for v in poly.vertices]
        ys = [v.y for v in poly.vertices]
        outside_bbox = np.ones((size, size), dtype=bool)
        outside_bbox[max(min(ys), 0):max(ys) + 1, max(min(xs), 0):max(xs) + 1] = False
        assert (out.pixels[outside_bbox] == img.pixels[outside_bbox]).all()


# ---------------------------------------------------------------------------
# Median filter
# ---------------------------------------------------------------------------

class TestMedianFilter:
    def test_even_window_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            median_filter(Image(np.zeros((3, 3), dtype=np.uint8)), 2)

    def test_k1_identity(self):
        img = Image(np.arange(9, dtype=np.uint8).reshape(3, 3))
        assert median_filter(img, 1) == img

    def test_constant_unchanged(self):
        img = Image(np.full((7, 7), 42, dtype=np.uint8))
        for k in (3, 5, 7):
            assert median_filter(img, k) == img

    def test_salt_pixel_removed_and_matches_naive_oracle(self):
        px = np.zeros((5, 5, 1), dtype=np.uint8)
        px[2, 2, 0] = 255
        out = median_filter(Image(px), 3)
        assert out.pixels[2, 2, 0] == 0
        assert np.array_equal(out.pixels, naive_median(px, 3))

    @settings(max_examples=60)
    @given(seed=st.integers(0, 2**32 - 1), k=st.sampled_from([3, 5]))
    def test_random_images_match_naive_oracle(self, seed, k):
        rng = np.random.default_rng(seed)
        h, w = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        px = rng.integers(0, 256, size=(h, w, 1), dtype=np.uint8)
        assert np.array_equal(median_filter(Image(px), k).pixels, naive_median(px, k))

    @settings(max_examples=200)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_output_range_within_input_range(self, seed):
        rng = np.random.default_rng(seed)
        px = rng.integers(0, 256, size=(6, 6, 1), dtype=np.uint8)
        out = median_filter(Image(px), 3)
        assert out.pixels.min() >= px.min()
        assert out.pixels.max() <= px.max()

    def test_batch_variant_matches_single_image_filter(self):
        rng = np.random.default_rng(3)
        batch = rng.integers(0, 256, size=(4, 8, 8, 1), dtype=np.uint8)
        out = median_filter_array(batch, 5)
        for i in range(4):
            assert np.array_equal(out[i], median_filter(Image(batch[i]), 5).pixels)

    def test_batch_k1_identity_and_even_rejected(self):
        batch = np.zeros((1, 3, 3, 1), dtype=np.uint8)
        assert median_filter_array(batch, 1) is batch
        with pytest.raises(ValueError):
            median_filter_array(batch, 4)
