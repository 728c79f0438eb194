"""Core image types, netpbm I/O, rasterization primitives, and median filtering.

Images are 8-bit rasters stored as (H, W, C) uint8 arrays with C in {1, 3}.
The only file formats are binary PGM (P5) and PPM (P6) with maxval 255.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class FormatError(ValueError):
    """Malformed or unsupported image file content."""


class Point(NamedTuple):
    x: int
    y: int


@dataclass(frozen=True)
class Image:
    """8-bit raster; pixels has shape (H, W, C), C in {1, 3}."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"pixels must be (H, W, C) with C in {{1, 3}}, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {px.dtype}")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def data(self) -> bytes:
        """Row-major interleaved pixel bytes."""
        return self.pixels.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class Polygon:
    """Closed polygon given by ordered vertices; must enclose positive area."""

    vertices: tuple[Point, ...]

    def __init__(self, vertices):
        verts = tuple(Point(int(x), int(y)) for x, y in vertices)
        if len(verts) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        if abs(_shoelace(verts)) <= 0:
            raise ValueError("degenerate polygon (zero area)")
        object.__setattr__(self, "vertices", verts)


def _shoelace(verts) -> float:
    area2 = 0.0
    n = len(verts)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        area2 += x0 * y1 - x1 * y0
    return area2 / 2.0


# ---------------------------------------------------------------------------
# Netpbm codec (binary P5 / P6, maxval 255)
# ---------------------------------------------------------------------------

def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n and buf[pos : pos + 1].isspace():
        pos += 1
    if pos >= n:
        raise FormatError(f"unexpected end of header at byte {pos}")
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_image(path) -> Image:
    """Read a binary PGM (P5) or PPM (P6) file with maxval 255."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _next_token(buf, 0)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"unsupported magic {magic!r} at byte 0 (want P5 or P6)")
    dims = []
    for name in ("width", "height", "maxval"):
        tok, pos = _next_token(buf, pos)
        try:
            dims.append(int(tok))
        except ValueError:
            raise FormatError(f"bad {name} token {tok!r} at byte {pos - len(tok)}") from None
    width, height, maxval = dims
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height} in header")
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval} at byte {pos}")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError(f"missing whitespace after maxval at byte {pos}")
    pos += 1
    need = width * height * channels
    payload = buf[pos : pos + need]
    if len(payload) != need:
        raise FormatError(
            f"truncated payload at byte {pos + len(payload)}: "
            f"need {need} bytes, got {len(payload)}"
        )
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Image(px.copy())


def write_image(img: Image, path) -> None:
    """Write a canonical binary PGM/PPM file (P5/P6, maxval 255)."""
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(img.data)
    except OSError as exc:
        raise OSError(f"failed writing image to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def raster_line(a: Point, b: Point) -> list[Point]:
    """8-connected Bresenham segment from a to b, endpoints inclusive.

    The segment is always traced in a canonical direction so that a->b and
    b->a rasterize to the same point set (classic Bresenham is not
    direction-symmetric on its own).
    """
    x0, y0 = int(a[0]), int(a[1])
    x1, y1 = int(b[0]), int(b[1])
    if (x1, y1) < (x0, y0):
        return raster_line(Point(x1, y1), Point(x0, y0))[::-1]
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    points = []
    while True:
        points.append(Point(x0, y0))
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return points


def polygon_mask(poly: Polygon, width: int, height: int) -> np.ndarray:
    """Boolean (H, W) mask of pixels inside poly (even-odd rule, boundary inclusive).

    A pixel (x, y) is inside when the even-odd crossing count at that point is
    odd, or when the point lies exactly on a polygon edge.
    """
    verts = np.array(poly.vertices, dtype=np.float64)
    xs = np.arange(width, dtype=np.float64)[None, :]
    ys = np.arange(height, dtype=np.float64)[:, None]
    inside = np.zeros((height, width), dtype=bool)
    boundary = np.zeros((height, width), dtype=bool)
    n = len(verts)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        # even-odd ray cast toward +x with the half-open vertex rule
        crosses = (y0 > ys) != (y1 > ys)
        if np.any(crosses):
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x0 + (ys - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (xs < xint)
        # exact on-segment test
        cross = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)
        within = (
            (xs >= min(x0, x1)) & (xs <= max(x0, x1))
            & (ys >= min(y0, y1)) & (ys <= max(y0, y1))
        )
        boundary |= (cross == 0) & within
    return inside | boundary


def fill_polygon(img: Image, poly: Polygon, value: int) -> Image:
    """Set every pixel inside poly to value (all channels); others untouched."""
    if not 0 <= value <= 255:
        raise ValueError(f"fill value must be in [0, 255], got {value}")
    mask = polygon_mask(poly, img.width, img.height)
    px = img.pixels.copy()
    px[mask] = value
    return Image(px)


# ---------------------------------------------------------------------------
# Median filter
# ---------------------------------------------------------------------------

def median_filter(img: Image, k: int) -> Image:
    """k x k median filter with edge-replicated padding, per channel."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"window size must be odd and >= 1, got {k}")
    if k == 1:
        return img
    return Image(_median_any(img.pixels, k))


def _median_any(px: np.ndarray, k: int) -> np.ndarray:
    pad = k // 2
    padded = np.pad(px, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
    return np.median(win, axis=(-2, -1)).astype(np.uint8)


def median_filter_array(batch: np.ndarray, k: int = 5) -> np.ndarray:
    """Median-filter a (N, H, W, C) uint8 batch; same semantics as median_filter."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"window size must be odd and >= 1, got {k}")
    if k == 1:
        return batch
    pad = k // 2
    padded = np.pad(batch, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    return np.median(win, axis=(-2, -1)).astype(np.uint8)
