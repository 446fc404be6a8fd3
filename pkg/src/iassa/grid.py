"""Dense 2-D/3-D grids, resampling, blurring, normalization and file I/O.

Everything downstream (masking, saliency aggregation, attention, metrics)
works on the two types defined here: ImageTensor for unit-interval images
and SaliencyMap for per-pixel importance values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

SMAP_MAGIC = b"SMAP"
SMAP_VERSION = 1


@dataclass(frozen=True)
class ImageTensor:
    """H x W x C grid of intensities in [0, 1], row-major."""

    data: np.ndarray  # float64, shape (H, W, C)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ValueError(f"image must be (H, W, 1|3), got {d.shape}")
        if not np.isfinite(d).all():
            raise ValueError("image contains non-finite values")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class SaliencyMap:
    """H x W grid of finite per-pixel importance values."""

    values: np.ndarray  # float64, shape (H, W)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"saliency map must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("saliency map contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PixelIndex:
    row: int
    col: int


# ---------------------------------------------------------------------------
# Image file loading (PPM/PGM plain + binary, 8-bit PNG)
# ---------------------------------------------------------------------------


def _parse_pnm(raw: bytes, path: str) -> np.ndarray:
    """Parse P2/P3/P5/P6 into a (H, W, C) float64 array in [0, 1]."""
    magic = raw[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported PNM magic {magic!r}")
    binary = magic in (b"P5", b"P6")
    channels = 3 if magic in (b"P3", b"P6") else 1

    # Header tokens (width, height, maxval), skipping '#' comments.
    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3:
        if pos >= len(raw):
            raise FormatError(f"{path}: truncated header")
        ch = raw[pos : pos + 1]
        if ch == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end : end + 1].isspace():
                end += 1
            tokens.append(int(raw[pos:end]))
            pos = end
    width, height, maxval = tokens
    if maxval <= 0 or maxval > 255:
        raise FormatError(f"{path}: unsupported bit depth (maxval {maxval})")

    n = height * width * channels
    if binary:
        pos += 1  # single whitespace after maxval
        raster = raw[pos : pos + n]
        if len(raster) < n:
            raise OSError(f"{path}: truncated raster ({len(raster)} of {n} bytes)")
        flat = np.frombuffer(raster, dtype=np.uint8, count=n).astype(np.float64)
    else:
        try:
            values = raw[pos:].split()
            flat = np.array([int(t) for t in values[:n]], dtype=np.float64)
        except ValueError as e:
            raise FormatError(f"{path}: bad plain-PNM sample: {e}") from e
        if flat.size < n:
            raise OSError(f"{path}: truncated raster ({flat.size} of {n} samples)")
    if flat.max(initial=0) > maxval:
        raise FormatError(f"{path}: sample exceeds declared maxval")
    return (flat / maxval).reshape(height, width, channels)


def _load_png(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B", "F"):
            raise FormatError(f"{path}: only 8-bit PNG is supported (mode {im.mode})")
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.float64)[:, :, None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
        return arr / 255.0


def load_image(path: str | Path) -> ImageTensor:
    """Load a PPM/PGM (plain or binary) or 8-bit PNG image, scaled to [0, 1]."""
    path = str(path)
    with open(path, "rb") as f:
        head = f.read(8)
    if head[:2] in (b"P2", b"P3", b"P5", b"P6"):
        with open(path, "rb") as f:
            return ImageTensor(_parse_pnm(f.read(), path))
    if head.startswith(b"\x89PNG"):
        return ImageTensor(_load_png(path))
    raise FormatError(f"{path}: unrecognized image format")


def save_pgm(values: np.ndarray, path: str | Path) -> None:
    """Write a 2-D array of [0, 1] values as a binary 8-bit PGM."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    data = np.rint(v * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


# ---------------------------------------------------------------------------
# Resampling and filtering
# ---------------------------------------------------------------------------


def _resample_plane(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resample of one 2-D plane."""
    in_h, in_w = src.shape
    # Corner alignment: output corners map exactly onto input corners.
    # A size-1 output axis collapses to source coordinate 0.
    ys = np.linspace(0.0, in_h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, in_w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.minimum(ys.astype(np.int64), in_h - 1)
    x0 = np.minimum(xs.astype(np.int64), in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = src[y0[:, None], x0[None, :]] * (1.0 - wx) + src[y0[:, None], x1[None, :]] * wx
    bot = src[y1[:, None], x0[None, :]] * (1.0 - wx) + src[y1[:, None], x1[None, :]] * wx
    return top * (1.0 - wy) + bot * wy


def resize_bilinear(src: ImageTensor | SaliencyMap, out_h: int, out_w: int):
    """Resize an image or saliency map with corner-aligned bilinear sampling.

    Returns the same kind as `src`; identical dimensions return a bitwise copy.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target dimensions must be >= 1, got {out_h}x{out_w}")
    if isinstance(src, ImageTensor):
        if (out_h, out_w) == (src.height, src.width):
            return ImageTensor(src.data.copy())
        planes = [_resample_plane(src.data[:, :, c], out_h, out_w) for c in range(src.channels)]
        # Bilinear weights are convex, but guard against float wobble at the
        # [0, 1] boundary so the ImageTensor invariant holds.
        return ImageTensor(np.clip(np.stack(planes, axis=2), 0.0, 1.0))
    if isinstance(src, SaliencyMap):
        if (out_h, out_w) == (src.height, src.width):
            return SaliencyMap(src.values.copy())
        return SaliencyMap(_resample_plane(src.values, out_h, out_w))
    raise TypeError(f"cannot resize {type(src).__name__}")


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(src: ImageTensor, sigma: float) -> ImageTensor:
    """Separable Gaussian blur with edge clamping (replicated borders)."""
    k = gaussian_kernel(sigma)
    radius = (k.size - 1) // 2
    padded = np.pad(src.data, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    # Convolve rows then columns; kernel is symmetric so correlation == convolution.
    rows = np.zeros((src.height, padded.shape[1], src.channels))
    for i, w in enumerate(k):
        rows += w * padded[i : i + src.height, :, :]
    out = np.zeros((src.height, src.width, src.channels))
    for i, w in enumerate(k):
        out += w * rows[:, i : i + src.width, :]
    return ImageTensor(np.clip(out, 0.0, 1.0))


def minmax_normalize(s: SaliencyMap) -> SaliencyMap:
    """Rescale to [0, 1]; a constant map normalizes to all zeros.

    A constant map carries no ranking information, and zeros make the
    thresholded high-activation region empty, which the engine treats as a
    documented degenerate case.
    """
    lo = s.values.min()
    hi = s.values.max()
    if hi > lo:
        return SaliencyMap((s.values - lo) / (hi - lo))
    return SaliencyMap(np.zeros_like(s.values))


# ---------------------------------------------------------------------------
# Saliency file formats
# ---------------------------------------------------------------------------


def _format_value(v: float) -> str:
    # Shortest decimal string that round-trips the float64 value.
    return np.format_float_positional(v, unique=True, trim="-")


_HEAT_TABLE: np.ndarray | None = None


def heatmap_table() -> np.ndarray:
    """Fixed 256-entry RGB color table (dark blue -> cyan -> yellow -> red)."""
    global _HEAT_TABLE
    if _HEAT_TABLE is None:
        t = np.linspace(0.0, 1.0, 256)
        r = np.clip(np.minimum(4.0 * t - 1.5, -4.0 * t + 4.5), 0.0, 1.0)
        g = np.clip(np.minimum(4.0 * t - 0.5, -4.0 * t + 3.5), 0.0, 1.0)
        b = np.clip(np.minimum(4.0 * t + 0.5, -4.0 * t + 2.5), 0.0, 1.0)
        _HEAT_TABLE = np.rint(np.stack([r, g, b], axis=1) * 255.0).astype(np.uint8)
    return _HEAT_TABLE


def save_saliency(s: SaliencyMap, path: str | Path, format: str = "smap") -> None:
    """Write a saliency map as `smap` (binary), `csv`, or `png-heatmap`."""
    path = str(path)
    if format == "smap":
        payload = s.values.astype("<f4").tobytes()
        header = SMAP_MAGIC + struct.pack("<III", SMAP_VERSION, s.height, s.width)
        with open(path, "wb") as f:
            f.write(header + payload)
    elif format == "csv":
        lines = [",".join(_format_value(v) for v in row) for row in s.values]
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
    elif format == "png-heatmap":
        from PIL import Image

        norm = minmax_normalize(s).values
        idx = np.minimum((norm * 255.0 + 0.5).astype(np.int64), 255)
        rgb = heatmap_table()[idx]
        Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
    else:
        raise ValueError(f"unknown saliency format {format!r}")


def load_saliency(path: str | Path) -> SaliencyMap:
    """Read a binary SMAP file written by save_saliency."""
    path = str(path)
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != SMAP_MAGIC:
        raise FormatError(f"{path}: not an SMAP file")
    version, height, width = struct.unpack("<III", raw[4:16])
    if version != SMAP_VERSION:
        raise FormatError(f"{path}: unsupported SMAP version {version}")
    n = height * width
    data = raw[16 : 16 + 4 * n]
    if len(data) < 4 * n:
        raise OSError(f"{path}: truncated SMAP payload")
    values = np.frombuffer(data, dtype="<f4", count=n).astype(np.float64)
    return SaliencyMap(values.reshape(height, width))
