"""Frame-sequence loading and preprocessing.

Input is an image sequence (a directory of PNG/PGM files or a newline
delimited manifest of paths), not a video container; demuxing is left to an
external tool. Frames are converted to luma in [0, 1] on load and can be
downscaled with area averaging to a working resolution for flow computation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

__all__ = [
    "LumaImage",
    "FrameSequence",
    "FrameError",
    "DEFAULT_MAX_DIM",
    "load_sequence",
    "load_luma",
    "to_luma",
    "downscale",
    "downscale_sequence",
    "save_luma_png",
    "iter_video_dirs",
    "natural_key",
]

DEFAULT_MAX_DIM = 320

# Rec. 601 luma weights.
_LUMA_R, _LUMA_G, _LUMA_B = 0.299, 0.587, 0.114

_IMAGE_SUFFIXES = {".png", ".pgm"}


class FrameError(ValueError):
    """Raised for unreadable frames, mixed dimensions, or empty sources."""


@dataclass(frozen=True)
class LumaImage:
    """Single grayscale frame, row-major float64 intensities in [0, 1]."""

    data: np.ndarray  # shape (height, width)

    def __post_init__(self) -> None:
        d = self.data
        if d.ndim != 2:
            raise FrameError(f"luma data must be 2-D, got shape {d.shape}")
        if not np.isfinite(d).all():
            raise FrameError("luma data contains non-finite values")
        if d.size and (d.min() < 0.0 or d.max() > 1.0):
            raise FrameError("luma data outside [0, 1]")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class FrameSequence:
    """Ordered frames of uniform dimensions plus their origin paths."""

    frames: tuple[LumaImage, ...]
    source_id: str
    frame_paths: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.frames:
            raise FrameError(f"{self.source_id}: empty frame sequence")
        w, h = self.frames[0].width, self.frames[0].height
        for i, f in enumerate(self.frames):
            if (f.width, f.height) != (w, h):
                first = self.frame_paths[0] if self.frame_paths else "frame 0"
                offender = (
                    self.frame_paths[i] if i < len(self.frame_paths) else f"frame {i}"
                )
                raise FrameError(
                    f"{self.source_id}: mixed frame dimensions: "
                    f"{first} is {w}x{h} but {offender} is {f.width}x{f.height}"
                )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height


def natural_key(name: str):
    """Sort key comparing digit runs numerically: f2 sorts before f10."""
    parts = re.split(r"(\d+)", name)
    return [int(p) if p.isdigit() else p.lower() for p in parts]


def to_luma(rgb: np.ndarray, max_value: float | None = None) -> LumaImage:
    """Convert an (H, W, 3) integer RGB array to normalized luma.

    Y = 0.299 R + 0.587 G + 0.114 B, scaled into [0, 1] by the channel
    maximum (255 for 8-bit, 65535 for 16-bit unless overridden).
    """
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FrameError(f"expected (H, W, 3) RGB array, got shape {arr.shape}")
    if max_value is None:
        max_value = 65535.0 if arr.dtype == np.uint16 else 255.0
    arr = arr.astype(np.float64)
    y = _LUMA_R * arr[..., 0] + _LUMA_G * arr[..., 1] + _LUMA_B * arr[..., 2]
    return LumaImage(np.clip(y / max_value, 0.0, 1.0))


def _read_pgm(path: Path) -> np.ndarray:
    """Minimal binary PGM (P5) reader supporting 8- and 16-bit depths."""
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise FrameError(f"{path}: not a binary (P5) PGM file")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FrameError(f"{path}: malformed PGM header near byte {start}")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval <= 0 or maxval > 65535:
        raise FrameError(f"{path}: unsupported PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    if raster.size != count:
        raise FrameError(f"{path}: truncated PGM raster")
    arr = raster.reshape(height, width).astype(np.float64) / float(maxval)
    return arr


def load_luma(path) -> LumaImage:
    """Decode one PNG or PGM frame to luma."""
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        if suffix == ".pgm":
            return LumaImage(_read_pgm(path))
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                return LumaImage(np.clip(arr / 65535.0, 0.0, 1.0))
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.float64)
                return LumaImage(arr / 255.0)
            if im.mode in ("RGB", "RGBA"):
                arr = np.asarray(im.convert("RGB"))
                return to_luma(arr, max_value=255.0)
            # palette, 1-bit, etc.: normalize through 8-bit RGB
            arr = np.asarray(im.convert("RGB"))
            return to_luma(arr, max_value=255.0)
    except FrameError:
        raise
    except Exception as exc:
        raise FrameError(f"{path}: unreadable frame: {exc}") from exc


def _frame_paths_from_dir(directory: Path) -> list[Path]:
    files = [
        p
        for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES
    ]
    return sorted(files, key=lambda p: natural_key(p.name))


def _frame_paths_from_manifest(manifest: Path) -> list[Path]:
    paths = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        if not p.is_absolute():
            p = manifest.parent / p
        paths.append(p)
    return paths


def load_sequence(source, source_id: str | None = None) -> FrameSequence:
    """Load an ordered frame sequence from a directory or manifest file.

    Directory mode orders files by natural sort of filename (digit runs
    compared numerically); manifest mode preserves the listed order, with
    relative paths resolved against the manifest's directory.
    """
    source = Path(source)
    if source.is_dir():
        paths = _frame_paths_from_dir(source)
        sid = source_id or source.name
    elif source.is_file():
        paths = _frame_paths_from_manifest(source)
        sid = source_id or source.stem
    else:
        raise FrameError(f"{source}: no such directory or manifest")
    if not paths:
        raise FrameError(f"{source}: empty source: no frames found")
    frames = tuple(load_luma(p) for p in paths)
    return FrameSequence(
        frames=frames,
        source_id=sid,
        frame_paths=tuple(str(p) for p in paths),
    )


def _box_weights(n_src: int, n_dst: int) -> np.ndarray:
    """Row-normalized (n_dst, n_src) overlap matrix for area resampling."""
    w = np.zeros((n_dst, n_src))
    scale = n_src / n_dst
    for i in range(n_dst):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = min(int(np.ceil(hi)), n_src)
        for j in range(j0, j1):
            w[i, j] = min(hi, j + 1) - max(lo, j)
    w /= w.sum(axis=1, keepdims=True)
    return w


def downscale(img: LumaImage, max_dim: int = DEFAULT_MAX_DIM) -> LumaImage:
    """Area-averaged downscale so the larger dimension equals max_dim.

    Returns the input unchanged when it already fits. Aspect ratio is
    preserved (smaller dimension rounded); intensities stay in [0, 1] and
    constants are preserved exactly.
    """
    if max_dim < 16:
        raise FrameError(f"max_dim must be >= 16, got {max_dim}")
    h, w = img.height, img.width
    if max(w, h) <= max_dim:
        return img
    if w >= h:
        new_w = max_dim
        new_h = max(1, round(h * max_dim / w))
    else:
        new_h = max_dim
        new_w = max(1, round(w * max_dim / h))
    wy = _box_weights(h, new_h)
    wx = _box_weights(w, new_w)
    data = wy @ img.data @ wx.T
    return LumaImage(np.clip(data, 0.0, 1.0))


def downscale_sequence(seq: FrameSequence, max_dim: int = DEFAULT_MAX_DIM) -> FrameSequence:
    """Downscale every frame of a sequence to the working resolution."""
    frames = tuple(downscale(f, max_dim) for f in seq.frames)
    if all(a is b for a, b in zip(frames, seq.frames)):
        return seq
    return FrameSequence(frames=frames, source_id=seq.source_id, frame_paths=seq.frame_paths)


def save_luma_png(img: LumaImage, path) -> None:
    """Write a luma image as an 8-bit grayscale PNG."""
    arr = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(Path(path), format="PNG")


def iter_video_dirs(root) -> Iterable[Path]:
    """Yield the per-video frame directories directly under a root."""
    root = Path(root)
    if not root.is_dir():
        return
    for p in sorted(root.iterdir(), key=lambda p: natural_key(p.name)):
        if p.is_dir() and _frame_paths_from_dir(p):
            yield p
