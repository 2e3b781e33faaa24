"""Image sequences, the stacked pixels-by-frames view, and grayscale image IO.

Frames are 2-D float arrays indexed ``[row, col]``. Vectorization is
row-major with the origin at the top-left pixel, so column ``k`` of a
stacked matrix is ``frames[k].ravel()``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class DataError(ValueError):
    """Bad input data: unreadable files, wrong shapes, non-finite values."""


@dataclass(frozen=True)
class ImageSequence:
    """An ordered stack of same-sized grayscale frames, shape ``(n, height, width)``.

    The array is copied and marked read-only on construction.
    """

    frames: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.ndim != 3 or frames.shape[0] == 0:
            raise DataError(f"expected a (n, height, width) stack, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise DataError("frames contain non-finite values")
        if self.names and len(self.names) != frames.shape[0]:
            raise DataError("names must match the number of frames")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def __len__(self) -> int:
        return self.n_frames

    def __getitem__(self, k: int) -> np.ndarray:
        return self.frames[k]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.frames)


def stack(seq: ImageSequence) -> np.ndarray:
    """Return the ``(pixels, frames)`` matrix whose column k is frame k raveled."""
    return np.ascontiguousarray(seq.frames.reshape(seq.n_frames, -1).T)


def unstack(m: np.ndarray, width: int, height: int) -> ImageSequence:
    """Inverse of :func:`stack`."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2 or m.shape[0] != width * height:
        raise DataError(
            f"matrix with {m.shape[0] if m.ndim else 0} rows cannot be unstacked "
            f"into {width}x{height} frames"
        )
    return ImageSequence(m.T.reshape(m.shape[1], height, width))


# --------------------------------------------------------------------------- IO

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def _read_pgm(path: Path) -> tuple[np.ndarray, int]:
    raw = path.read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = tokens
    if magic not in (b"P5", b"P2"):
        raise DataError(f"{path}: not a grayscale PGM (magic {magic!r})")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise DataError(f"{path}: malformed PGM header") from None
    if not 0 < maxval < 65536:
        raise DataError(f"{path}: invalid maxval {maxval}")
    if magic == b"P2":
        values = np.array(raw[pos:].split(), dtype=np.int64)
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
        if len(raw) - pos < w * h * dtype.itemsize:
            raise DataError(f"{path}: truncated PGM pixel data")
        values = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos)
    if values.size != w * h:
        raise DataError(f"{path}: expected {w * h} pixels, found {values.size}")
    return values.reshape(h, w), maxval


def read_image(path: str | Path) -> np.ndarray:
    """Load a grayscale PGM or PNG as floats in ``[0, 1]``.

    Integer values ``v`` are divided by the file's maximum value
    (255 or 65535 for 8- and 16-bit images).
    """
    path = Path(path)
    try:
        if path.suffix.lower() in (".pgm", ".pnm"):
            values, maxval = _read_pgm(path)
        else:
            from PIL import Image

            with Image.open(path) as im:
                if im.mode in ("L", "1"):
                    values, maxval = np.asarray(im.convert("L")), 255
                elif im.mode.startswith("I;16") or im.mode == "I":
                    values, maxval = np.asarray(im).astype(np.int64), 65535
                else:
                    raise DataError(f"{path}: unsupported image mode {im.mode} (grayscale only)")
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from exc
    return values.astype(np.float64) / maxval


def write_image(data: np.ndarray, path: str | Path, bit_depth: int = 8) -> None:
    """Write a frame as an 8- or 16-bit grayscale image.

    Values are clamped to ``[0, 1]`` and rounded to the nearest level.
    The format follows the suffix: ``.png`` via Pillow, anything else PGM.
    """
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DataError(f"expected a 2-D frame, got shape {data.shape}")
    maxval = (1 << bit_depth) - 1
    levels = np.rint(np.clip(np.nan_to_num(data), 0.0, 1.0) * maxval)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".png":
        from PIL import Image

        if bit_depth == 8:
            Image.fromarray(levels.astype(np.uint8), mode="L").save(path)
        else:
            Image.fromarray(levels.astype(np.uint16)).save(path)
        return
    h, w = data.shape
    pixels = levels.astype(np.uint8 if bit_depth == 8 else ">u2").tobytes()
    path.write_bytes(b"P5\n%d %d\n%d\n" % (w, h, maxval) + pixels)


save_frame = write_image


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    """Write a binary mask as an 8-bit image, 0 for background and 255 for set pixels."""
    write_image(np.asarray(mask, dtype=bool).astype(np.float64), path, bit_depth=8)


def read_mask(path: str | Path) -> np.ndarray:
    return read_image(path) > 0.5


def list_images(directory: str | Path, pattern: str = "*.pgm") -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: no such directory")
    return sorted((p for p in directory.glob(pattern) if p.is_file()), key=lambda p: p.name)


def load_sequence(directory: str | Path, pattern: str = "*.pgm") -> ImageSequence:
    """Load every file in ``directory`` matching ``pattern``, sorted by filename."""
    paths = list_images(directory, pattern)
    if len(paths) < 2:
        raise DataError(
            f"insufficient frames: {len(paths)} file(s) match {pattern!r} in {directory}, need at least 2"
        )
    frames = []
    for path in paths:
        img = read_image(path)
        if frames and img.shape != frames[0].shape:
            raise DataError(
                f"dimension mismatch: {path.name} is {img.shape[1]}x{img.shape[0]}, "
                f"expected {frames[0].shape[1]}x{frames[0].shape[0]}"
            )
        frames.append(img)
    return ImageSequence(np.stack(frames), names=tuple(p.name for p in paths))


def load_masks(directory: str | Path, pattern: str = "*.pgm") -> tuple[list[str], list[np.ndarray]]:
    """Load binary masks (any nonzero pixel is set). One mask is allowed."""
    paths = list_images(directory, pattern)
    if not paths:
        raise DataError(f"no files match {pattern!r} in {directory}")
    return [p.name for p in paths], [read_mask(p) for p in paths]


def write_sequence(frames: Sequence[np.ndarray] | np.ndarray, directory: str | Path, bit_depth: int = 8,
                   template: str = "frame_{:04d}.pgm") -> list[Path]:
    directory = Path(directory)
    paths = []
    for k, frame in enumerate(frames):
        path = directory / template.format(k)
        write_image(frame, path, bit_depth)
        paths.append(path)
    return paths
