"""Binary portable graymap (P5) and pixmap (P6) reading and writing, 8-bit only."""

from __future__ import annotations

import numpy as np


class NetpbmError(ValueError):
    pass


def _parse_header(buf, expected_magic, path):
    pos = 0

    def skip_space_and_comments(pos):
        while pos < len(buf):
            c = buf[pos:pos + 1]
            if c == b"#":
                while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        return pos

    def read_int(pos, what):
        pos = skip_space_and_comments(pos)
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise NetpbmError(f"{path}: expected {what} at byte {start}")
        return int(buf[start:pos]), pos

    magic = buf[:2]
    if magic != expected_magic:
        kind = {b"P5": "graymap (P5)", b"P6": "pixmap (P6)"}.get(magic, repr(magic))
        raise NetpbmError(
            f"{path}: expected magic {expected_magic.decode()} at byte 0, found {kind}")
    pos = 2
    width, pos = read_int(pos, "width")
    height, pos = read_int(pos, "height")
    maxval, pos = read_int(pos, "maxval")
    if width <= 0 or height <= 0:
        raise NetpbmError(f"{path}: non-positive size {width}×{height} before byte {pos}")
    if not 0 < maxval <= 255:
        raise NetpbmError(f"{path}: maxval {maxval} unsupported (8-bit only) before byte {pos}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise NetpbmError(f"{path}: missing whitespace after maxval at byte {pos}")
    return width, height, pos + 1


def _read(path, magic, channels):
    with open(path, "rb") as f:
        buf = f.read()
    width, height, offset = _parse_header(buf, magic, path)
    n = width * height * channels
    if len(buf) - offset < n:
        raise NetpbmError(
            f"{path}: raster truncated at byte {len(buf)}, need {n} bytes from byte {offset}")
    data = np.frombuffer(buf, dtype=np.uint8, count=n, offset=offset)
    shape = (height, width) if channels == 1 else (height, width, channels)
    return data.reshape(shape).copy()


def read_pgm(path):
    return _read(path, b"P5", 1)


def read_ppm(path):
    """(H, W, 3) uint8."""
    return _read(path, b"P6", 3)


def write_pgm(path, array):
    a = np.asarray(array)
    if a.ndim != 2:
        raise ValueError(f"graymap must be 2-D, got {a.shape}")
    if a.min(initial=0) < 0 or a.max(initial=0) > 255:
        raise ValueError("graymap values must be in [0, 255]")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (a.shape[1], a.shape[0]))
        f.write(a.astype(np.uint8).tobytes())


def write_ppm(path, array):
    a = np.asarray(array)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"pixmap must be H×W×3, got {a.shape}")
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (a.shape[1], a.shape[0]))
        f.write(a.astype(np.uint8).tobytes())


def image_to_bytes(image):
    """(3, H, W) float in [0, 1] -> (H, W, 3) uint8."""
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def bytes_to_image(rgb):
    return (np.asarray(rgb, dtype=np.float32) / 255.0).transpose(2, 0, 1).copy()
