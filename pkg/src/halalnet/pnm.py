"""Binary PPM (P6) and PGM (P5) codec, bit-exact for maxval 255.

Decoded images are uint8 arrays: (H, W) for PGM, (H, W, 3) for PPM.
Only maxval 255 is supported; anything else is an unsupported format.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError, InvalidInputError, TruncatedFileError

_WHITESPACE = b" \t\n\r\x0b\x0c"


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comments, then read one token
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos:pos + 1] not in _WHITESPACE:
        pos += 1
    if start == pos:
        raise TruncatedFileError("header ended before all fields were read")
    return buf[start:pos], pos


def decode_bytes(buf: bytes) -> np.ndarray:
    """Decode a binary PGM/PPM byte string into a uint8 array."""
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"not a binary PGM/PPM file (magic {magic!r})")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"non-numeric header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise FormatError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} (only 255)")
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise FormatError("missing whitespace before pixel data")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise TruncatedFileError(
            f"payload holds {len(payload)} bytes, header promises {need}")
    img = np.frombuffer(payload, dtype=np.uint8)
    if channels == 3:
        return img.reshape(height, width, 3).copy()
    return img.reshape(height, width).copy()


def encode_bytes(img: np.ndarray) -> bytes:
    """Encode a uint8 (H,W) or (H,W,3) array as binary PGM/PPM."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise InvalidInputError(f"expected uint8 pixels, got {img.dtype}")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise InvalidInputError(f"expected (H,W) or (H,W,3), got {img.shape}")
    h, w = img.shape[:2]
    header = b"%s\n%d %d\n255\n" % (magic, w, h)
    return header + img.tobytes()


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_bytes(fh.read())


def write_pnm(img: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_bytes(img))
