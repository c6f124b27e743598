"""Self-contained image I/O: PGM/PPM (ASCII and binary) and basic 8-bit PNG.

Images are float arrays in [0, 1], either (H, W) grayscale or (H, W, 3) RGB.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(PNG_MAGIC):
        return read_png(path)
    if head[:2] in (b"P2", b"P3", b"P5", b"P6"):
        return read_pnm(path)
    raise ValueError(f"{path}: unsupported image format")


def write_image(path, img: np.ndarray) -> None:
    name = str(path).lower()
    if name.endswith(".png"):
        write_png(path, img)
    elif name.endswith(".pgm"):
        write_pnm(path, to_grayscale(img))
    elif name.endswith(".ppm"):
        write_pnm(path, img)
    else:
        raise ValueError(f"{path}: choose a .png, .pgm or .ppm destination")


def to_grayscale(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return img
    return img[:, :, 0] * 0.299 + img[:, :, 1] * 0.587 + img[:, :, 2] * 0.114


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - t)
    np.add.at(mat, (rows, i1), t)
    return mat


def resize_bilinear(img: np.ndarray, size) -> np.ndarray:
    """Resize to (height, width) with separable bilinear interpolation."""
    img = np.asarray(img, dtype=float)
    height, width = size
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    mh = _resample_matrix(img.shape[0], height)
    mw = _resample_matrix(img.shape[1], width)
    out = np.einsum("ih,hwc,jw->ijc", mh, img, mw, optimize=True)
    return out[:, :, 0] if squeeze else out


# ---------------------------------------------------------------------------
# PNM (PGM / PPM)
# ---------------------------------------------------------------------------


def _pnm_tokens(data: bytes):
    pos = 0
    while pos < len(data):
        if data[pos : pos + 1].isspace():
            pos += 1
            continue
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        yield data[pos:end], end
        pos = end


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = _pnm_tokens(data)
    magic, _ = next(tokens)
    magic = magic.decode()
    if magic not in ("P2", "P3", "P5", "P6"):
        raise ValueError(f"{path}: unsupported PNM magic {magic!r}")
    (width_tok, _), (height_tok, _), (maxval_tok, end) = (
        next(tokens), next(tokens), next(tokens)
    )
    width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    channels = 3 if magic in ("P3", "P6") else 1
    count = width * height * channels
    if magic in ("P2", "P3"):
        values = []
        for tok, _ in tokens:
            values.append(int(tok))
            if len(values) == count:
                break
        arr = np.array(values, dtype=float)
    else:
        raw = data[end + 1 : end + 1 + count]
        if len(raw) < count:
            raise ValueError(f"{path}: truncated pixel data")
        arr = np.frombuffer(raw, dtype=np.uint8).astype(float)
    if arr.size != count:
        raise ValueError(f"{path}: expected {count} samples, got {arr.size}")
    arr = (arr / maxval).reshape(height, width, channels)
    return arr[:, :, 0] if channels == 1 else arr


def write_pnm(path, img: np.ndarray) -> None:
    """Binary P5 for grayscale input, P6 for RGB."""
    img = np.asarray(img, dtype=float)
    data = np.rint(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    if data.ndim == 2:
        magic, height, width = b"P5", *data.shape
    else:
        magic = b"P6"
        height, width = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (width, height))
        fh.write(data.tobytes())


# ---------------------------------------------------------------------------
# PNG (8-bit gray / gray+alpha / RGB / RGBA, no interlace)
# ---------------------------------------------------------------------------


def _chunk(kind: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + kind
        + payload
        + struct.pack(">I", zlib.crc32(kind + payload))
    )


def write_png(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=float)
    data = np.rint(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    if data.ndim == 2:
        color_type, channels = 0, 1
        data = data[:, :, None]
    else:
        color_type, channels = 2, 3
        data = data[:, :, :3]
    height, width = data.shape[:2]
    ihdr = struct.pack(">IIBBBBB", width, height, 8, color_type, 0, 0, 0)
    scanlines = b"".join(
        b"\x00" + data[row].reshape(width * channels).tobytes() for row in range(height)
    )
    with open(path, "wb") as fh:
        fh.write(PNG_MAGIC)
        fh.write(_chunk(b"IHDR", ihdr))
        fh.write(_chunk(b"IDAT", zlib.compress(scanlines, 6)))
        fh.write(_chunk(b"IEND", b""))


def _paeth(a, b, c):
    p = a.astype(int) + b.astype(int) - c.astype(int)
    pa, pb, pc = np.abs(p - a), np.abs(p - b), np.abs(p - c)
    out = np.where((pa <= pb) & (pa <= pc), a, np.where(pb <= pc, b, c))
    return out.astype(np.uint8)


def read_png(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(PNG_MAGIC):
        raise ValueError(f"{path}: not a PNG file")
    pos = len(PNG_MAGIC)
    ihdr = None
    idat = b""
    while pos < len(blob):
        length = struct.unpack(">I", blob[pos : pos + 4])[0]
        kind = blob[pos + 4 : pos + 8]
        payload = blob[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if kind == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", payload)
        elif kind == b"IDAT":
            idat += payload
        elif kind == b"IEND":
            break
    if ihdr is None:
        raise ValueError(f"{path}: missing IHDR")
    width, height, depth, color_type, _, _, interlace = ihdr
    if depth != 8 or interlace != 0:
        raise ValueError(f"{path}: only 8-bit non-interlaced PNG is supported")
    channels = {0: 1, 2: 3, 4: 2, 6: 4}.get(color_type)
    if channels is None:
        raise ValueError(f"{path}: unsupported PNG color type {color_type}")
    raw = zlib.decompress(idat)
    stride = width * channels
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    pos = 0
    for row in range(height):
        filter_type = raw[pos]
        line = np.frombuffer(raw[pos + 1 : pos + 1 + stride], dtype=np.uint8).copy()
        pos += 1 + stride
        if filter_type == 0:
            recon = line
        elif filter_type == 1:
            recon = line
            for col in range(channels, stride):
                recon[col] = (int(recon[col]) + int(recon[col - channels])) & 0xFF
        elif filter_type == 2:
            recon = (line.astype(int) + prev).astype(np.uint8)
        elif filter_type == 3:
            recon = line
            for col in range(stride):
                left = int(recon[col - channels]) if col >= channels else 0
                recon[col] = (int(recon[col]) + (left + int(prev[col])) // 2) & 0xFF
        elif filter_type == 4:
            recon = line
            for col in range(stride):
                left = recon[col - channels] if col >= channels else np.uint8(0)
                upleft = prev[col - channels] if col >= channels else np.uint8(0)
                recon[col] = (int(recon[col]) + int(_paeth(
                    np.array(left), np.array(prev[col]), np.array(upleft)
                ))) & 0xFF
        else:
            raise ValueError(f"{path}: unknown PNG filter {filter_type}")
        out[row] = recon
        prev = out[row]
    img = out.reshape(height, width, channels).astype(float) / 255.0
    if channels == 1:
        return img[:, :, 0]
    if channels == 2:  # gray + alpha: drop alpha
        return img[:, :, 0]
    if channels == 4:  # RGBA: drop alpha
        return img[:, :, :3]
    return img
